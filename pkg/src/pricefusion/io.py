"""CSV/JSON persistence of datasets, draws and results.

Files are UTF-8 with a header row and ``\\n`` line endings. Prices carry two
decimals; probabilities and draws are written with ``repr`` so that they
parse back to the identical float.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .inference.nuts import PosteriorDraws
from .model import AGE_GROUPS, GENDERS, GROUP_LABELS, LOCATIONS, ObservationSet

HISTORY_COLUMNS = ("customer_id", "t", "age_group", "gender", "location", "price", "s_periods", "purchased")
CONJOINT_COLUMNS = ("customer_id", "group", "task_index", "age_group", "gender", "location", "price",
                    "s_periods", "choice")
TRUTH_COLUMNS = ("price", "mu0_true", "mu1_true", "profit_true")
CURVE_COLUMNS = ("price", "mean_profit", "lo95", "hi95", "p_optimal")


class SchemaError(ValueError):
    """A data file does not match its schema; names file, row and column."""

    def __init__(self, path, row: int | None, column: str | None, message: str):
        where = str(path)
        if row is not None:
            where += f", row {row}"
        if column is not None:
            where += f", column {column!r}"
        super().__init__(f"{where}: {message}")
        self.path, self.row, self.column = str(path), row, column


def fmt_price(x: float) -> str:
    return f"{x:.2f}"


def fmt_float(x: float) -> str:
    return repr(float(x))


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")


def read_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path} does not exist")
    return json.loads(path.read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Datasets


def write_history(path, obs: ObservationSet) -> None:
    _write_rows(path, HISTORY_COLUMNS, (
        (int(obs.customer_id[i]), int(obs.time[i]), AGE_GROUPS[obs.age[i]], GENDERS[obs.gender[i]],
         LOCATIONS[obs.location[i]], fmt_price(obs.price[i]), int(obs.s_periods[i]), int(obs.outcome[i]))
        for i in range(len(obs))
    ))


def write_conjoint(path, obs: ObservationSet) -> None:
    _write_rows(path, CONJOINT_COLUMNS, (
        (int(obs.customer_id[i]), GROUP_LABELS[obs.group[i]], int(obs.task_index[i]), AGE_GROUPS[obs.age[i]],
         GENDERS[obs.gender[i]], LOCATIONS[obs.location[i]], fmt_price(obs.price[i]), int(obs.s_periods[i]),
         int(obs.outcome[i]))
        for i in range(len(obs))
    ))


class _Reader:
    def __init__(self, path, columns: Sequence[str]):
        self.path = Path(path)
        if not self.path.exists():
            raise FileNotFoundError(f"{self.path} does not exist")
        with self.path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise SchemaError(self.path, None, None, "file is empty (missing header)")
        header = tuple(rows[0])
        if header != tuple(columns):
            missing = [c for c in columns if c not in header]
            extra = [c for c in header if c not in columns]
            raise SchemaError(self.path, 1, missing[0] if missing else (extra[0] if extra else None),
                              f"header {list(header)} does not match {list(columns)}")
        self.columns = tuple(columns)
        self.rows = rows[1:]
        for n, row in enumerate(self.rows, start=2):
            if len(row) != len(columns):
                raise SchemaError(self.path, n, None, f"expected {len(columns)} fields, found {len(row)}")

    def column(self, name: str, parse) -> list:
        j = self.columns.index(name)
        out = []
        for n, row in enumerate(self.rows, start=2):
            try:
                out.append(parse(row[j]))
            except (ValueError, KeyError) as exc:
                raise SchemaError(self.path, n, name, f"invalid value {row[j]!r} ({exc})") from None
        return out


def _int(text: str) -> int:
    return int(text)


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise ValueError("must be non-negative")
    return v


def _binary(text: str) -> int:
    v = int(text)
    if v not in (0, 1):
        raise ValueError("must be 0 or 1")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not (math.isfinite(v) and v > 0):
        raise ValueError("must be a positive finite number")
    return v


def _code(labels):
    lookup = {name: i for i, name in enumerate(labels)}

    def parse(text):
        if text not in lookup:
            raise ValueError(f"expected one of {list(labels)}")
        return lookup[text]
    return parse


def read_history(path) -> ObservationSet:
    r = _Reader(path, HISTORY_COLUMNS)
    n = len(r.rows)
    s = np.array(r.column("s_periods", _nonneg_int), dtype=np.int64)
    t = np.array(r.column("t", _int), dtype=np.int64)
    if n and t.min() < 1:
        row = int(np.argmin(t)) + 2
        raise SchemaError(path, row, "t", "periods start at 1")
    return ObservationSet(
        customer_id=np.array(r.column("customer_id", _nonneg_int), dtype=np.int64),
        time=t,
        price=np.array(r.column("price", _positive_float)),
        s_periods=s,
        conjoint=np.zeros(n, dtype=np.int64),
        domain=(s > 0).astype(np.int64),
        outcome=np.array(r.column("purchased", _binary), dtype=np.int64),
        age=np.array(r.column("age_group", _code(AGE_GROUPS)), dtype=np.int64),
        gender=np.array(r.column("gender", _code(GENDERS)), dtype=np.int64),
        location=np.array(r.column("location", _code(LOCATIONS)), dtype=np.int64),
    )


def read_conjoint(path, period: int) -> ObservationSet:
    """Conjoint rows carry no period column; ``period`` is the study period."""
    r = _Reader(path, CONJOINT_COLUMNS)
    n = len(r.rows)
    s = np.array(r.column("s_periods", _nonneg_int), dtype=np.int64)
    return ObservationSet(
        customer_id=np.array(r.column("customer_id", _nonneg_int), dtype=np.int64),
        time=np.full(n, int(period), dtype=np.int64),
        price=np.array(r.column("price", _positive_float)),
        s_periods=s,
        conjoint=np.ones(n, dtype=np.int64),
        domain=(s > 0).astype(np.int64),
        outcome=np.array(r.column("choice", _binary), dtype=np.int64),
        age=np.array(r.column("age_group", _code(AGE_GROUPS)), dtype=np.int64),
        gender=np.array(r.column("gender", _code(GENDERS)), dtype=np.int64),
        location=np.array(r.column("location", _code(LOCATIONS)), dtype=np.int64),
        group=np.array(r.column("group", _code(GROUP_LABELS)), dtype=np.int64),
        task_index=np.array(r.column("task_index", _nonneg_int), dtype=np.int64),
    )


def write_ground_truth(path, truth) -> None:
    _write_rows(path, TRUTH_COLUMNS, (
        (fmt_price(p), fmt_float(a), fmt_float(b), fmt_float(f))
        for p, a, b, f in zip(truth.prices, truth.mu0, truth.mu1, truth.profit)
    ))


def read_ground_truth(path) -> dict[str, np.ndarray]:
    r = _Reader(path, TRUTH_COLUMNS)
    return {c: np.array(r.column(c, float)) for c in TRUTH_COLUMNS}


# ---------------------------------------------------------------------------
# Posterior draws


def write_draws(path, draws: PosteriorDraws, warmup: int, thinning: int) -> None:
    """One row per retained draw; ``iteration`` is the 1-based sampler iteration."""
    names = list(draws.names) + list(draws.individual_names)
    ind = draws.individual

    def rows():
        for c in range(draws.n_chains):
            for j in range(draws.n_draws):
                values = list(draws.draws[c, j])
                if ind is not None and ind.shape[-1]:
                    values += list(ind[c, j])
                yield [c, warmup + (j + 1) * thinning] + [fmt_float(v) for v in values]
    _write_rows(path, ["chain", "iteration"] + names, rows())


def read_draws(path, meta: dict | None = None) -> PosteriorDraws:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path} does not exist; run the fit command first")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["chain", "iteration"]:
        raise SchemaError(path, 1, "chain", "draws file must start with chain,iteration columns")
    header = rows[0]
    names = header[2:]
    if not rows[1:]:
        raise SchemaError(path, None, None, "draws file holds no draws")
    data = np.empty((len(rows) - 1, len(header)))
    for n, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise SchemaError(path, n, None, f"expected {len(header)} fields, found {len(row)}")
        for j, text in enumerate(row):
            try:
                data[n - 2, j] = float(text)
            except ValueError:
                raise SchemaError(path, n, header[j], f"invalid number {text!r}") from None
    chains = data[:, 0].astype(int)
    n_chains = chains.max() + 1
    counts = np.bincount(chains, minlength=n_chains)
    if (counts != counts[0]).any():
        raise SchemaError(path, None, "chain", "chains hold different numbers of draws")
    order = np.lexsort((data[:, 1], chains))
    values = data[order, 2:].reshape(n_chains, counts[0], len(names))
    n_glob = sum(1 for n in names if not n.startswith("u["))
    meta = dict(meta or {})
    zeros = np.zeros(n_chains)
    return PosteriorDraws(
        names=tuple(names[:n_glob]),
        draws=values[:, :, :n_glob],
        accept_stat=zeros,
        divergences=zeros.astype(int),
        step_size=zeros,
        mean_leapfrog=zeros,
        post_warmup_iterations=int(meta.get("post_warmup_iterations", counts[0])),
        individual_names=tuple(names[n_glob:]),
        individual=values[:, :, n_glob:],
        meta=meta,
    )


# ---------------------------------------------------------------------------
# Decision output


def write_profit_curve(path, curve, truth: dict | None = None) -> None:
    header = list(CURVE_COLUMNS)
    true_profit = None
    if truth is not None:
        lookup = {round(float(p), 2): float(f) for p, f in zip(truth["price"], truth["profit_true"])}
        if all(round(float(p), 2) in lookup for p in curve.prices):
            header.append("profit_true")
            true_profit = [lookup[round(float(p), 2)] for p in curve.prices]
    rows = []
    for i, p in enumerate(curve.prices):
        row = [fmt_price(p), fmt_float(curve.mean[i]), fmt_float(curve.lo95[i]), fmt_float(curve.hi95[i]),
               fmt_float(curve.p_optimal[i])]
        if true_profit is not None:
            row.append(fmt_float(true_profit[i]))
        rows.append(row)
    _write_rows(path, header, rows)


def read_profit_curve(path) -> dict[str, np.ndarray]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), None)
    if header is None:
        raise SchemaError(path, None, None, "file is empty (missing header)")
    columns = list(CURVE_COLUMNS) + (["profit_true"] if "profit_true" in header else [])
    r = _Reader(path, columns)
    return {c: np.array(r.column(c, float)) for c in columns}
