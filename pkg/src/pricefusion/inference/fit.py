"""Fitting the fused choice model and tabulating the posterior."""
from __future__ import annotations

import logging
import math
import warnings
from typing import Mapping, Sequence

import numpy as np

from ..model import (
    GLOBAL_NAMES,
    ModelVariant,
    ObservationSet,
    PriorConfig,
    as_observation_set,
)
from ..posterior import LogPosterior, ParameterLayout
from . import diagnostics as diag
from .nuts import PosteriorDraws, SamplerConfig, nuts_sample

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("parameter", "true", "mean", "sd", "q2.5", "q97.5", "rhat", "ess_bulk", "ess_tail")


class IdentifiabilityWarning(UserWarning):
    pass


def final_subscribers(history: ObservationSet) -> np.ndarray:
    """Customers who purchased in the last recorded period."""
    history = as_observation_set(history)
    hist = history.subset(history.conjoint == 0)
    if len(hist) == 0:
        return np.zeros(0, dtype=np.int64)
    last = hist.time.max()
    return np.unique(hist.customer_id[(hist.time == last) & (hist.outcome == 1)])


def fit_model(history, conjoint=None, variant: ModelVariant | str = ModelVariant.FULL,
              priors: PriorConfig = PriorConfig(), cfg: SamplerConfig = SamplerConfig(),
              individual: str | Sequence[int] = "subscribers") -> PosteriorDraws:
    """Sample the posterior of the pooled purchase-history and conjoint data.

    ``individual`` picks which per-customer deviations ``u`` are retained
    alongside the globals: ``"subscribers"`` (customers who purchased in the
    last history period, needed for profit prediction), ``"all"``, ``"none"``
    or an explicit id sequence.
    """
    variant = ModelVariant.parse(variant)
    history = as_observation_set(history)
    conjoint = ObservationSet.empty() if conjoint is None else as_observation_set(conjoint)
    pooled = ObservationSet.concat([history, conjoint])
    if len(pooled) == 0:
        raise ValueError("no observations to fit")
    if len(conjoint) == 0:
        n_prices = len(np.unique(history.price))
        warnings.warn(
            f"fitting without conjoint data: price sensitivity rests on {n_prices} distinct "
            "history price(s) and the model may be unidentifiable", IdentifiabilityWarning, stacklevel=2)

    layout = ParameterLayout.from_observations(pooled, variant)
    target = LogPosterior(pooled, layout, priors)
    ng = layout.n_globals

    if isinstance(individual, str):
        if individual == "subscribers":
            ids = final_subscribers(history)
        elif individual == "all":
            ids = layout.customer_ids
        elif individual == "none":
            ids = np.zeros(0, dtype=np.int64)
        else:
            raise ValueError(f"unknown individual-effects selection {individual!r}")
    else:
        ids = np.asarray(individual, dtype=np.int64)
    ids = ids[np.isin(ids, layout.customer_ids)]
    z_index = ng + np.searchsorted(layout.customer_ids, ids)
    keep = np.concatenate([np.arange(ng), z_index]).astype(np.intp)

    def init(rng):
        theta = np.zeros(layout.dim)
        theta[:ng] = rng.uniform(-0.5, 0.5, size=ng)
        return theta

    logger.info("fitting %s model: %d records, %d customers, dim %d", variant.value,
                len(pooled), layout.n_customers, layout.dim)
    raw = nuts_sample(target, layout.dim, cfg, init=init, keep=keep)

    globals_ = raw.draws[:, :, :ng].copy()
    tau_col = layout.global_names.index("tau")
    globals_[:, :, tau_col] = np.exp(globals_[:, :, tau_col])
    individual_draws = raw.draws[:, :, ng:] * globals_[:, :, tau_col][:, :, None]
    return PosteriorDraws(
        names=layout.global_names,
        draws=globals_,
        accept_stat=raw.accept_stat,
        divergences=raw.divergences,
        step_size=raw.step_size,
        mean_leapfrog=raw.mean_leapfrog,
        post_warmup_iterations=raw.post_warmup_iterations,
        individual_names=tuple(f"u[{i}]" for i in ids),
        individual=individual_draws,
        meta={"variant": variant.value, "n_records": len(pooled),
              "n_customers": layout.n_customers, "seed": cfg.seed},
    )


def summarize(draws: PosteriorDraws, true_values: Mapping[str, float] | None = None,
              include_individual: bool = False) -> list[dict]:
    """One row per parameter: truth, mean, sd, 95% interval, R-hat, ESS."""
    if draws.n_draws == 0:
        raise ValueError("no retained draws to summarise")
    order = [n for n in GLOBAL_NAMES if n in draws.names] + [n for n in draws.names if n not in GLOBAL_NAMES]
    if include_individual:
        order += list(draws.individual_names)
    n_total = draws.n_chains * draws.n_draws
    rows = []
    for name in order:
        x = draws.column(name)
        flat = x.reshape(-1)
        multi = x.shape[0] >= 2 and x.shape[1] >= 4
        rows.append({
            "parameter": name,
            "true": None if true_values is None or name not in true_values else float(true_values[name]),
            "mean": float(flat.mean()),
            "sd": float(flat.std(ddof=1)) if len(flat) > 1 else 0.0,
            "q2.5": float(np.quantile(flat, 0.025)),
            "q97.5": float(np.quantile(flat, 0.975)),
            "rhat": diag.split_rhat(x) if multi else math.nan,
            "ess_bulk": diag.capped(diag.ess_bulk(x), n_total) if x.shape[1] >= 4 else math.nan,
            "ess_tail": diag.capped(diag.ess_tail(x), n_total) if x.shape[1] >= 4 else math.nan,
        })
    return rows


def diagnostics_report(draws: PosteriorDraws) -> dict:
    rows = summarize(draws)
    return {
        "parameters": {r["parameter"]: {"rhat": r["rhat"], "ess_bulk": r["ess_bulk"], "ess_tail": r["ess_tail"]}
                       for r in rows},
        "chains": [
            {"chain": c, "divergences": int(draws.divergences[c]), "mean_accept_stat": float(draws.accept_stat[c]),
             "step_size": float(draws.step_size[c]), "mean_leapfrog_steps": float(draws.mean_leapfrog[c])}
            for c in range(draws.n_chains)
        ],
        "post_warmup_iterations_per_chain": int(draws.post_warmup_iterations),
        "retained_draws_per_chain": int(draws.n_draws),
        "divergence_rate": float(draws.divergences.sum() / (draws.post_warmup_iterations * draws.n_chains)),
        "max_rhat": max((r["rhat"] for r in rows if not math.isnan(r["rhat"])), default=math.nan),
    }


def format_summary(rows: list[dict]) -> str:
    header = f"{'parameter':<22}{'true':>9}{'mean':>10}{'sd':>9}{'2.5%':>10}{'97.5%':>10}{'Rhat':>8}{'bulk':>7}{'tail':>7}"
    lines = [header]
    for r in rows:
        true = "" if r["true"] is None else f"{r['true']:.4f}"
        lines.append(
            f"{r['parameter']:<22}{true:>9}{r['mean']:>10.4f}{r['sd']:>9.4f}{r['q2.5']:>10.4f}"
            f"{r['q97.5']:>10.4f}{r['rhat']:>8.4f}{r['ess_bulk']:>7.0f}{r['ess_tail']:>7.0f}"
        )
    return "\n".join(lines)
