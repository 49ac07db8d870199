"""Synthetic market: population, two-year purchase history, conjoint study and
the ground-truth profit at the next period.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .model import (
    N_CELLS,
    TRUE_PARAMETERS,
    Customer,
    Demographics,
    ObservationSet,
    ParameterVector,
    all_cells,
    cell_codes,
    linear_predictor,
    purchase_probability,
    reference_prices,
)

FINLAND_2020_SIZE = 3_956_294

# Rough 18-75 marginals; urban share and gender balance drift with age.
_AGE_SHARE = (0.21, 0.26, 0.26, 0.27)
_MALE_SHARE = (0.51, 0.51, 0.50, 0.48)
_URBAN_SHARE = (0.80, 0.76, 0.68, 0.62)


def default_demographic_table() -> np.ndarray:
    table = np.empty(N_CELLS)
    for c in range(N_CELLS):
        a, g, l = (int(v) for v in cell_codes(c))
        male = _MALE_SHARE[a]
        urban = _URBAN_SHARE[a]
        table[c] = _AGE_SHARE[a] * (male if g == 0 else 1 - male) * (urban if l == 0 else 1 - urban)
    return table / table.sum()


@dataclass
class PopulationSpec:
    size: int = FINLAND_2020_SIZE
    table: np.ndarray = field(default_factory=default_demographic_table)
    seed: int = 0

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=float)
        if self.table.shape != (N_CELLS,):
            raise ValueError(f"demographic table needs {N_CELLS} cells, got shape {self.table.shape}")
        if (self.table < 0).any() or not np.isfinite(self.table).all():
            raise ValueError("demographic table probabilities must be finite and non-negative")
        if abs(self.table.sum() - 1.0) > 1e-12:
            raise ValueError(f"demographic table must sum to 1, sums to {self.table.sum()!r}")
        if self.size < 1:
            raise ValueError("population size must be at least 1")
        if self.seed < 0:
            raise ValueError("population seed must be non-negative")

    def to_json(self) -> dict:
        return {
            "size": int(self.size),
            "seed": int(self.seed),
            "table": {d.key: float(p) for d, p in zip(all_cells(), self.table)},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PopulationSpec":
        table_doc = doc.get("table")
        if table_doc is None:
            table = default_demographic_table()
        else:
            expected = {d.key for d in all_cells()}
            if set(table_doc) != expected:
                extra = sorted(set(table_doc) - expected)
                missing = sorted(expected - set(table_doc))
                raise ValueError(f"demographic table keys mismatch; missing={missing} unexpected={extra}")
            table = np.array([float(table_doc[d.key]) for d in all_cells()])
        return cls(size=int(doc.get("size", FINLAND_2020_SIZE)), table=table, seed=int(doc.get("seed", 0)))

    @classmethod
    def load(cls, path) -> "PopulationSpec":
        return cls.from_json(json.loads(Path(path).read_text()))


_M64 = (1 << 64) - 1


def _mix64(x: np.ndarray) -> np.ndarray:
    # splitmix64 finaliser; uint64 arithmetic wraps modulo 2**64
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def _hashed_uniform(seed: int, ids, stream: int) -> np.ndarray:
    """Uniform(0, 1) value that is a pure function of (seed, id, stream)."""
    ids = np.atleast_1d(np.asarray(ids, dtype=np.uint64))
    key = _mix64(np.array([(seed * 0x9E3779B97F4A7C15 + stream) & _M64], dtype=np.uint64))[0]
    with np.errstate(over="ignore"):
        h = _mix64(_mix64(ids ^ key) + np.uint64(stream + 1))
    return ((h >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53


class Population:
    """Lazily materialised population.

    Customer ``i`` is derived from ``(spec.seed, i)`` alone, so any subset can
    be generated on demand and the same id always yields the same customer.
    """

    def __init__(self, spec: PopulationSpec, tau: float = TRUE_PARAMETERS.tau):
        if not tau > 0:
            raise ValueError("tau must be positive")
        self.spec = spec
        self.tau = float(tau)
        self._cum = np.cumsum(spec.table)
        self._cum[-1] = 1.0

    @property
    def size(self) -> int:
        return self.spec.size

    def _check(self, ids) -> np.ndarray:
        ids = np.atleast_1d(np.asarray(ids, dtype=np.int64))
        if len(ids) and (ids.min() < 0 or ids.max() >= self.size):
            raise IndexError(f"customer ids must lie in [0, {self.size})")
        return ids

    def cells(self, ids) -> np.ndarray:
        ids = self._check(ids)
        cell = np.searchsorted(self._cum, _hashed_uniform(self.spec.seed, ids, 0), side="right")
        # zero-probability cells can never be selected
        return np.minimum(cell, N_CELLS - 1)

    def codes(self, ids):
        return cell_codes(self.cells(ids))

    def z(self, ids) -> np.ndarray:
        return ndtri(_hashed_uniform(self.spec.seed, self._check(ids), 1))

    def u(self, ids) -> np.ndarray:
        return self.tau * self.z(ids)

    def customer(self, i: int) -> Customer:
        a, g, l = (int(v[0]) for v in self.codes([i]))
        return Customer(int(i), Demographics.from_codes(a, g, l), float(self.u([i])[0]))


def synthesize_population(spec: PopulationSpec, tau: float = TRUE_PARAMETERS.tau) -> Population:
    return Population(spec, tau)


def sample_ids(rng: np.random.Generator, size: int, population_size: int, exclude=()) -> np.ndarray:
    """``size`` distinct ids drawn uniformly from ``[0, N)`` minus ``exclude``."""
    exclude = exclude if isinstance(exclude, (set, frozenset)) else set(int(i) for i in exclude)
    available = population_size - sum(1 for i in exclude if 0 <= i < population_size)
    if size > available:
        raise ValueError(f"cannot sample {size} customers; only {available} remain in the population")
    if available < 4 * size:
        pool = np.setdiff1d(np.arange(population_size), np.fromiter(exclude, np.int64, len(exclude)))
        return rng.choice(pool, size=size, replace=False)
    chosen: list[int] = []
    seen: set[int] = set()
    while len(chosen) < size:
        for c in rng.integers(0, population_size, size=size - len(chosen)):
            c = int(c)
            if c not in exclude and c not in seen:
                seen.add(c)
                chosen.append(c)
    return np.array(chosen, dtype=np.int64)


# ---------------------------------------------------------------------------
# Purchase history


@dataclass
class MarketConfig:
    launch_price: float = 16.0
    price_changes: dict = field(default_factory=lambda: {7: 0.5, 19: 0.5})
    horizon: int = 24
    n0: int = 1000

    def __post_init__(self):
        self.price_changes = {int(k): float(v) for k, v in self.price_changes.items()}
        if not self.launch_price > 0:
            raise ValueError("launch_price must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.n0 < 1:
            raise ValueError("n0 must be at least 1")
        if any(t < 2 for t in self.price_changes):
            raise ValueError("price changes apply from period 2 onwards; period 1 uses launch_price")

    def price_schedule(self) -> list[float]:
        prices = [self.launch_price]
        for t in range(2, self.horizon + 1):
            prices.append(prices[-1] + self.price_changes.get(t, 0.0))
        return prices


@dataclass
class MarketState:
    """Market after the last simulated period.

    ``s_counter`` stores only positive subscription counters; a customer is a
    current subscriber exactly when it has an entry.
    """

    period: int
    price: float
    s_counter: dict[int, int]
    history: ObservationSet
    last_offered: np.ndarray
    ever_offered: set[int]
    prices: list[float]

    @property
    def current_subscribers(self) -> set[int]:
        return set(self.s_counter)

    def subscribers(self) -> tuple[np.ndarray, np.ndarray]:
        ids = np.array(sorted(self.s_counter), dtype=np.int64)
        return ids, np.array([self.s_counter[int(i)] for i in ids], dtype=np.int64)


def _choice_probabilities(pop: Population, params: ParameterVector, ids, price, s, conjoint):
    age, gender, location = pop.codes(ids)
    q = reference_prices(params, age, gender, location, pop.u(ids))
    return purchase_probability(linear_predictor(params, q, price, s, conjoint)), (age, gender, location)


def simulate_purchase_history(pop: Population, market: MarketConfig,
                              params: ParameterVector = TRUE_PARAMETERS, seed=0) -> MarketState:
    if not params.tau > 0:
        raise ValueError("tau must be positive")
    pop = pop if pop.tau == params.tau else Population(pop.spec, params.tau)
    rng = np.random.default_rng(seed)
    s_counter: dict[int, int] = {}
    ever_offered: set[int] = set()
    chunks = []
    prices = market.price_schedule()
    d0 = np.zeros(0, dtype=np.int64)
    for t, price in enumerate(prices, start=1):
        d1 = np.array(sorted(s_counter), dtype=np.int64)
        d0 = sample_ids(rng, market.n0, pop.size, set(s_counter))
        ids = np.concatenate([d0, d1])
        s = np.concatenate([np.zeros(len(d0), dtype=np.int64),
                            np.array([s_counter[int(i)] for i in d1], dtype=np.int64)])
        pi, (age, gender, location) = _choice_probabilities(pop, params, ids, price, s, 0)
        y = (rng.random(len(ids)) < pi).astype(np.int64)
        chunks.append(ObservationSet(
            customer_id=ids, time=np.full(len(ids), t), price=np.full(len(ids), price),
            s_periods=s, conjoint=np.zeros(len(ids)), domain=(s > 0).astype(np.int64), outcome=y,
            age=age, gender=gender, location=location,
        ))
        ever_offered.update(int(i) for i in d0)
        s_counter = {int(i): int(si) + 1 for i, si, yi in zip(ids, s, y) if yi == 1}
    history = ObservationSet.concat(chunks) if chunks else ObservationSet.empty()
    return MarketState(period=market.horizon + 1, price=prices[-1], s_counter=s_counter,
                       history=history, last_offered=d0, ever_offered=ever_offered, prices=prices)


# ---------------------------------------------------------------------------
# Conjoint study


def default_conjoint_grid() -> list[float]:
    return [12.0 + 0.5 * i for i in range(21)]


@dataclass
class ConjointConfig:
    """Conjoint design. ``kappa=None`` takes the conjoint shift from the
    simulation parameters."""

    kappa: float | None = None
    participants_per_group: int = 200
    tasks_per_participant: int = 10
    price_grid: list = field(default_factory=default_conjoint_grid)

    def __post_init__(self):
        self.price_grid = [float(p) for p in self.price_grid]
        if len(set(self.price_grid)) != len(self.price_grid):
            raise ValueError("conjoint price grid must not contain duplicates")
        if self.tasks_per_participant > len(self.price_grid):
            raise ValueError("tasks_per_participant cannot exceed the number of grid prices")
        if self.participants_per_group < 1 or self.tasks_per_participant < 1:
            raise ValueError("conjoint needs at least one participant and one task")


def simulate_conjoint(pop: Population, state: MarketState, cfg: ConjointConfig,
                      params: ParameterVector = TRUE_PARAMETERS, seed=0) -> ObservationSet:
    """Three groups of ``m`` participants, ``k`` distinct grid prices each.

    C0 is drawn from the last period's potential customers, C1 from the
    current subscribers and C2 from customers never offered the product.
    """
    if cfg.kappa is not None:
        params = replace(params, kappa=cfg.kappa)
    pop = pop if pop.tau == params.tau else Population(pop.spec, params.tau)
    rng = np.random.default_rng(seed)
    m = cfg.participants_per_group
    k = cfg.tasks_per_participant
    grid = np.asarray(cfg.price_grid)
    d1, _ = state.subscribers()

    pools = {"C0": state.last_offered, "C1": d1}
    groups = []
    for label in ("C0", "C1"):
        pool = np.asarray(pools[label])
        if len(pool) < m:
            raise ValueError(f"conjoint group {label} needs {m} participants but its pool has {len(pool)}")
        groups.append(rng.choice(pool, size=m, replace=False))
    groups.append(sample_ids(rng, m, pop.size, state.ever_offered | state.current_subscribers))

    chunks = []
    for g, ids in enumerate(groups):
        offered = grid[np.argsort(rng.random((m, len(grid))), axis=1)[:, :k]]
        pid = np.repeat(ids, k)
        s = np.array([state.s_counter.get(int(i), 0) for i in pid], dtype=np.int64)
        price = offered.reshape(-1)
        pi, (age, gender, location) = _choice_probabilities(pop, params, pid, price, s, 1)
        y = (rng.random(len(pid)) < pi).astype(np.int64)
        chunks.append(ObservationSet(
            customer_id=pid, time=np.full(len(pid), state.period), price=price, s_periods=s,
            conjoint=np.ones(len(pid)), domain=(s > 0).astype(np.int64), outcome=y,
            age=age, gender=gender, location=location,
            group=np.full(len(pid), g), task_index=np.tile(np.arange(k), m),
        ))
    return ObservationSet.concat(chunks)


# ---------------------------------------------------------------------------
# Ground truth at the decision period


def default_decision_grid() -> list[float]:
    return [14.0 + 0.25 * i for i in range(17)]


@dataclass
class GroundTruth:
    prices: np.ndarray
    mu0: np.ndarray
    mu1: np.ndarray
    profit: np.ndarray
    n0: int
    n1: int

    @property
    def best_price(self) -> float:
        return float(self.prices[int(np.argmax(self.profit))])


def compute_ground_truth(pop: Population, state: MarketState, grid, params: ParameterVector = TRUE_PARAMETERS,
                         n0: int = 1000, variable_cost: float = 5.0, replications: int = 200,
                         seed=0) -> GroundTruth:
    """Expected next-period profit per grid price under the true model.

    Choice probabilities are averaged exactly instead of drawing outcomes.
    Current subscribers keep their true deviations and counters; new
    potential customers are redrawn ``replications`` times.
    """
    if replications < 1:
        raise ValueError("replications must be at least 1")
    pop = pop if pop.tau == params.tau else Population(pop.spec, params.tau)
    grid = np.asarray(sorted(float(x) for x in grid))
    d1, s1 = state.subscribers()
    if len(d1) == 0:
        raise ValueError("no current subscribers; mu1 is undefined")
    rng = np.random.default_rng(seed)
    pi1, _ = _choice_probabilities(pop, params, d1[:, None], grid[None, :], s1[:, None], 0)
    mu1 = pi1.mean(axis=0)
    exclude = state.current_subscribers
    mu0 = np.zeros(len(grid))
    for _ in range(replications):
        d0 = sample_ids(rng, n0, pop.size, exclude)
        pi0, _ = _choice_probabilities(pop, params, d0[:, None], grid[None, :], 0, 0)
        mu0 += pi0.mean(axis=0)
    mu0 /= replications
    n1 = len(d1)
    profit = (n0 * mu0 + n1 * mu1) * (grid - variable_cost)
    return GroundTruth(grid, mu0, mu1, profit, n0, n1)
