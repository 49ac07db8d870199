"""Posterior-predictive price choice.

For each retained posterior draw the expected purchase probabilities of new
potential customers (``mu0``) and of current subscribers (``mu1``) are
evaluated on a price grid and combined into expected gross profit

    f(x) = (n0 * mu0(x) + n1 * mu1(x)) * (x - V).

Across draws this gives a profit curve with credible bands and the
probability that each grid price is the profit-maximising one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .inference.nuts import PosteriorDraws
from .model import (
    Customer,
    Demographics,
    ModelVariant,
    ParameterVector,
    linear_predictor,
    purchase_probability,
    reference_prices,
)

D1_EFFECTS = ("posterior", "fresh")


@dataclass(frozen=True)
class CustomerGroup:
    """Demographic codes (and, for subscribers, ids and counters) of a customer set."""

    age: np.ndarray
    gender: np.ndarray
    location: np.ndarray
    s: np.ndarray
    ids: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.age)
        for name in ("gender", "location", "s"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"customer group column {name!r} has the wrong length")
        if self.ids is not None and len(self.ids) != n:
            raise ValueError("customer group ids have the wrong length")
        if (np.asarray(self.s) < 0).any():
            raise ValueError("subscription counters must be non-negative")

    def __len__(self) -> int:
        return len(self.age)

    @classmethod
    def from_customers(cls, customers: Sequence, s_values=None) -> "CustomerGroup":
        """Build from ``Customer`` or ``Demographics`` objects."""
        demos = [c.demographics if isinstance(c, Customer) else c for c in customers]
        if not all(isinstance(d, Demographics) for d in demos):
            raise TypeError("customers must be Customer or Demographics instances")
        codes = np.array([d.codes for d in demos], dtype=np.intp).reshape(-1, 3)
        ids = None
        if customers and all(isinstance(c, Customer) for c in customers):
            ids = np.array([c.id for c in customers], dtype=np.int64)
        s = np.zeros(len(demos), dtype=np.int64) if s_values is None else np.asarray(s_values, dtype=np.int64)
        return cls(codes[:, 0], codes[:, 1], codes[:, 2], s, ids)


def posterior_mu(draw: ParameterVector, customers: CustomerGroup, price, rng: np.random.Generator | None = None,
                 u=None, variant: ModelVariant | str = ModelVariant.FULL):
    """Mean purchase probability of ``customers`` at ``price`` under one draw.

    Deviations ``u`` are generated from ``N(0, tau^2)`` with ``rng`` unless
    given explicitly. ``price`` may be a scalar or a grid; the same ``u`` is
    used at every grid price.
    """
    if len(customers) == 0:
        raise ValueError("posterior_mu needs at least one customer")
    if u is None:
        if rng is None:
            raise ValueError("either u or rng must be given")
        u = draw.tau * rng.standard_normal(len(customers))
    u = np.asarray(u, dtype=float)
    if u.shape != (len(customers),):
        raise ValueError("u must have one entry per customer")
    q = reference_prices(draw, customers.age, customers.gender, customers.location, u, variant)
    price = np.asarray(price, dtype=float)
    eta = linear_predictor(draw, q[:, None], price.reshape(1, -1), np.asarray(customers.s)[:, None], False, variant)
    mu = purchase_probability(eta).mean(axis=0)
    return float(mu[0]) if price.ndim == 0 else mu


def gross_profit(price, mu0, mu1, n0: int, n1: int, v: float):
    """Expected gross profit of one period at ``price``."""
    mu0 = np.asarray(mu0, dtype=float)
    mu1 = np.asarray(mu1, dtype=float)
    if ((mu0 < 0) | (mu0 > 1) | (mu1 < 0) | (mu1 > 1)).any():
        raise ValueError("purchase probabilities must lie in [0, 1]")
    out = (n0 * mu0 + n1 * mu1) * (np.asarray(price, dtype=float) - v)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class DecisionInput:
    """Customers and economics of the period being priced.

    ``d1_effects`` selects how subscriber deviations are obtained:
    ``"posterior"`` reuses each draw's fitted ``u`` for the subscriber
    (every subscriber has purchase records), ``"fresh"`` regenerates them
    from ``N(0, tau^2)`` like the new customers.
    """

    d0: CustomerGroup
    d1: CustomerGroup
    n0: int = 1000
    n1: int | None = None
    variable_cost: float = 5.0
    price_grid: Sequence[float] = field(default_factory=lambda: [14.0 + 0.25 * i for i in range(17)])
    seed: int = 0
    d1_effects: str = "posterior"

    def __post_init__(self):
        if self.n1 is None:
            self.n1 = len(self.d1)
        if len(self.d0) != self.n0:
            raise ValueError(f"|d0| = {len(self.d0)} does not match n0 = {self.n0}")
        if len(self.d1) != self.n1:
            raise ValueError(f"|d1| = {len(self.d1)} does not match n1 = {self.n1}")
        if (np.asarray(self.d0.s) != 0).any():
            raise ValueError("new potential customers must have S = 0")
        if self.n1 and (np.asarray(self.d1.s) <= 0).any():
            raise ValueError("current subscribers must have S > 0")
        if self.d1_effects not in D1_EFFECTS:
            raise ValueError(f"d1_effects must be one of {D1_EFFECTS}")
        if self.d1_effects == "posterior" and self.n1 and self.d1.ids is None:
            raise ValueError("posterior subscriber effects need subscriber ids")


@dataclass
class ProfitCurve:
    prices: np.ndarray
    mean: np.ndarray
    lo95: np.ndarray
    hi95: np.ndarray
    samples: np.ndarray          # (draws, prices)
    p_optimal: np.ndarray
    mu0: np.ndarray              # (draws, prices)
    mu1: np.ndarray

    @property
    def modal_price(self) -> float:
        return float(self.prices[int(np.argmax(self.p_optimal))])

    def at(self, price: float) -> dict:
        i = int(np.argmin(np.abs(self.prices - price)))
        if not math.isclose(self.prices[i], price, abs_tol=1e-9):
            raise KeyError(f"price {price} is not on the grid")
        return {"price": float(self.prices[i]), "mean": float(self.mean[i]),
                "lo95": float(self.lo95[i]), "hi95": float(self.hi95[i]), "p_optimal": float(self.p_optimal[i])}


def _draw_parameters(draws: PosteriorDraws) -> list[ParameterVector]:
    flat = draws.draws.reshape(-1, len(draws.names))
    return [ParameterVector.from_dict(dict(zip(draws.names, row))) for row in flat]


def _subscriber_effects(draws: PosteriorDraws, ids: np.ndarray) -> np.ndarray:
    if draws.individual is None:
        raise ValueError("draws carry no individual effects; refit keeping subscriber effects or use fresh draws")
    col = {name: j for j, name in enumerate(draws.individual_names)}
    missing = [int(i) for i in ids if f"u[{i}]" not in col]
    if missing:
        raise ValueError(f"draws lack individual effects for {len(missing)} subscriber(s), e.g. id {missing[0]}")
    index = np.array([col[f"u[{i}]"] for i in ids], dtype=np.intp)
    return draws.individual.reshape(-1, draws.individual.shape[-1])[:, index]


def profit_curve(draws: PosteriorDraws, inp: DecisionInput,
                 variant: ModelVariant | str | None = None) -> ProfitCurve:
    """Expected-profit curve over the grid, one profit sample per retained draw."""
    grid = np.asarray(sorted(float(x) for x in inp.price_grid))
    if len(grid) == 0:
        raise ValueError("price grid is empty")
    if draws.n_draws == 0 or draws.n_chains == 0:
        raise ValueError("no posterior draws")
    variant = ModelVariant.parse(variant if variant is not None else draws.meta.get("variant", "full"))
    params = _draw_parameters(draws)
    u1_all = None
    if inp.n1 and inp.d1_effects == "posterior":
        u1_all = _subscriber_effects(draws, inp.d1.ids)

    k_total = len(params)
    mu0 = np.zeros((k_total, len(grid)))
    mu1 = np.zeros((k_total, len(grid)))
    for k, p in enumerate(params):
        rng = np.random.default_rng([inp.seed, k])
        if inp.n0:
            mu0[k] = posterior_mu(p, inp.d0, grid, rng, variant=variant)
        if inp.n1:
            u1 = u1_all[k] if u1_all is not None else None
            mu1[k] = posterior_mu(p, inp.d1, grid, rng, u=u1, variant=variant)
    samples = gross_profit(grid[None, :], mu0, mu1, inp.n0, inp.n1, inp.variable_cost)
    # np.argmax returns the first maximum, i.e. the lowest price on ties
    best = np.argmax(samples, axis=1)
    p_optimal = np.bincount(best, minlength=len(grid)) / k_total
    return ProfitCurve(
        prices=grid,
        mean=samples.mean(axis=0),
        lo95=np.quantile(samples, 0.025, axis=0),
        hi95=np.quantile(samples, 0.975, axis=0),
        samples=samples,
        p_optimal=p_optimal,
        mu0=mu0,
        mu1=mu1,
    )


def subscribers_from_history(history) -> tuple[np.ndarray, np.ndarray]:
    """Subscribers entering the period after the history and their counters."""
    hist = history.subset(history.conjoint == 0)
    if len(hist) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    last = hist.subset((hist.time == hist.time.max()) & (hist.outcome == 1))
    order = np.argsort(last.customer_id, kind="stable")
    return last.customer_id[order], last.s_periods[order] + 1


def build_decision_input(pop, d1_ids, d1_s, n0: int = 1000, variable_cost: float = 5.0,
                         price_grid=None, seed: int = 0, d1_effects: str = "posterior") -> DecisionInput:
    """Decision-time customer sets: subscribers verbatim, new customers drawn
    from the population outside the subscriber base."""
    from .simulator import default_decision_grid, sample_ids

    d1_ids = np.asarray(d1_ids, dtype=np.int64)
    d1_s = np.asarray(d1_s, dtype=np.int64)
    rng = np.random.default_rng([seed, 0xD0])
    d0_ids = np.sort(sample_ids(rng, n0, pop.size, set(int(i) for i in d1_ids)))
    a0, g0, l0 = pop.codes(d0_ids)
    a1, g1, l1 = pop.codes(d1_ids)
    return DecisionInput(
        d0=CustomerGroup(a0, g0, l0, np.zeros(n0, dtype=np.int64), d0_ids),
        d1=CustomerGroup(a1, g1, l1, d1_s, d1_ids),
        n0=n0, n1=len(d1_ids), variable_cost=variable_cost,
        price_grid=list(default_decision_grid() if price_grid is None else price_grid),
        seed=seed, d1_effects=d1_effects,
    )


def decision_input_from_market(pop, state, **kwargs) -> DecisionInput:
    ids, s = state.subscribers()
    return build_decision_input(pop, ids, s, **kwargs)
