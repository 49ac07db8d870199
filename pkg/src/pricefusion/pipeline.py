"""In-memory end-to-end runs: simulate, fit, price.

The CLI wraps these with file persistence; experiments and the acceptance
suite call them directly.
"""
from __future__ import annotations

from dataclasses import dataclass

from .config import RunConfig
from .decision import ProfitCurve, build_decision_input, profit_curve
from .inference import PosteriorDraws, fit_model
from .model import ModelVariant, ObservationSet
from .simulator import (
    GroundTruth,
    MarketState,
    Population,
    compute_ground_truth,
    simulate_conjoint,
    simulate_purchase_history,
)


@dataclass
class Simulation:
    population: Population
    state: MarketState
    conjoint: ObservationSet
    truth: GroundTruth


def simulate(cfg: RunConfig) -> Simulation:
    seeds = cfg.seeds()
    pop = Population(cfg.population_spec(), cfg.truth.tau)
    state = simulate_purchase_history(pop, cfg.market, cfg.truth, seed=seeds["history"])
    conjoint = simulate_conjoint(pop, state, cfg.conjoint, cfg.truth, seed=seeds["conjoint"])
    truth = compute_ground_truth(pop, state, cfg.decision.price_grid, cfg.truth, n0=cfg.decision_n0,
                                 variable_cost=cfg.decision.variable_cost,
                                 replications=cfg.decision.truth_replications, seed=seeds["truth"])
    return Simulation(pop, state, conjoint, truth)


def fit(cfg: RunConfig, sim: Simulation, variant: ModelVariant | str | None = None,
        use_conjoint: bool = True) -> PosteriorDraws:
    variant = cfg.variant if variant is None else ModelVariant.parse(variant)
    conjoint = sim.conjoint if use_conjoint else ObservationSet.empty()
    return fit_model(sim.state.history, conjoint, variant, cfg.priors, cfg.sampler_config())


def optimize(cfg: RunConfig, sim: Simulation, draws: PosteriorDraws) -> ProfitCurve:
    d1_ids, d1_s = sim.state.subscribers()
    inp = build_decision_input(sim.population, d1_ids, d1_s, n0=cfg.decision_n0,
                               variable_cost=cfg.decision.variable_cost, price_grid=cfg.decision.price_grid,
                               seed=cfg.seeds()["decision"], d1_effects=cfg.decision.d1_effects)
    return profit_curve(draws, inp)
