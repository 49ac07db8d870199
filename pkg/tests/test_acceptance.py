"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line with the measured quantities before
asserting; the lines are printed together at the end of the pytest run.
Desk-scale end-to-end runs are shared between criteria and cached per seed.
"""
import dataclasses
import functools
import math
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from pricefusion import pipeline
from pricefusion.config import preset
from pricefusion.inference import diagnostics as diag
from pricefusion.inference import diagnostics_report, summarize
from pricefusion.inference.nuts import SamplerConfig, nuts_sample
from pricefusion.model import (
    TRUE_PARAMETERS,
    ModelVariant,
    ParameterVector,
    linear_predictor,
    purchase_probability,
)
from pricefusion.decision import gross_profit
from pricefusion.posterior import LogPosterior, ParameterLayout
from pricefusion.simulator import MarketConfig, PopulationSpec, simulate_purchase_history, synthesize_population

from test_posterior import gradient_error, random_point

DESK_SEEDS = (1, 2, 3, 4, 5)     # fixed before any desk run was inspected
RECOVERY_SEED = DESK_SEEDS[0]


def record(key: str, ok: bool, text: str) -> None:
    ACCEPTANCE_LINES[key] = f"[{'PASS' if ok else 'FAIL'}] criterion {key}: {text}"


@functools.lru_cache(maxsize=None)
def desk_simulation(seed: int):
    cfg = dataclasses.replace(preset("desk"), seed=seed)
    return cfg, pipeline.simulate(cfg)


@functools.lru_cache(maxsize=None)
def desk_fit(seed: int, variant: str = "full"):
    cfg, sim = desk_simulation(seed)
    cfg = dataclasses.replace(cfg, variant=ModelVariant.parse(variant))
    start = time.perf_counter()
    draws = pipeline.fit(cfg, sim)
    elapsed = time.perf_counter() - start
    curve = pipeline.optimize(cfg, sim, draws)
    return draws, curve, elapsed


# ---------------------------------------------------------------------------


def test_criterion_1_gradient(small_data):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = {}
    for variant in ModelVariant:
        layout = ParameterLayout.from_observations(small_data, variant)
        f = LogPosterior(small_data, layout)
        worst[variant.value] = max(gradient_error(f, random_point(layout, rng)) for _ in range(100))
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < 1e-6 and elapsed < 60
    record("1", ok, "gradient vs finite differences, 100 points x 4 variants: max rel err "
           + ", ".join(f"{k}={v:.1e}" for k, v in worst.items()) + f" (< 1e-6); {elapsed:.0f}s (< 60s)")
    assert ok


def _ar1_target(dim, rho):
    idx = np.arange(dim)
    prec = np.linalg.inv(rho ** np.abs(idx[:, None] - idx[None, :]))

    def f(theta):
        g = prec @ theta
        return -0.5 * float(theta @ g), -g
    return f


def test_criterion_2_sampler():
    start = time.perf_counter()
    cfg = SamplerConfig(chains=4, iterations=3000, warmup=1000, thinning=1, seed=2024)
    problems = []
    worst_rhat = 0.0
    for label, target in (("iid", lambda t: (-0.5 * float(t @ t), -t)), ("ar1", _ar1_target(10, 0.7))):
        d = nuts_sample(target, 10, cfg)
        assert d.n_draws == 2000
        for j in range(10):
            x = d.draws[:, :, j]
            if abs(x.mean()) > 3 * diag.mcse_mean(x):
                problems.append(f"{label}[{j}] mean {x.mean():.3f}")
            if not 0.8 <= x.var() <= 1.2:
                problems.append(f"{label}[{j}] var {x.var():.3f}")
            worst_rhat = max(worst_rhat, diag.split_rhat(x))
    elapsed = time.perf_counter() - start
    ok = not problems and worst_rhat < 1.01 and elapsed < 120
    record("2", ok, f"NUTS on 10-dim normal and AR(1) 0.7, 4x2000: moment failures {problems or 'none'}, "
           f"max R-hat {worst_rhat:.4f} (< 1.01); {elapsed:.0f}s (< 120s)")
    assert ok


def test_criterion_3_diagnostics():
    rng = np.random.default_rng(303)
    rhat_iid = diag.split_rhat(rng.standard_normal((4, 1000)))
    ess_iid = diag.ess_bulk(rng.standard_normal((4, 1000)))
    rhat_sep = diag.split_rhat(np.stack([rng.standard_normal(1000) - 10, rng.standard_normal(1000) + 10]))
    ok = 0.999 <= rhat_iid <= 1.01 and 2000 <= ess_iid <= 6000 and rhat_sep > 1.1
    record("3", ok, f"iid R-hat {rhat_iid:.4f} in [0.999, 1.01]; iid bulk-ESS {ess_iid:.0f} in [2000, 6000]; "
           f"separated R-hat {rhat_sep:.2f} > 1.1")
    assert ok


@pytest.mark.slow
def test_criterion_4_desk_recovery():
    draws, _, elapsed = desk_fit(RECOVERY_SEED)
    rows = summarize(draws, TRUE_PARAMETERS.as_dict())
    inside = [r["parameter"] for r in rows if r["q2.5"] <= r["true"] <= r["q97.5"]]
    missed = [r["parameter"] for r in rows if r["parameter"] not in inside]
    report = diagnostics_report(draws)
    ok = (len(inside) >= 10 and report["max_rhat"] < 1.01 and report["divergence_rate"] < 1e-3
          and elapsed < 1800)
    record("4", ok, f"desk recovery (seed {RECOVERY_SEED}): {len(inside)}/{len(rows)} true values inside 95% CI "
           f"(>= 10; missed {missed or 'none'}), max R-hat {report['max_rhat']:.4f} (< 1.01), "
           f"divergences {report['divergence_rate']:.3%} (< 0.1%), fit {elapsed / 60:.1f} min (< 30)")
    assert ok


@pytest.mark.slow
def test_criterion_5_desk_optimal_price():
    _, sim = desk_simulation(RECOVERY_SEED)
    _, curve, _ = desk_fit(RECOVERY_SEED)
    truth_best = sim.truth.best_price
    ok = abs(curve.modal_price - truth_best) <= 0.5 + 1e-9
    record("5", ok, f"desk substitute (seed {RECOVERY_SEED}): modal price {curve.modal_price:.2f} "
           f"(p = {curve.p_optimal.max():.2f}) vs ground-truth argmax {truth_best:.2f} (within 0.50)")
    assert ok


@pytest.mark.slow
@pytest.mark.paper_scale
def test_criterion_5_paper_scale():
    cfg = preset("paper")
    sim = pipeline.simulate(cfg)
    draws = pipeline.fit(cfg, sim)
    curve = pipeline.optimize(cfg, sim, draws)
    at15 = curve.at(15.0)["mean"]
    ok = abs(curve.modal_price - 15.0) <= 0.25 + 1e-9 and abs(at15 - 14060) <= 0.05 * 14060
    record("5.paper", ok, f"paper scale: modal price {curve.modal_price:.2f} (15.00 +/- 0.25), "
           f"mean profit at 15.00 {at15:.0f} (within 5% of 14060)")
    assert ok


@pytest.mark.slow
def test_criterion_6_coverage():
    covered = []
    details = []
    for seed in DESK_SEEDS:
        _, sim = desk_simulation(seed)
        _, curve, _ = desk_fit(seed)
        truth = sim.truth.profit
        outside = int(np.sum((truth < curve.lo95) | (truth > curve.hi95)))
        covered.append(outside == 0)
        details.append(f"seed {seed}: {outside} price(s) outside")
    ok = sum(covered) >= 4
    record("6", ok, f"profit-band coverage in {sum(covered)}/{len(DESK_SEEDS)} desk runs (>= 4); "
           + "; ".join(details))
    assert ok


@pytest.mark.slow
def test_criterion_7_misspecification():
    _, sim = desk_simulation(RECOVERY_SEED)
    truth = sim.truth.profit
    prices = sim.truth.prices
    _, full, _ = desk_fit(RECOVERY_SEED)
    _, no_hist, _ = desk_fit(RECOVERY_SEED, "no_history")
    _, mult, _ = desk_fit(RECOVERY_SEED, "multiplicative_kappa")
    _, no_demo, _ = desk_fit(RECOVERY_SEED, "no_demographics")

    hist_bias = float(np.mean(no_hist.mean - truth))
    gap = mult.mean - truth
    low, high = float(np.mean(gap[prices < 16])), float(np.mean(gap[prices > 16]))
    checks = {
        "no_history overestimates": hist_bias > 0,
        "multiplicative_kappa sign change": np.sign(low) != np.sign(high),
        "no_demographics modal matches full": no_demo.modal_price == full.modal_price,
    }
    ok = all(checks.values())
    record("7", ok, f"no_history mean bias {hist_bias:+.1f} (> 0); multiplicative_kappa bias below/above 16: "
           f"{low:+.1f}/{high:+.1f} (sign change); modal price no_demographics {no_demo.modal_price:.2f} vs full "
           f"{full.modal_price:.2f}; failed: {[k for k, v in checks.items() if not v] or 'none'}")
    assert ok


def test_criterion_8_properties_and_frequencies():
    rng = np.random.default_rng(808)
    n = 10_000
    # conjoint shift equals a reference-price shift, case by case
    eq1_fail = 0
    for _ in range(n):
        params = ParameterVector(beta0=rng.uniform(-1, 4), beta_age=tuple(rng.uniform(-3, 3, 3)),
                                 beta_gender=rng.uniform(-3, 3), beta_location=rng.uniform(-3, 3),
                                 alpha1=rng.uniform(-3, 3), alpha2=rng.uniform(-3, 3), alpha3=rng.uniform(-3, 3),
                                 kappa=rng.uniform(-5, 5), tau=rng.uniform(0.001, 2))
        q, x, s = rng.uniform(0.01, 200), rng.uniform(0.01, 200), int(rng.integers(0, 60))
        eq1_fail += linear_predictor(params, q, x, s, 1) != linear_predictor(params, q + params.kappa, x, s, 0)
    # profit is linear in (n0, n1)
    x, mu0, mu1 = rng.uniform(0.01, 200, n), rng.uniform(0, 1, n), rng.uniform(0, 1, n)
    n0, n1, v, k = rng.integers(0, 10_000, n), rng.integers(0, 10_000, n), rng.uniform(0, 50, n), rng.uniform(0.01, 100, n)
    base = gross_profit(x, mu0, mu1, n0, n1, v)
    eq4_fail = int(np.sum(~np.isclose(gross_profit(x, mu0, mu1, k * n0, k * n1, v), k * base, rtol=1e-12, atol=1e-9)))
    # Bernoulli frequencies per age stratum on 10 000 simulated decisions
    pop = synthesize_population(PopulationSpec(seed=88))
    st = simulate_purchase_history(pop, MarketConfig(n0=n, horizon=1), TRUE_PARAMETERS, seed=89)
    h = st.history
    q = np.exp(TRUE_PARAMETERS.beta0 + TRUE_PARAMETERS.age_effects[h.age]
               + TRUE_PARAMETERS.gender_effects[h.gender] + TRUE_PARAMETERS.location_effects[h.location]
               + pop.u(h.customer_id))
    pi = purchase_probability(linear_predictor(TRUE_PARAMETERS, q, h.price, h.s_periods, 0))
    z_scores = []
    for stratum in range(4):
        m = h.age == stratum
        se = math.sqrt(np.sum(pi[m] * (1 - pi[m]))) / m.sum()
        z_scores.append((h.outcome[m].mean() - pi[m].mean()) / se)
    ok = eq1_fail == 0 and eq4_fail == 0 and len(h) == n and max(map(abs, z_scores)) < 3
    record("8", ok, f"conjoint-shift invariance failures {eq1_fail}/{n}; profit linearity failures {eq4_fail}/{n}; "
           f"age-stratum frequency z-scores {', '.join(f'{z:+.2f}' for z in z_scores)} (|z| < 3)")
    assert ok


if os.environ.get("PRICEFUSION_PAPER_SCALE") != "1":
    ACCEPTANCE_LINES["5.paper"] = ("[SKIP] criterion 5.paper: paper-scale optimal price "
                                   "(opt in with PRICEFUSION_PAPER_SCALE=1)")
