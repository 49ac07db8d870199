import math

import numpy as np
import pytest

from pricefusion.inference import diagnostics as diag
from pricefusion.inference.fit import summarize
from pricefusion.inference.nuts import PosteriorDraws


def ar1(rng, n, phi, chains=4):
    x = np.empty((chains, n))
    x[:, 0] = rng.standard_normal(chains) / math.sqrt(1 - phi**2)
    for t in range(1, n):
        x[:, t] = phi * x[:, t - 1] + rng.standard_normal(chains)
    return x


def test_iid_rhat_near_one(rng):
    assert 0.999 <= diag.split_rhat(rng.standard_normal((4, 1000))) <= 1.01


def test_separated_chains(rng):
    x = np.stack([rng.standard_normal(500) - 10, rng.standard_normal(500) + 10])
    assert diag.split_rhat(x) > 1.1


def test_duplicated_chain_equals_split_of_halves(rng):
    one = rng.standard_normal(400)
    dup = diag.split_rhat(np.stack([one, one]))
    halves = diag._rhat(diag.rank_normalize(np.stack([one[:200], one[200:]] * 2)))
    folded = np.abs(np.stack([one, one]) - np.median(one))
    halves_tail = diag._rhat(diag.rank_normalize(diag.split_chains(folded)))
    assert dup == pytest.approx(max(halves, halves_tail), rel=1e-12)


def test_constant_parameter_is_undefined():
    x = np.full((4, 100), 2.5)
    assert math.isnan(diag.split_rhat(x))
    assert math.isnan(diag.ess_bulk(x)) and math.isnan(diag.ess_tail(x))


def test_too_few_draws():
    with pytest.raises(ValueError):
        diag.split_rhat(np.zeros((1, 100)))
    with pytest.raises(ValueError):
        diag.split_rhat(np.zeros((4, 3)))


def test_iid_bulk_ess(rng):
    assert 2000 <= diag.ess_bulk(rng.standard_normal((4, 1000))) <= 6000
    assert 2000 <= diag.ess_tail(rng.standard_normal((4, 1000))) <= 6000


def test_ar1_bulk_ess(rng):
    x = ar1(rng, 5000, 0.9)
    expected = x.size * (1 - 0.9) / (1 + 0.9)
    assert expected / 2 < diag.ess_bulk(x) < expected * 2
    assert expected / 2 < diag.ess_mean(x) < expected * 2


def test_alternating_chain_is_superefficient(rng):
    base = rng.standard_normal((4, 500))
    x = np.empty((4, 1000))
    x[:, 0::2], x[:, 1::2] = base, -base
    value = diag.ess_bulk(x)
    assert value > x.size
    assert diag.capped(value, x.size) == 1.5 * x.size


def test_rank_normalize_is_standard(rng):
    z = diag.rank_normalize(rng.exponential(size=(4, 1000)))
    assert abs(z.mean()) < 1e-12
    assert z.std() == pytest.approx(1.0, abs=0.01)


def test_mcse_of_iid(rng):
    x = rng.standard_normal((4, 1000))
    assert diag.mcse_mean(x) == pytest.approx(1 / math.sqrt(4000), rel=0.15)


def _draws(values, names):
    values = np.asarray(values, dtype=float)
    c = values.shape[0]
    return PosteriorDraws(names=tuple(names), draws=values, accept_stat=np.zeros(c),
                          divergences=np.zeros(c, dtype=int), step_size=np.zeros(c),
                          mean_leapfrog=np.zeros(c), post_warmup_iterations=values.shape[1])


def test_summary_of_constant_and_sorted_columns():
    col = np.arange(1, 101, dtype=float).reshape(2, 50, 1)
    const = np.full((2, 50, 1), 3.0)
    d = _draws(np.concatenate([const, col], axis=2), ["beta0", "kappa"])
    rows = {r["parameter"]: r for r in summarize(d)}
    assert rows["beta0"]["mean"] == 3.0 and rows["beta0"]["sd"] == 0.0
    assert rows["beta0"]["q2.5"] == 3.0 == rows["beta0"]["q97.5"]
    assert rows["kappa"]["q2.5"] == pytest.approx(3.475)


def test_summary_order_follows_results_table(rng):
    names = ["kappa", "alpha1", "tau", "beta0"]
    d = _draws(rng.standard_normal((2, 20, 4)), names)
    assert [r["parameter"] for r in summarize(d)] == ["beta0", "tau", "alpha1", "kappa"]
