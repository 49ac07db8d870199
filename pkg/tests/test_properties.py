"""Property-based checks of the model equations and the profit functional."""
import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from pricefusion.decision import gross_profit
from pricefusion.model import TRUE_PARAMETERS, ParameterVector, linear_predictor, purchase_probability

finite = dict(allow_nan=False, allow_infinity=False)
coef = st.floats(-3, 3, **finite)
positive_q = st.floats(0.01, 200, **finite)
price = st.floats(0.01, 200, **finite)
counter = st.integers(0, 60)
prob = st.floats(0, 1, **finite)


@st.composite
def parameters(draw):
    return ParameterVector(
        beta0=draw(st.floats(-1, 4, **finite)),
        beta_age=(draw(coef), draw(coef), draw(coef)),
        beta_gender=draw(coef), beta_location=draw(coef),
        alpha1=draw(coef), alpha2=draw(coef), alpha3=draw(coef),
        kappa=draw(st.floats(-5, 5, **finite)),
        tau=draw(st.floats(0.001, 2, **finite)),
    )


@settings(max_examples=10_000)
@given(parameters(), positive_q, price, counter)
def test_conjoint_shift_is_a_reference_price_shift(params, q, x, s):
    shifted = linear_predictor(params, q, x, s, 1)
    plain = linear_predictor(params, q + params.kappa, x, s, 0)
    assert shifted == plain


@settings(max_examples=10_000)
@given(price, prob, prob, st.integers(0, 10_000), st.integers(0, 10_000), st.floats(0, 50, **finite),
       st.floats(0.01, 100, **finite))
def test_profit_is_linear_in_market_size(x, mu0, mu1, n0, n1, v, k):
    base = gross_profit(x, mu0, mu1, n0, n1, v)
    assert math.isclose(gross_profit(x, mu0, mu1, k * n0, k * n1, v), k * base, rel_tol=1e-12, abs_tol=1e-9)
    split = gross_profit(x, mu0, 0.0, n0, 0, v) + gross_profit(x, 0.0, mu1, 0, n1, v)
    assert math.isclose(split, base, rel_tol=1e-12, abs_tol=1e-9)
    if x >= v:
        assert base >= 0


@given(parameters().filter(lambda p: p.alpha1 > 1e-3), positive_q, price, st.floats(0.01, 5, **finite), counter,
       st.integers(0, 1))
def test_probability_monotone_in_price_and_reference(params, q, x, dx, s, c):
    def pi(q_, x_):
        return purchase_probability(linear_predictor(params, q_, x_, s, c))
    eta = linear_predictor(params, q, x, s, c)
    # strictness is only observable while the logistic is not saturated
    if abs(eta) < 30 and abs(linear_predictor(params, q, x + dx, s, c)) < 30:
        assert pi(q, x + dx) < pi(q, x)
        assert pi(q + dx, x) > pi(q, x)
    else:
        assert pi(q, x + dx) <= pi(q, x)


@given(st.floats(-700, 700, **finite))
def test_probability_strictly_inside_unit_interval(eta):
    p = purchase_probability(eta)
    assert 0 < p <= 1
    if eta < 36:
        assert p < 1


@given(parameters(), positive_q, price, counter)
def test_variants_agree_without_conjoint(params, q, x, s):
    full = linear_predictor(params, q, x, s, 0, "full")
    assert linear_predictor(params, q, x, s, 0, "multiplicative_kappa") == full
    assert math.isclose(linear_predictor(params, q, x, s, 0, "no_history"), params.alpha1 * (q - x),
                        rel_tol=1e-12, abs_tol=1e-12)


@given(st.lists(st.tuples(positive_q, price, counter, st.integers(0, 1)), min_size=1, max_size=20))
def test_vectorised_predictor_matches_scalar(rows):
    q, x, s, c = (np.array(col) for col in zip(*rows))
    vec = linear_predictor(TRUE_PARAMETERS, q, x, s, c)
    for i in range(len(rows)):
        assert vec[i] == linear_predictor(TRUE_PARAMETERS, q[i], x[i], s[i], c[i])
