"""Convergence diagnostics: rank-normalised split R-hat, bulk/tail ESS, MCSE.

All functions take a ``(chains, draws)`` array for a single parameter. A
parameter that is constant across every draw has no defined diagnostic and
yields ``nan``.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

ESS_CAP = 1.5


def _as_chains(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError("expected a (chains, draws) array")
    return x


def split_chains(x) -> np.ndarray:
    """Halve every chain; the middle draw of an odd-length chain is dropped."""
    x = _as_chains(x)
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, x.shape[1] - half:]], axis=0)


def _is_constant(x) -> bool:
    return not np.isfinite(x).all() or np.ptp(x) == 0


def rank_normalize(x) -> np.ndarray:
    """Normal scores of pooled average ranks (Blom offset 3/8)."""
    x = _as_chains(x)
    n = x.size
    r = rankdata(x, method="average").reshape(x.shape)
    return ndtri((r - 0.375) / (n + 0.25))


def _rhat(x) -> float:
    m, n = x.shape
    chain_means = x.mean(axis=1)
    within = x.var(axis=1, ddof=1).mean()
    between = n * chain_means.var(ddof=1)
    var_plus = (n - 1) / n * within + between / n
    return math.sqrt(var_plus / within)


def _check(x, min_chains=2):
    x = _as_chains(x)
    if x.shape[0] < min_chains or x.shape[1] < 4:
        raise ValueError(f"need at least {min_chains} chains with 4 draws each, got shape {x.shape}")
    return x


def split_rhat(x) -> float:
    """Rank-normalised split R-hat: max of the bulk and folded-tail versions."""
    x = _check(x)
    if _is_constant(x):
        return math.nan
    bulk = _rhat(rank_normalize(split_chains(x)))
    folded = np.abs(x - np.median(x))
    tail = _rhat(rank_normalize(split_chains(folded))) if not _is_constant(folded) else bulk
    return max(bulk, tail)


def _autocovariance(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    size = 2 ** math.ceil(math.log2(2 * n))
    centered = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(centered, n=size, axis=-1)
    return np.fft.irfft(f * np.conj(f), n=size, axis=-1)[..., :n] / n


def ess(x) -> float:
    """Effective sample size over chains, Geyer initial monotone sequence."""
    x = _as_chains(x)
    m, n = x.shape
    if n < 4 or _is_constant(x):
        return math.nan
    acov = _autocovariance(x)
    chain_var = acov[:, 0] * n / (n - 1)
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    rho = np.zeros(n)
    rho[0] = 1.0
    rho_even = 1.0
    rho_odd = 1.0 - (mean_var - acov[:, 1].mean()) / var_plus
    rho[1] = rho_odd
    t = 1
    while t < n - 3 and rho_even + rho_odd > 0:
        rho_even = 1.0 - (mean_var - acov[:, t + 1].mean()) / var_plus
        rho_odd = 1.0 - (mean_var - acov[:, t + 2].mean()) / var_plus
        if rho_even + rho_odd >= 0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t - 2
    if rho_even > 0:
        rho[max_t + 1] = rho_even
    # enforce a monotone sequence of paired sums
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2
            rho[t + 2] = rho[t + 1]
        t += 2
    total = m * n
    tau = -1.0 + 2.0 * rho[: max_t + 1].sum() + rho[max_t + 1: max_t + 2].sum()
    tau = max(tau, 1.0 / math.log10(total))
    return total / tau


def ess_bulk(x) -> float:
    x = _check(x, min_chains=1)
    if _is_constant(x):
        return math.nan
    return ess(rank_normalize(split_chains(x)))


def ess_tail(x) -> float:
    """Minimum ESS of the 5% and 95% quantile indicator chains."""
    x = _check(x, min_chains=1)
    if _is_constant(x):
        return math.nan
    values = []
    for prob in (0.05, 0.95):
        indicator = (x <= np.quantile(x, prob)).astype(float)
        values.append(ess(split_chains(indicator)))
    return min(values)


def ess_mean(x) -> float:
    """ESS for estimating the mean (split chains, no rank transform)."""
    x = _check(x, min_chains=1)
    return ess(split_chains(x))


def mcse_mean(x) -> float:
    x = _as_chains(x)
    return float(x.std(ddof=1) / math.sqrt(ess_mean(x)))


def capped(value: float, n_total: int, cap: float = ESS_CAP) -> float:
    """ESS as reported: superefficient values are capped at ``cap * n``."""
    return value if math.isnan(value) else min(value, cap * n_total)
