"""Unconstrained log posterior of the hierarchical choice model.

Sampled coordinates are the free regression coefficients, ``log_tau`` and
one standard-normal ``z`` per customer with ``u = tau * z``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    ModelVariant,
    ParameterVector,
    PriorConfig,
    as_observation_set,
    variant_parameter_names,
)

_HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


@dataclass(frozen=True)
class ParameterLayout:
    """Maps between the flat sampler vector and model parameters."""

    variant: ModelVariant
    customer_ids: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "variant", ModelVariant.parse(self.variant))
        ids = np.asarray(self.customer_ids, dtype=np.int64)
        if len(np.unique(ids)) != len(ids):
            raise ValueError("customer ids in a layout must be unique")
        object.__setattr__(self, "customer_ids", ids)

    @classmethod
    def from_observations(cls, obs, variant=ModelVariant.FULL) -> "ParameterLayout":
        obs = as_observation_set(obs)
        return cls(ModelVariant.parse(variant), np.unique(obs.customer_id))

    @property
    def global_names(self) -> tuple[str, ...]:
        """Free globals on the constrained scale (``tau`` rather than ``log_tau``)."""
        return variant_parameter_names(self.variant)

    @property
    def unconstrained_names(self) -> tuple[str, ...]:
        g = tuple("log_tau" if n == "tau" else n for n in self.global_names)
        return g + tuple(f"z[{i}]" for i in self.customer_ids)

    @property
    def n_globals(self) -> int:
        return len(self.global_names)

    @property
    def n_customers(self) -> int:
        return len(self.customer_ids)

    @property
    def dim(self) -> int:
        return self.n_globals + self.n_customers

    def unpack(self, theta) -> tuple[ParameterVector, np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"parameter vector has shape {theta.shape}, layout expects ({self.dim},)")
        values = dict(zip(self.global_names, theta[: self.n_globals]))
        values["tau"] = math.exp(values["tau"])
        return ParameterVector.from_dict(values), theta[self.n_globals:]

    def pack(self, params: ParameterVector, z=None) -> np.ndarray:
        values = params.as_dict()
        values["tau"] = math.log(params.tau)
        g = [values[n] for n in self.global_names]
        z = np.zeros(self.n_customers) if z is None else np.asarray(z, dtype=float)
        if z.shape != (self.n_customers,):
            raise ValueError("z must have one entry per customer in the layout")
        return np.concatenate([g, z])

    def u_map(self, theta) -> dict[int, float]:
        params, z = self.unpack(theta)
        return {int(i): float(params.tau * zi) for i, zi in zip(self.customer_ids, z)}


class LogPosterior:
    """Callable ``theta -> (log density, gradient)`` over fixed data.

    Record order is fixed at construction so repeated evaluations are
    bit-identical. Instances are read-only after construction and may be
    shared between threads or pickled to worker processes.
    """

    def __init__(self, obs, layout: ParameterLayout, priors: PriorConfig = PriorConfig()):
        obs = as_observation_set(obs)
        self.layout = layout
        self.priors = priors
        self.variant = layout.variant
        ids = layout.customer_ids
        pos = np.searchsorted(ids, obs.customer_id)
        pos = np.clip(pos, 0, max(len(ids) - 1, 0))
        if len(obs) and (len(ids) == 0 or (ids[pos] != obs.customer_id).any()):
            missing = obs.customer_id[(len(ids) == 0) | (ids[pos] != obs.customer_id)][0]
            raise KeyError(f"customer_id {missing} is not in the parameter layout")
        self.record_customer = pos.astype(np.intp)
        n_cust = layout.n_customers
        self.cust_age = np.zeros(n_cust, dtype=np.intp)
        self.cust_gender = np.zeros(n_cust, dtype=np.intp)
        self.cust_location = np.zeros(n_cust, dtype=np.intp)
        if len(obs):
            for name, col in (("cust_age", obs.age), ("cust_gender", obs.gender),
                              ("cust_location", obs.location)):
                target = getattr(self, name)
                target[self.record_customer] = col
                if (target[self.record_customer] != col).any():
                    raise ValueError(f"customer demographics are inconsistent across records ({name[5:]})")
        self.price = obs.price.astype(float)
        self.conjoint = obs.conjoint.astype(float)
        self.log1p_s = np.log1p(obs.s_periods.astype(float))
        self.new_customer = (obs.s_periods == 0).astype(float)
        self.outcome = obs.outcome.astype(float)

        names = layout.global_names
        self._slot = {n: i for i, n in enumerate(names)}
        self._coef_idx = np.array([i for i, n in enumerate(names) if n != "tau"], dtype=np.intp)
        self._coef_sd = priors.coef_sd
        self._log_coef_norm = -math.log(self._coef_sd) - _HALF_LOG_2PI

    def _get(self, g, name):
        i = self._slot.get(name)
        return 0.0 if i is None else g[i]

    def __call__(self, theta) -> tuple[float, np.ndarray]:
        # overflow far out in the tails surfaces as a -inf log density
        with np.errstate(over="ignore", invalid="ignore"):
            return self._evaluate(theta)

    def _evaluate(self, theta) -> tuple[float, np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        lay = self.layout
        if theta.shape != (lay.dim,):
            raise ValueError(f"parameter vector has shape {theta.shape}, layout expects ({lay.dim},)")
        if not np.isfinite(theta).all():
            raise ValueError("log posterior evaluated at a non-finite parameter vector")
        ng = lay.n_globals
        g = theta[:ng]
        z = theta[ng:]
        variant = self.variant
        demographic = variant is not ModelVariant.NO_DEMOGRAPHICS
        history = variant is not ModelVariant.NO_HISTORY
        multiplicative = variant is ModelVariant.MULTIPLICATIVE_KAPPA

        log_tau = g[self._slot["tau"]]
        tau = math.exp(log_tau)
        a1 = self._get(g, "alpha1")
        a2 = self._get(g, "alpha2")
        a3 = self._get(g, "alpha3")
        kappa = self._get(g, "kappa")

        eta_c = self._get(g, "beta0") + tau * z
        if demographic:
            age_eff = np.array([0.0, g[self._slot["beta_age[31-45]"]], g[self._slot["beta_age[46-60]"]],
                                g[self._slot["beta_age[61-75]"]]])
            eta_c = (eta_c + age_eff[self.cust_age]
                     + np.array([0.0, g[self._slot["beta_gender[female]"]]])[self.cust_gender]
                     + np.array([0.0, g[self._slot["beta_location[rural]"]]])[self.cust_location])
        q_c = np.exp(eta_c)
        q = q_c[self.record_customer]
        if multiplicative:
            price_scale = 1.0 + self.conjoint * (kappa - 1.0)
            gap = q - price_scale * self.price
        else:
            gap = q + self.conjoint * kappa - self.price
        lin = a1 * gap
        if history:
            lin = lin + a2 * self.log1p_s + a3 * self.new_customer

        # y*log(sigmoid(lin)) + (1-y)*log(sigmoid(-lin)) == y*lin - softplus(lin);
        # one exp(-|lin|) serves both softplus and the sigmoid (logaddexp is slow)
        e = np.exp(-np.abs(lin))
        softplus = np.maximum(lin, 0.0) + np.log1p(e)
        loglik = float(np.dot(self.outcome, lin) - softplus.sum())
        inv = 1.0 / (1.0 + e)
        resid = self.outcome - np.where(lin >= 0, inv, e * inv)

        grad = np.empty_like(theta)
        gg = grad[:ng]
        gg[:] = 0.0
        if "alpha1" in self._slot:
            gg[self._slot["alpha1"]] = np.dot(resid, gap)
        if history:
            gg[self._slot["alpha2"]] = np.dot(resid, self.log1p_s)
            gg[self._slot["alpha3"]] = np.dot(resid, self.new_customer)
        if multiplicative:
            gg[self._slot["kappa"]] = -a1 * np.dot(resid, self.conjoint * self.price)
        else:
            gg[self._slot["kappa"]] = a1 * np.dot(resid, self.conjoint)

        dq_c = np.bincount(self.record_customer, weights=resid, minlength=lay.n_customers) * a1
        deta_c = dq_c * q_c
        gg[self._slot["beta0"]] = deta_c.sum()
        if demographic:
            by_age = np.bincount(self.cust_age, weights=deta_c, minlength=4)
            gg[self._slot["beta_age[31-45]"]] = by_age[1]
            gg[self._slot["beta_age[46-60]"]] = by_age[2]
            gg[self._slot["beta_age[61-75]"]] = by_age[3]
            gg[self._slot["beta_gender[female]"]] = np.dot(deta_c, self.cust_gender)
            gg[self._slot["beta_location[rural]"]] = np.dot(deta_c, self.cust_location)
        gg[self._slot["tau"]] = tau * np.dot(deta_c, z)

        coefs = g[self._coef_idx]
        sd = self._coef_sd
        logprior = float(np.sum(-0.5 * (coefs / sd) ** 2)) + len(coefs) * self._log_coef_norm
        gg[self._coef_idx] += -coefs / sd**2

        # gamma prior on tau plus log-Jacobian of tau = exp(log_tau)
        pr = self.priors
        logprior += (pr.tau_shape * log_tau - tau / pr.tau_scale
                     - math.lgamma(pr.tau_shape) - pr.tau_shape * math.log(pr.tau_scale))
        gg[self._slot["tau"]] += pr.tau_shape - tau / pr.tau_scale

        logprior += float(np.sum(-0.5 * z * z)) - len(z) * _HALF_LOG_2PI
        grad[ng:] = deta_c * tau - z

        value = loglik + logprior
        if not math.isfinite(value):
            value = -math.inf
        return value, grad


def log_posterior_and_gradient(theta, obs, variant=ModelVariant.FULL,
                               layout: ParameterLayout | None = None,
                               priors: PriorConfig = PriorConfig()) -> tuple[float, np.ndarray]:
    """One-shot evaluation; build a :class:`LogPosterior` for repeated calls."""
    obs = as_observation_set(obs)
    if layout is None:
        layout = ParameterLayout.from_observations(obs, variant)
    elif layout.variant is not ModelVariant.parse(variant):
        raise ValueError("layout variant does not match the requested variant")
    return LogPosterior(obs, layout, priors)(theta)

