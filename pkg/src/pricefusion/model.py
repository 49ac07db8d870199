"""Reference-price / purchase-probability model with conjoint shift.

The reference price of customer ``i`` is log-normal around a demographic
baseline,

    Q_i = exp(beta0 + beta_age[A_i] + beta_gender[G_i] + beta_location[L_i] + u_i),

and the purchase decision is Bernoulli with logit

    alpha1 * (Q_i + 1[conjoint] * kappa - price)
        + alpha2 * log(S + 1) + alpha3 * 1[S == 0].

Everything here is a pure function of its inputs. Functions accept scalars
or numpy arrays and broadcast.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import expit, gammaln

AGE_GROUPS = ("18-30", "31-45", "46-60", "61-75")
GENDERS = ("male", "female")
LOCATIONS = ("urban", "rural")

N_CELLS = len(AGE_GROUPS) * len(GENDERS) * len(LOCATIONS)


class ModelVariant(str, Enum):
    FULL = "full"
    NO_DEMOGRAPHICS = "no_demographics"
    MULTIPLICATIVE_KAPPA = "multiplicative_kappa"
    NO_HISTORY = "no_history"

    @classmethod
    def parse(cls, value: "ModelVariant | str") -> "ModelVariant":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value))
        except ValueError:
            names = ", ".join(v.value for v in cls)
            raise ValueError(f"unknown model variant {value!r}; expected one of {names}") from None


@dataclass(frozen=True)
class Demographics:
    age_group: str
    gender: str
    location: str

    def __post_init__(self):
        if self.age_group not in AGE_GROUPS:
            raise ValueError(f"age_group must be one of {AGE_GROUPS}, got {self.age_group!r}")
        if self.gender not in GENDERS:
            raise ValueError(f"gender must be one of {GENDERS}, got {self.gender!r}")
        if self.location not in LOCATIONS:
            raise ValueError(f"location must be one of {LOCATIONS}, got {self.location!r}")

    @property
    def codes(self) -> tuple[int, int, int]:
        return (
            AGE_GROUPS.index(self.age_group),
            GENDERS.index(self.gender),
            LOCATIONS.index(self.location),
        )

    @property
    def cell(self) -> int:
        return cell_index(*self.codes)

    @property
    def key(self) -> str:
        return f"{self.age_group}|{self.gender}|{self.location}"

    @classmethod
    def from_codes(cls, age: int, gender: int, location: int) -> "Demographics":
        return cls(AGE_GROUPS[age], GENDERS[gender], LOCATIONS[location])

    @classmethod
    def from_key(cls, key: str) -> "Demographics":
        parts = key.split("|")
        if len(parts) != 3:
            raise ValueError(f"demographic key must look like 'age|gender|location', got {key!r}")
        return cls(*parts)


def cell_index(age, gender, location):
    """Flat index of a demographic cell, age-major."""
    return (np.asarray(age) * len(GENDERS) + np.asarray(gender)) * len(LOCATIONS) + np.asarray(location)


def cell_codes(cell):
    cell = np.asarray(cell)
    location = cell % len(LOCATIONS)
    gender = (cell // len(LOCATIONS)) % len(GENDERS)
    age = cell // (len(LOCATIONS) * len(GENDERS))
    return age, gender, location


def all_cells() -> list[Demographics]:
    return [Demographics.from_codes(*map(int, cell_codes(c))) for c in range(N_CELLS)]


@dataclass(frozen=True)
class Customer:
    id: int
    demographics: Demographics
    u: float

    def __post_init__(self):
        if self.id < 0:
            raise ValueError("customer id must be non-negative")
        if not math.isfinite(self.u):
            raise ValueError("individual deviation u must be finite")


@dataclass(frozen=True)
class ParameterVector:
    """Global model parameters.

    Baseline categories (age 18-30, male, urban) are pinned at zero and are
    therefore not stored: ``beta_age`` holds the three non-baseline age
    effects, ``beta_gender`` the female effect and ``beta_location`` the
    rural effect.
    """

    beta0: float
    beta_age: tuple[float, float, float] = (0.0, 0.0, 0.0)
    beta_gender: float = 0.0
    beta_location: float = 0.0
    alpha1: float = 0.0
    alpha2: float = 0.0
    alpha3: float = 0.0
    kappa: float = 0.0
    tau: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "beta_age", tuple(float(b) for b in self.beta_age))
        if len(self.beta_age) != len(AGE_GROUPS) - 1:
            raise ValueError("beta_age needs one value per non-baseline age group")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")

    @property
    def age_effects(self) -> np.ndarray:
        return np.array((0.0, *self.beta_age))

    @property
    def gender_effects(self) -> np.ndarray:
        return np.array((0.0, self.beta_gender))

    @property
    def location_effects(self) -> np.ndarray:
        return np.array((0.0, self.beta_location))

    def as_dict(self) -> dict[str, float]:
        return dict(zip(GLOBAL_NAMES, self.to_array()))

    def to_array(self) -> np.ndarray:
        return np.array(
            [self.beta0, *self.beta_age, self.beta_gender, self.beta_location,
             self.tau, self.alpha1, self.alpha2, self.alpha3, self.kappa]
        )

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "ParameterVector":
        v = [float(x) for x in values]
        if len(v) != len(GLOBAL_NAMES):
            raise ValueError(f"expected {len(GLOBAL_NAMES)} values, got {len(v)}")
        return cls(beta0=v[0], beta_age=tuple(v[1:4]), beta_gender=v[4], beta_location=v[5],
                   tau=v[6], alpha1=v[7], alpha2=v[8], alpha3=v[9], kappa=v[10])

    @classmethod
    def from_dict(cls, values: Mapping[str, float]) -> "ParameterVector":
        """Build from named values; absent names take their neutral default."""
        defaults = cls(beta0=0.0).as_dict()
        return cls.from_array([values.get(n, defaults[n]) for n in GLOBAL_NAMES])


# Table-of-results order; also the column order of draws and summaries.
GLOBAL_NAMES = (
    "beta0",
    "beta_age[31-45]", "beta_age[46-60]", "beta_age[61-75]",
    "beta_gender[female]",
    "beta_location[rural]",
    "tau",
    "alpha1", "alpha2", "alpha3",
    "kappa",
)
DEMOGRAPHIC_NAMES = GLOBAL_NAMES[1:6]
HISTORY_NAMES = ("alpha2", "alpha3")

TRUE_PARAMETERS = ParameterVector(
    beta0=2.8,
    beta_age=(-0.015, -0.03, -0.045),
    beta_gender=0.01,
    beta_location=-0.02,
    tau=0.1,
    alpha1=0.35,
    alpha2=0.45,
    alpha3=-0.3,
    kappa=0.75,
)


def variant_parameter_names(variant: ModelVariant | str) -> tuple[str, ...]:
    """Global parameters that are free (estimated) under ``variant``."""
    variant = ModelVariant.parse(variant)
    names = GLOBAL_NAMES
    if variant is ModelVariant.NO_DEMOGRAPHICS:
        names = tuple(n for n in names if n not in DEMOGRAPHIC_NAMES)
    elif variant is ModelVariant.NO_HISTORY:
        names = tuple(n for n in names if n not in HISTORY_NAMES)
    return names


def _log_q(params: ParameterVector, age, gender, location, u, variant: ModelVariant):
    if variant is ModelVariant.NO_DEMOGRAPHICS:
        return params.beta0 + np.asarray(u, dtype=float)
    return (params.beta0 + params.age_effects[age] + params.gender_effects[gender]
            + params.location_effects[location] + u)


def reference_price(params: ParameterVector, demo: Demographics, u: float,
                    variant: ModelVariant | str = ModelVariant.FULL) -> float:
    """Latent reference price of one customer."""
    variant = ModelVariant.parse(variant)
    return float(np.exp(_log_q(params, *demo.codes, u, variant)))


def reference_prices(params: ParameterVector, age, gender, location, u,
                     variant: ModelVariant | str = ModelVariant.FULL) -> np.ndarray:
    """Vectorised :func:`reference_price` over integer demographic codes."""
    variant = ModelVariant.parse(variant)
    return np.exp(_log_q(params, np.asarray(age), np.asarray(gender), np.asarray(location), u, variant))


def linear_predictor(params: ParameterVector, q, price, s, conjoint,
                     variant: ModelVariant | str = ModelVariant.FULL):
    variant = ModelVariant.parse(variant)
    q = np.asarray(q, dtype=float)
    price = np.asarray(price, dtype=float)
    s = np.asarray(s)
    conjoint = np.asarray(conjoint, dtype=bool)
    if variant is ModelVariant.MULTIPLICATIVE_KAPPA:
        gap = q - np.where(conjoint, params.kappa, 1.0) * price
    else:
        gap = q + np.where(conjoint, params.kappa, 0.0) - price
    eta = params.alpha1 * gap
    if variant is not ModelVariant.NO_HISTORY:
        eta = eta + params.alpha2 * np.log1p(s) + params.alpha3 * (s == 0)
    return eta if eta.ndim else float(eta)


def purchase_probability(predictor):
    """Inverse logit; stays strictly inside (0, 1) for |predictor| < ~700."""
    p = expit(np.asarray(predictor, dtype=float))
    return p if p.ndim else float(p)


def log_sigmoid(x):
    """log(expit(x)) without forming the probability."""
    return -np.logaddexp(0.0, -np.asarray(x, dtype=float))


# ---------------------------------------------------------------------------
# Observations


@dataclass(frozen=True)
class Observation:
    customer_id: int
    time: int
    price: float
    s_periods: int
    conjoint_flag: int
    domain_flag: int
    outcome: int
    demographics: Demographics

    def __post_init__(self):
        if self.s_periods < 0:
            raise ValueError("s_periods must be non-negative")
        if not self.price > 0:
            raise ValueError("price must be positive")
        if self.outcome not in (0, 1):
            raise ValueError("outcome must be 0 or 1")
        if self.conjoint_flag not in (0, 1):
            raise ValueError("conjoint_flag must be 0 or 1")
        if self.domain_flag not in (0, 1):
            raise ValueError("domain_flag must be 0 or 1")


GROUP_LABELS = ("C0", "C1", "C2")


@dataclass
class ObservationSet:
    """Columnar store of purchase-history and conjoint records.

    ``group`` is -1 for purchase-history rows and the index into
    ``GROUP_LABELS`` for conjoint rows; ``task_index`` is -1 for history rows.
    """

    customer_id: np.ndarray
    time: np.ndarray
    price: np.ndarray
    s_periods: np.ndarray
    conjoint: np.ndarray
    domain: np.ndarray
    outcome: np.ndarray
    age: np.ndarray
    gender: np.ndarray
    location: np.ndarray
    group: np.ndarray = field(default=None)
    task_index: np.ndarray = field(default=None)

    _INT_FIELDS = ("customer_id", "time", "s_periods", "conjoint", "domain", "outcome",
                   "age", "gender", "location", "group", "task_index")

    def __post_init__(self):
        n = len(self.customer_id)
        if self.group is None:
            self.group = np.full(n, -1)
        if self.task_index is None:
            self.task_index = np.full(n, -1)
        for name in self._INT_FIELDS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64).reshape(-1))
        self.price = np.asarray(self.price, dtype=float).reshape(-1)
        for name in (*self._INT_FIELDS, "price"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has length {len(getattr(self, name))}, expected {n}")
        if n:
            if (self.s_periods < 0).any():
                raise ValueError("s_periods must be non-negative")
            if not (self.price > 0).all():
                raise ValueError("prices must be positive")
            for name in ("outcome", "conjoint", "domain"):
                col = getattr(self, name)
                if ((col != 0) & (col != 1)).any():
                    raise ValueError(f"{name} must be binary")

    def __len__(self) -> int:
        return len(self.customer_id)

    @classmethod
    def empty(cls) -> "ObservationSet":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, np.zeros(0), z, z, z, z, z, z, z)

    @classmethod
    def from_records(cls, records: Iterable[Observation]) -> "ObservationSet":
        records = list(records)
        if not records:
            return cls.empty()
        codes = np.array([r.demographics.codes for r in records])
        return cls(
            customer_id=[r.customer_id for r in records],
            time=[r.time for r in records],
            price=[r.price for r in records],
            s_periods=[r.s_periods for r in records],
            conjoint=[r.conjoint_flag for r in records],
            domain=[r.domain_flag for r in records],
            outcome=[r.outcome for r in records],
            age=codes[:, 0], gender=codes[:, 1], location=codes[:, 2],
        )

    def records(self) -> list[Observation]:
        return [
            Observation(int(self.customer_id[i]), int(self.time[i]), float(self.price[i]),
                        int(self.s_periods[i]), int(self.conjoint[i]), int(self.domain[i]),
                        int(self.outcome[i]),
                        Demographics.from_codes(int(self.age[i]), int(self.gender[i]), int(self.location[i])))
            for i in range(len(self))
        ]

    def subset(self, mask) -> "ObservationSet":
        return ObservationSet(**{name: getattr(self, name)[mask] for name in (*self._INT_FIELDS, "price")})

    @staticmethod
    def concat(parts: Sequence["ObservationSet"]) -> "ObservationSet":
        names = (*ObservationSet._INT_FIELDS, "price")
        return ObservationSet(**{n: np.concatenate([getattr(p, n) for p in parts]) for n in names})


def as_observation_set(obs) -> ObservationSet:
    if isinstance(obs, ObservationSet):
        return obs
    return ObservationSet.from_records(obs)


# ---------------------------------------------------------------------------
# Likelihood and prior


@dataclass(frozen=True)
class PriorConfig:
    """Priors: normal(0, coef_scale) on regression coefficients and kappa,
    gamma(shape, scale) on tau.

    ``scale_is_variance`` reads ``coef_scale`` as a variance instead of a
    standard deviation.
    """

    coef_scale: float = 0.5
    scale_is_variance: bool = False
    tau_shape: float = 2.0
    tau_scale: float = 0.2

    @property
    def coef_sd(self) -> float:
        return math.sqrt(self.coef_scale) if self.scale_is_variance else self.coef_scale


def _normal_logpdf(x, sd):
    x = np.asarray(x, dtype=float)
    return -0.5 * (x / sd) ** 2 - math.log(sd) - 0.5 * math.log(2 * math.pi)


def gamma_logpdf(x: float, shape: float, scale: float) -> float:
    return (shape - 1) * math.log(x) - x / scale - gammaln(shape) - shape * math.log(scale)


def log_likelihood(params: ParameterVector, u_map: Mapping[int, float], obs,
                   variant: ModelVariant | str = ModelVariant.FULL) -> float:
    """Bernoulli log-likelihood summed over records in record order."""
    variant = ModelVariant.parse(variant)
    obs = as_observation_set(obs)
    if len(obs) == 0:
        return 0.0
    try:
        u = np.array([u_map[int(c)] for c in obs.customer_id], dtype=float)
    except KeyError as exc:
        raise KeyError(f"no individual deviation for customer_id {exc.args[0]}") from None
    q = reference_prices(params, obs.age, obs.gender, obs.location, u, variant)
    eta = linear_predictor(params, q, obs.price, obs.s_periods, obs.conjoint, variant)
    terms = np.where(obs.outcome == 1, log_sigmoid(eta), log_sigmoid(-eta))
    return float(np.add.reduce(terms))


def log_prior(params: ParameterVector, u_map: Mapping[int, float],
              variant: ModelVariant | str = ModelVariant.FULL,
              priors: PriorConfig = PriorConfig()) -> float:
    if not params.tau > 0:
        raise ValueError("tau must be positive")
    values = params.as_dict()
    coefs = [values[n] for n in variant_parameter_names(variant) if n != "tau"]
    lp = float(np.sum(_normal_logpdf(coefs, priors.coef_sd)))
    lp += gamma_logpdf(params.tau, priors.tau_shape, priors.tau_scale)
    if u_map:
        lp += float(np.sum(_normal_logpdf(np.fromiter(u_map.values(), float), params.tau)))
    return lp
