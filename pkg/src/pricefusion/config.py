"""Run configuration: one JSON document with a section per stage.

Every stage seed is derived from the single top-level ``seed`` so that a
run is fully determined by its config file.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .inference.nuts import SamplerConfig
from .model import TRUE_PARAMETERS, ModelVariant, ParameterVector, PriorConfig
from .simulator import (
    FINLAND_2020_SIZE,
    ConjointConfig,
    MarketConfig,
    PopulationSpec,
    default_decision_grid,
)

STAGES = ("population", "history", "conjoint", "truth", "sampler", "decision")
PRESETS = ("paper", "desk")


def stage_seed(seed: int, stage: str) -> int:
    """Independent 32-bit seed for one pipeline stage."""
    ss = np.random.SeedSequence([int(seed), STAGES.index(stage)])
    return int(ss.generate_state(1)[0])


@dataclass
class PopulationConfig:
    size: int = FINLAND_2020_SIZE
    table: str | None = None     # JSON path; None uses the built-in marginals

    def spec(self, seed: int, base: Path | None = None) -> PopulationSpec:
        if self.table is None:
            return PopulationSpec(size=self.size, seed=seed)
        path = Path(self.table)
        if base is not None and not path.is_absolute():
            path = base / path
        loaded = PopulationSpec.load(path)
        return PopulationSpec(size=self.size, table=loaded.table, seed=seed)


@dataclass
class DecisionConfig:
    n0: int | None = None        # None: same as market.n0
    variable_cost: float = 5.0
    price_grid: list = field(default_factory=default_decision_grid)
    d1_effects: str = "posterior"
    truth_replications: int = 200

    def __post_init__(self):
        self.price_grid = [float(p) for p in self.price_grid]
        if not self.price_grid:
            raise ValueError("decision price grid is empty")
        if self.d1_effects not in ("posterior", "fresh"):
            raise ValueError("d1_effects must be 'posterior' or 'fresh'")


@dataclass
class RunConfig:
    population: PopulationConfig = field(default_factory=PopulationConfig)
    market: MarketConfig = field(default_factory=MarketConfig)
    conjoint: ConjointConfig = field(default_factory=ConjointConfig)
    truth: ParameterVector = TRUE_PARAMETERS
    priors: PriorConfig = field(default_factory=PriorConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    decision: DecisionConfig = field(default_factory=DecisionConfig)
    variant: ModelVariant = ModelVariant.FULL
    seed: int = 0

    def __post_init__(self):
        self.variant = ModelVariant.parse(self.variant)
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def seeds(self) -> dict[str, int]:
        return {s: stage_seed(self.seed, s) for s in STAGES}

    def population_spec(self, base: Path | None = None) -> PopulationSpec:
        return self.population.spec(self.seeds()["population"], base)

    def sampler_config(self) -> SamplerConfig:
        return dataclasses.replace(self.sampler, seed=self.seeds()["sampler"])

    @property
    def decision_n0(self) -> int:
        return self.market.n0 if self.decision.n0 is None else self.decision.n0

    def to_json(self) -> dict:
        sampler = dataclasses.asdict(self.sampler)
        sampler.pop("seed")
        return {
            "seed": self.seed,
            "variant": self.variant.value,
            "population": dataclasses.asdict(self.population),
            "market": {"launch_price": self.market.launch_price,
                       "price_changes": {str(k): v for k, v in sorted(self.market.price_changes.items())},
                       "horizon": self.market.horizon, "n0": self.market.n0},
            "conjoint": dataclasses.asdict(self.conjoint),
            "truth": self.truth.as_dict(),
            "priors": dataclasses.asdict(self.priors),
            "sampler": sampler,
            "decision": dataclasses.asdict(self.decision),
        }

    @classmethod
    def from_json(cls, doc: dict, base: RunConfig | None = None) -> "RunConfig":
        """Overlay ``doc`` on ``base`` (default: paper preset). Unknown keys are errors."""
        cfg = base if base is not None else cls()
        known = {"seed", "variant", "population", "market", "conjoint", "truth", "priors", "sampler", "decision"}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config section(s): {sorted(unknown)}")
        kwargs: dict[str, Any] = {}
        for name, klass in (("population", PopulationConfig), ("market", MarketConfig),
                            ("conjoint", ConjointConfig), ("priors", PriorConfig),
                            ("sampler", SamplerConfig), ("decision", DecisionConfig)):
            if name in doc:
                kwargs[name] = _overlay(getattr(cfg, name), doc[name], name)
        if "truth" in doc:
            values = cfg.truth.as_dict()
            bad = set(doc["truth"]) - set(values)
            if bad:
                raise ValueError(f"unknown truth parameter(s): {sorted(bad)}")
            values.update({k: float(v) for k, v in doc["truth"].items()})
            kwargs["truth"] = ParameterVector.from_dict(values)
        if "variant" in doc:
            kwargs["variant"] = ModelVariant.parse(doc["variant"])
        if "seed" in doc:
            kwargs["seed"] = int(doc["seed"])
        return dataclasses.replace(cfg, **kwargs)

    @classmethod
    def load(cls, path, base: RunConfig | None = None) -> "RunConfig":
        return cls.from_json(json.loads(Path(path).read_text()), base)


def _overlay(obj, updates: dict, section: str):
    if not isinstance(updates, dict):
        raise ValueError(f"config section {section!r} must be an object")
    names = {f.name for f in dataclasses.fields(obj)}
    if section == "sampler":
        names.discard("seed")
    bad = set(updates) - names
    if bad:
        raise ValueError(f"unknown key(s) in section {section!r}: {sorted(bad)}")
    return dataclasses.replace(obj, **updates)


def preset(name: str) -> RunConfig:
    """``paper``: full-size defaults. ``desk``: a laptop-sized variant of the same design."""
    if name == "paper":
        return RunConfig()
    if name == "desk":
        return RunConfig(
            market=MarketConfig(n0=100),
            conjoint=ConjointConfig(participants_per_group=50),
            sampler=SamplerConfig(chains=4, iterations=3000, warmup=1000, thinning=10),
        )
    raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")
