"""Hidden-variable prediction environments.

A setup is an opaque integer label. Behind each label sits a vector of
hidden-variable values; every experiment reads exactly one of those
variables and its outcome is the variable's value.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
import yaml

UINT64_MAX = 2**64 - 1


class ConfigError(ValueError):
    """Raised for malformed or out-of-range configuration values."""


@dataclass(frozen=True)
class EnvConfig:
    num_variables: int = 3
    values_per_variable: int = 3
    experiments_per_variable: int = 2
    seed: int = 0
    # shuffle which experiment tests which variable (default is blocked layout)
    permute_experiments: bool = False

    def __post_init__(self):
        for name in ("num_variables", "values_per_variable", "experiments_per_variable"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
            if value < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")
        if not 0 <= int(self.seed) <= UINT64_MAX:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")

    @property
    def num_setups(self) -> int:
        return self.values_per_variable**self.num_variables

    @property
    def num_experiments(self) -> int:
        return self.num_variables * self.experiments_per_variable

    @property
    def num_predictions(self) -> int:
        return self.num_experiments * self.values_per_variable

    def to_dict(self) -> dict:
        return asdict(self)


class PredictionId(NamedTuple):
    experiment: int
    outcome: int

    def flat(self, values_per_variable: int) -> int:
        return self.experiment * values_per_variable + self.outcome

    @classmethod
    def from_flat(cls, index: int, values_per_variable: int) -> "PredictionId":
        return cls(*divmod(int(index), values_per_variable))


class Environment:
    """Immutable environment instance; build with :func:`build_environment`."""

    def __init__(self, config: EnvConfig, setup_values: np.ndarray, experiment_variable: np.ndarray):
        self.config = config
        self.setup_values = setup_values
        self.experiment_variable = experiment_variable
        self.setup_values.flags.writeable = False
        self.experiment_variable.flags.writeable = False

    def __repr__(self):
        c = self.config
        return (
            f"Environment(V={c.num_variables}, O={c.values_per_variable}, "
            f"E~={c.experiments_per_variable}, seed={c.seed})"
        )

    @property
    def num_setups(self) -> int:
        return self.config.num_setups

    @property
    def num_experiments(self) -> int:
        return self.config.num_experiments

    @property
    def num_predictions(self) -> int:
        return self.config.num_predictions

    @property
    def values_per_variable(self) -> int:
        return self.config.values_per_variable

    def _check_setup(self, s):
        if not 0 <= s < self.num_setups:
            raise IndexError(f"setup {s} out of range [0, {self.num_setups})")

    def _check_experiment(self, e):
        if not 0 <= e < self.num_experiments:
            raise IndexError(f"experiment {e} out of range [0, {self.num_experiments})")

    def correct_outcome(self, s: int, experiment: int) -> int:
        self._check_setup(s)
        self._check_experiment(experiment)
        return int(self.setup_values[s, self.experiment_variable[experiment]])

    def evaluate(self, s: int, p) -> int:
        """Reward (0 or 1) for predicting ``p`` on setup ``s``.

        ``p`` is either a :class:`PredictionId` or a flat prediction index.
        """
        if not isinstance(p, PredictionId):
            p = PredictionId.from_flat(p, self.values_per_variable)
        return int(p.outcome == self.correct_outcome(s, p.experiment))

    def outcome_table(self) -> np.ndarray:
        """Correct outcome for every (setup, experiment) pair."""
        return self.setup_values[:, self.experiment_variable].copy()

    def describe(self) -> list[tuple[int, tuple[int, ...]]]:
        """Setup label -> value vector table (debugging only; never shown to agents)."""
        return [(s, tuple(int(v) for v in row)) for s, row in enumerate(self.setup_values)]


def build_environment(config: EnvConfig) -> Environment:
    V, O = config.num_variables, config.values_per_variable
    canonical = np.array(list(itertools.product(range(O), repeat=V)), dtype=np.int64)
    rng = np.random.default_rng(int(config.seed))
    perm = rng.permutation(len(canonical))
    setup_values = canonical[perm]
    experiment_variable = np.repeat(np.arange(V, dtype=np.int64), config.experiments_per_variable)
    if config.permute_experiments:
        experiment_variable = experiment_variable[rng.permutation(len(experiment_variable))]
    return Environment(config, np.ascontiguousarray(setup_values), experiment_variable)


def sample_setup(env: Environment, rng: np.random.Generator) -> int:
    return int(rng.integers(0, env.num_setups))


def correct_outcome(env: Environment, s: int, experiment: int) -> int:
    return env.correct_outcome(s, experiment)


def evaluate(env: Environment, s: int, p) -> int:
    return env.evaluate(s, p)


_ENV_KEYS = {"num_variables", "values_per_variable", "experiments_per_variable", "seed", "permute_experiments"}


def env_config_from_mapping(data: dict) -> EnvConfig:
    unknown = set(data) - _ENV_KEYS
    if unknown:
        raise ConfigError(f"unknown environment keys: {sorted(unknown)}")
    return EnvConfig(**data)


def load_env_config(path) -> EnvConfig:
    """Read an environment config from a YAML file."""
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    data = data.get("environment", data)
    return env_config_from_mapping(data)
