"""Episodic and compositional memory: the clip network an agent deliberates over.

Deliberation is a random walk percept -> [intermediate] -> action whose hops
follow normalised h-values. Learning strengthens the traversed edges and
relaxes every edge back towards h = 1 once per interaction round.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from . import _kernels
from .environment import ConfigError, Environment

TWO_LAYER = "two_layer"
THREE_LAYER = "three_layer"
ARCHITECTURES = (TWO_LAYER, THREE_LAYER)

SNAPSHOT_MAGIC = "psconcepts-snapshot"
SNAPSHOT_VERSION = 1


class SnapshotError(ValueError):
    """Malformed snapshot text; the message carries the offending line number."""


@dataclass(frozen=True)
class AgentConfig:
    architecture: str = THREE_LAYER
    gamma: float = 1e-4
    reward: float = 1.0
    boredom_threshold: float = 0.9
    max_redraws: int = 50
    # None -> num_variables * values_per_variable
    num_intermediate: Optional[int] = None

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not self.reward > 0:
            raise ConfigError(f"reward must be > 0, got {self.reward}")
        if not 0.0 < self.boredom_threshold <= 1.0:
            raise ConfigError(f"boredom_threshold must lie in (0, 1], got {self.boredom_threshold}")
        if int(self.max_redraws) < 1:
            raise ConfigError(f"max_redraws must be >= 1, got {self.max_redraws}")
        if self.num_intermediate is not None and int(self.num_intermediate) < 1:
            raise ConfigError(f"num_intermediate must be >= 1, got {self.num_intermediate}")

    def check_environment(self, env: Environment) -> None:
        if self.boredom_threshold <= 1.0 / env.values_per_variable:
            raise ConfigError(
                f"boredom_threshold {self.boredom_threshold} must exceed chance "
                f"1/{env.values_per_variable}"
            )

    def to_dict(self) -> dict:
        return asdict(self)


class DeliberationPath(NamedTuple):
    percept: int
    intermediate: Optional[int]
    action: int


class ClipNetwork:
    """Layered clip network holding the agent's entire learned state.

    ``h1`` connects percepts to the next layer (intermediate clips, or actions
    for a two-layer agent); ``h2`` connects intermediate clips to actions and
    is an empty (0, 0) array for two-layer agents.
    """

    def __init__(self, architecture: str, h1: np.ndarray, h2: Optional[np.ndarray], outcomes_per_experiment: int):
        if architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {architecture!r}")
        self.architecture = architecture
        self.h1 = np.ascontiguousarray(h1, dtype=np.float64)
        if architecture == THREE_LAYER:
            if h2 is None or h2.shape[0] != self.h1.shape[1]:
                raise ValueError("three-layer network needs h2 with one row per intermediate clip")
            self.h2 = np.ascontiguousarray(h2, dtype=np.float64)
        else:
            self.h2 = np.empty((0, 0))
        self.outcomes_per_experiment = int(outcomes_per_experiment)
        if self.num_actions % self.outcomes_per_experiment:
            raise ValueError("number of actions is not a multiple of outcomes per experiment")

    @classmethod
    def fresh(cls, env: Environment, architecture: str = THREE_LAYER, num_intermediate: Optional[int] = None):
        S, P = env.num_setups, env.num_predictions
        if architecture == TWO_LAYER:
            return cls(TWO_LAYER, np.ones((S, P)), None, env.values_per_variable)
        if num_intermediate is None:
            num_intermediate = env.config.num_variables * env.values_per_variable
        if num_intermediate > S:
            raise ConfigError(f"num_intermediate {num_intermediate} exceeds number of percepts {S}")
        return cls(THREE_LAYER, np.ones((S, num_intermediate)), np.ones((num_intermediate, P)),
                   env.values_per_variable)

    @classmethod
    def for_agent(cls, env: Environment, cfg: AgentConfig) -> "ClipNetwork":
        return cls.fresh(env, cfg.architecture, cfg.num_intermediate)

    @property
    def three_layer(self) -> bool:
        return self.architecture == THREE_LAYER

    @property
    def num_percepts(self) -> int:
        return self.h1.shape[0]

    @property
    def num_intermediate(self) -> int:
        return self.h1.shape[1] if self.three_layer else 0

    @property
    def num_actions(self) -> int:
        return self.h2.shape[1] if self.three_layer else self.h1.shape[1]

    @property
    def num_experiments(self) -> int:
        return self.num_actions // self.outcomes_per_experiment

    def copy(self) -> "ClipNetwork":
        return ClipNetwork(self.architecture, self.h1.copy(),
                           self.h2.copy() if self.three_layer else None,
                           self.outcomes_per_experiment)

    def __eq__(self, other):
        if not isinstance(other, ClipNetwork):
            return NotImplemented
        return (self.architecture == other.architecture
                and self.outcomes_per_experiment == other.outcomes_per_experiment
                and np.array_equal(self.h1, other.h1)
                and np.array_equal(self.h2, other.h2))

    def __repr__(self):
        return (f"ClipNetwork({self.architecture}, percepts={self.num_percepts}, "
                f"intermediate={self.num_intermediate}, actions={self.num_actions})")

    def percept_probabilities(self) -> np.ndarray:
        """Row-stochastic first-layer hopping matrix."""
        return self.h1 / self.h1.sum(axis=1, keepdims=True)

    def intermediate_probabilities(self) -> np.ndarray:
        """Row-stochastic intermediate -> action hopping matrix (three-layer only)."""
        if not self.three_layer:
            raise ValueError("two-layer networks have no intermediate clips")
        return self.h2 / self.h2.sum(axis=1, keepdims=True)


def hop_probabilities(h_row) -> np.ndarray:
    h_row = np.asarray(h_row, dtype=np.float64)
    if h_row.ndim != 1 or h_row.size == 0:
        raise ValueError("h_row must be a non-empty vector")
    if not np.all(h_row > 0):
        raise ValueError("h-values must be strictly positive")
    return h_row / h_row.sum()


def _check_percept(net, s):
    if not 0 <= s < net.num_percepts:
        raise IndexError(f"percept {s} out of range [0, {net.num_percepts})")


def action_marginal(net: ClipNetwork, s: int) -> np.ndarray:
    """Exact probability of each action at the end of a walk from percept ``s``."""
    _check_percept(net, s)
    out = np.empty(net.num_actions)
    _kernels.action_marginal(net.h1, net.h2, net.three_layer, s, out)
    return out


def experiment_distribution(net: ClipNetwork, s: int, e: int) -> np.ndarray:
    """Action marginal restricted to experiment ``e`` and renormalised."""
    O = net.outcomes_per_experiment
    q = action_marginal(net, s)[e * O:(e + 1) * O]
    return q / q.sum()


def is_boring(net: ClipNetwork, cfg: AgentConfig, s: int, e: int) -> bool:
    if not 0 <= e < net.num_experiments:
        raise IndexError(f"experiment {e} out of range [0, {net.num_experiments})")
    return bool(experiment_distribution(net, s, e).max() > cfg.boredom_threshold)


def deliberate(net: ClipNetwork, cfg: AgentConfig, s: int, rng: np.random.Generator) -> DeliberationPath:
    _check_percept(net, s)
    marginal = np.empty(net.num_actions)
    flags = np.zeros(net.num_experiments, dtype=np.bool_)
    clip, action = _kernels.deliberate(net.h1, net.h2, net.three_layer, s, net.outcomes_per_experiment,
                                       float(cfg.boredom_threshold), int(cfg.max_redraws), rng,
                                       marginal, flags)
    return DeliberationPath(int(s), int(clip) if net.three_layer else None, int(action))


def update(net: ClipNetwork, cfg: AgentConfig, path: DeliberationPath, reward: int) -> None:
    """Forget globally, then reinforce the edges on ``path`` by ``R * reward``."""
    if net.three_layer != (path.intermediate is not None):
        raise ValueError("path does not match network architecture")
    clip = -1 if path.intermediate is None else path.intermediate
    _kernels.update(net.h1, net.h2, net.three_layer, path.percept, clip, path.action,
                    1.0 - cfg.gamma, cfg.reward * reward)


# --- snapshots -------------------------------------------------------------

_CFG_FIELDS = ("architecture", "gamma", "reward", "boredom_threshold", "max_redraws", "num_intermediate")


def snapshot(net: ClipNetwork, cfg: Optional[AgentConfig] = None) -> str:
    """Serialise a network (and optionally its agent config) as versioned text.

    Format::

        psconcepts-snapshot 1
        architecture three_layer
        outcomes_per_experiment 3
        config gamma 0.0001          # zero or more config lines
        ...
        matrix h1 27 9
        <27 rows of 9 whitespace-separated floats>
        matrix h2 9 18               # three-layer only
        <rows>
        end

    Floats are written with ``repr`` so parsing restores them bit-exactly.
    """
    lines = [f"{SNAPSHOT_MAGIC} {SNAPSHOT_VERSION}",
             f"architecture {net.architecture}",
             f"outcomes_per_experiment {net.outcomes_per_experiment}"]
    if cfg is not None:
        for name in _CFG_FIELDS:
            lines.append(f"config {name} {getattr(cfg, name)!r}")
    matrices = [("h1", net.h1)] + ([("h2", net.h2)] if net.three_layer else [])
    for name, m in matrices:
        lines.append(f"matrix {name} {m.shape[0]} {m.shape[1]}")
        lines.extend(" ".join(repr(float(v)) for v in row) for row in m)
    lines.append("end")
    return "\n".join(lines) + "\n"


def _parse_cfg_value(name, raw, lineno):
    try:
        if name == "architecture":
            return raw.strip("'\"")
        if name == "num_intermediate":
            return None if raw == "None" else int(raw)
        if name == "max_redraws":
            return int(raw)
        return float(raw)
    except ValueError:
        raise SnapshotError(f"line {lineno}: bad value {raw!r} for {name}") from None


def restore(text: str) -> tuple[ClipNetwork, Optional[AgentConfig]]:
    lines = text.splitlines()
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(lines):
            raise SnapshotError(f"line {pos + 1}: unexpected end of snapshot")
        pos += 1
        return pos, lines[pos - 1].split()

    lineno, head = take()
    if len(head) != 2 or head[0] != SNAPSHOT_MAGIC:
        raise SnapshotError(f"line {lineno}: not a snapshot header")
    if head[1] != str(SNAPSHOT_VERSION):
        raise SnapshotError(f"line {lineno}: unsupported snapshot version {head[1]}")
    lineno, arch = take()
    if len(arch) != 2 or arch[0] != "architecture" or arch[1] not in ARCHITECTURES:
        raise SnapshotError(f"line {lineno}: expected 'architecture <{'|'.join(ARCHITECTURES)}>'")
    lineno, outs = take()
    if len(outs) != 2 or outs[0] != "outcomes_per_experiment" or not outs[1].isdigit():
        raise SnapshotError(f"line {lineno}: expected 'outcomes_per_experiment <int>'")

    cfg_values = {}
    matrices = {}
    while True:
        lineno, tok = take()
        if not tok:
            raise SnapshotError(f"line {lineno}: blank line")
        if tok[0] == "config":
            if len(tok) != 3 or tok[1] not in _CFG_FIELDS:
                raise SnapshotError(f"line {lineno}: bad config line")
            cfg_values[tok[1]] = _parse_cfg_value(tok[1], tok[2], lineno)
        elif tok[0] == "matrix":
            if len(tok) != 4 or tok[1] not in ("h1", "h2") or not (tok[2].isdigit() and tok[3].isdigit()):
                raise SnapshotError(f"line {lineno}: expected 'matrix <h1|h2> <rows> <cols>'")
            rows, cols = int(tok[2]), int(tok[3])
            m = np.empty((rows, cols))
            for r in range(rows):
                lineno, vals = take()
                if len(vals) != cols:
                    raise SnapshotError(f"line {lineno}: expected {cols} values, got {len(vals)}")
                try:
                    m[r] = [float(v) for v in vals]
                except ValueError:
                    raise SnapshotError(f"line {lineno}: non-numeric value") from None
            if not np.all(m > 0):
                raise SnapshotError(f"matrix {tok[1]}: h-values must be positive")
            matrices[tok[1]] = m
        elif tok[0] == "end":
            break
        else:
            raise SnapshotError(f"line {lineno}: unexpected token {tok[0]!r}")

    if "h1" not in matrices or (arch[1] == THREE_LAYER) != ("h2" in matrices):
        raise SnapshotError("snapshot matrices do not match architecture")
    try:
        net = ClipNetwork(arch[1], matrices["h1"], matrices.get("h2"), int(outs[1]))
        cfg = AgentConfig(**cfg_values) if cfg_values else None
    except ValueError as exc:
        raise SnapshotError(str(exc)) from exc
    return net, cfg


def save_snapshot(path, net: ClipNetwork, cfg: Optional[AgentConfig] = None) -> None:
    Path(path).write_text(snapshot(net, cfg))


def load_snapshot(path) -> tuple[ClipNetwork, Optional[AgentConfig]]:
    return restore(Path(path).read_text())
