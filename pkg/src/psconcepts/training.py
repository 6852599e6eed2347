"""Interaction loops, learning curves, ensembles and the holdout experiment."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .analysis import AnalysisThresholds, analyze_network
from .ecm import AgentConfig, ClipNetwork, TWO_LAYER, experiment_distribution
from .environment import ConfigError, EnvConfig, Environment, PredictionId, build_environment

log = logging.getLogger(__name__)

CURVE_SCHEMA_VERSION = 1
SEED_MASK = 2**64 - 1


@dataclass(frozen=True)
class TrainConfig:
    total_rounds: int = 5_000_000
    curve_window: int = 10_000
    eval_interval: int = 10_000
    holdout: Optional[tuple[int, int]] = None
    ensemble_size: int = 20
    base_seed: int = 0
    # write a resumable checkpoint every this many rounds (None: never)
    checkpoint_every: Optional[int] = None

    def __post_init__(self):
        if self.total_rounds < 0:
            raise ConfigError(f"total_rounds must be >= 0, got {self.total_rounds}")
        if self.curve_window < 1 or self.eval_interval < 1:
            raise ConfigError("curve_window and eval_interval must be positive")
        if self.total_rounds > 0 and self.curve_window > self.total_rounds:
            raise ConfigError(f"curve_window {self.curve_window} exceeds total_rounds {self.total_rounds}")
        if self.ensemble_size < 1:
            raise ConfigError("ensemble_size must be >= 1")
        if self.checkpoint_every is not None and self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be positive")
        if self.holdout is not None:
            object.__setattr__(self, "holdout", tuple(int(x) for x in self.holdout))
            if len(self.holdout) != 2:
                raise ConfigError("holdout must be a (setup, experiment) pair")

    def check_environment(self, env: Environment) -> None:
        if self.holdout is not None:
            s, e = self.holdout
            if not (0 <= s < env.num_setups and 0 <= e < env.num_experiments):
                raise ConfigError(f"holdout {self.holdout} out of range for {env!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["holdout"] = list(self.holdout) if self.holdout is not None else None
        return d


def default_train_config(architecture: str, total_rounds: Optional[int] = None, **overrides) -> TrainConfig:
    """Figure-resolution defaults: 10^4 rounds for two-layer, 5*10^6 for three-layer."""
    if architecture == TWO_LAYER:
        T = 10_000 if total_rounds is None else total_rounds
        window = 1_000
    else:
        T = 5_000_000 if total_rounds is None else total_rounds
        window = 10_000
    window = min(window, max(T, 1))
    params = dict(total_rounds=T, curve_window=window, eval_interval=max(T // 500, 1))
    params.update(overrides)
    return TrainConfig(**params)


@dataclass
class LearningCurve:
    rounds: np.ndarray
    reward_rate: np.ndarray
    holdout_success: Optional[np.ndarray] = None

    @property
    def final_reward_rate(self) -> float:
        return float(self.reward_rate[-1]) if len(self.reward_rate) else float("nan")

    @property
    def final_holdout_success(self) -> float:
        if self.holdout_success is None or not len(self.holdout_success):
            return float("nan")
        return float(self.holdout_success[-1])

    def __len__(self):
        return len(self.rounds)

    def rows(self):
        cols = [self.rounds, self.reward_rate]
        if self.holdout_success is not None:
            cols.append(self.holdout_success)
        for values in zip(*cols):
            yield [int(values[0])] + [repr(float(v)) for v in values[1:]]

    def header(self) -> list[str]:
        return ["round", "reward_rate"] + (["holdout_success"] if self.holdout_success is not None else [])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            w.writerows(self.rows())


def feedback_table(env: Environment, holdout: Optional[tuple[int, int]] = None) -> np.ndarray:
    """Rewarded outcome per (setup, experiment), learned through ``env.evaluate``.

    The holdout pair is never queried and is marked -1 (no outcome rewarded).
    """
    O = env.values_per_variable
    table = np.full((env.num_setups, env.num_experiments), -1, dtype=np.int64)
    for s in range(env.num_setups):
        for e in range(env.num_experiments):
            if holdout is not None and (s, e) == tuple(holdout):
                continue
            for o in range(O):
                if env.evaluate(s, PredictionId(e, o)):
                    table[s, e] = o
                    break
    return table


def holdout_success(net: ClipNetwork, env: Environment, holdout: tuple[int, int]) -> float:
    """Offline probability of predicting the holdout outcome correctly, given its experiment."""
    s, e = holdout
    return float(experiment_distribution(net, s, e)[env.correct_outcome(s, e)])


@dataclass
class _LoopState:
    net: ClipNetwork
    rng: np.random.Generator
    ring: np.ndarray
    state: np.ndarray
    rounds_done: int = 0
    curve_rounds: list = field(default_factory=list)
    curve_rates: list = field(default_factory=list)
    curve_holdout: list = field(default_factory=list)


def save_checkpoint(path, ls: _LoopState) -> None:
    net = ls.net
    np.savez(
        path,
        architecture=np.array(net.architecture),
        outcomes=np.array(net.outcomes_per_experiment),
        h1=net.h1, h2=net.h2, ring=ls.ring, state=ls.state,
        rounds_done=np.array(ls.rounds_done),
        rng_state=np.array(json.dumps(ls.rng.bit_generator.state)),
        curve_rounds=np.array(ls.curve_rounds, dtype=np.int64),
        curve_rates=np.array(ls.curve_rates, dtype=np.float64),
        curve_holdout=np.array(ls.curve_holdout, dtype=np.float64),
    )


def load_checkpoint(path) -> _LoopState:
    with np.load(path) as z:
        arch = str(z["architecture"])
        net = ClipNetwork(arch, z["h1"], None if arch == TWO_LAYER else z["h2"], int(z["outcomes"]))
        rng = np.random.default_rng()
        rng.bit_generator.state = json.loads(str(z["rng_state"]))
        return _LoopState(net, rng, z["ring"].copy(), z["state"].copy(), int(z["rounds_done"]),
                          z["curve_rounds"].tolist(), z["curve_rates"].tolist(), z["curve_holdout"].tolist())


def _run_loop(env, agent_cfg, train_cfg, seed, holdout, checkpoint_path=None, resume_from=None,
              progress: Optional[Callable[[int, float], None]] = None):
    agent_cfg.check_environment(env)
    train_cfg.check_environment(env)
    if resume_from is not None:
        ls = load_checkpoint(resume_from)
    else:
        ls = _LoopState(ClipNetwork.for_agent(env, agent_cfg), np.random.default_rng(int(seed) & SEED_MASK),
                        np.zeros(train_cfg.curve_window, dtype=np.int64), np.zeros(3, dtype=np.int64))
    net = ls.net
    table = feedback_table(env, holdout)
    T = train_cfg.total_rounds
    args = (net.h1, net.h2, net.three_layer, table, net.outcomes_per_experiment,
            float(agent_cfg.gamma), float(agent_cfg.reward), float(agent_cfg.boredom_threshold),
            int(agent_cfg.max_redraws))
    stops = set(range(train_cfg.eval_interval, T + 1, train_cfg.eval_interval))
    if T:
        stops.add(T)
    if train_cfg.checkpoint_every and checkpoint_path is not None:
        stops.update(range(train_cfg.checkpoint_every, T, train_cfg.checkpoint_every))
    for stop in sorted(x for x in stops if x > ls.rounds_done):
        _kernels.train_rounds(*args, stop - ls.rounds_done, ls.rng, ls.ring, ls.state)
        ls.rounds_done = stop
        if stop % train_cfg.eval_interval == 0 or stop == T:
            rate = ls.state[2] / ls.state[1]
            ls.curve_rounds.append(stop)
            ls.curve_rates.append(float(rate))
            if holdout is not None:
                ls.curve_holdout.append(holdout_success(net, env, holdout))
            if progress is not None:
                progress(stop, float(rate))
        if train_cfg.checkpoint_every and checkpoint_path is not None and stop % train_cfg.checkpoint_every == 0:
            save_checkpoint(checkpoint_path, ls)
    curve = LearningCurve(np.array(ls.curve_rounds, dtype=np.int64), np.array(ls.curve_rates),
                          np.array(ls.curve_holdout) if holdout is not None else None)
    return net, curve


def run_training(env: Environment, agent_cfg: AgentConfig, train_cfg: TrainConfig, seed: int,
                 checkpoint_path=None, resume_from=None, progress=None) -> tuple[ClipNetwork, LearningCurve]:
    """Train one agent for ``train_cfg.total_rounds`` rounds.

    Each round samples a setup, deliberates, evaluates and updates. A holdout
    in ``train_cfg`` is honoured here as well (see :func:`run_generalisation`).
    """
    return _run_loop(env, agent_cfg, train_cfg, seed, train_cfg.holdout, checkpoint_path, resume_from, progress)


def run_generalisation(env: Environment, agent_cfg: AgentConfig, train_cfg: TrainConfig, seed: int,
                       **kwargs) -> tuple[ClipNetwork, LearningCurve]:
    """Train with one (setup, experiment) pair withheld and track offline success on it."""
    if train_cfg.holdout is None:
        raise ConfigError("run_generalisation needs train_cfg.holdout")
    return _run_loop(env, agent_cfg, train_cfg, seed, train_cfg.holdout, **kwargs)


# --- ensembles -------------------------------------------------------------

@dataclass
class Aggregate:
    mean: float
    std: float
    per_agent: list[float]
    single_sample: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EnsembleResult:
    seeds: list[int]
    networks: list[ClipNetwork]
    curves: list[LearningCurve]
    summaries: list[dict]
    aggregate: dict[str, Aggregate]

    def to_dict(self) -> dict:
        return {k: v.to_dict() for k, v in self.aggregate.items()}

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def aggregate_metrics(summaries: list[dict]) -> dict[str, Aggregate]:
    """Mean and sample standard deviation per metric, ignoring NaN entries."""
    out = {}
    for key in sorted(set().union(*summaries)) if summaries else []:
        values = [float(s.get(key, float("nan"))) for s in summaries]
        finite = np.array([v for v in values if np.isfinite(v)])
        if finite.size == 0:
            single = len(values) == 1
            out[key] = Aggregate(float("nan"), 0.0 if single else float("nan"), values, single)
        elif finite.size == 1:
            out[key] = Aggregate(float(finite[0]), 0.0, values, True)
        else:
            out[key] = Aggregate(float(finite.mean()), float(finite.std(ddof=1)), values)
    return out


def _member(env_cfg, agent_cfg, train_cfg, seed, analyze, thresholds):
    env = build_environment(env_cfg)
    net, curve = run_training(env, agent_cfg, train_cfg, seed)
    summary = {"final_reward_rate": curve.final_reward_rate}
    if train_cfg.holdout is not None:
        summary["holdout_success"] = curve.final_holdout_success
    if analyze and net.three_layer:
        est = analyze_network(net, thresholds)
        summary.update(est.metrics())
        summary["num_good_subsets"] = float(len(est.good_subsets))
    return net, curve, summary


class EnsembleMemberError(RuntimeError):
    def __init__(self, seed, cause):
        super().__init__(f"ensemble member with seed {seed} failed: {cause!r}")
        self.seed = seed


def run_ensemble(env_cfg: EnvConfig, agent_cfg: AgentConfig, train_cfg: TrainConfig,
                 analyze: bool = True, thresholds: Optional[AnalysisThresholds] = None,
                 workers: int = 1) -> EnsembleResult:
    """Train ``ensemble_size`` agents with seeds ``base_seed + k``.

    Results are collected in seed order, so ``workers > 1`` gives the same
    output as a sequential run.
    """
    seeds = [(train_cfg.base_seed + k) & SEED_MASK for k in range(train_cfg.ensemble_size)]
    results = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_member, env_cfg, agent_cfg, train_cfg, s, analyze, thresholds) for s in seeds]
            for seed, fut in zip(seeds, futures):
                try:
                    results.append(fut.result())
                except Exception as exc:
                    raise EnsembleMemberError(seed, exc) from exc
    else:
        for seed in seeds:
            try:
                results.append(_member(env_cfg, agent_cfg, train_cfg, seed, analyze, thresholds))
            except Exception as exc:
                raise EnsembleMemberError(seed, exc) from exc
            log.info("ensemble member seed=%d final reward rate %.3f", seed, results[-1][2]["final_reward_rate"])
    nets, curves, summaries = (list(x) for x in zip(*results))
    return EnsembleResult(seeds, nets, curves, summaries, aggregate_metrics(summaries))
