import json

import numpy as np
import pytest

from conftest import ideal_network
from psconcepts.ecm import AgentConfig, ClipNetwork, THREE_LAYER, TWO_LAYER, deliberate, update
from psconcepts.environment import ConfigError, EnvConfig, Environment, build_environment, sample_setup
from psconcepts.training import (
    EnsembleMemberError,
    TrainConfig,
    aggregate_metrics,
    default_train_config,
    feedback_table,
    holdout_success,
    run_ensemble,
    run_generalisation,
    run_training,
)


def _reference_loop(env, cfg, T, seed, holdout=None):
    """Plain-Python training loop built from the public single-step API."""
    rng = np.random.default_rng(seed)
    net = ClipNetwork.for_agent(env, cfg)
    rewards = []
    for _ in range(T):
        s = sample_setup(env, rng)
        path = deliberate(net, cfg, s, rng)
        e = path.action // env.values_per_variable
        r = 0 if holdout is not None and (s, e) == tuple(holdout) else env.evaluate(s, path.action)
        update(net, cfg, path, r)
        rewards.append(r)
    return net, np.array(rewards)


def test_zero_rounds(default_env):
    cfg = AgentConfig()
    net, curve = run_training(default_env, cfg, TrainConfig(total_rounds=0), seed=1)
    assert net == ClipNetwork.for_agent(default_env, cfg)
    assert len(curve) == 0 and np.isnan(curve.final_reward_rate)


@pytest.mark.parametrize("arch", [TWO_LAYER, THREE_LAYER])
def test_compiled_loop_matches_reference(default_env, arch):
    cfg = AgentConfig(architecture=arch, gamma=0.01)
    T, window = 1500, 200
    net, curve = run_training(default_env, cfg, TrainConfig(T, window, 100), seed=9)
    ref, rewards = _reference_loop(default_env, cfg, T, 9)
    assert np.array_equal(net.h1, ref.h1) and np.array_equal(net.h2, ref.h2)
    # trailing window recomputed by brute force at every evaluation point
    expected = [rewards[max(0, t - window):t].mean() for t in curve.rounds]
    assert np.allclose(curve.reward_rate, expected, atol=1e-12)
    assert list(curve.rounds) == list(range(100, T + 1, 100))


def test_determinism(default_env):
    cfg = AgentConfig()
    tc = TrainConfig(5000, 500, 500)
    a = run_training(default_env, cfg, tc, seed=3)
    b = run_training(default_env, cfg, tc, seed=3)
    c = run_training(default_env, cfg, tc, seed=4)
    assert a[0] == b[0] and np.array_equal(a[1].reward_rate, b[1].reward_rate)
    assert not a[0] == c[0]


def test_two_layer_learns_quickly(default_env):
    cfg = AgentConfig(architecture=TWO_LAYER)
    _, curve = run_training(default_env, cfg, default_train_config(TWO_LAYER), seed=0)
    assert curve.final_reward_rate > 0.85


class CountingEnvironment(Environment):
    calls: list

    def evaluate(self, s, p):
        self.calls.append((int(s), p))
        return super().evaluate(s, p)


def _counting_env(cfg=EnvConfig()):
    env = build_environment(cfg)
    counting = CountingEnvironment.__new__(CountingEnvironment)
    counting.__dict__.update(env.__dict__)
    counting.calls = []
    return counting


def test_holdout_never_queried():
    env = _counting_env()
    holdout = (4, 1)
    cfg = AgentConfig()
    run_generalisation(env, cfg, TrainConfig(2000, 100, 100, holdout=holdout), seed=0)
    O = env.values_per_variable
    asked = [(s, int(p) // O if not hasattr(p, "experiment") else p.experiment) for s, p in env.calls]
    assert asked and holdout not in asked
    table = feedback_table(env, holdout)
    assert table[holdout] == -1 and (table >= 0).sum() == table.size - 1


def test_holdout_loop_matches_reference(default_env):
    cfg = AgentConfig(gamma=0.01)
    holdout = (0, 0)
    net, curve = run_generalisation(default_env, cfg, TrainConfig(1000, 100, 100, holdout=holdout), seed=2)
    ref, _ = _reference_loop(default_env, cfg, 1000, 2, holdout)
    assert np.array_equal(net.h1, ref.h1) and np.array_equal(net.h2, ref.h2)
    assert curve.holdout_success is not None and len(curve.holdout_success) == 10
    assert curve.final_holdout_success == pytest.approx(holdout_success(net, default_env, holdout))


def test_generalisation_requires_holdout(default_env):
    with pytest.raises(ConfigError):
        run_generalisation(default_env, AgentConfig(), TrainConfig(10, 5, 5), seed=0)
    with pytest.raises(ConfigError):
        run_training(default_env, AgentConfig(), TrainConfig(10, 5, 5, holdout=(27, 0)), seed=0)


def test_offline_holdout_matches_sampling(default_env):
    """Offline success equals the frequency of correct guesses among sampled walks on that experiment."""
    cfg = AgentConfig(gamma=0.01)
    net, _ = run_training(default_env, cfg, TrainConfig(3000, 100, 1000), seed=5)
    s, e = 7, 3
    p = holdout_success(net, default_env, (s, e))
    rng = np.random.default_rng(0)
    free = AgentConfig(boredom_threshold=1.0)
    O = default_env.values_per_variable
    hits, n = 0, 0
    while n < 20_000:
        a = deliberate(net, free, s, rng).action
        if a // O == e:
            n += 1
            hits += a % O == default_env.correct_outcome(s, e)
    assert abs(hits / n - p) < 3 * np.sqrt(p * (1 - p) / n)


def test_ideal_abstractor_generalises(default_env):
    """Value clips shared across a variable's experiments carry over to the held-out one."""
    s, e = 0, 0
    assert default_env.experiment_variable[e] == default_env.experiment_variable[1]
    net = ideal_network(default_env, strong=50.0)
    assert holdout_success(net, default_env, (s, e)) > 1 / 3
    fresh = ClipNetwork.fresh(default_env, TWO_LAYER)
    assert holdout_success(fresh, default_env, (s, e)) == pytest.approx(1 / 3)


def test_checkpoint_resume_matches(tmp_path, default_env):
    cfg = AgentConfig()
    tc = TrainConfig(4000, 300, 500, checkpoint_every=1000)
    ck = tmp_path / "ck.npz"
    full_net, full_curve = run_training(default_env, cfg, TrainConfig(4000, 300, 500), seed=6)
    # interrupted run: stop after the first checkpoint, then resume
    part = TrainConfig(1000, 300, 500, checkpoint_every=1000)
    run_training(default_env, cfg, part, seed=6, checkpoint_path=ck)
    assert ck.exists()
    net, curve = run_training(default_env, cfg, tc, seed=6, resume_from=ck)
    assert net == full_net
    assert np.array_equal(curve.rounds, full_curve.rounds)
    assert np.array_equal(curve.reward_rate, full_curve.reward_rate)


def test_curve_csv(tmp_path, default_env):
    _, curve = run_generalisation(default_env, AgentConfig(), TrainConfig(300, 50, 100, holdout=(1, 1)), seed=0)
    path = tmp_path / "c.csv"
    curve.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "round,reward_rate,holdout_success"
    assert len(lines) == 4 and lines[1].startswith("100,")


# --- ensembles -----------------------------------------------------------------

SMALL = EnvConfig(2, 2, 2)


def test_aggregate_single_and_nan():
    agg = aggregate_metrics([{"a": 0.5, "b": float("nan")}])
    assert agg["a"].std == 0.0 and agg["a"].single_sample
    agg = aggregate_metrics([{"a": 1.0}, {"a": 3.0}, {"a": float("nan")}])
    assert agg["a"].mean == 2.0 and agg["a"].std == pytest.approx(np.sqrt(2))
    assert not agg["a"].single_sample


def test_ensemble_single_member():
    res = run_ensemble(SMALL, AgentConfig(), TrainConfig(500, 100, 100, ensemble_size=1, base_seed=7))
    assert res.seeds == [7]
    assert all(a.std == 0.0 and a.single_sample for a in res.aggregate.values())


def test_ensemble_reproducible_and_parallel_equal():
    tc = TrainConfig(800, 100, 200, ensemble_size=3, base_seed=11)
    a = run_ensemble(SMALL, AgentConfig(), tc)
    b = run_ensemble(SMALL, AgentConfig(), tc)
    c = run_ensemble(SMALL, AgentConfig(), tc, workers=2)
    assert a.seeds == [11, 12, 13]
    dump = [json.dumps(r.to_dict(), sort_keys=True) for r in (a, b, c)]
    assert dump[0] == dump[1] == dump[2]
    assert all(x == y for x, y in zip(a.networks, c.networks))


def test_ensemble_member_error_names_seed():
    # beta at chance level is rejected when the agent meets the environment
    bad = AgentConfig(boredom_threshold=0.5)
    with pytest.raises(EnsembleMemberError) as info:
        run_ensemble(SMALL, bad, TrainConfig(10, 5, 5, ensemble_size=2, base_seed=40))
    assert info.value.seed == 40 and "40" in str(info.value)


def test_default_train_configs():
    two = default_train_config(TWO_LAYER)
    three = default_train_config(THREE_LAYER)
    assert (two.total_rounds, two.curve_window) == (10_000, 1_000)
    assert (three.total_rounds, three.curve_window) == (5_000_000, 10_000)
    assert default_train_config(THREE_LAYER, 100).curve_window == 100
