import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import ideal_network, planted_subsets
from psconcepts.analysis import (
    AnalysisThresholds,
    SubsetScore,
    analyze_network,
    clip_order,
    correlation_matrix,
    estimate_environment,
    exclusivity,
    exhaustivity,
    extract_blocks,
    good_subsets,
    predictability_table,
    representative_clips,
    subset_scan,
    violation_weights,
)
from psconcepts.ecm import ClipNetwork, TWO_LAYER, THREE_LAYER


def _oracle_weights(values):
    # rank by position in a descending sort, earlier label first on ties
    order = sorted(range(len(values)), key=lambda s: (-values[s], s))
    ind = {s: k for k, s in enumerate(order)}
    raw = [(ind[s] / (len(values) - 1)) ** 3 for s in range(len(values))]
    return [r / sum(raw) for r in raw]


def _oracle_exh(P1, subset):
    n = len(P1[0])
    out = [i for i in range(n) if i not in subset]
    ratios = [max(row[i] for i in subset) / max(row[i] for i in out) for row in P1]
    w = _oracle_weights(ratios)
    return sum(wi * math.log(r) for wi, r in zip(w, ratios) if wi > 0)


def _oracle_excl(P1, subset):
    ratios = []
    for row in P1:
        top = sorted((row[i] for i in subset), reverse=True)
        ratios.append(top[0] / top[1])
    w = _oracle_weights(ratios)
    return sum(wi * math.log(r) for wi, r in zip(w, ratios) if wi > 0)


def _stochastic(rng, shape, spread=2.0):
    m = np.exp(rng.normal(0, spread, shape))
    return m / m.sum(axis=1, keepdims=True)


# --- weights -------------------------------------------------------------------

def test_weights_two_setups():
    assert np.allclose(violation_weights([0.9, 0.1]), [0, 1], atol=1e-15)


def test_weights_hand_example():
    assert np.allclose(violation_weights([0.5, 0.2, 0.9]), [1 / 9, 8 / 9, 0], atol=1e-15)


def test_weights_ties_follow_label_order():
    S = 5
    raw = (np.arange(S) / (S - 1)) ** 3
    assert np.allclose(violation_weights(np.ones(S)), raw / raw.sum(), atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from([0.1, 0.5, 1.0, 2.0, 7.5]), min_size=2, max_size=30))
def test_weights_match_oracle(values):
    w = violation_weights(values)
    assert abs(w.sum() - 1) < 1e-12
    assert np.allclose(w, _oracle_weights(values), atol=1e-14)


# --- exhaustivity / exclusivity -----------------------------------------------------

def test_ideal_exhaustivity_zero_exclusivity_large(default_env):
    net = ideal_network(default_env)
    P1 = net.percept_probabilities()
    for sub in planted_subsets(default_env):
        assert abs(exhaustivity(P1, sub)) < 1e-6
        ex = exclusivity(P1, sub)
        assert math.isfinite(ex) and ex > math.log(100)


def test_uniform_measures_zero():
    P1 = np.full((27, 9), 1 / 9)
    for sub in [(0, 1), (2, 5, 7), (0, 1, 2, 3, 4, 5, 6, 7)]:
        assert exhaustivity(P1, sub) == 0.0
        assert exclusivity(P1, sub) == 0.0


def test_exhaustivity_violation_negative():
    # setup 0 only reaches clips outside {0, 1}
    P1 = np.array([
        [0.05, 0.05, 0.85, 0.05],
        [0.70, 0.10, 0.10, 0.10],
        [0.10, 0.70, 0.10, 0.10],
        [0.40, 0.40, 0.10, 0.10],
    ])
    val = exhaustivity(P1, (0, 1))
    assert val < 0
    assert val == pytest.approx(_oracle_exh(P1.tolist(), (0, 1)), abs=1e-12)
    # ratios (1/17, 7, 7, 4) rank as (3, 0, 1, 2): raw weights (27, 0, 1, 8) / 36
    assert val == pytest.approx((27 * math.log(1 / 17) + math.log(7) + 8 * math.log(4)) / 36, abs=1e-12)


def test_exclusivity_hand_matrix():
    P1 = np.array([[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.1, 0.1, 0.8]])
    val = exclusivity(P1, (0, 1))
    assert val == pytest.approx(_oracle_excl(P1.tolist(), (0, 1)), abs=1e-12)
    assert val == pytest.approx(math.log(8) / 9, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32))
def test_measures_match_oracle_random(seed):
    rng = np.random.default_rng(seed)
    P1 = _stochastic(rng, (8, 5))
    sub = tuple(sorted(rng.choice(5, size=int(rng.integers(2, 5)), replace=False)))
    assert exhaustivity(P1, sub) == pytest.approx(_oracle_exh(P1.tolist(), sub), abs=1e-10)
    assert exclusivity(P1, sub) == pytest.approx(_oracle_excl(P1.tolist(), sub), abs=1e-10)


def test_numerator_weight_key_differs_only_in_weights():
    rng = np.random.default_rng(0)
    P1 = _stochastic(rng, (10, 5))
    a = exhaustivity(P1, (0, 1), "numerator")
    b = exhaustivity(P1, (0, 1), "ratio")
    assert math.isfinite(a) and math.isfinite(b)


def test_measure_argument_errors():
    P1 = np.full((4, 3), 1 / 3)
    with pytest.raises(ValueError):
        exhaustivity(P1, (0, 1, 2))
    with pytest.raises(ValueError):
        exclusivity(P1, (1,))
    with pytest.raises(IndexError):
        exhaustivity(P1, (0, 5))


# --- scan and selection -----------------------------------------------------------

def test_scan_count_and_order():
    scores = subset_scan(np.full((27, 9), 1 / 9))
    assert len(scores) == 2 ** 9 - 2 - 9
    expected = [c for k in range(2, 9) for c in itertools.combinations(range(9), k)]
    assert [s.subset for s in scores] == expected
    assert all(s.exhaustivity == 0 and s.exclusivity == 0 for s in scores)


def test_scan_guard():
    P1 = np.full((4, 21), 1 / 21)
    with pytest.raises(ValueError, match="max_clips"):
        subset_scan(P1)


def test_good_subsets_ideal_are_planted(default_env):
    P1 = ideal_network(default_env).percept_probabilities()
    th = AnalysisThresholds()
    good = good_subsets(subset_scan(P1), th.exh_min, th.excl_min)
    assert sorted(good) == planted_subsets(default_env)


def test_good_subsets_uniform_empty():
    th = AnalysisThresholds()
    assert good_subsets(subset_scan(np.full((27, 9), 1 / 9)), th.exh_min, th.excl_min) == []


def test_good_subsets_greedy_disjoint():
    scores = [
        SubsetScore((0, 1), 0.0, 5.0),
        SubsetScore((1, 2), 0.0, 9.0),
        SubsetScore((3, 4), 0.0, 3.0),
        SubsetScore((0, 5), -5.0, 8.0),
    ]
    assert good_subsets(scores, -1.0, 1.0) == [(1, 2), (3, 4)]
    assert good_subsets(scores, -10.0, 1.0) == [(1, 2), (0, 5), (3, 4)]
    with pytest.raises(ValueError):
        good_subsets(scores, -math.inf, 1.0)


# --- predictability and blocks ----------------------------------------------------

def test_predictability_extremes():
    P2 = np.array([[1 / 3, 1 / 3, 1 / 3, 1.0, 0.0, 0.0]]) / 2
    assert np.allclose(predictability_table(P2, 3), [[0.0, 1.0]], atol=1e-12)


def test_predictability_half_half():
    P2 = np.array([[0.5, 0.5, 0.0]])
    assert predictability_table(P2, 3)[0, 0] == pytest.approx(1 - math.log(2) / math.log(3), abs=1e-12)
    assert predictability_table(P2, 3)[0, 0] == pytest.approx(0.369, abs=1e-3)


def test_predictability_in_unit_interval():
    rng = np.random.default_rng(7)
    t = predictability_table(_stochastic(rng, (9, 18), spread=4.0), 3)
    assert t.shape == (9, 6) and t.min() >= 0 and t.max() <= 1


def test_correlation_basic_cases():
    rng = np.random.default_rng(3)
    col = rng.random(9)
    t = np.column_stack([col, col, -col, rng.random(9), np.full(9, 0.4)])
    c = correlation_matrix(t)
    assert c[0, 1] == pytest.approx(1.0, abs=1e-12)
    assert c[0, 2] == pytest.approx(-1.0, abs=1e-12)
    assert np.array_equal(c, c.T)
    assert np.all(np.diag(c) == 1.0)
    assert np.all(c[4, :4] == 0.0)
    assert c[0, 3] == pytest.approx(np.corrcoef(col, t[:, 3])[0, 1], abs=1e-12)


def test_blocks_identity_and_ones():
    assert extract_blocks(np.eye(6), 0.5) == [(i,) for i in range(6)]
    assert extract_blocks(np.ones((6, 6)), 0.5) == [tuple(range(6))]


def test_blocks_transitive_chain():
    c = np.eye(4)
    c[0, 1] = c[1, 0] = 0.8
    c[1, 2] = c[2, 1] = 0.6
    assert extract_blocks(c, 0.5) == [(0, 1, 2), (3,)]
    assert extract_blocks(c, 0.7) == [(0, 1), (2,), (3,)]


def test_representatives_uniform_low_confidence():
    P2 = np.full((9, 18), 1 / 18)
    reps = representative_clips(P2, predictability_table(P2, 3), (2,), 3)
    assert reps.low_confidence and len(reps.clips) <= 3


# --- ideal agent end to end -----------------------------------------------------------

def test_ideal_estimate_exact(default_env):
    est = analyze_network(ideal_network(default_env))
    assert (est.est_num_variables, est.est_experiments_per_variable,
            est.est_values_per_variable_layer1, est.est_values_per_variable_layer2,
            est.est_distinct_representative_clips) == (3.0, 2.0, 3.0, 3.0, 9.0)
    assert est.variable_blocks == [(0, 1), (2, 3), (4, 5)]
    assert sorted(est.representative_clip_sets) == planted_subsets(default_env)
    assert est.block_counts_by_tau[0.5] == 3


@pytest.mark.parametrize("cfg", [(2, 3, 2), (3, 2, 2), (2, 2, 3), (4, 2, 1)])
def test_ideal_recovery_other_layouts(cfg):
    from psconcepts.environment import EnvConfig, build_environment
    V, O, E = cfg
    env = build_environment(EnvConfig(V, O, E, seed=5))
    est = analyze_network(ideal_network(env))
    assert est.est_num_variables == V
    assert est.est_values_per_variable_layer2 == O
    if E > 1:
        assert est.est_experiments_per_variable == E
    assert sorted(est.good_subsets) == planted_subsets(env)


def test_fresh_network_analysis(default_env):
    est = analyze_network(ClipNetwork.fresh(default_env, THREE_LAYER))
    assert est.good_subsets == []
    assert np.all(predictability_table(np.full((9, 18), 1 / 18), 3) == 0)


def test_two_layer_rejected(default_env):
    with pytest.raises(ValueError):
        analyze_network(ClipNetwork.fresh(default_env, TWO_LAYER))


def _noisy_ideal(env, seed):
    net = ideal_network(env, strong=50.0)
    rng = np.random.default_rng(seed)
    net.h1[:] *= np.exp(rng.normal(0, 0.3, net.h1.shape))
    net.h2[:] *= np.exp(rng.normal(0, 0.3, net.h2.shape))
    return net


def test_permutation_invariance(default_env):
    net = _noisy_ideal(default_env, 0)
    P1, P2 = net.percept_probabilities(), net.intermediate_probabilities()
    base = estimate_environment(P1, P2, 3)
    rng = np.random.default_rng(11)
    ps, pi, pe = rng.permutation(27), rng.permutation(9), rng.permutation(6)
    po = np.concatenate([rng.permutation(3) for _ in range(6)])
    cols = np.concatenate([pe[k] * 3 + po[k * 3:(k + 1) * 3] for k in range(6)])
    P1p = P1[ps][:, pi]
    P2p = P2[pi][:, cols]
    est = estimate_environment(P1p, P2p, 3)
    assert est.metrics() == base.metrics()
    inv_i = np.argsort(pi)
    assert sorted(tuple(sorted(int(pi[j]) for j in g)) for g in est.good_subsets) == sorted(base.good_subsets)
    assert sorted(tuple(sorted(int(pe[k]) for k in b)) for b in est.variable_blocks) == \
        sorted(base.variable_blocks)
    assert len(inv_i) == 9


def test_scaling_invariance_and_no_mutation(default_env):
    net = _noisy_ideal(default_env, 1)
    P1, P2 = net.percept_probabilities(), net.intermediate_probabilities()
    c1, c2 = P1.copy(), P2.copy()
    est = estimate_environment(P1, P2, 3)
    assert np.array_equal(P1, c1) and np.array_equal(P2, c2)
    scaled = ClipNetwork(THREE_LAYER, net.h1 * 7.0, net.h2 * 7.0, 3)
    assert analyze_network(scaled).metrics() == pytest.approx(est.metrics())


def test_clip_order_groups_by_variable(default_env):
    net = ideal_network(default_env)
    est = analyze_network(net)
    assert clip_order(est, net.intermediate_probabilities(), 3) == list(range(9))


def test_thresholds_validation():
    with pytest.raises(ValueError):
        AnalysisThresholds(block_tau=1.0)
    with pytest.raises(ValueError):
        AnalysisThresholds(correlation="spearman")
    with pytest.raises(ValueError):
        AnalysisThresholds(exh_min=math.nan)
