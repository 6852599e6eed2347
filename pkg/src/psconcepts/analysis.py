"""Reading hidden variables off a trained clip network.

First layer: subsets of intermediate clips that every setup hits exactly
once (exhaustive and exclusive). Second layer: how decisively each clip
predicts each experiment, which experiments share a predictability profile,
and which clips stand for the values of each shared variable.

All functions take hopping probabilities (row-normalised h-values) and never
modify their inputs.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

MAX_SCAN_CLIPS = 20
MASS_FLOOR = 1e-12


@dataclass(frozen=True)
class AnalysisThresholds:
    exh_min: float = -math.log(10.0)
    excl_min: float = math.log(10.0)
    block_tau: float = 0.5
    correlation: str = "pearson"
    # quantity whose per-setup ordering sets the violation weights: "ratio" or "numerator"
    weight_key: str = "ratio"

    def __post_init__(self):
        if not (math.isfinite(self.exh_min) and math.isfinite(self.excl_min)):
            raise ValueError("subset thresholds must be finite")
        if not 0.0 < self.block_tau < 1.0:
            raise ValueError(f"block_tau must lie in (0, 1), got {self.block_tau}")
        if self.correlation not in ("pearson", "cosine"):
            raise ValueError(f"unknown correlation {self.correlation!r}")
        if self.weight_key not in ("ratio", "numerator"):
            raise ValueError(f"unknown weight_key {self.weight_key!r}")

    def to_dict(self) -> dict:
        return asdict(self)


class SubsetScore(NamedTuple):
    subset: tuple[int, ...]
    exhaustivity: float
    exclusivity: float


class Representatives(NamedTuple):
    clips: tuple[int, ...]
    low_confidence: bool


@dataclass
class EnvironmentEstimate:
    est_num_variables: float
    est_experiments_per_variable: float
    est_values_per_variable_layer1: float
    est_values_per_variable_layer2: float
    est_distinct_representative_clips: float
    variable_blocks: list[tuple[int, ...]]
    representative_clip_sets: list[tuple[int, ...]]
    good_subsets: list[tuple[int, ...]] = field(default_factory=list)
    block_counts_by_tau: dict = field(default_factory=dict)

    METRICS = (
        "est_num_variables",
        "est_experiments_per_variable",
        "est_values_per_variable_layer1",
        "est_values_per_variable_layer2",
        "est_distinct_representative_clips",
    )

    def metrics(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in self.METRICS}

    def to_dict(self) -> dict:
        d = self.metrics()
        d["variable_blocks"] = [list(b) for b in self.variable_blocks]
        d["representative_clip_sets"] = [list(c) for c in self.representative_clip_sets]
        d["good_subsets"] = [list(g) for g in self.good_subsets]
        d["block_counts_by_tau"] = {str(k): v for k, v in self.block_counts_by_tau.items()}
        return d


# --- first layer -----------------------------------------------------------

def violation_weights(values) -> np.ndarray:
    """Cubic rank weights that emphasise setups with the smallest values.

    The largest value gets rank 0 and the smallest rank S-1 (ties go to the
    lower setup label first); ``w_s = (rank_s / (S-1))**3``, normalised to
    unit sum.
    """
    values = np.asarray(values, dtype=np.float64)
    S = values.shape[0]
    if S < 2:
        raise ValueError("need at least two setups to rank")
    order = np.lexsort((np.arange(S), -values))
    rank = np.empty(S, dtype=np.int64)
    rank[order] = np.arange(S)
    w = (rank / (S - 1)) ** 3
    return w / w.sum()


def _as_subset(subset, n_clips):
    idx = np.array(sorted(set(int(i) for i in subset)), dtype=np.int64)
    if idx.size == 0:
        raise ValueError("subset must be non-empty")
    if idx[0] < 0 or idx[-1] >= n_clips:
        raise IndexError("subset contains an invalid clip index")
    return idx


def _weighted_log_ratio(numerator, denominator, weight_key):
    with np.errstate(divide="ignore"):
        ratio = numerator / denominator
        terms = np.log(ratio)
    key = ratio if weight_key == "ratio" else numerator
    w = violation_weights(key)
    # zero weight on an infinite term contributes nothing
    return float(np.sum(np.where(w > 0, w * terms, 0.0)))


def exhaustivity(P1, subset, weight_key: str = "ratio") -> float:
    P1 = np.asarray(P1, dtype=np.float64)
    idx = _as_subset(subset, P1.shape[1])
    if idx.size == P1.shape[1]:
        raise ValueError("exhaustivity is undefined for the full clip set")
    outside = np.setdiff1d(np.arange(P1.shape[1]), idx)
    return _weighted_log_ratio(P1[:, idx].max(axis=1), P1[:, outside].max(axis=1), weight_key)


def exclusivity(P1, subset, weight_key: str = "ratio") -> float:
    P1 = np.asarray(P1, dtype=np.float64)
    idx = _as_subset(subset, P1.shape[1])
    if idx.size < 2:
        raise ValueError("exclusivity needs at least two clips")
    top2 = np.sort(P1[:, idx], axis=1)[:, -2:]
    return _weighted_log_ratio(top2[:, 1], top2[:, 0], weight_key)


def subset_scan(P1, max_clips: int = MAX_SCAN_CLIPS, weight_key: str = "ratio") -> list[SubsetScore]:
    """Score every proper subset with at least two clips.

    Ordered by cardinality, then lexicographically.
    """
    P1 = np.asarray(P1, dtype=np.float64)
    n = P1.shape[1]
    if n > max_clips:
        raise ValueError(
            f"{n} intermediate clips means 2**{n} subsets; pass max_clips >= {n} to scan anyway"
        )
    scores = []
    for k in range(2, n):
        for subset in itertools.combinations(range(n), k):
            scores.append(SubsetScore(subset, exhaustivity(P1, subset, weight_key),
                                      exclusivity(P1, subset, weight_key)))
    return scores


def good_subsets(scores: Sequence[SubsetScore], exh_min: float, excl_min: float) -> list[tuple[int, ...]]:
    """Subsets passing both thresholds, greedily pruned to be pairwise disjoint.

    Candidates are taken in descending exclusivity (then exhaustivity, then
    scan order).
    """
    if not (math.isfinite(exh_min) and math.isfinite(excl_min)):
        raise ValueError("thresholds must be finite")
    passing = [(i, sc) for i, sc in enumerate(scores)
               if sc.exhaustivity >= exh_min and sc.exclusivity >= excl_min]
    passing.sort(key=lambda item: (-item[1].exclusivity, -item[1].exhaustivity, item[0]))
    chosen, used = [], set()
    for _, sc in passing:
        if used.isdisjoint(sc.subset):
            chosen.append(tuple(sc.subset))
            used.update(sc.subset)
    return chosen


# --- second layer ----------------------------------------------------------

def predictability_table(P2, outcomes_per_experiment: int) -> np.ndarray:
    """Normalised neg-entropy ``1 - H(q)/ln O`` per (clip, experiment).

    ``q`` is the clip's action distribution restricted to the experiment and
    renormalised; clips with negligible mass on the experiment score 0.
    """
    P2 = np.asarray(P2, dtype=np.float64)
    O = int(outcomes_per_experiment)
    n_clips, n_actions = P2.shape
    if n_actions % O:
        raise ValueError("action count is not a multiple of outcomes per experiment")
    blocks = P2.reshape(n_clips, n_actions // O, O)
    mass = blocks.sum(axis=2)
    if O == 1:
        return np.where(mass >= MASS_FLOOR, 1.0, 0.0)
    q = blocks / np.where(mass >= MASS_FLOOR, mass, 1.0)[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(q > 0, q * np.log(q), 0.0)
    table = 1.0 - (-plogp.sum(axis=2)) / math.log(O)
    # snap rounding noise so uniform rows read exactly 0 and one-hot rows exactly 1
    table[np.abs(table) < 1e-12] = 0.0
    table[np.abs(table - 1.0) < 1e-12] = 1.0
    table = np.clip(table, 0.0, 1.0)
    table[mass < MASS_FLOOR] = 0.0
    return table


def correlation_matrix(table, method: str = "pearson") -> np.ndarray:
    """Similarity of experiments' predictability profiles (columns of ``table``).

    Constant columns correlate 0 with everything else; the diagonal is 1.
    """
    X = np.asarray(table, dtype=np.float64)
    n_exp = X.shape[1]
    if n_exp < 2:
        raise ValueError("need at least two experiments")
    if method == "pearson":
        X = X - X.mean(axis=0)
    elif method != "cosine":
        raise ValueError(f"unknown method {method!r}")
    norms = np.sqrt((X * X).sum(axis=0))
    ok = norms > 1e-12 * max(1.0, float(np.abs(table).max()))
    Y = np.where(ok, X / np.where(ok, norms, 1.0), 0.0)
    corr = Y.T @ Y
    corr = np.clip(0.5 * (corr + corr.T), -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr


def extract_blocks(corr, tau: float = 0.5) -> list[tuple[int, ...]]:
    """Connected components of the graph linking experiments with correlation > tau."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    corr = np.asarray(corr)
    adj = csr_matrix(corr > tau)
    _, labels = connected_components(adj, directed=False)
    blocks: dict[int, list[int]] = {}
    for e, lab in enumerate(labels):
        blocks.setdefault(int(lab), []).append(e)
    return sorted((tuple(b) for b in blocks.values()), key=lambda b: b[0])


def representative_clips(P2, table, block: Sequence[int], outcomes_per_experiment: int,
                         confidence_floor: float = 0.1) -> Representatives:
    """Clips that best stand for the values of the variable behind ``block``.

    For every outcome of every experiment in the block, take the clip with the
    largest hopping probability to that outcome among clips whose
    predictability for the experiment exceeds the block median. Falls back to
    all clips when none clears the median.
    """
    P2 = np.asarray(P2, dtype=np.float64)
    table = np.asarray(table, dtype=np.float64)
    block = list(block)
    if not block:
        raise ValueError("block must be non-empty")
    O = int(outcomes_per_experiment)
    median = float(np.median(table[:, block]))
    chosen = set()
    for e in block:
        eligible = np.flatnonzero(table[:, e] > median)
        if eligible.size == 0:
            eligible = np.arange(P2.shape[0])
        for o in range(O):
            col = P2[eligible, e * O + o]
            chosen.add(int(eligible[int(np.argmax(col))]))
    low = bool(table[:, block].max() < confidence_floor)
    return Representatives(tuple(sorted(chosen)), low)


def _mean_or_nan(values):
    return float(np.mean(values)) if len(values) else float("nan")


def estimate_environment(P1, P2, outcomes_per_experiment: int,
                         thresholds: Optional[AnalysisThresholds] = None,
                         scores: Optional[list[SubsetScore]] = None) -> EnvironmentEstimate:
    """Estimate |V|, experiments per variable and values per variable.

    ``P1`` may be None (layer-1 estimate then NaN).
    """
    th = thresholds or AnalysisThresholds()
    table = predictability_table(P2, outcomes_per_experiment)
    corr = correlation_matrix(table, th.correlation)
    blocks = extract_blocks(corr, th.block_tau)
    reps = [representative_clips(P2, table, b, outcomes_per_experiment).clips for b in blocks]
    if P1 is not None:
        if scores is None:
            scores = subset_scan(P1, weight_key=th.weight_key)
        good = good_subsets(scores, th.exh_min, th.excl_min)
    else:
        good = []
    distinct = set().union(*reps) if reps else set()
    return EnvironmentEstimate(
        est_num_variables=float(len(blocks)),
        est_experiments_per_variable=_mean_or_nan([len(b) for b in blocks]),
        est_values_per_variable_layer1=_mean_or_nan([len(g) for g in good]),
        est_values_per_variable_layer2=_mean_or_nan([len(r) for r in reps]),
        est_distinct_representative_clips=float(len(distinct)),
        variable_blocks=blocks,
        representative_clip_sets=reps,
        good_subsets=good,
        block_counts_by_tau={t: len(extract_blocks(corr, t)) for t in (0.3, 0.5, 0.7)},
    )


def analyze_network(net, thresholds: Optional[AnalysisThresholds] = None) -> EnvironmentEstimate:
    """Run the full two-layer-of-evidence analysis on a three-layer network."""
    if not net.three_layer:
        raise ValueError("variable identification needs a three-layer network (no intermediate clips)")
    return estimate_environment(net.percept_probabilities(), net.intermediate_probabilities(),
                                net.outcomes_per_experiment, thresholds)


def clip_order(estimate: EnvironmentEstimate, P2, outcomes_per_experiment: int) -> list[int]:
    """Display order for intermediate clips: grouped by variable, then by value.

    Within a block, clips are ordered by the outcome they most strongly predict
    for the block's first experiment; unassigned clips come last.
    """
    P2 = np.asarray(P2)
    O = int(outcomes_per_experiment)
    order: list[int] = []
    for block, clips in zip(estimate.variable_blocks, estimate.representative_clip_sets):
        e = block[0]
        ranked = sorted(clips, key=lambda i: (int(np.argmax(P2[i, e * O:(e + 1) * O])), i))
        order.extend(i for i in ranked if i not in order)
    order.extend(i for i in range(P2.shape[0]) if i not in order)
    return order
