"""Compiled inner loops for deliberation and the h-value update.

Two-layer networks pass an empty ``h2`` and ``three=False``; every kernel
handles both architectures so the Python layer never branches on it.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def sample_index(row, u):
    total = 0.0
    for j in range(row.shape[0]):
        total += row[j]
    target = u * total
    acc = 0.0
    for j in range(row.shape[0]):
        acc += row[j]
        if target < acc:
            return j
    return row.shape[0] - 1


@njit(cache=True)
def action_marginal(h1, h2, three, s, out):
    if not three:
        total = 0.0
        for p in range(h1.shape[1]):
            total += h1[s, p]
        for p in range(h1.shape[1]):
            out[p] = h1[s, p] / total
        return
    n_int, n_act = h2.shape
    total = 0.0
    for i in range(n_int):
        total += h1[s, i]
    for p in range(n_act):
        out[p] = 0.0
    for i in range(n_int):
        row_sum = 0.0
        for p in range(n_act):
            row_sum += h2[i, p]
        w = h1[s, i] / total / row_sum
        for p in range(n_act):
            out[p] += w * h2[i, p]


@njit(cache=True)
def boring_flags(marginal, n_outcomes, beta, flags):
    """Fill ``flags`` per experiment; return True if some experiment is not boring."""
    any_open = False
    for e in range(flags.shape[0]):
        mass = 0.0
        top = 0.0
        for o in range(n_outcomes):
            v = marginal[e * n_outcomes + o]
            mass += v
            if v > top:
                top = v
        flags[e] = top / mass > beta
        if not flags[e]:
            any_open = True
    return any_open


@njit(cache=True)
def deliberate(h1, h2, three, s, n_outcomes, beta, max_redraws, rng, marginal, flags):
    """One boredom-filtered random walk from percept ``s``; returns (clip, action)."""
    attempts = 1
    if beta < 1.0:
        action_marginal(h1, h2, three, s, marginal)
        if boring_flags(marginal, n_outcomes, beta, flags):
            attempts += max_redraws
    else:
        flags[:] = False
    clip = -1
    action = 0
    for _ in range(attempts):
        if three:
            clip = sample_index(h1[s], rng.random())
            action = sample_index(h2[clip], rng.random())
        else:
            action = sample_index(h1[s], rng.random())
        if not flags[action // n_outcomes]:
            break
    return clip, action


@njit(cache=True)
def update(h1, h2, three, s, clip, action, keep, increment):
    for a in range(h1.shape[0]):
        for b in range(h1.shape[1]):
            h1[a, b] = 1.0 + keep * (h1[a, b] - 1.0)
    for a in range(h2.shape[0]):
        for b in range(h2.shape[1]):
            h2[a, b] = 1.0 + keep * (h2[a, b] - 1.0)
    if increment != 0.0:
        if three:
            h1[s, clip] += increment
            h2[clip, action] += increment
        else:
            h1[s, action] += increment


@njit(cache=True)
def train_rounds(h1, h2, three, feedback, n_outcomes, gamma, reward, beta, max_redraws,
                 n_rounds, rng, ring, state):
    """Run ``n_rounds`` interaction rounds in place.

    ``feedback[s, e]`` is the rewarded outcome, or -1 where feedback is withheld.
    ``state`` holds [ring_pos, ring_count, ring_sum] for the trailing reward window.
    """
    n_setups = h1.shape[0]
    n_actions = h2.shape[1] if three else h1.shape[1]
    marginal = np.empty(n_actions)
    flags = np.zeros(n_actions // n_outcomes, dtype=np.bool_)
    keep = 1.0 - gamma
    width = ring.shape[0]
    for _ in range(n_rounds):
        s = rng.integers(0, n_setups)
        clip, action = deliberate(h1, h2, three, s, n_outcomes, beta, max_redraws, rng,
                                  marginal, flags)
        e = action // n_outcomes
        r = 1 if feedback[s, e] == action - e * n_outcomes else 0
        update(h1, h2, three, s, clip, action, keep, reward * r)
        pos = state[0]
        state[2] += r - ring[pos]
        ring[pos] = r
        state[0] = (pos + 1) % width
        if state[1] < width:
            state[1] += 1
