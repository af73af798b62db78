import itertools

import numpy as np
import pytest

from pmpmh.hmm import DiscreteHmm


def random_hmm(rng, n_cells, n_times, start=0, entry=False, exit=False, dense=True):
    """Random DiscreteHmm with strictly positive tables.

    ``dense=False`` stores per-time tuples so the pure numpy code path runs.
    """
    def stochastic(shape):
        m = rng.random(shape) + 0.05
        return m / m.sum(axis=-1, keepdims=True)

    initial = None if entry else stochastic(n_cells)
    ent = stochastic((n_cells, n_cells)) if entry else None
    ext = stochastic((n_cells, n_cells)) if exit else None
    trans = stochastic((n_times - 1, n_cells, n_cells))
    log_em = np.log(rng.random((n_times, n_cells)) + 0.01)
    if not dense:
        trans = tuple(trans)
        log_em = tuple(log_em)
    return DiscreteHmm(start=start, stop=start + n_times, initial=initial, entry=ent,
                       transitions=trans, exit=ext, log_emissions=log_em)


def enumerate_paths(hmm, left=None, right=None):
    """Exact posterior probability of every cell path, by brute force."""
    T = hmm.n_times
    N = len(hmm.log_emissions[0])
    prior = hmm.initial if left is None else hmm.entry[left]
    probs = {}
    for path in itertools.product(range(N), repeat=T):
        p = prior[path[0]] * np.exp(hmm.log_emissions[0][path[0]])
        for i in range(1, T):
            p *= hmm.transitions[i - 1][path[i - 1], path[i]] * np.exp(hmm.log_emissions[i][path[i]])
        if right is not None:
            p *= hmm.exit[path[-1], right]
        probs[path] = p
    z = sum(probs.values())
    return {k: v / z for k, v in probs.items()}


def path_marginals(probs, T, N):
    out = np.zeros((T, N))
    for path, p in probs.items():
        for t, n in enumerate(path):
            out[t, n] += p
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
