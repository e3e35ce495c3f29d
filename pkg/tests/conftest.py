import itertools
import math

import numpy as np
import pytest

from volhmm import (
    ObservationScheme,
    SpotGrid,
    TransitionMatrix,
    build_classical_hmm,
)
from volhmm.chmm import MULTISET


def random_classical_hmm(rng, n_states=None, n_obs=None, k=None, mode=MULTISET):
    """Small random model with strictly positive matrices (all symbols reachable)."""
    n_states = n_states if n_states is not None else int(rng.integers(2, 4))
    n_obs = n_obs if n_obs is not None else int(rng.integers(2, 4))
    k = k if k is not None else int(rng.integers(1, 3))
    grid = SpotGrid(values=np.sort(rng.uniform(0.01, 1.0, n_states)))
    a_hf = TransitionMatrix(probs=rng.dirichlet(np.ones(n_states), size=n_states), dt=1.0 / k)
    edges = np.sort(rng.uniform(-0.6, 0.6, n_obs - 1))
    scheme = ObservationScheme(edges=edges)
    x0 = rng.dirichlet(np.ones(n_states))
    return build_classical_hmm(grid, a_hf, k, scheme, mode=mode, x0=x0)


def brute_force_loglik(hmm, obs):
    """Joint-probability enumeration over period-level latent paths."""
    n, horizon = hmm.n_states, len(obs)
    emission, a, x0 = hmm.emission.probs, hmm.a.probs, hmm.x0
    total = 0.0
    for path in itertools.product(range(n), repeat=horizon):
        p = x0[path[0]]
        for t in range(1, horizon):
            p *= a[path[t - 1], path[t]]
        for t in range(horizon):
            p *= emission[path[t], obs[t]]
        total += p
    return math.log(total)


@pytest.fixture
def rng():
    return np.random.default_rng(20240801)
