"""Ancestral sampling and parameter counting."""

from __future__ import annotations

import numpy as np

from ..errors import InvalidInputError
from .emissions import _cholesky
from .params import HhmmParams, ObservationSequence


def sample(params: HhmmParams, T: int, seed=None):
    """Draw one fully observed sequence of length ``T``.

    Returns ``(sequence, states)``; the output is a deterministic function of
    ``seed``.
    """
    if T < 1:
        raise InvalidInputError("T must be >= 1")
    rng = np.random.default_rng(seed)
    n_states = params.n_states
    cum_A = np.cumsum(params.A, axis=1)
    states = np.empty(T, dtype=np.int64)
    u = rng.random(T)
    states[0] = min(np.searchsorted(np.cumsum(params.pi), u[0], side="right"), n_states - 1)
    for t in range(1, T):
        states[t] = min(np.searchsorted(cum_A[states[t - 1]], u[t], side="right"), n_states - 1)

    d = params.n_continuous
    chol = _cholesky(params.covariances) if d else np.zeros((n_states, 0, 0))
    z = rng.standard_normal((T, d))
    cont = params.means[states] + np.einsum("tij,tj->ti", chol[states], z)

    disc = np.empty((T, params.n_discrete), dtype=np.int64)
    for m, probs in enumerate(params.disc_probs):
        cum = np.cumsum(probs, axis=1)[states]
        v = rng.random(T)
        disc[:, m] = np.minimum((v[:, None] >= cum).sum(axis=1), probs.shape[1] - 1)
    return ObservationSequence(cont, disc), states


def n_free_params(params: HhmmParams) -> int:
    """Number of free parameters, used by the information criteria.

    A discrete row with ``f`` frozen entries out of ``J`` contributes
    ``max(J - f - 1, 0)``.
    """
    n, d = params.n_states, params.n_continuous
    k = (n - 1) + n * (n - 1) + n * d + n * d * (d + 1) // 2
    for probs, frozen in zip(params.disc_probs, params.frozen_mask):
        j = probs.shape[1]
        f = frozen.sum(axis=1)
        k += int(np.maximum(j - f - 1, 0).sum())
    return k
