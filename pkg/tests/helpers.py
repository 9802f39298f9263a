"""Shared model builders and brute-force oracles for the test-suite."""

from __future__ import annotations

import itertools
import math

import numpy as np

from sleephmm.hhmm import HhmmParams, ObservationSequence
from sleephmm.hhmm.emissions import emission_loglik


def random_params(rng, n_states, n_cont, n_symbols=(2,), frozen_rows=0) -> HhmmParams:
    """Random valid model; the first ``frozen_rows`` states are pinned to symbol 0."""
    pi = rng.dirichlet(np.ones(n_states))
    A = rng.dirichlet(np.ones(n_states), size=n_states)
    means = rng.normal(0.0, 1.5, size=(n_states, n_cont))
    covs = np.empty((n_states, n_cont, n_cont))
    for i in range(n_states):
        L = rng.normal(0.0, 0.6, size=(n_cont, n_cont))
        covs[i] = L @ L.T + 0.3 * np.eye(n_cont)
    disc, frozen = [], []
    for j in n_symbols:
        p = rng.dirichlet(np.ones(j), size=n_states)
        f = np.zeros((n_states, j), dtype=bool)
        p[:frozen_rows] = 0.0
        p[:frozen_rows, 0] = 1.0
        f[:frozen_rows, 1:] = True
        disc.append(p)
        frozen.append(f)
    return HhmmParams(pi, A, means, covs, disc, frozen)


def random_sequence(rng, T, n_cont, n_symbols=(2,), missing=0.0) -> ObservationSequence:
    cont = rng.normal(0.0, 2.0, size=(T, n_cont))
    disc = np.column_stack([rng.integers(0, j, size=T) for j in n_symbols]) if n_symbols else np.zeros((T, 0), int)
    cmask = rng.random((T, n_cont)) >= missing
    dmask = rng.random(disc.shape) >= missing
    return ObservationSequence(cont, disc, cmask, dmask)


def slot_emissions(params, seq, fully_missing="substitute") -> np.ndarray:
    """Per-slot, per-state emission log-likelihood from the single-slot routine."""
    out = np.empty((len(seq), params.n_states))
    for t in range(len(seq)):
        obs = seq.slot(t)
        for i in range(params.n_states):
            out[t, i] = emission_loglik(params, i, obs, fully_missing)
    return out


def enumerate_paths(params, seq, fully_missing="substitute"):
    """Brute force over all I^T paths: (log total likelihood, best log score, best paths)."""
    log_b = slot_emissions(params, seq, fully_missing)
    with np.errstate(divide="ignore"):
        log_pi, log_A = np.log(params.pi), np.log(params.A)
    T = len(seq)
    paths = np.array(list(itertools.product(range(params.n_states), repeat=T)), dtype=np.int64)
    scores = log_pi[paths[:, 0]] + log_b[np.arange(T), paths].sum(axis=1)
    if T > 1:
        scores = scores + log_A[paths[:, :-1], paths[:, 1:]].sum(axis=1)
    m = scores.max()
    total = m + math.log(np.exp(scores - m).sum())
    best = [tuple(p) for p in paths[scores == m].tolist()]
    return total, m, best


def known_model(n_states=3, sep=2.0, stay=0.9, var=0.3) -> HhmmParams:
    """Well separated states on a ring; one binary channel with distinct rates."""
    angles = 2 * np.pi * np.arange(n_states) / n_states
    means = sep * np.column_stack([np.cos(angles), np.sin(angles)])
    covs = np.repeat(var * np.eye(2)[None], n_states, axis=0)
    A = np.full((n_states, n_states), (1 - stay) / (n_states - 1))
    np.fill_diagonal(A, stay)
    rates = np.linspace(0.1, 0.9, n_states)
    disc = np.column_stack([1 - rates, rates])
    return HhmmParams(np.full(n_states, 1 / n_states), A, means, covs, [disc], [np.zeros((n_states, 2), bool)])


def align_states(true_means, fitted_means) -> np.ndarray:
    """Permutation ``perm`` minimizing mean distance, so fitted state ``perm[i]`` matches true state ``i``."""
    n = len(true_means)
    best, best_cost = None, np.inf
    for perm in itertools.permutations(range(n)):
        cost = np.sum((fitted_means[list(perm)] - true_means) ** 2)
        if cost < best_cost:
            best, best_cost = np.array(perm), cost
    return best
