"""Forward-backward and Viterbi in log space.

Sequences of equal length are stacked and processed together so that the
per-slot recursion runs once per batch instead of once per sequence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from ..errors import InvalidInputError, NumericalError
from .emissions import _log, log_emission_matrix
from .params import HhmmParams, ObservationSequence, check_compatible

BATCH_SIZE = 128


@dataclass
class PosteriorTables:
    log_alpha: np.ndarray  # (T, I)
    log_beta: np.ndarray  # (T, I)
    gamma: np.ndarray  # (T, I)
    xi: np.ndarray  # (T-1, I, I)
    loglik: float


def logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    """``log(sum(exp(a)))`` along ``axis``; all ``-inf`` input yields ``-inf``."""
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore", under="ignore"):
        s = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(s, axis=axis)


def _forward(log_pi, log_A, log_b):
    """log_b: (N, T, I) -> log_alpha (N, T, I), loglik (N,)."""
    la = np.empty_like(log_b)
    la[:, 0] = log_pi + log_b[:, 0]
    for t in range(1, log_b.shape[1]):
        la[:, t] = logsumexp(la[:, t - 1, :, None] + log_A, axis=1) + log_b[:, t]
    return la, logsumexp(la[:, -1], axis=1)


def _backward(log_A, log_b):
    lb = np.zeros_like(log_b)
    for t in range(log_b.shape[1] - 2, -1, -1):
        lb[:, t] = logsumexp(log_A + (log_b[:, t + 1] + lb[:, t + 1])[:, None, :], axis=2)
    return lb


def _log_xi(la, lb, log_A, log_b, loglik):
    """(N, T-1, I, I) log two-slice posteriors."""
    return (la[:, :-1, :, None] + log_A + (log_b[:, 1:] + lb[:, 1:])[:, :, None, :]
            - loglik[:, None, None, None])


def _check_loglik(loglik, offset=0):
    bad = ~np.isfinite(loglik)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0]) + offset
        raise NumericalError(f"sequence {k} has zero probability under the model")


def _batches(seqs: Sequence[ObservationSequence]):
    """Yield index arrays of equal-length sequences, in first-appearance order."""
    by_len = {}
    for k, s in enumerate(seqs):
        by_len.setdefault(len(s), []).append(k)
    for idx in by_len.values():
        for start in range(0, len(idx), BATCH_SIZE):
            yield idx[start:start + BATCH_SIZE]


def _stack_emissions(params, seqs, idx, fully_missing):
    return np.stack([log_emission_matrix(params, seqs[k], fully_missing) for k in idx])


def _prepare(params, seqs):
    if len(seqs) == 0:
        raise InvalidInputError("no sequences given")
    check_compatible(params, seqs)
    return _log(params.pi), _log(params.A)


def log_forward(params: HhmmParams, seq: ObservationSequence, fully_missing="substitute"):
    """Return ``(log_alpha, loglik)`` for one sequence."""
    log_pi, log_A = _prepare(params, [seq])
    la, ll = _forward(log_pi, log_A, log_emission_matrix(params, seq, fully_missing)[None])
    _check_loglik(ll)
    return la[0], float(ll[0])


def log_backward(params: HhmmParams, seq: ObservationSequence, fully_missing="substitute"):
    """Return ``log_beta`` for one sequence; the last row is zero."""
    _, log_A = _prepare(params, [seq])
    return _backward(log_A, log_emission_matrix(params, seq, fully_missing)[None])[0]


def posteriors(params: HhmmParams, seq: ObservationSequence, fully_missing="substitute") -> PosteriorTables:
    """Full forward-backward tables for one sequence."""
    return posteriors_many(params, [seq], fully_missing)[0]


def posteriors_many(params, seqs, fully_missing="substitute") -> List[PosteriorTables]:
    log_pi, log_A = _prepare(params, seqs)
    out = [None] * len(seqs)
    for idx in _batches(seqs):
        log_b = _stack_emissions(params, seqs, idx, fully_missing)
        la, ll = _forward(log_pi, log_A, log_b)
        _check_loglik(ll, idx[0])
        lb = _backward(log_A, log_b)
        gamma = np.exp(la + lb - ll[:, None, None])
        xi = np.exp(_log_xi(la, lb, log_A, log_b, ll))
        for j, k in enumerate(idx):
            out[k] = PosteriorTables(la[j], lb[j], gamma[j], xi[j], float(ll[j]))
    return out


def loglik_many(params, seqs, fully_missing="substitute") -> np.ndarray:
    """Per-sequence log-likelihoods."""
    log_pi, log_A = _prepare(params, seqs)
    out = np.empty(len(seqs))
    for idx in _batches(seqs):
        _, ll = _forward(log_pi, log_A, _stack_emissions(params, seqs, idx, fully_missing))
        out[idx] = ll
    return out


def _viterbi(log_pi, log_A, log_b):
    n, T, I = log_b.shape
    delta = log_pi + log_b[:, 0]
    back = np.zeros((n, T, I), dtype=np.int64)
    for t in range(1, T):
        cand = delta[:, :, None] + log_A
        # argmax returns the first maximum: ties go to the lowest previous state
        back[:, t] = np.argmax(cand, axis=1)
        delta = np.take_along_axis(cand, back[:, t][:, None, :], axis=1)[:, 0] + log_b[:, t]
    paths = np.empty((n, T), dtype=np.int64)
    paths[:, -1] = np.argmax(delta, axis=1)
    for t in range(T - 1, 0, -1):
        paths[:, t - 1] = back[np.arange(n), t, paths[:, t]]
    return paths, delta.max(axis=1)


def viterbi(params: HhmmParams, seq: ObservationSequence, fully_missing="substitute") -> np.ndarray:
    """Most probable state path; ties resolve to the lowest state index."""
    return decode_many(params, [seq], fully_missing)[0][0]


def decode_many(params, seqs, fully_missing="substitute"):
    """Viterbi for many sequences; returns a list of ``(path, log_score)``."""
    log_pi, log_A = _prepare(params, seqs)
    out = [None] * len(seqs)
    for idx in _batches(seqs):
        paths, scores = _viterbi(log_pi, log_A, _stack_emissions(params, seqs, idx, fully_missing))
        _check_loglik(scores, idx[0])
        for j, k in enumerate(idx):
            out[k] = (paths[j], float(scores[j]))
    return out


def path_log_prob(params: HhmmParams, seq: ObservationSequence, path, fully_missing="substitute") -> float:
    """``log pi[s_0] + sum log A + sum log emission`` along a given path."""
    path = np.asarray(path, dtype=np.int64)
    if path.shape != (len(seq),):
        raise InvalidInputError("path length does not match the sequence")
    log_b = log_emission_matrix(params, seq, fully_missing)
    log_A = _log(params.A)
    return float(_log(params.pi[path[0]]) + log_A[path[:-1], path[1:]].sum()
                 + log_b[np.arange(len(seq)), path].sum())
