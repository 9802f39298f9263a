"""Baum-Welch estimation with missing data and frozen emission entries."""

from __future__ import annotations

import logging
import math
import warnings
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning

from ..errors import DegenerateStateError, InvalidInputError
from .emissions import log_emissions_stacked, _log
from .impute import complete_continuous, ml_symbols
from .inference import _backward, _check_loglik, _forward, _log_xi, _batches
from .params import FitConfig, HhmmParams, ObservationSequence, check_compatible

logger = logging.getLogger(__name__)

#: total responsibility below which a state counts as empty
DEGENERATE_MASS = 1e-10


def floor_eigenvalues(cov: np.ndarray, floor: float) -> np.ndarray:
    """Symmetrize and raise every eigenvalue below ``floor`` to ``floor``.

    This is the maximizer of the Gaussian likelihood over covariances whose
    spectrum is bounded below by ``floor``; matrices already satisfying the
    bound are returned unchanged apart from symmetrization.
    """
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    out = cov.copy()
    for i, c in enumerate(cov.reshape(-1, *cov.shape[-2:])):
        w, v = np.linalg.eigh(c)
        if w.min() < floor:
            fixed = (v * np.maximum(w, floor)) @ v.T
            out.reshape(-1, *cov.shape[-2:])[i] = 0.5 * (fixed + fixed.T)
    return out


def semi_supervised_mask(n_states: int, n_frozen: int, n_symbols: Sequence[int], rest_symbol: int = 0):
    """Emission rows that pin the first ``n_frozen`` states to ``rest_symbol``.

    Returns ``(disc_rows, frozen_mask)`` where ``disc_rows[m][q]`` is the
    fixed row for a frozen state ``q`` (probability 1 on ``rest_symbol``) and
    every other symbol of that row is marked frozen at zero.
    """
    if not 0 <= n_frozen <= n_states:
        raise InvalidInputError("n_frozen must lie in [0, n_states]")
    rows, masks = [], []
    for j in n_symbols:
        fixed = np.zeros(j)
        fixed[rest_symbol] = 1.0
        mask = np.zeros((n_states, j), dtype=bool)
        mask[:n_frozen] = True
        mask[:n_frozen, rest_symbol] = False
        rows.append(fixed)
        masks.append(mask)
    return rows, masks


def init_params(seqs: Sequence[ObservationSequence], n_states: int, seed: int = 0,
                n_frozen: int = 0, n_symbols: Optional[Sequence[int]] = None,
                cov_floor: float = 1e-6, channel_names: Optional[dict] = None) -> HhmmParams:
    """Seeded starting point for :func:`fit_baum_welch`.

    Gaussian means come from k-means++ on the pooled fully observed continuous
    rows, sorted by increasing coordinate sum so that the frozen states
    (``0 .. n_frozen-1``) start on the quietest clusters.  Every state gets
    the pooled covariance.  ``pi``, ``A`` and the free emission rows are
    uniform plus a small seeded jitter.
    """
    if not seqs:
        raise InvalidInputError("no sequences given")
    if n_states < 1:
        raise InvalidInputError("n_states must be >= 1")
    rng = np.random.default_rng(seed)
    cont = np.concatenate([s.continuous for s in seqs])
    cmask = np.concatenate([s.cont_mask for s in seqs])
    disc = np.concatenate([s.discrete for s in seqs])
    d = cont.shape[1]

    if d:
        rows = cont[cmask.all(axis=1)]
        if rows.shape[0] < n_states:
            raise InvalidInputError("not enough fully observed continuous rows to initialize")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            km = KMeans(n_clusters=n_states, init="k-means++", n_init=1, random_state=seed).fit(rows)
        centers = km.cluster_centers_
        means = centers[np.lexsort((np.arange(n_states), centers.sum(axis=1)))]
        pooled = np.atleast_2d(np.cov(rows, rowvar=False, bias=True))
        covs = floor_eigenvalues(np.repeat(pooled[None], n_states, axis=0), cov_floor)
    else:
        means = np.zeros((n_states, 0))
        covs = np.zeros((n_states, 0, 0))

    def jittered(shape):
        x = 1.0 + rng.uniform(0.0, 0.1, size=shape)
        return x / x.sum(axis=-1, keepdims=True)

    pi = jittered(n_states)
    A = jittered((n_states, n_states))

    if n_symbols is None:
        n_symbols = [max(2, int(disc[:, m].max()) + 1) for m in range(disc.shape[1])]
    fixed_rows, frozen = semi_supervised_mask(n_states, n_frozen, n_symbols)
    disc_probs = []
    for m, j in enumerate(n_symbols):
        probs = jittered((n_states, j))
        probs[:n_frozen] = fixed_rows[m]
        disc_probs.append(probs)
    return HhmmParams(pi, A, means, covs, disc_probs, frozen, channel_names)


class _Stacked:
    """Sequences concatenated once so every EM iteration works on flat arrays."""

    def __init__(self, seqs):
        self.seqs = seqs
        self.lengths = np.array([len(s) for s in seqs])
        self.offsets = np.concatenate([[0], np.cumsum(self.lengths)])
        self.cont = np.concatenate([s.continuous for s in seqs])
        self.cmask = np.concatenate([s.cont_mask for s in seqs])
        self.disc = np.concatenate([s.discrete for s in seqs])
        self.dmask = np.concatenate([s.disc_mask for s in seqs])

    def rows(self, k):
        return slice(self.offsets[k], self.offsets[k + 1])


def _e_step(params: HhmmParams, data: _Stacked, fully_missing: str):
    n_states = params.n_states
    log_pi, log_A = _log(params.pi), _log(params.A)
    log_b_all = log_emissions_stacked(params, data.cont, data.cmask, data.disc, data.dmask, fully_missing)

    n_seq = len(data.seqs)
    gamma = np.empty((data.offsets[-1], n_states))
    xi_sums = np.empty((n_seq, n_states, n_states))
    lls = np.empty(n_seq)
    for idx in _batches(data.seqs):
        log_b = np.stack([log_b_all[data.rows(k)] for k in idx])
        la, ll = _forward(log_pi, log_A, log_b)
        _check_loglik(ll, idx[0])
        lb = _backward(log_A, log_b)
        g = np.exp(la + lb - ll[:, None, None])
        xs = np.exp(_log_xi(la, lb, log_A, log_b, ll)).sum(axis=1)
        for j, k in enumerate(idx):
            gamma[data.rows(k)] = g[j]
            xi_sums[k] = xs[j]
            lls[k] = ll[j]

    stats = {
        "init": gamma[data.offsets[:-1]].sum(axis=0),
        "trans": xi_sums.sum(axis=0),
        "post": gamma.sum(axis=0),
    }

    if params.n_continuous:
        xhat, blocks = complete_continuous(params, data.cont, data.cmask)
        s1 = np.einsum("ni,nid->id", gamma, xhat)
        s2 = np.einsum("ni,nid,nie->ide", gamma, xhat, xhat)
        for rows, m, cond_cov in blocks:
            full_missing = m.size == params.n_continuous
            if full_missing and fully_missing == "substitute":
                continue
            w = gamma[rows].sum(axis=0)
            s2[:, m[:, None], m[None, :]] += w[:, None, None] * cond_cov
        stats["s1"], stats["s2"] = s1, s2

    ml = ml_symbols(params)
    counts = []
    for m, probs in enumerate(params.disc_probs):
        c = np.zeros_like(probs)
        observed = data.dmask[:, m]
        sym = data.disc[:, m]
        for j in range(probs.shape[1]):
            c[:, j] = gamma[observed & (sym == j)].sum(axis=0)
        missing_mass = gamma[~observed].sum(axis=0)
        c[np.arange(n_states), ml[:, m]] += missing_mass
        counts.append(c)
    stats["counts"] = counts
    return stats, math.fsum(lls)


def _m_step(params: HhmmParams, stats, cov_floor: float) -> HhmmParams:
    post = stats["post"]
    empty = np.flatnonzero(post < DEGENERATE_MASS)
    if empty.size:
        raise DegenerateStateError(int(empty[0]))

    pi = stats["init"] / stats["init"].sum()
    trans = stats["trans"]
    row_mass = trans.sum(axis=1, keepdims=True)
    A = np.where(row_mass > 0, trans / np.where(row_mass > 0, row_mass, 1.0), params.A)

    if params.n_continuous:
        means = stats["s1"] / post[:, None]
        covs = stats["s2"] / post[:, None, None] - np.einsum("id,ie->ide", means, means)
        covs = floor_eigenvalues(covs, cov_floor)
    else:
        means, covs = params.means, params.covariances

    disc_probs = []
    for probs, frozen, c in zip(params.disc_probs, params.frozen_mask, stats["counts"]):
        new = probs.copy()
        for i in range(probs.shape[0]):
            free = ~frozen[i]
            if not free.any():
                continue
            mass = c[i, free].sum()
            if mass > 0:
                new[i, free] = (1.0 - probs[i, frozen[i]].sum()) * c[i, free] / mass
        disc_probs.append(new)

    return HhmmParams(pi, A, means, covs, disc_probs,
                      [f.copy() for f in params.frozen_mask], params.channel_names)


def fit_baum_welch(init: HhmmParams, seqs: Sequence[ObservationSequence],
                   config: Optional[FitConfig] = None) -> Tuple[HhmmParams, List[float]]:
    """Fit by EM, starting from ``init``.

    Iterates until the relative log-likelihood gain drops below
    ``config.rel_tol`` or ``config.max_iters`` likelihood evaluations have run.
    ``trace[k]`` is the log-likelihood of the k-th iterate and ``trace[-1]``
    that of the returned parameters.

    Raises
    ------
    InvalidInputError
        ``seqs`` is empty or does not match the model dimensions.
    DegenerateStateError
        A state lost all responsibility; re-initialize and retry.
    """
    config = config or FitConfig()
    seqs = list(seqs)
    if not seqs:
        raise InvalidInputError("no sequences given")
    check_compatible(init, seqs)
    data = _Stacked(seqs)
    params = init.copy()
    trace: List[float] = []
    for it in range(config.max_iters):
        stats, ll = _e_step(params, data, config.fully_missing)
        trace.append(ll)
        if it > 0:
            gain = ll - trace[-2]
            if gain < config.rel_tol * abs(trace[-2]):
                break
        if it == config.max_iters - 1:
            break
        params = _m_step(params, stats, config.cov_floor)
    logger.debug("EM stopped after %d evaluations, loglik %.6f", len(trace), trace[-1])
    return params, trace
