"""Per-state completion of missing continuous cells and sequence imputation."""

from __future__ import annotations

import numpy as np

from ..errors import InvalidInputError, NumericalError
from .emissions import mask_patterns
from .params import HhmmParams, ObservationSequence


def _solve_spd(a, b, what):
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        for i, block in enumerate(a):
            if np.any(np.linalg.eigvalsh(block) <= 0):
                raise NumericalError(f"{what} of state {i} is singular", state=i) from None
        raise NumericalError(f"{what} is singular") from None
    y = np.linalg.solve(chol, b)
    return np.linalg.solve(np.swapaxes(chol, -1, -2), y)


def complete_continuous(params: HhmmParams, cont: np.ndarray, cont_mask: np.ndarray):
    """Fill missing continuous cells with their per-state expectation.

    Returns
    -------
    xhat : array, shape (n, I, M_c)
        Observed cells copied; missing cells set to the conditional mean
        ``mu_m + S_mo S_oo^-1 (x_o - mu_o)`` of each state, or to the state
        mean when nothing is observed in the slot.
    blocks : list of (rows, missing_idx, cond_cov)
        One entry per missingness pattern with at least one missing cell;
        ``cond_cov`` has shape (I, k, k) with ``k = len(missing_idx)``.
    """
    n, d = cont.shape
    n_states = params.n_states
    xhat = np.broadcast_to(cont[:, None, :], (n, n_states, d)).copy()
    blocks = []
    if d == 0 or cont_mask.all():
        return xhat, blocks
    patterns, inverse = mask_patterns(cont_mask)
    mu, cov = params.means, params.covariances
    for p, pattern in enumerate(patterns):
        if pattern.all():
            continue
        rows = np.flatnonzero(inverse == p)
        o, m = np.flatnonzero(pattern), np.flatnonzero(~pattern)
        s_mm = cov[:, m[:, None], m[None, :]]
        if o.size == 0:
            xhat[np.ix_(rows, np.arange(n_states), m)] = mu[None, :, m]
            blocks.append((rows, m, s_mm))
            continue
        s_oo = cov[:, o[:, None], o[None, :]]
        s_om = cov[:, o[:, None], m[None, :]]
        gain = np.swapaxes(_solve_spd(s_oo, s_om, "observed covariance block"), 1, 2)  # (I, k_m, k_o)
        resid = cont[rows][:, o][:, None, :] - mu[None, :, o]  # (r, I, k_o)
        cond_mean = mu[None, :, m] + np.einsum("imo,rio->rim", gain, resid)
        xhat[np.ix_(rows, np.arange(n_states), m)] = cond_mean
        blocks.append((rows, m, s_mm - gain @ s_om))
    return xhat, blocks


def conditional_mean(mean, cov, x, observed) -> np.ndarray:
    """Conditional mean of the unobserved coordinates of one Gaussian."""
    mean, cov, x = (np.asarray(a, dtype=float) for a in (mean, cov, x))
    observed = np.asarray(observed, dtype=bool)
    o, m = np.flatnonzero(observed), np.flatnonzero(~observed)
    if o.size == 0:
        return mean[m].copy()
    gain = np.linalg.solve(cov[np.ix_(o, o)], cov[np.ix_(o, m)]).T
    return mean[m] + gain @ (x[o] - mean[o])


def ml_symbols(params: HhmmParams) -> np.ndarray:
    """Most likely symbol per (state, discrete channel); ties go to the lowest symbol."""
    if params.n_discrete == 0:
        return np.zeros((params.n_states, 0), dtype=np.int64)
    return np.stack([np.argmax(d, axis=1) for d in params.disc_probs], axis=1)


def impute(params: HhmmParams, seq: ObservationSequence, gamma: np.ndarray) -> ObservationSequence:
    """Fill every missing cell of ``seq`` using state posteriors ``gamma``.

    Continuous cells get the posterior-weighted per-state conditional mean.
    Discrete cells get the most likely symbol of the most probable state.
    """
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (len(seq), params.n_states):
        raise InvalidInputError(f"gamma must have shape {(len(seq), params.n_states)}")
    xhat, _ = complete_continuous(params, seq.continuous, seq.cont_mask)
    cont = seq.continuous.copy()
    missing = ~seq.cont_mask
    filled = np.einsum("ti,tid->td", gamma, xhat)
    cont[missing] = filled[missing]

    disc = seq.discrete.copy()
    best_state = np.argmax(gamma, axis=1)
    sym = ml_symbols(params)[best_state]
    dmiss = ~seq.disc_mask
    disc[dmiss] = sym[dmiss]
    return ObservationSequence(cont, disc, np.ones_like(seq.cont_mask), np.ones_like(seq.disc_mask),
                               seq.slot_duration, seq.window_start)
