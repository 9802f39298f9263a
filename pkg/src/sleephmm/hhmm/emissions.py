"""Joint Gaussian/categorical emission densities under missing data.

Scoring rules for one slot and one state:

* observed continuous channels contribute the Gaussian marginal over the
  observed subset;
* if every continuous channel is missing the state mean is substituted, so
  the slot scores the density at the mode (or nothing, with
  ``fully_missing="marginalize"``);
* an observed discrete symbol contributes ``log disc_probs[state, symbol]``;
* a missing discrete cell contributes the log-probability of the state's
  most likely symbol.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidInputError, NumericalError
from .params import HhmmParams, ObservationSequence

LOG_2PI = np.log(2.0 * np.pi)


def _log(p):
    with np.errstate(divide="ignore"):
        return np.log(p)


def _cholesky(cov: np.ndarray) -> np.ndarray:
    """Batched Cholesky that reports the first non-PD state."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        for i, c in enumerate(cov):
            try:
                np.linalg.cholesky(c)
            except np.linalg.LinAlgError:
                raise NumericalError(f"covariance of state {i} is not positive definite", state=i) from None
        raise


def emission_loglik(params: HhmmParams, state: int, obs: ObservationSequence,
                    fully_missing: str = "substitute") -> float:
    """Return ``log p(y_t, l_t | s_t = state)`` for a single-slot sequence ``obs``."""
    if not 0 <= state < params.n_states:
        raise InvalidInputError(f"state {state} out of range for {params.n_states} states")
    if len(obs) != 1:
        raise InvalidInputError("obs must hold exactly one slot")
    if obs.n_continuous != params.n_continuous or obs.n_discrete != params.n_discrete:
        raise InvalidInputError("observation channels do not match the model")

    y, ymask = obs.continuous[0], obs.cont_mask[0]
    mu, cov = params.means[state], params.covariances[state]
    total = 0.0
    if params.n_continuous:
        if ymask.any():
            o = np.flatnonzero(ymask)
            sub = cov[np.ix_(o, o)]
            try:
                chol = np.linalg.cholesky(sub)
            except np.linalg.LinAlgError:
                raise NumericalError(f"covariance of state {state} is not positive definite", state=state) from None
            diff = y[o] - mu[o]
            z = np.linalg.solve(chol, diff)
            total += -0.5 * (o.size * LOG_2PI + z @ z) - np.log(np.diag(chol)).sum()
        elif fully_missing == "substitute":
            sign, logdet = np.linalg.slogdet(cov)
            if sign <= 0:
                raise NumericalError(f"covariance of state {state} is not positive definite", state=state)
            total += -0.5 * (params.n_continuous * LOG_2PI + logdet)

    for m, probs in enumerate(params.disc_probs):
        row = probs[state]
        if obs.disc_mask[0, m]:
            sym = obs.discrete[0, m]
            if sym >= row.size:
                raise InvalidInputError(f"symbol {sym} out of range in discrete channel {m}")
            total += _log(row[sym])
        else:
            total += _log(row.max())
    return float(total)


def log_emission_matrix(params: HhmmParams, seq: ObservationSequence,
                        fully_missing: str = "substitute") -> np.ndarray:
    """Vectorized emission log-likelihoods, shape (T, I)."""
    return log_emissions_stacked(params, seq.continuous, seq.cont_mask, seq.discrete,
                                 seq.disc_mask, fully_missing)


def log_emissions_stacked(params, cont, cont_mask, disc, disc_mask,
                          fully_missing="substitute") -> np.ndarray:
    """Emission log-likelihoods for an arbitrary stack of slots, shape (n, I)."""
    n, n_states = cont.shape[0], params.n_states
    out = np.zeros((n, n_states))
    if params.n_continuous:
        _add_gaussian_terms(out, params, cont, cont_mask, fully_missing)
    for m, probs in enumerate(params.disc_probs):
        logp = _log(probs)
        observed = disc_mask[:, m]
        sym = np.where(observed, disc[:, m], 0)
        out += np.where(observed[:, None], logp[:, sym].T, logp.max(axis=1)[None, :])
    return out


def mask_patterns(mask: np.ndarray):
    """Distinct rows of a boolean mask and, per row, the index of its pattern."""
    codes = mask.astype(np.int64) @ (np.int64(1) << np.arange(mask.shape[1], dtype=np.int64))
    uniq, inverse = np.unique(codes, return_inverse=True)
    patterns = ((uniq[:, None] >> np.arange(mask.shape[1])) & 1).astype(bool)
    return patterns, inverse.reshape(-1)


def _add_gaussian_terms(out, params, cont, cont_mask, fully_missing):
    d = params.n_continuous
    patterns, inverse = mask_patterns(cont_mask)
    for p, pattern in enumerate(patterns):
        rows = np.flatnonzero(inverse == p)
        o = np.flatnonzero(pattern)
        if o.size == 0:
            if fully_missing == "substitute":
                chol = _cholesky(params.covariances)
                logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
                out[rows] += -0.5 * (d * LOG_2PI + logdet)[None, :]
            continue
        sub = params.covariances[:, o[:, None], o[None, :]]
        chol = _cholesky(sub)
        # diff: (I, k, n_rows)
        diff = (cont[rows][:, o][None, :, :] - params.means[:, o][:, None, :]).transpose(0, 2, 1)
        z = np.linalg.solve(chol, diff)
        maha = np.einsum("ikn,ikn->ni", z, z)
        half_logdet = np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        out[rows] += -0.5 * (o.size * LOG_2PI + maha) - half_logdet[None, :]
