"""Data containers for the heterogeneous HMM.

An :class:`ObservationSequence` holds one sequence of aligned continuous and
discrete channels together with explicit observation masks.  Missing
continuous cells are stored as ``nan`` and missing discrete cells as ``-1`` so
that the masks and the data never disagree.

:class:`HhmmParams` holds the model parameters.  Probabilities are kept in
linear space; the inference routines take logs where they need them.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..errors import InvalidInputError

MODEL_VERSION = 1
_SUM_TOL = 1e-9


def _as_2d(x, dtype, n_rows=None) -> np.ndarray:
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim == 1 and n_rows is not None and arr.size == 0:
        arr = arr.reshape(n_rows, 0)
    if arr.ndim != 2:
        raise InvalidInputError(f"expected a 2-d array, got shape {arr.shape}")
    return arr


@dataclass
class ObservationSequence:
    """One sequence of heterogeneous observations.

    Parameters
    ----------
    continuous : array, shape (T, M_c)
        Real-valued channels.  ``nan`` marks a missing cell.
    discrete : array, shape (T, M_d)
        Integer symbols.  ``-1`` marks a missing cell.
    cont_mask, disc_mask : bool arrays, optional
        ``True`` where the cell is observed.  Derived from the data when
        omitted; when given they take precedence and masked-out cells are
        overwritten with the missing sentinel.
    """

    continuous: np.ndarray
    discrete: np.ndarray
    cont_mask: Optional[np.ndarray] = None
    disc_mask: Optional[np.ndarray] = None
    slot_duration: int = 10
    window_start: dt.time = dt.time(14, 0)

    def __post_init__(self):
        cont = np.array(self.continuous, dtype=float, copy=True)
        if cont.ndim == 1:
            cont = cont.reshape(-1, 1) if cont.size else cont.reshape(0, 0)
        disc_in = np.asarray(self.discrete)
        if disc_in.ndim == 1 and disc_in.size == 0:
            disc_in = disc_in.reshape(cont.shape[0], 0)
        if disc_in.ndim == 1:
            disc_in = disc_in.reshape(-1, 1)
        if disc_in.ndim != 2 or cont.ndim != 2:
            raise InvalidInputError("continuous and discrete data must be 2-d")
        if disc_in.shape[0] != cont.shape[0]:
            raise InvalidInputError(
                f"continuous has {cont.shape[0]} slots but discrete has {disc_in.shape[0]}"
            )
        if disc_in.size and not np.all(np.isfinite(disc_in.astype(float))):
            raise InvalidInputError("discrete data must not contain nan; use -1 for missing")
        disc = disc_in.astype(np.int64, copy=True)

        if self.cont_mask is None:
            cmask = np.isfinite(cont)
        else:
            cmask = np.asarray(self.cont_mask, dtype=bool)
            if cmask.shape != cont.shape:
                raise InvalidInputError("cont_mask shape does not match continuous data")
            if not np.all(np.isfinite(cont[cmask])):
                raise InvalidInputError("observed continuous values must be finite")
        if self.disc_mask is None:
            dmask = disc >= 0
        else:
            dmask = np.asarray(self.disc_mask, dtype=bool)
            if dmask.shape != disc.shape:
                raise InvalidInputError("disc_mask shape does not match discrete data")
            if np.any(disc[dmask] < 0):
                raise InvalidInputError("observed discrete symbols must be non-negative")

        cont[~cmask] = np.nan
        disc[~dmask] = -1
        self.continuous = cont
        self.discrete = disc
        self.cont_mask = cmask
        self.disc_mask = dmask

    def __len__(self) -> int:
        return self.continuous.shape[0]

    @property
    def length(self) -> int:
        return len(self)

    @property
    def n_continuous(self) -> int:
        return self.continuous.shape[1]

    @property
    def n_discrete(self) -> int:
        return self.discrete.shape[1]

    def slot(self, t: int) -> "ObservationSequence":
        """Return slot ``t`` as a length-1 sequence."""
        return ObservationSequence(
            self.continuous[t : t + 1],
            self.discrete[t : t + 1],
            self.cont_mask[t : t + 1],
            self.disc_mask[t : t + 1],
            self.slot_duration,
            self.window_start,
        )

    def observed_fraction(self) -> np.ndarray:
        """Fraction of observed cells per channel, continuous channels first."""
        masks = np.hstack([self.cont_mask, self.disc_mask])
        if len(self) == 0:
            return np.zeros(masks.shape[1])
        return masks.mean(axis=0)


@dataclass
class HhmmParams:
    """Parameters of a heterogeneous HMM with ``I`` states.

    Attributes
    ----------
    pi : array, shape (I,)
        Initial state distribution.
    A : array, shape (I, I)
        Row-stochastic transition matrix, ``A[i, j] = p(s_{t+1}=j | s_t=i)``.
    means : array, shape (I, M_c)
    covariances : array, shape (I, M_c, M_c)
    disc_probs : list of arrays, each shape (I, J_m)
        Row-stochastic emission matrix for each discrete channel.
    frozen_mask : list of bool arrays, each shape (I, J_m)
        Entries of ``disc_probs`` that training must leave untouched.
    channel_names : dict
        ``{"continuous": [...], "discrete": [...]}``; informational only.
    """

    pi: np.ndarray
    A: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    disc_probs: list = field(default_factory=list)
    frozen_mask: Optional[list] = None
    channel_names: Optional[dict] = None

    def __post_init__(self):
        self.pi = np.array(self.pi, dtype=float)
        self.A = np.array(self.A, dtype=float)
        n = self.pi.shape[0]
        self.means = np.array(self.means, dtype=float).reshape(n, -1)
        m = self.means.shape[1]
        self.covariances = np.array(self.covariances, dtype=float).reshape(n, m, m)
        self.disc_probs = [np.array(d, dtype=float) for d in self.disc_probs]
        if self.frozen_mask is None:
            self.frozen_mask = [np.zeros(d.shape, dtype=bool) for d in self.disc_probs]
        else:
            self.frozen_mask = [np.array(f, dtype=bool) for f in self.frozen_mask]
        if self.channel_names is None:
            self.channel_names = {
                "continuous": [f"c{k}" for k in range(m)],
                "discrete": [f"d{k}" for k in range(len(self.disc_probs))],
            }
        self.validate()

    @property
    def n_states(self) -> int:
        return self.pi.shape[0]

    @property
    def n_continuous(self) -> int:
        return self.means.shape[1]

    @property
    def n_discrete(self) -> int:
        return len(self.disc_probs)

    @property
    def n_symbols(self) -> list:
        return [d.shape[1] for d in self.disc_probs]

    def validate(self) -> None:
        """Raise :class:`InvalidInputError` if any invariant is violated."""
        n = self.n_states
        if n < 1:
            raise InvalidInputError("a model needs at least one state")
        if self.A.shape != (n, n):
            raise InvalidInputError(f"A must be {n}x{n}, got {self.A.shape}")
        _check_stochastic(self.pi[None, :], "pi")
        _check_stochastic(self.A, "A")
        cov = self.covariances
        if not np.all(np.isfinite(self.means)) or not np.all(np.isfinite(cov)):
            raise InvalidInputError("means and covariances must be finite")
        if not np.allclose(cov, np.swapaxes(cov, 1, 2), rtol=0, atol=1e-12):
            raise InvalidInputError("covariance matrices must be symmetric")
        if len(self.frozen_mask) != len(self.disc_probs):
            raise InvalidInputError("frozen_mask needs one entry per discrete channel")
        for k, (d, f) in enumerate(zip(self.disc_probs, self.frozen_mask)):
            if d.ndim != 2 or d.shape[0] != n:
                raise InvalidInputError(f"disc_probs[{k}] must have {n} rows")
            if f.shape != d.shape:
                raise InvalidInputError(f"frozen_mask[{k}] shape does not match disc_probs[{k}]")
            _check_stochastic(d, f"disc_probs[{k}]")

    def copy(self) -> "HhmmParams":
        return HhmmParams(
            self.pi.copy(),
            self.A.copy(),
            self.means.copy(),
            self.covariances.copy(),
            [d.copy() for d in self.disc_probs],
            [f.copy() for f in self.frozen_mask],
            json.loads(json.dumps(self.channel_names)),
        )

    def frozen_states(self) -> list:
        """States with at least one frozen discrete emission entry, ascending."""
        rows = np.zeros(self.n_states, dtype=bool)
        for f in self.frozen_mask:
            rows |= f.any(axis=1)
        return [int(i) for i in np.flatnonzero(rows)]

    # serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": MODEL_VERSION,
            "n_states": self.n_states,
            "pi": self.pi.tolist(),
            "A": self.A.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "disc_probs": [d.tolist() for d in self.disc_probs],
            "frozen_mask": [f.tolist() for f in self.frozen_mask],
            "channel_names": self.channel_names,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "HhmmParams":
        version = doc.get("version")
        if version != MODEL_VERSION:
            raise InvalidInputError(f"unsupported model version {version!r}, expected {MODEL_VERSION}")
        params = cls(
            pi=doc["pi"],
            A=doc["A"],
            means=doc["means"],
            covariances=doc["covariances"],
            disc_probs=doc["disc_probs"],
            frozen_mask=doc["frozen_mask"],
            channel_names=doc.get("channel_names"),
        )
        if params.n_states != doc["n_states"]:
            raise InvalidInputError("n_states does not match the size of pi")
        return params

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "HhmmParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _check_stochastic(m: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(m)) or np.any(m < 0):
        raise InvalidInputError(f"{name} must contain finite non-negative probabilities")
    bad = np.abs(m.sum(axis=1) - 1.0) > _SUM_TOL
    if np.any(bad):
        raise InvalidInputError(f"rows of {name} must sum to 1 (row {int(np.argmax(bad))})")


@dataclass
class FitConfig:
    """Baum-Welch settings.

    ``fully_missing`` selects how a slot with every continuous channel missing
    is scored: ``"substitute"`` evaluates the state density at its own mean,
    ``"marginalize"`` integrates the channels out (contributing nothing).
    """

    max_iters: int = 500
    rel_tol: float = 1e-6
    cov_floor: float = 1e-6
    seed: int = 0
    fully_missing: str = "substitute"

    def __post_init__(self):
        if self.max_iters < 1:
            raise InvalidInputError("max_iters must be >= 1")
        if not self.rel_tol > 0:
            raise InvalidInputError("rel_tol must be > 0")
        if not self.cov_floor > 0:
            raise InvalidInputError("cov_floor must be > 0")
        if self.fully_missing not in ("substitute", "marginalize"):
            raise InvalidInputError(f"unknown fully_missing mode {self.fully_missing!r}")


def check_compatible(params: HhmmParams, seqs: Sequence[ObservationSequence]) -> None:
    """Raise :class:`InvalidInputError` unless every sequence matches the model dimensions."""
    for k, seq in enumerate(seqs):
        if len(seq) == 0:
            raise InvalidInputError(f"sequence {k} is empty")
        if seq.n_continuous != params.n_continuous or seq.n_discrete != params.n_discrete:
            raise InvalidInputError(
                f"sequence {k} has {seq.n_continuous}+{seq.n_discrete} channels, "
                f"model expects {params.n_continuous}+{params.n_discrete}"
            )
        for m, n_sym in enumerate(params.n_symbols):
            col = seq.discrete[:, m]
            if np.any(col >= n_sym):
                raise InvalidInputError(f"sequence {k}: symbol out of range in discrete channel {m}")
