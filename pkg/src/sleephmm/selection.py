"""Information criteria and sweeps over state counts and supervision setups."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Optional, Sequence, Tuple

from .errors import InvalidInputError, SleepHMMError
from .hhmm import FitConfig, HhmmParams, ObservationSequence, fit_baum_welch, init_params, n_free_params

logger = logging.getLogger(__name__)

#: supervision setups: number of states whose non-rest symbols are frozen at zero
CONFIGS = {"unsupervised": 0, "semi-1": 1, "semi-2": 2}
REPORT_COLUMNS = ("n_states", "config_label", "loglik", "n_free_params", "bic", "aic", "seed")


def bic(loglik: float, k: int, n: int) -> float:
    """Bayesian information criterion ``k ln(n) - 2 loglik``."""
    if n < 1:
        raise InvalidInputError("BIC needs at least one observation")
    return k * math.log(n) - 2.0 * loglik


def aic(loglik: float, k: int) -> float:
    """Akaike information criterion ``2k - 2 loglik``."""
    return 2.0 * k - 2.0 * loglik


@dataclass
class SweepRow:
    n_states: int
    config_label: str
    loglik: Optional[float]
    n_free_params: int
    bic: Optional[float]
    aic: Optional[float]
    seed: int
    error: Optional[str] = None


@dataclass
class SweepReport:
    n_obs: int
    rows: List[SweepRow] = field(default_factory=list)

    def best(self, criterion: str = "bic", config_label: Optional[str] = None) -> Optional[SweepRow]:
        """Row minimizing ``criterion`` among successful fits (first one on ties)."""
        rows = [r for r in self.rows if r.error is None
                and (config_label is None or r.config_label == config_label)]
        if not rows:
            return None
        return min(rows, key=lambda r: getattr(r, criterion))

    def to_json(self) -> str:
        doc = {
            "n_obs": self.n_obs,
            "columns": list(REPORT_COLUMNS),
            "rows": [{k: getattr(r, k) for k in REPORT_COLUMNS} for r in self.rows],
            "errors": [{"n_states": r.n_states, "config_label": r.config_label, "error": r.error}
                       for r in self.rows if r.error is not None],
        }
        return json.dumps(doc, indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for r in self.rows:
            writer.writerow(["" if getattr(r, k) is None else _fmt(getattr(r, k)) for k in REPORT_COLUMNS])
        return buf.getvalue()


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def fit_best(seqs: Sequence[ObservationSequence], n_states: int, n_frozen: int,
             config: FitConfig, restarts: int = 1, channel_names=None) -> Tuple[HhmmParams, List[float], int]:
    """Fit from ``restarts`` seeded initializations and keep the best final log-likelihood.

    Seeds are ``config.seed, config.seed + 1, ...``.  Returns
    ``(params, trace, seed)``.  If every restart fails the last error is raised.
    """
    best, last_err = None, None
    for r in range(max(1, restarts)):
        seed = config.seed + r
        try:
            init = init_params(seqs, n_states, seed=seed, n_frozen=n_frozen,
                               cov_floor=config.cov_floor, channel_names=channel_names)
            params, trace = fit_baum_welch(init, seqs, replace(config, seed=seed))
        except SleepHMMError as exc:
            logger.info("restart %d (I=%d, frozen=%d) failed: %s", r, n_states, n_frozen, exc)
            last_err = exc
            continue
        if best is None or trace[-1] > best[1][-1]:
            best = (params, trace, seed)
    if best is None:
        raise last_err
    return best


def _cell(args):
    seqs, n_states, label, config, restarts, n_obs = args
    try:
        params, trace, seed = fit_best(seqs, n_states, CONFIGS[label], config, restarts)
    except SleepHMMError as exc:
        return SweepRow(n_states, label, None, 0, None, None, config.seed, f"{type(exc).__name__}: {exc}")
    ll, k = trace[-1], n_free_params(params)
    return SweepRow(n_states, label, ll, k, bic(ll, k, n_obs), aic(ll, k), seed)


def sweep(seqs: Sequence[ObservationSequence], state_range: Iterable[int],
          configs: Sequence[str] = tuple(CONFIGS), fit_config: Optional[FitConfig] = None,
          restarts: int = 1, jobs: int = 1) -> SweepReport:
    """Fit every (config, n_states) cell and tabulate log-likelihood, BIC and AIC.

    The observation count in BIC is the total number of time slots.  A cell
    whose fit fails is kept as a row with an ``error`` and empty scores.
    """
    seqs = list(seqs)
    states = list(state_range)
    if not seqs:
        raise InvalidInputError("no sequences given")
    if not states:
        raise InvalidInputError("empty state range")
    for label in configs:
        if label not in CONFIGS:
            raise InvalidInputError(f"unknown config {label!r}; expected one of {sorted(CONFIGS)}")
    fit_config = fit_config or FitConfig()
    n_obs = sum(len(s) for s in seqs)
    cells = [(seqs, n, label, fit_config, restarts, n_obs) for label in configs for n in states]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_cell, cells))
    else:
        rows = [_cell(c) for c in cells]
    return SweepReport(n_obs, rows)
