"""Raw smartphone records to cleaned 144-slot day vectors.

Each day runs from 14:00 to 14:00 local time in 10-minute slots.  Signals are
cleaned per day, independently of every other day:

* actigraphy: drop 3-sigma outliers, subtract the signal mode (device bias),
  drop negative residuals, min-max normalize;
* light: drop 3-sigma outliers, min-max normalize;
* steps: binarize (any step in the slot -> 1);
* app usage and unlocks: OR-ed into one smartphone-usage indicator.

Single-channel helpers take and return float arrays with ``nan`` for missing
cells.
"""

from __future__ import annotations

import datetime as dt
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

import numpy as np

from .errors import InvalidInputError
from .hhmm.params import ObservationSequence

logger = logging.getLogger(__name__)

SLOT_MINUTES = 10
SLOTS_PER_DAY = 144
WINDOW_START = dt.time(14, 0)

RAW_CHANNELS = ("actigraphy", "light", "steps", "app_usage", "unlocks")
CONTINUOUS_CHANNELS = ("actigraphy", "light")
DISCRETE_CHANNELS = ("steps", "usage")
CHANNELS = CONTINUOUS_CHANNELS + DISCRETE_CHANNELS

#: maximum fraction of missing slots per channel for a training day
TRAIN_MAX_MISSING = {"actigraphy": 0.2, "light": 0.3, "steps": 0.2, "usage": 0.2}

OUTLIER_SIGMAS = 3.0
MODE_DECIMALS = 3


@dataclass(frozen=True)
class RawRecord:
    subject_id: str
    timestamp: dt.datetime
    channel: str
    value: Optional[float]


@dataclass
class DayVector:
    """One subject-day as a cleaned :class:`ObservationSequence`."""

    subject_id: str
    date: dt.date
    seq: ObservationSequence
    flags: List[str] = field(default_factory=list)

    def missing_fraction(self) -> Dict[str, float]:
        frac = 1.0 - self.seq.observed_fraction()
        return {name: float(f) for name, f in zip(CHANNELS, frac)}


# ---------------------------------------------------------------------------
# record parsing

class RecordError(InvalidInputError):
    """A raw row that cannot be turned into a :class:`RawRecord`."""

    def __init__(self, reason: str, message: str):
        super().__init__(message)
        self.reason = reason


def parse_timestamp(text) -> dt.datetime:
    if isinstance(text, dt.datetime):
        return text
    s = str(text).strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    try:
        return dt.datetime.fromisoformat(s)
    except ValueError:
        raise RecordError("timestamp", f"unparseable timestamp {text!r}") from None


def parse_value(raw) -> Optional[float]:
    if raw is None:
        return None
    if isinstance(raw, str):
        raw = raw.strip()
        if raw == "" or raw.lower() in ("null", "none", "nan", "na"):
            return None
    try:
        v = float(raw)
    except (TypeError, ValueError):
        raise RecordError("value", f"non-numeric value {raw!r}") from None
    if math.isnan(v):
        return None
    if math.isinf(v):
        raise RecordError("value", "infinite value")
    return v


def parse_record(row: dict) -> RawRecord:
    """Validate one input row (a mapping with the four record fields)."""
    channel = str(row.get("channel", "")).strip()
    if channel not in RAW_CHANNELS:
        raise RecordError("channel", f"unknown channel {channel!r}")
    subject = str(row.get("subject_id", "")).strip()
    if not subject:
        raise RecordError("subject_id", "missing subject_id")
    value = parse_value(row.get("value"))
    if value is not None and channel in ("app_usage", "unlocks") and value not in (0.0, 1.0):
        raise RecordError("value", f"{channel} must be binary, got {value}")
    return RawRecord(subject, parse_timestamp(row.get("timestamp")), channel, value)


def parse_records(rows: Iterable[dict]) -> Tuple[List[RawRecord], Counter]:
    """Parse rows, returning the valid records and a Counter of rejection reasons."""
    records, rejected = [], Counter()
    for row in rows:
        try:
            records.append(parse_record(row))
        except RecordError as exc:
            rejected[exc.reason] += 1
    return records, rejected


# ---------------------------------------------------------------------------
# per-signal cleaning

def _signal(values) -> np.ndarray:
    x = np.array([np.nan if v is None else v for v in values], dtype=float) \
        if not isinstance(values, np.ndarray) else values.astype(float, copy=True)
    x[~np.isfinite(x)] = np.nan
    return x


def remove_outliers(values, n_sigmas: float = OUTLIER_SIGMAS) -> np.ndarray:
    """Mark cells further than ``n_sigmas`` standard deviations from the mean as missing.

    Mean and (population) standard deviation come from a single pass over all
    observed cells, outlier candidates included.
    """
    x = _signal(values)
    obs = ~np.isnan(x)
    if obs.sum() < 2:
        return x
    mean, std = x[obs].mean(), x[obs].std()
    x[obs & (np.abs(x - mean) > n_sigmas * std)] = np.nan
    return x


def signal_mode(values, decimals: int = MODE_DECIMALS) -> float:
    """Most frequent value after rounding; ties go to the smallest value."""
    x = _signal(values)
    x = x[~np.isnan(x)]
    if x.size == 0:
        raise InvalidInputError("mode of an empty signal")
    uniq, counts = np.unique(np.round(x, decimals), return_counts=True)
    return float(uniq[np.argmax(counts)])


def minmax_normalize(values) -> np.ndarray:
    """Affine map of the observed range onto [0, 1]; a constant signal maps to 0."""
    x = _signal(values)
    obs = ~np.isnan(x)
    if not obs.any():
        return x
    lo, hi = x[obs].min(), x[obs].max()
    if hi > lo:
        x[obs] = (x[obs] - lo) / (hi - lo)
        # guard the endpoints against rounding
        x[obs] = np.clip(x[obs], 0.0, 1.0)
    else:
        x[obs] = 0.0
    return x


def _too_short(x: np.ndarray) -> bool:
    return np.count_nonzero(~np.isnan(x)) < 2


def clean_actigraphy(values) -> np.ndarray:
    """Outlier removal, mode-bias subtraction, negative dismissal, normalization.

    Fewer than two observed cells yields an all-missing output.  Cells in the
    mode's rounding bucket are bias, not error: they clamp to zero instead of
    being dismissed as negative.
    """
    x = _signal(values)
    if _too_short(x):
        return np.full_like(x, np.nan)
    x = remove_outliers(x)
    bias = signal_mode(x)
    obs = ~np.isnan(x)
    in_bucket = obs & (np.round(x, MODE_DECIMALS) == bias)
    resid = x - bias
    resid[in_bucket] = np.maximum(resid[in_bucket], 0.0)
    resid[obs & (resid < 0)] = np.nan
    return minmax_normalize(resid)


def clean_light(values) -> np.ndarray:
    """Outlier removal followed by min-max normalization."""
    x = _signal(values)
    if _too_short(x):
        return np.full_like(x, np.nan)
    return minmax_normalize(remove_outliers(x))


def binarize_steps(values) -> np.ndarray:
    """1 where steps > 0, 0 where steps == 0; negative counts become missing."""
    x = _signal(values)
    out = np.full_like(x, np.nan)
    obs = ~np.isnan(x)
    if np.any(x[obs] < 0):
        logger.warning("negative step counts marked missing")
    out[obs & (x > 0)] = 1.0
    out[obs & (x == 0)] = 0.0
    return out


def merge_usage(app_usage, unlocks) -> np.ndarray:
    """Cellwise OR of two binary indicators; a missing side defers to the other."""
    a, b = _signal(app_usage), _signal(unlocks)
    if a.shape != b.shape:
        raise InvalidInputError("usage signals must have the same length")
    for name, s in (("app_usage", a), ("unlocks", b)):
        obs = s[~np.isnan(s)]
        if np.any((obs != 0.0) & (obs != 1.0)):
            raise InvalidInputError(f"{name} must be binary")
    out = np.fmax(a, b)  # fmax ignores a single nan
    return out


# ---------------------------------------------------------------------------
# day assembly

def get_zone(name: str) -> dt.tzinfo:
    try:
        return ZoneInfo(name)
    except (ZoneInfoNotFoundError, ValueError):
        raise InvalidInputError(f"unknown time zone {name!r}") from None


def local_clock(ts: dt.datetime, zone: dt.tzinfo) -> dt.datetime:
    """Naive local wall-clock time; naive inputs are taken as already local."""
    if ts.tzinfo is None:
        return ts
    return ts.astimezone(zone).replace(tzinfo=None)


def window_date(local: dt.datetime) -> dt.date:
    """Date label of the 14:00-14:00 window containing a local time."""
    start = dt.datetime.combine(local.date(), WINDOW_START)
    return local.date() if local >= start else local.date() - dt.timedelta(days=1)


def slot_index(local: dt.datetime, date: dt.date) -> int:
    minutes = (local - dt.datetime.combine(date, WINDOW_START)).total_seconds() / 60.0
    return int(minutes // SLOT_MINUTES)


def dst_flag(date: dt.date, zone: dt.tzinfo) -> Optional[str]:
    """Describe a UTC-offset change inside the window, if any."""
    a = dt.datetime.combine(date, WINDOW_START, tzinfo=zone).utcoffset()
    b = dt.datetime.combine(date + dt.timedelta(days=1), WINDOW_START, tzinfo=zone).utcoffset()
    if a == b:
        return None
    kind = "repeated_hour" if b < a else "skipped_hour"
    return f"dst_{kind}"


def build_day_vector(records: Sequence[RawRecord], subject_id: str, date: dt.date,
                     zone="UTC") -> DayVector:
    """Aggregate one subject's records into the window starting at 14:00 on ``date``.

    Records of other subjects or outside the window are ignored.  Within a
    slot actigraphy and light are averaged, steps summed and usage OR-ed.
    """
    tz = get_zone(zone) if isinstance(zone, str) else zone
    sums = {ch: np.zeros(SLOTS_PER_DAY) for ch in RAW_CHANNELS}
    counts = {ch: np.zeros(SLOTS_PER_DAY, dtype=int) for ch in RAW_CHANNELS}
    for rec in records:
        if rec.subject_id != subject_id or rec.value is None:
            continue
        local = local_clock(rec.timestamp, tz)
        slot = slot_index(local, date)
        if not 0 <= slot < SLOTS_PER_DAY:
            continue
        if rec.channel in ("app_usage", "unlocks"):
            sums[rec.channel][slot] = max(sums[rec.channel][slot], rec.value)
        else:
            sums[rec.channel][slot] += rec.value
        counts[rec.channel][slot] += 1

    raw = {}
    for ch in RAW_CHANNELS:
        v = np.full(SLOTS_PER_DAY, np.nan)
        has = counts[ch] > 0
        v[has] = sums[ch][has] / counts[ch][has] if ch in ("actigraphy", "light") else sums[ch][has]
        raw[ch] = v

    flags = []
    for ch in ("actigraphy", "light"):
        n_obs = int(np.count_nonzero(~np.isnan(raw[ch])))
        if 0 < n_obs < 2:
            flags.append(f"{ch}_too_few_observations")
    if np.any(raw["steps"][~np.isnan(raw["steps"])] < 0):
        flags.append("negative_steps")
    flag = dst_flag(date, tz)
    if flag:
        flags.append(flag)

    cont = np.column_stack([clean_actigraphy(raw["actigraphy"]), clean_light(raw["light"])])
    bin_cols = np.column_stack([binarize_steps(raw["steps"]), merge_usage(raw["app_usage"], raw["unlocks"])])
    disc = np.where(np.isnan(bin_cols), -1, bin_cols).astype(np.int64)
    seq = ObservationSequence(cont, disc, slot_duration=SLOT_MINUTES, window_start=WINDOW_START)
    return DayVector(subject_id, date, seq, flags)


def build_day_vectors(records: Sequence[RawRecord], zones: Optional[Dict[str, str]] = None,
                      default_zone: str = "UTC") -> List[DayVector]:
    """Split records by subject and local window date; one DayVector per non-empty window."""
    zones = zones or {}
    groups = defaultdict(list)
    tz_cache = {}
    for rec in records:
        name = zones.get(rec.subject_id, default_zone)
        tz = tz_cache.setdefault(name, get_zone(name))
        groups[(rec.subject_id, window_date(local_clock(rec.timestamp, tz)))].append(rec)
    days = []
    for (subject, date) in sorted(groups):
        name = zones.get(subject, default_zone)
        days.append(build_day_vector(groups[(subject, date)], subject, date, tz_cache[name]))
    return days


# ---------------------------------------------------------------------------
# sequence filters

def passes_filter(day: DayVector, mode: str = "train", max_missing: Optional[Dict[str, float]] = None) -> bool:
    """``train``: per-channel missing fraction strictly below its threshold and
    every channel observed at least once.  ``eval-complete``: every channel
    observed at least once."""
    missing = day.missing_fraction()
    if any(missing[ch] >= 1.0 for ch in CHANNELS):
        return False
    if mode == "eval-complete":
        return True
    if mode != "train":
        raise InvalidInputError(f"unknown filter mode {mode!r}")
    limits = dict(TRAIN_MAX_MISSING, **(max_missing or {}))
    return all(missing[ch] < limits[ch] for ch in CHANNELS)


def filter_sequences(days: Sequence[DayVector], mode: str = "train",
                     max_missing: Optional[Dict[str, float]] = None) -> List[DayVector]:
    return [d for d in days if passes_filter(d, mode, max_missing)]
