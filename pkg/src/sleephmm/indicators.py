"""Decoded state paths to sleep episodes and daily / weekly sleep indicators.

All times are handled as minutes on the window axis (minutes since the
window start, 14:00 by default), so an episode that crosses midnight needs no
wrap-around arithmetic.  Conversion to wall-clock strings happens only at the
edges.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidInputError, WeekRejected
from .preprocessing import SLOT_MINUTES, WINDOW_START

DEFAULT_MERGE_GAP = 3
MIN_DAYS_PER_WEEK = 4


@dataclass(frozen=True)
class Episode:
    """Main sleep episode as a half-open slot range ``[start, end)``."""

    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise InvalidInputError(f"invalid episode [{self.start}, {self.end})")


@dataclass
class SleepPrediction:
    path: np.ndarray
    binary: np.ndarray
    episode: Optional[Episode]


def states_to_binary(path, asleep_states: Iterable[int]) -> np.ndarray:
    """1 where the decoded state belongs to ``asleep_states``, else 0."""
    path = np.asarray(path, dtype=np.int64)
    asleep = np.fromiter(sorted(set(int(s) for s in asleep_states)), dtype=np.int64)
    return np.isin(path, asleep).astype(np.int8)


def _runs(binary: np.ndarray) -> List[Tuple[int, int]]:
    padded = np.concatenate([[0], binary.astype(np.int8), [0]])
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def merged_runs(binary, merge_gap: int = DEFAULT_MERGE_GAP) -> List[Tuple[int, int, int]]:
    """Asleep runs with gaps of at most ``merge_gap`` awake slots bridged.

    Returns ``(start, end, asleep_slots)`` triples, ``end`` exclusive.
    """
    merged = []
    for s, e in _runs(np.asarray(binary)):
        if merged and s - merged[-1][1] <= merge_gap:
            ps, _, mass = merged[-1]
            merged[-1] = (ps, e, mass + e - s)
        else:
            merged.append((s, e, e - s))
    return merged


def extract_main_sleep(binary, merge_gap: int = DEFAULT_MERGE_GAP) -> Optional[Episode]:
    """The merged run with the most asleep slots (earliest on ties), or ``None``."""
    binary = np.asarray(binary)
    if binary.ndim != 1:
        raise InvalidInputError("binary sleep vector must be 1-d")
    runs = merged_runs(binary, merge_gap)
    if not runs:
        return None
    best = max(runs, key=lambda r: (r[2], -r[0]))
    return Episode(best[0], best[1])


def predict_sleep(path, asleep_states, merge_gap: int = DEFAULT_MERGE_GAP) -> SleepPrediction:
    binary = states_to_binary(path, asleep_states)
    return SleepPrediction(np.asarray(path), binary, extract_main_sleep(binary, merge_gap))


def unsupervised_asleep_states(params, k: int = 2) -> List[int]:
    """Fallback mapping for models without frozen states.

    Picks the ``k`` states with the lowest mean actigraphy plus probability
    of smartphone usage.
    """
    names = params.channel_names or {}
    cont = list(names.get("continuous", []))
    disc = list(names.get("discrete", []))
    act = cont.index("actigraphy") if "actigraphy" in cont else 0
    use = disc.index("usage") if "usage" in disc else params.n_discrete - 1
    score = np.zeros(params.n_states)
    if params.n_continuous:
        score += params.means[:, act]
    if params.n_discrete:
        score += params.disc_probs[use][:, 1:].sum(axis=1)
    order = np.argsort(score, kind="stable")
    return sorted(int(i) for i in order[:k])


# ---------------------------------------------------------------------------
# time axis helpers

def axis_to_clock(minutes: float, window_start: dt.time = WINDOW_START) -> str:
    """Wall-clock ``HH:MM`` for a position on the window axis, rounded to the minute."""
    total = (window_start.hour * 60 + window_start.minute + int(round(minutes))) % 1440
    return f"{total // 60:02d}:{total % 60:02d}"


def clock_to_axis(clock: str, window_start: dt.time = WINDOW_START) -> float:
    """Minutes after the window start for an ``HH:MM`` wall-clock time."""
    h, m = (int(x) for x in clock.split(":")[:2])
    return float((h * 60 + m - window_start.hour * 60 - window_start.minute) % 1440)


@dataclass
class DailyIndicators:
    """Main-episode indicators; every field is in minutes on the window axis."""

    start: float
    end: float
    spt: float
    cm: float
    window_start: dt.time = WINDOW_START

    def clock(self, name: str) -> str:
        return axis_to_clock(getattr(self, name), self.window_start)


def daily_indicators(episode: Optional[Episode], slot_minutes: int = SLOT_MINUTES,
                     window_start: dt.time = WINDOW_START) -> Optional[DailyIndicators]:
    """Start, end, sleep period time and mid-sleep of an episode; ``None`` without one."""
    if episode is None:
        return None
    start = float(episode.start * slot_minutes)
    end = float(episode.end * slot_minutes)
    spt = end - start
    return DailyIndicators(start, end, spt, start + spt / 2.0, window_start)


def indicators_from_interval(start_min: float, end_min: float,
                             window_start: dt.time = WINDOW_START) -> DailyIndicators:
    """Indicators for an exact interval already expressed on the window axis."""
    if not end_min > start_min:
        raise InvalidInputError("interval must have positive length")
    spt = end_min - start_min
    return DailyIndicators(float(start_min), float(end_min), float(spt), start_min + spt / 2.0, window_start)


# ---------------------------------------------------------------------------
# weekly indicators

@dataclass
class DayCalendar:
    """Working / free day split.

    A window is classified by the date its sleep ends on (the day after the
    window label), so the Friday-night window counts as a free day.
    ``overrides`` maps window dates to ``True`` (free) or ``False`` (working).
    """

    free_weekdays: Tuple[int, ...] = (5, 6)
    overrides: Dict[dt.date, bool] = field(default_factory=dict)

    def wake_date(self, window_date: dt.date) -> dt.date:
        return window_date + dt.timedelta(days=1)

    def is_free(self, window_date: dt.date) -> bool:
        if window_date in self.overrides:
            return self.overrides[window_date]
        return self.wake_date(window_date).weekday() in self.free_weekdays

    def week_of(self, window_date: dt.date) -> Tuple[int, int]:
        iso = self.wake_date(window_date).isocalendar()
        return (iso[0], iso[1])


@dataclass
class WeeklyIndicators:
    mean_start: float
    mean_end: float
    mean_spt: float
    max_spt: float
    min_spt: float
    mean_cm: float
    sj: float
    n_days: int = 0
    window_start: dt.time = WINDOW_START

    def clock(self, name: str) -> str:
        return axis_to_clock(getattr(self, name), self.window_start)


def weekly_indicators(days: Sequence[Tuple[object, Optional[DailyIndicators]]],
                      calendar: Optional[DayCalendar] = None,
                      min_days: int = MIN_DAYS_PER_WEEK) -> WeeklyIndicators:
    """Aggregate one week of daily indicators.

    ``days`` holds ``(label, indicators)`` pairs.  A label is either a window
    date (classified through ``calendar``) or a bool saying whether the day is
    free.  Days without indicators are skipped.  Social jetlag is the absolute
    difference between the mean mid-sleep of free and of working days.

    Raises
    ------
    WeekRejected
        Fewer than ``min_days`` usable days, or no free or no working day.
    """
    calendar = calendar or DayCalendar()
    usable = []
    for label, ind in days:
        if ind is None:
            continue
        free = label if isinstance(label, (bool, np.bool_)) else calendar.is_free(label)
        usable.append((bool(free), ind))
    n_free = sum(1 for f, _ in usable if f)
    n_work = len(usable) - n_free
    if len(usable) < min_days or n_free == 0 or n_work == 0:
        raise WeekRejected(f"{len(usable)} usable days ({n_work} working, {n_free} free)")

    spt = np.array([d.spt for _, d in usable])
    cm_free = np.mean([d.cm for f, d in usable if f])
    cm_work = np.mean([d.cm for f, d in usable if not f])
    return WeeklyIndicators(
        mean_start=float(np.mean([d.start for _, d in usable])),
        mean_end=float(np.mean([d.end for _, d in usable])),
        mean_spt=float(spt.mean()),
        max_spt=float(spt.max()),
        min_spt=float(spt.min()),
        mean_cm=float(np.mean([d.cm for _, d in usable])),
        sj=float(abs(cm_free - cm_work)),
        n_days=len(usable),
        window_start=usable[0][1].window_start,
    )


def weekly_by_subject(daily: Mapping[Tuple[str, dt.date], Optional[DailyIndicators]],
                      calendar: Optional[DayCalendar] = None) -> Dict[Tuple[str, Tuple[int, int]], WeeklyIndicators]:
    """Weekly indicators for every (subject, ISO week) that passes the week filter."""
    calendar = calendar or DayCalendar()
    weeks: Dict[Tuple[str, Tuple[int, int]], list] = {}
    for (subject, date) in sorted(daily):
        weeks.setdefault((subject, calendar.week_of(date)), []).append((date, daily[(subject, date)]))
    out = {}
    for key, items in weeks.items():
        try:
            out[key] = weekly_indicators(items, calendar)
        except WeekRejected:
            continue
    return out
