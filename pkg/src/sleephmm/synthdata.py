"""Synthetic subjects with a known sleep schedule, for tests and demos.

Each simulated day is one 14:00-14:00 window.  A jittered sleep interval is
drawn per night; slots covered for more than half their length are asleep.
Raw records are then emitted slot by slot in the same format the
preprocessing stage reads, so the whole pipeline can be run against known
truth.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field, replace
from typing import Dict, List, Tuple

import numpy as np

from .errors import InvalidInputError
from .evaluation import episode_to_binary
from .indicators import DailyIndicators, DayCalendar, clock_to_axis, indicators_from_interval
from .preprocessing import RAW_CHANNELS, SLOT_MINUTES, SLOTS_PER_DAY, WINDOW_START, RawRecord, get_zone

DAY_MINUTES = SLOTS_PER_DAY * SLOT_MINUTES


@dataclass
class GaussianLevel:
    """Truncated-at-zero Gaussian activity level."""

    mean: float
    sd: float


@dataclass
class EmissionSpec:
    awake_activity: GaussianLevel = field(default_factory=lambda: GaussianLevel(0.5, 0.2))
    asleep_activity: GaussianLevel = field(default_factory=lambda: GaussianLevel(0.05, 0.03))
    #: probability that an asleep slot records no movement at all
    asleep_rest_prob: float = 0.5
    #: constant offset added to every actigraphy reading (removed by the mode step)
    actigraphy_bias: float = 1.0
    awake_light: GaussianLevel = field(default_factory=lambda: GaussianLevel(0.6, 0.25))
    asleep_light: GaussianLevel = field(default_factory=lambda: GaussianLevel(0.02, 0.02))
    light_scale: float = 500.0
    awake_steps_prob: float = 0.3
    awake_steps_mean: float = 40.0
    awake_usage_prob: float = 0.3
    #: step / usage probability while asleep; 0 mimics the frozen-state semantics
    asleep_event_prob: float = 0.0


@dataclass
class SubjectScenario:
    """Everything needed to simulate one subject deterministically."""

    subject_id: str = "s00"
    start_date: dt.date = dt.date(2024, 1, 1)
    sleep_start: str = "23:30"
    sleep_end: str = "07:30"
    jitter_minutes: float = 15.0
    #: shift of both schedule ends on free days (positive = later)
    free_day_shift_minutes: float = 0.0
    emissions: EmissionSpec = field(default_factory=EmissionSpec)
    missing: Dict[str, float] = field(default_factory=lambda: {ch: 0.1 for ch in RAW_CHANNELS})
    calendar: DayCalendar = field(default_factory=DayCalendar)
    zone: str = "UTC"
    seed: int = 0

    def validate(self) -> None:
        start, end = clock_to_axis(self.sleep_start), clock_to_axis(self.sleep_end)
        for shift in (0.0, self.free_day_shift_minutes):
            if not 0 <= start + shift < end + shift <= DAY_MINUTES:
                raise InvalidInputError(
                    f"sleep {self.sleep_start}-{self.sleep_end} (shift {shift}) leaves the 14:00-14:00 window")
        if self.jitter_minutes < 0:
            raise InvalidInputError("jitter must be >= 0")
        for ch, rate in self.missing.items():
            if ch not in RAW_CHANNELS:
                raise InvalidInputError(f"unknown channel {ch!r}")
            if not 0.0 <= rate <= 1.0:
                raise InvalidInputError(f"missing rate for {ch} outside [0, 1]")
        e = self.emissions
        for p in (e.asleep_rest_prob, e.awake_steps_prob, e.awake_usage_prob, e.asleep_event_prob):
            if not 0.0 <= p <= 1.0:
                raise InvalidInputError("emission probabilities must lie in [0, 1]")
        get_zone(self.zone)


def noise_free_scenario(**overrides) -> SubjectScenario:
    """No jitter, no missingness and tight emission levels."""
    emissions = EmissionSpec(
        awake_activity=GaussianLevel(0.6, 0.01),
        asleep_activity=GaussianLevel(0.02, 0.005),
        awake_light=GaussianLevel(0.6, 0.01),
        asleep_light=GaussianLevel(0.02, 0.005),
        awake_steps_prob=0.5,
        awake_usage_prob=0.5,
    )
    base = dict(jitter_minutes=0.0, emissions=emissions, missing={ch: 0.0 for ch in RAW_CHANNELS})
    base.update(overrides)
    return SubjectScenario(**base)


@dataclass
class SimulatedSubject:
    subject_id: str
    zone: str
    records: List[RawRecord]
    #: window date -> 144-slot 0/1 asleep vector
    truth_binary: Dict[dt.date, np.ndarray]
    truth_daily: Dict[dt.date, DailyIndicators]
    #: window date -> (start, end) aware datetimes of the sleep episode
    episodes: Dict[dt.date, Tuple[dt.datetime, dt.datetime]]


def _truncated(rng, level: GaussianLevel, n: int) -> np.ndarray:
    x = rng.normal(level.mean, level.sd, size=n)
    bad = x < 0
    while bad.any():
        x[bad] = rng.normal(level.mean, level.sd, size=int(bad.sum()))
        bad = x < 0
    return x


def _channel_values(rng, asleep: np.ndarray, e: EmissionSpec) -> Dict[str, np.ndarray]:
    n = asleep.size
    awake = ~asleep

    act = np.where(asleep, _truncated(rng, e.asleep_activity, n), _truncated(rng, e.awake_activity, n))
    act[asleep & (rng.random(n) < e.asleep_rest_prob)] = 0.0
    light = np.where(asleep, _truncated(rng, e.asleep_light, n), _truncated(rng, e.awake_light, n))

    step_p = np.where(awake, e.awake_steps_prob, e.asleep_event_prob)
    steps = np.where(rng.random(n) < step_p, 1 + rng.poisson(e.awake_steps_mean, n), 0)

    use_p = np.where(awake, e.awake_usage_prob, e.asleep_event_prob)
    used = rng.random(n) < use_p
    # which of the two raw usage signals fired: 0 app only, 1 unlock only, 2 both
    which = rng.integers(0, 3, size=n)
    app = (used & (which != 1)).astype(float)
    unlocks = (used & (which != 0)).astype(float)

    return {
        "actigraphy": e.actigraphy_bias + act,
        "light": e.light_scale * light,
        "steps": steps.astype(float),
        "app_usage": app,
        "unlocks": unlocks,
    }


def simulate_subject(scenario: SubjectScenario, n_days: int) -> SimulatedSubject:
    """Simulate ``n_days`` consecutive windows starting on ``scenario.start_date``.

    Deterministic given ``scenario.seed``.  Missing cells are emitted as
    records with a null value.
    """
    if n_days < 1:
        raise InvalidInputError("n_days must be >= 1")
    scenario.validate()
    rng = np.random.default_rng(scenario.seed)
    tz = get_zone(scenario.zone)
    e = scenario.emissions
    base_start, base_end = clock_to_axis(scenario.sleep_start), clock_to_axis(scenario.sleep_end)

    records: List[RawRecord] = []
    truth_binary, truth_daily, episodes = {}, {}, {}
    for k in range(n_days):
        date = scenario.start_date + dt.timedelta(days=k)
        shift = scenario.free_day_shift_minutes if scenario.calendar.is_free(date) else 0.0
        start = base_start + shift + scenario.jitter_minutes * rng.standard_normal()
        end = base_end + shift + scenario.jitter_minutes * rng.standard_normal()
        start = float(np.clip(start, 0.0, DAY_MINUTES))
        end = float(np.clip(end, 0.0, DAY_MINUTES))
        if end <= start:
            raise InvalidInputError(f"jitter produced an empty night on {date}")

        binary = episode_to_binary(start, end)
        truth_binary[date] = binary
        truth_daily[date] = indicators_from_interval(start, end)
        origin = dt.datetime.combine(date, WINDOW_START)
        episodes[date] = tuple((origin + dt.timedelta(minutes=m)).replace(tzinfo=tz) for m in (start, end))

        values = _channel_values(rng, binary.astype(bool), e)
        dropped = {ch: rng.random(SLOTS_PER_DAY) < scenario.missing.get(ch, 0.0) for ch in RAW_CHANNELS}
        for t in range(SLOTS_PER_DAY):
            ts = (origin + dt.timedelta(minutes=t * SLOT_MINUTES + SLOT_MINUTES // 2)).replace(tzinfo=tz)
            for ch in RAW_CHANNELS:
                value = None if dropped[ch][t] else float(values[ch][t])
                records.append(RawRecord(scenario.subject_id, ts, ch, value))

    return SimulatedSubject(scenario.subject_id, scenario.zone, records, truth_binary, truth_daily, episodes)


def simulate_cohort(scenario: SubjectScenario, n_subjects: int, n_days: int) -> List[SimulatedSubject]:
    """``n_subjects`` copies of ``scenario`` with ids ``s000, s001, ...`` and per-subject seeds."""
    if n_subjects < 1:
        raise InvalidInputError("n_subjects must be >= 1")
    seeds = np.random.SeedSequence(scenario.seed).spawn(n_subjects)
    out = []
    for i, ss in enumerate(seeds):
        sub = replace(scenario, subject_id=f"s{i:03d}", seed=int(ss.generate_state(1)[0]))
        out.append(simulate_subject(sub, n_days))
    return out

