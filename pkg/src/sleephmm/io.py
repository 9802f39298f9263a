"""Readers and writers for the on-disk formats used by the command-line tool.

Every writer produces byte-stable output for identical inputs: keys are
written in a fixed order, floats use ``repr`` and rows are sorted by
``(subject_id, date)``.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
from collections import defaultdict
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidInputError
from .evaluation import episodes_to_binary, window_minutes
from .hhmm.params import ObservationSequence
from .indicators import DailyIndicators, Episode, WeeklyIndicators
from .preprocessing import (CONTINUOUS_CHANNELS, DISCRETE_CHANNELS, SLOT_MINUTES, SLOTS_PER_DAY,
                            WINDOW_START, DayVector, RawRecord, get_zone, local_clock, parse_timestamp,
                            window_date)

RECORD_FIELDS = ("subject_id", "timestamp", "channel", "value")


def _is_jsonl(path: Path) -> bool:
    return path.suffix.lower() in (".jsonl", ".json", ".ndjson")


def _jsonl_rows(path: Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise InvalidInputError(f"{path}:{n}: invalid JSON ({exc.msg})") from None


def _csv_rows(path: Path) -> Iterator[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        yield from csv.DictReader(fh)


def read_rows(path) -> Iterator[dict]:
    """Rows of a CSV (header required) or JSON-lines file, chosen by extension."""
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"no such file: {path}")
    return _jsonl_rows(path) if _is_jsonl(path) else _csv_rows(path)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


# ---------------------------------------------------------------------------
# raw records

def write_records(path, records: Iterable[RawRecord]) -> None:
    path = Path(path)
    if _is_jsonl(path):
        with open(path, "w", encoding="utf-8") as fh:
            for r in records:
                fh.write(json.dumps({"subject_id": r.subject_id, "timestamp": r.timestamp.isoformat(),
                                     "channel": r.channel, "value": r.value}) + "\n")
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow([r.subject_id, r.timestamp.isoformat(), r.channel, _fmt(r.value)])


# ---------------------------------------------------------------------------
# day vectors

def _nullable(values: np.ndarray, mask: np.ndarray, cast) -> list:
    return [cast(v) if m else None for v, m in zip(values.tolist(), mask.tolist())]


def day_to_dict(day: DayVector) -> dict:
    seq = day.seq
    values, masks = {}, {}
    for c, name in enumerate(CONTINUOUS_CHANNELS):
        values[name] = _nullable(seq.continuous[:, c], seq.cont_mask[:, c], float)
        masks[name] = seq.cont_mask[:, c].astype(int).tolist()
    for c, name in enumerate(DISCRETE_CHANNELS):
        values[name] = _nullable(seq.discrete[:, c], seq.disc_mask[:, c], int)
        masks[name] = seq.disc_mask[:, c].astype(int).tolist()
    return {"subject_id": day.subject_id, "date": day.date.isoformat(), "flags": list(day.flags),
            "values": values, "mask": masks}


def day_from_dict(doc: dict) -> DayVector:
    try:
        values, masks = doc["values"], doc["mask"]
        cont = np.column_stack([np.array([np.nan if v is None else v for v in values[ch]], dtype=float)
                                for ch in CONTINUOUS_CHANNELS])
        disc = np.column_stack([np.array([-1 if v is None else v for v in values[ch]], dtype=np.int64)
                                for ch in DISCRETE_CHANNELS])
        cmask = np.column_stack([np.asarray(masks[ch], dtype=bool) for ch in CONTINUOUS_CHANNELS])
        dmask = np.column_stack([np.asarray(masks[ch], dtype=bool) for ch in DISCRETE_CHANNELS])
        seq = ObservationSequence(cont, disc, cmask, dmask, slot_duration=SLOT_MINUTES, window_start=WINDOW_START)
        return DayVector(str(doc["subject_id"]), dt.date.fromisoformat(doc["date"]), seq, list(doc.get("flags", [])))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"malformed day vector: {exc}") from None


def write_days(path, days: Iterable[DayVector]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for day in days:
            fh.write(json.dumps(day_to_dict(day)) + "\n")


def read_days(path) -> List[DayVector]:
    return [day_from_dict(doc) for doc in read_rows(path)]


# ---------------------------------------------------------------------------
# predictions

def write_predictions(path, rows: Iterable[dict]) -> None:
    """``rows`` carry subject_id, date, states, asleep, episode (or None) and score."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            ep = r["episode"]
            fh.write(json.dumps({
                "subject_id": r["subject_id"],
                "date": r["date"].isoformat(),
                "score": float(r["score"]),
                "states": [int(s) for s in r["states"]],
                "asleep": [int(b) for b in r["asleep"]],
                "episode": None if ep is None else {"start_slot": ep.start, "end_slot": ep.end},
            }) + "\n")


def read_predictions(path) -> Dict[Tuple[str, dt.date], dict]:
    out = {}
    for doc in read_rows(path):
        try:
            key = (str(doc["subject_id"]), dt.date.fromisoformat(doc["date"]))
            ep = doc.get("episode")
            out[key] = {
                "states": np.asarray(doc["states"], dtype=np.int64),
                "asleep": np.asarray(doc["asleep"], dtype=np.int8),
                "episode": None if ep is None else Episode(int(ep["start_slot"]), int(ep["end_slot"])),
                "score": float(doc.get("score", float("nan"))),
            }
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed prediction row: {exc}") from None
    return out


# ---------------------------------------------------------------------------
# reference labels

def write_truth_episodes(path, episodes: Iterable[Tuple[str, dt.datetime, dt.datetime]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for subject, start, end in episodes:
            fh.write(json.dumps({"subject_id": subject, "sleep_start": start.isoformat(),
                                 "sleep_end": end.isoformat()}) + "\n")


def read_truth_episodes(path, zones: Optional[Mapping[str, str]] = None,
                        default_zone: str = "UTC") -> Dict[Tuple[str, dt.date], List[Tuple[float, float]]]:
    """Episodes from JSON-lines, split per (subject, window date) in window-axis minutes."""
    zones = zones or {}
    out: Dict[Tuple[str, dt.date], List[Tuple[float, float]]] = defaultdict(list)
    for doc in read_rows(path):
        try:
            subject = str(doc["subject_id"])
            tz = get_zone(zones.get(subject, default_zone))
            start = local_clock(parse_timestamp(doc["sleep_start"]), tz)
            end = local_clock(parse_timestamp(doc["sleep_end"]), tz)
        except KeyError as exc:
            raise InvalidInputError(f"reference episode lacks {exc}") from None
        if end <= start:
            raise InvalidInputError(f"reference episode for {subject} ends before it starts")
        date = window_date(start)
        while True:
            a = max(0.0, window_minutes(start, date))
            b = min(float(SLOTS_PER_DAY * SLOT_MINUTES), window_minutes(end, date))
            if b <= 0:
                break
            if b > a:
                out[(subject, date)].append((a, b))
            date += dt.timedelta(days=1)
    return dict(out)


def truth_from_episodes(episodes: Mapping[Tuple[str, dt.date], List[Tuple[float, float]]]):
    """Per-slot truth vectors from window-axis episodes (the >50% overlap rule)."""
    return {key: episodes_to_binary(eps) for key, eps in episodes.items()}


def read_truth_slots(path) -> Dict[Tuple[str, dt.date], Tuple[np.ndarray, np.ndarray]]:
    """Per-slot CSV ``subject_id,date,slot,asleep`` as ``(labels, mask)`` per day."""
    out: Dict[Tuple[str, dt.date], Tuple[np.ndarray, np.ndarray]] = {}
    for row in read_rows(path):
        try:
            key = (str(row["subject_id"]), dt.date.fromisoformat(str(row["date"])))
            slot, label = int(row["slot"]), int(row["asleep"])
        except (KeyError, ValueError) as exc:
            raise InvalidInputError(f"malformed truth row: {exc}") from None
        if not 0 <= slot < SLOTS_PER_DAY or label not in (0, 1):
            raise InvalidInputError(f"truth row out of range: slot {slot}, asleep {label}")
        labels, mask = out.setdefault(key, (np.zeros(SLOTS_PER_DAY, np.int8), np.zeros(SLOTS_PER_DAY, bool)))
        labels[slot], mask[slot] = label, True
    return out


def read_truth(path, zones=None, default_zone="UTC"):
    """Reference labels as ``{(subject, date): (labels, mask)}`` from either format."""
    path = Path(path)
    if _is_jsonl(path):
        return {k: (v, np.ones(SLOTS_PER_DAY, bool))
                for k, v in truth_from_episodes(read_truth_episodes(path, zones, default_zone)).items()}
    return read_truth_slots(path)


# ---------------------------------------------------------------------------
# tidy CSV tables

def write_table(path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


DAILY_COLUMNS = ("subject_id", "date", "start", "end", "spt", "cm", "start_clock", "end_clock", "cm_clock")
WEEKLY_COLUMNS = ("subject_id", "iso_year", "iso_week", "n_days", "mean_start", "mean_end", "mean_spt",
                  "max_spt", "min_spt", "mean_cm", "sj", "mean_start_clock", "mean_end_clock", "mean_cm_clock")


def _minutes(*values) -> list:
    return [int(round(v)) for v in values]


def write_daily_indicators(path, daily: Mapping[Tuple[str, dt.date], Optional[DailyIndicators]]) -> None:
    rows = []
    for (subject, date) in sorted(daily):
        d = daily[(subject, date)]
        if d is None:
            rows.append([subject, date.isoformat()] + [None] * 7)
        else:
            rows.append([subject, date.isoformat(), *_minutes(d.start, d.end, d.spt, d.cm),
                         d.clock("start"), d.clock("end"), d.clock("cm")])
    write_table(path, DAILY_COLUMNS, rows)


def write_weekly_indicators(path, weekly: Mapping[Tuple[str, Tuple[int, int]], WeeklyIndicators]) -> None:
    rows = []
    for (subject, (year, week)) in sorted(weekly):
        w = weekly[(subject, (year, week))]
        rows.append([subject, year, week, w.n_days,
                     *_minutes(w.mean_start, w.mean_end, w.mean_spt, w.max_spt, w.min_spt, w.mean_cm, w.sj),
                     w.clock("mean_start"), w.clock("mean_end"), w.clock("mean_cm")])
    write_table(path, WEEKLY_COLUMNS, rows)


def write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(doc, indent=2, sort_keys=False) + "\n")
