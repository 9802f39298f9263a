import csv
import datetime as dt

import numpy as np
import pytest

from sleephmm import io as fmt
from sleephmm.errors import InvalidInputError
from sleephmm.indicators import DailyIndicators, Episode
from sleephmm.preprocessing import build_day_vectors, parse_records
from sleephmm.synthdata import SubjectScenario, simulate_subject

UTC = dt.timezone.utc


@pytest.fixture(scope="module")
def subject():
    return simulate_subject(SubjectScenario(seed=2), 2)


@pytest.mark.parametrize("suffix", [".csv", ".jsonl"])
def test_record_round_trip(tmp_path, subject, suffix):
    path = tmp_path / f"records{suffix}"
    fmt.write_records(path, subject.records)
    records, rejected = parse_records(fmt.read_rows(path))
    assert sum(rejected.values()) == 0
    assert records == subject.records


def test_day_vector_round_trip(tmp_path, subject):
    days = build_day_vectors(subject.records)
    path = tmp_path / "days.jsonl"
    fmt.write_days(path, days)
    back = fmt.read_days(path)
    for a, b in zip(days, back):
        assert (a.subject_id, a.date, a.flags) == (b.subject_id, b.date, b.flags)
        np.testing.assert_array_equal(a.seq.cont_mask, b.seq.cont_mask)
        np.testing.assert_array_equal(a.seq.disc_mask, b.seq.disc_mask)
        np.testing.assert_array_equal(a.seq.continuous[a.seq.cont_mask], b.seq.continuous[b.seq.cont_mask])
        np.testing.assert_array_equal(a.seq.discrete[a.seq.disc_mask], b.seq.discrete[b.seq.disc_mask])


def test_prediction_round_trip(tmp_path):
    rows = [{"subject_id": "a", "date": dt.date(2024, 1, 2), "states": [0, 1, 1], "asleep": [0, 1, 1],
             "episode": Episode(1, 3), "score": -12.5},
            {"subject_id": "b", "date": dt.date(2024, 1, 2), "states": [2, 2, 2], "asleep": [0, 0, 0],
             "episode": None, "score": -3.0}]
    path = tmp_path / "p.jsonl"
    fmt.write_predictions(path, rows)
    back = fmt.read_predictions(path)
    assert back[("a", dt.date(2024, 1, 2))]["episode"] == Episode(1, 3)
    assert back[("b", dt.date(2024, 1, 2))]["episode"] is None
    assert back[("a", dt.date(2024, 1, 2))]["asleep"].tolist() == [0, 1, 1]


def test_truth_episodes_map_to_window_slots(tmp_path, subject):
    path = tmp_path / "truth.jsonl"
    fmt.write_truth_episodes(path, [(subject.subject_id, *subject.episodes[d]) for d in sorted(subject.episodes)])
    truth = fmt.read_truth(path)
    for d, binary in subject.truth_binary.items():
        labels, mask = truth[(subject.subject_id, d)]
        assert mask.all()
        np.testing.assert_array_equal(labels, binary)


def test_episode_crossing_window_edge_is_split(tmp_path):
    path = tmp_path / "truth.jsonl"
    start = dt.datetime(2024, 1, 2, 13, 0, tzinfo=UTC)
    fmt.write_truth_episodes(path, [("a", start, start + dt.timedelta(hours=2))])
    eps = fmt.read_truth_episodes(path)
    assert eps == {("a", dt.date(2024, 1, 1)): [(1380.0, 1440.0)], ("a", dt.date(2024, 1, 2)): [(0.0, 60.0)]}


def test_slot_truth_csv(tmp_path):
    path = tmp_path / "truth.csv"
    path.write_text("subject_id,date,slot,asleep\na,2024-01-01,3,1\na,2024-01-01,4,0\n")
    labels, mask = fmt.read_truth(path)[("a", dt.date(2024, 1, 1))]
    assert mask.sum() == 2 and labels[3] == 1 and labels[4] == 0
    path.write_text("subject_id,date,slot,asleep\na,2024-01-01,200,1\n")
    with pytest.raises(InvalidInputError):
        fmt.read_truth(path)


def test_daily_indicator_table(tmp_path):
    path = tmp_path / "daily.csv"
    fmt.write_daily_indicators(path, {("a", dt.date(2024, 1, 1)): DailyIndicators(570.0, 1050.0, 480.0, 810.0),
                                      ("a", dt.date(2023, 12, 31)): None})
    rows = list(csv.DictReader(open(path)))
    assert rows[0]["date"] == "2023-12-31" and rows[0]["spt"] == ""
    assert rows[1]["spt"] == "480" and rows[1]["cm_clock"] == "03:30"


def test_bad_inputs(tmp_path):
    with pytest.raises(InvalidInputError):
        list(fmt.read_rows(tmp_path / "missing.csv"))
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    with pytest.raises(InvalidInputError):
        fmt.read_days(bad)
    bad.write_text('{"subject_id": "a"}\n')
    with pytest.raises(InvalidInputError):
        fmt.read_days(bad)
