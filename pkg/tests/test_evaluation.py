import math

import numpy as np
import pytest

from helpers import known_model
from sleephmm.errors import InvalidInputError
from sleephmm.evaluation import (
    GMMClassifier, classification_metrics, dummy_classifier, episode_to_binary, episodes_to_binary,
    gmm_classifier, impute_features, indicator_errors, kmeans_classifier, summarize,
)
from sleephmm.hhmm import ObservationSequence, fit_baum_welch, init_params, sample, viterbi
from sleephmm.indicators import DailyIndicators


def test_perfect_and_inverted_predictions():
    truth = np.array([0, 1, 1, 0, 1])
    m = classification_metrics(truth, truth)
    assert (m.accuracy, m.sensitivity, m.specificity) == (1.0, 1.0, 1.0)
    m = classification_metrics(1 - truth, truth)
    assert (m.accuracy, m.sensitivity, m.specificity) == (0.0, 0.0, 0.0)


def test_all_awake_truth_hand_count():
    truth = np.zeros(10, dtype=int)
    pred = np.array([0, 0, 1, 0, 0, 0, 1, 0, 0, 0])
    m = classification_metrics(pred, truth)
    assert m.sensitivity is None
    assert m.specificity == 0.8 and m.accuracy == 0.8


def test_mask_restricts_slots_and_empty_mask_fails():
    truth = np.array([1, 1, 0, 0])
    pred = np.array([1, 0, 0, 1])
    m = classification_metrics(pred, truth, [True, False, True, False])
    assert (m.accuracy, m.sensitivity, m.specificity, m.n_slots) == (1.0, 1.0, 1.0, 2)
    with pytest.raises(InvalidInputError):
        classification_metrics(pred, truth, [False] * 4)


def test_swapping_positive_class_swaps_sens_and_spec():
    rng = np.random.default_rng(0)
    truth, pred = rng.integers(0, 2, 50), rng.integers(0, 2, 50)
    a = classification_metrics(pred, truth)
    b = classification_metrics(1 - pred, 1 - truth)
    assert (a.sensitivity, a.specificity, a.accuracy) == (b.specificity, b.sensitivity, b.accuracy)


def test_summary_recomputes_from_per_sequence_values():
    ms = [classification_metrics([1, 0, 1], [1, 0, 0]), classification_metrics([0, 0], [0, 0])]
    s = summarize(ms)
    accs = [m.accuracy for m in ms]
    assert s["accuracy"]["mean"] == float(np.mean(accs)) and s["accuracy"]["std"] == float(np.std(accs))
    assert s["sensitivity"]["n"] == 1


def ind(start):
    return DailyIndicators(start, start + 480.0, 480.0, start + 240.0)


def test_indicator_errors():
    same = {k: ind(500.0 + k) for k in range(3)}
    errs = indicator_errors(same, same)
    assert all(e.rmse == 0.0 and e.mae == 0.0 for e in errs.values())
    errs = indicator_errors([ind(530.0)], [ind(500.0)])
    assert errs["start"].rmse == pytest.approx(30.0) and errs["start"].mae == pytest.approx(30.0)
    errs = indicator_errors({"a": ind(510.0), "b": ind(470.0), "c": ind(1.0)}, {"a": ind(500.0), "b": ind(500.0)})
    assert errs["start"].mae == pytest.approx(20.0)
    assert errs["start"].rmse == pytest.approx(math.sqrt(500.0))
    assert errs["start"].n == 2
    assert errs["start"].rmse >= errs["start"].mae >= 0
    with pytest.raises(InvalidInputError):
        indicator_errors({"a": ind(1.0)}, {"b": ind(1.0)})


def test_overlap_rule():
    b = episode_to_binary(570.0, 1050.0)
    assert b.sum() == 48 and b[57] == 1 and b[56] == 0 and b[105] == 0
    # slot 0 covered for exactly half: not asleep; for 6 minutes: asleep
    assert episode_to_binary(5.0, 100.0)[0] == 0
    assert episode_to_binary(4.0, 100.0)[0] == 1
    assert episodes_to_binary([(0.0, 3.0), (7.0, 10.0)])[0] == 1


# --- dummies ------------------------------------------------------------------------

def test_dummy_classifiers():
    labels = np.array([0] * 70 + [1] * 30)
    assert np.all(dummy_classifier("most_frequent", labels, 144) == 0)
    assert np.all(dummy_classifier("most_frequent", np.array([1, 1, 0]), 5) == 1)
    assert np.all(dummy_classifier("most_frequent", np.array([1, 0]), 5) == 0)
    u = dummy_classifier("uniform", None, 10_000, seed=4)
    assert abs(u.mean() - 0.5) <= 0.02
    assert np.array_equal(u, dummy_classifier("uniform", None, 10_000, seed=4))
    with pytest.raises(InvalidInputError):
        dummy_classifier("most_frequent", [], 5)
    with pytest.raises(InvalidInputError):
        dummy_classifier("stratified", None, 5)


# --- clustering baselines ---------------------------------------------------------

def blobs(n=100, seed=0, missing=0.0):
    rng = np.random.default_rng(seed)
    z = rng.integers(0, 2, n)  # 1 = asleep
    act = np.where(z == 1, 0.05, 0.8) + rng.normal(0, 0.03, n)
    light = np.where(z == 1, 0.05, 0.7) + rng.normal(0, 0.03, n)
    # binary channels constant within each group so every feature separates the blobs
    steps = np.where(z == 1, 0, 1)
    usage = np.where(z == 1, 0, 1)
    disc = np.column_stack([steps, usage])
    dmask = rng.random(disc.shape) >= missing
    return ObservationSequence(np.column_stack([act, light]), disc, disc_mask=dmask), z


@pytest.mark.parametrize("factory", [kmeans_classifier, gmm_classifier])
def test_separable_blobs_recovered(factory):
    seq, z = blobs()
    model = factory([seq], seed=0)
    assert np.array_equal(model.predict(seq), z)


def test_imputation_strategies_differ_only_on_missing_binary_cells():
    seq, _ = blobs(missing=0.3)
    a = impute_features(seq, "zeros")
    b = impute_features(seq, "most_frequent")
    differs = np.any(a != b, axis=1)
    missing_binary = ~seq.disc_mask.all(axis=1)
    assert not np.any(differs & ~missing_binary)
    np.testing.assert_array_equal(a[:, :2], b[:, :2])


def test_continuous_missing_filled_with_sequence_mean():
    seq = ObservationSequence(np.array([[1.0, np.nan], [3.0, 2.0], [np.nan, 4.0]]), np.zeros((3, 2), int))
    f = impute_features(seq)
    np.testing.assert_allclose(f[:, :2], [[1.0, 3.0], [3.0, 2.0], [2.0, 4.0]])


def test_all_missing_sequence_rejected():
    seq = ObservationSequence(np.full((4, 2), np.nan), np.full((4, 2), -1))
    with pytest.raises(InvalidInputError):
        impute_features(seq)
    with pytest.raises(InvalidInputError):
        kmeans_classifier([seq])


def test_lower_actigraphy_cluster_is_asleep():
    seq, z = blobs(seed=3)
    model = kmeans_classifier([seq], seed=1)
    centers = model.model.cluster_centers_
    assert centers[model.asleep_label, 0] == centers[:, 0].min()


def test_gmm_symmetric_boundary_and_posteriors():
    rng = np.random.default_rng(0)
    x = np.concatenate([rng.normal(-5, 1, 2000), rng.normal(5, 1, 2000)])
    X = np.column_stack([x, np.zeros_like(x)])
    model = GMMClassifier(seed=0).fit_features(X)
    probe = np.array([[-0.3, 0.0], [0.3, 0.0], [-3.0, 0.0], [3.0, 0.0]])
    assert model.predict_features(probe).tolist() == [1, 0, 1, 0]
    np.testing.assert_allclose(model.predict_proba_features(X).sum(axis=1), 1.0, atol=1e-12)


def test_hhmm_beats_gmm_on_temporally_structured_data():
    # overlapping emissions, sticky states: only the temporal model can use context
    wins = 0
    true = known_model(n_states=2, sep=0.9, stay=0.97, var=0.5)
    for seed in range(10):
        seqs, states = zip(*(sample(true, 144, seed=seed * 100 + k) for k in range(20)))
        params, _ = fit_baum_welch(init_params(seqs, 2, seed=seed), seqs)
        truth = np.concatenate(states)
        hhmm = np.concatenate([viterbi(params, s) for s in seqs])
        hhmm_acc = max(np.mean(hhmm == truth), np.mean(hhmm != truth))
        X = np.vstack([np.column_stack([s.continuous, s.discrete]) for s in seqs])
        g = GMMClassifier(seed=seed).fit_features(X).model.predict(X)
        gmm_acc = max(np.mean(g == truth), np.mean(g != truth))
        wins += hhmm_acc >= gmm_acc
    assert wins >= 6
