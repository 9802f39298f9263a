import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import multivariate_normal

from helpers import enumerate_paths, random_params, random_sequence, slot_emissions
from sleephmm.errors import InvalidInputError, NumericalError
from sleephmm.hhmm import (HhmmParams, ObservationSequence, decode_many, emission_loglik, log_backward,
                           log_emission_matrix, log_forward, path_log_prob, posteriors, viterbi)

LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


def one_state(mean=0.0, var=1.0, disc=None):
    disc = [] if disc is None else [np.atleast_2d(disc)]
    return HhmmParams([1.0], [[1.0]], [[mean]], [[[var]]], disc, [np.zeros_like(d, bool) for d in disc])


def obs(cont, disc=()):
    return ObservationSequence(np.atleast_2d(np.asarray(cont, float)),
                               np.asarray(disc, dtype=np.int64).reshape(1, -1))


# --- emission log-likelihood -------------------------------------------------

def test_standard_normal_at_mode():
    assert emission_loglik(one_state(), 0, obs([0.0])) == pytest.approx(-0.9189385332046727, abs=1e-12)


def test_fully_missing_continuous_substitutes_mean_and_keeps_observed_symbol():
    var = 2.5
    p = one_state(mean=3.0, var=var, disc=[[0.8, 0.2]])
    got = emission_loglik(p, 0, obs([np.nan], [0]))
    density_at_mean = -LOG_SQRT_2PI - 0.5 * math.log(var)
    assert got == pytest.approx(math.log(0.8) + density_at_mean, abs=1e-12)


def test_all_missing_uses_ml_symbol():
    p = one_state(disc=[[0.3, 0.7]])
    got = emission_loglik(p, 0, obs([np.nan], [-1]))
    assert got == pytest.approx(math.log(0.7) - LOG_SQRT_2PI, abs=1e-12)


def test_marginalize_option_drops_fully_missing_gaussian_term():
    p = one_state(mean=3.0, var=2.5, disc=[[0.3, 0.7]])
    assert emission_loglik(p, 0, obs([np.nan], [1]), "marginalize") == pytest.approx(math.log(0.7))


def test_partially_missing_uses_observed_marginal():
    rng = np.random.default_rng(3)
    p = random_params(rng, 2, 3)
    x = np.array([[0.4, np.nan, -1.2]])
    seq = ObservationSequence(x, np.array([[1]]))
    for i in range(2):
        o = [0, 2]
        ref = multivariate_normal(p.means[i, o], p.covariances[i][np.ix_(o, o)]).logpdf(x[0, o])
        assert emission_loglik(p, i, seq) == pytest.approx(ref + math.log(p.disc_probs[0][i, 1]), abs=1e-10)


def test_vectorized_emissions_match_single_slot_routine():
    rng = np.random.default_rng(11)
    for _ in range(20):
        p = random_params(rng, 3, 2, (2, 3))
        seq = random_sequence(rng, 30, 2, (2, 3), missing=0.3)
        for mode in ("substitute", "marginalize"):
            np.testing.assert_allclose(log_emission_matrix(p, seq, mode), slot_emissions(p, seq, mode),
                                       rtol=1e-12, atol=1e-12)


def test_emission_errors():
    p = one_state()
    with pytest.raises(InvalidInputError):
        emission_loglik(p, 1, obs([0.0]))
    with pytest.raises(InvalidInputError):
        emission_loglik(p, 0, obs([0.0, 1.0]))
    bad = one_state()
    bad.covariances = np.array([[[-1.0]]])
    with pytest.raises(NumericalError) as info:
        emission_loglik(bad, 0, obs([0.0]))
    assert info.value.state == 0


# --- forward / backward / posteriors ------------------------------------------

def test_single_state_loglik_is_sum_of_emissions():
    rng = np.random.default_rng(0)
    p = random_params(rng, 1, 2)
    seq = random_sequence(rng, 12, 2, missing=0.2)
    la, ll = log_forward(p, seq)
    assert ll == pytest.approx(slot_emissions(p, seq).sum(), rel=1e-12)
    lb = log_backward(p, seq)
    emis = slot_emissions(p, seq)[:, 0]
    for t in range(len(seq)):
        assert lb[t, 0] == pytest.approx(emis[t + 1:].sum(), abs=1e-9)
    assert np.all(posteriors(p, seq).gamma == pytest.approx(1.0))


def test_backward_boundary_and_alpha_beta_consistency():
    rng = np.random.default_rng(5)
    p = random_params(rng, 2, 2)
    seq = random_sequence(rng, 3, 2)
    la, ll = log_forward(p, seq)
    lb = log_backward(p, seq)
    assert np.all(lb[-1] == 0.0)
    for t in range(3):
        m = np.max(la[t] + lb[t])
        assert m + math.log(np.exp(la[t] + lb[t] - m).sum()) == pytest.approx(ll, rel=1e-9)


def test_brute_force_all_missing_sequence():
    rng = np.random.default_rng(8)
    p = random_params(rng, 2, 2)
    seq = ObservationSequence(np.full((4, 2), np.nan), np.full((4, 1), -1))
    total, best, _ = enumerate_paths(p, seq)
    assert log_forward(p, seq)[1] == pytest.approx(total, rel=1e-9)


def test_gamma_matches_enumerated_posterior():
    rng = np.random.default_rng(12)
    p = random_params(rng, 2, 2)
    seq = random_sequence(rng, 3, 2, missing=0.2)
    log_b = slot_emissions(p, seq)
    probs = np.zeros((3, 2))
    for path in itertools.product(range(2), repeat=3):
        w = p.pi[path[0]] * np.exp(log_b[0, path[0]])
        for t in range(1, 3):
            w *= p.A[path[t - 1], path[t]] * np.exp(log_b[t, path[t]])
        for t in range(3):
            probs[t, path[t]] += w
    probs /= probs.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(posteriors(p, seq).gamma, probs, rtol=1e-9, atol=1e-12)


def test_symmetric_model_gives_uniform_gamma():
    cov = np.eye(2)[None].repeat(2, 0)
    p = HhmmParams([0.5, 0.5], [[0.7, 0.3], [0.3, 0.7]], [[1.0, 2.0], [1.0, 2.0]], cov,
                   [np.array([[0.4, 0.6], [0.4, 0.6]])], [np.zeros((2, 2), bool)])
    seq = random_sequence(np.random.default_rng(0), 9, 2)
    np.testing.assert_allclose(posteriors(p, seq).gamma, 0.5, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n_states=st.integers(1, 4), T=st.integers(1, 40),
       missing=st.sampled_from([0.0, 0.3, 0.9]))
def test_posterior_tables_are_normalized(seed, n_states, T, missing):
    rng = np.random.default_rng(seed)
    p = random_params(rng, n_states, 2, (2,))
    seq = random_sequence(rng, T, 2, missing=missing)
    tab = posteriors(p, seq)
    assert np.all(np.isfinite(tab.gamma)) and np.isfinite(tab.loglik)
    np.testing.assert_allclose(tab.gamma.sum(axis=1), 1.0, atol=1e-8)
    if T > 1:
        np.testing.assert_allclose(tab.xi.sum(axis=(1, 2)), 1.0, atol=1e-8)
        np.testing.assert_allclose(tab.xi.sum(axis=2), tab.gamma[:-1], atol=1e-8)
    combined = tab.log_alpha + tab.log_beta
    m = combined.max(axis=1, keepdims=True)
    per_t = (m + np.log(np.exp(combined - m).sum(axis=1, keepdims=True))).ravel()
    np.testing.assert_allclose(per_t, tab.loglik, rtol=1e-9)


def test_forward_rejects_empty_sequence():
    p = random_params(np.random.default_rng(0), 2, 2)
    with pytest.raises(InvalidInputError):
        log_forward(p, ObservationSequence(np.zeros((0, 2)), np.zeros((0, 1), int)))


# --- viterbi --------------------------------------------------------------------

def test_viterbi_single_state_is_all_zero():
    rng = np.random.default_rng(1)
    p = random_params(rng, 1, 2)
    assert np.all(viterbi(p, random_sequence(rng, 10, 2)) == 0)


def test_viterbi_identical_states_tie_to_lowest_index():
    cov = np.eye(2)[None].repeat(3, 0)
    p = HhmmParams(np.full(3, 1 / 3), np.full((3, 3), 1 / 3), np.zeros((3, 2)), cov,
                   [np.full((3, 2), 0.5)], [np.zeros((3, 2), bool)])
    assert np.all(viterbi(p, random_sequence(np.random.default_rng(2), 12, 2)) == 0)


def test_viterbi_matches_enumeration_three_states_seven_slots():
    rng = np.random.default_rng(21)
    p = random_params(rng, 3, 2)
    seq = random_sequence(rng, 7, 2, missing=0.1)
    total, best, best_paths = enumerate_paths(p, seq)
    path = viterbi(p, seq)
    assert path_log_prob(p, seq, path) == pytest.approx(best, rel=1e-9)
    assert tuple(path) in best_paths


def test_decode_many_matches_single_decodes_for_mixed_lengths():
    rng = np.random.default_rng(4)
    p = random_params(rng, 3, 2)
    seqs = [random_sequence(rng, T, 2, missing=0.2) for T in (5, 9, 5, 1, 9)]
    for seq, (path, score) in zip(seqs, decode_many(p, seqs)):
        np.testing.assert_array_equal(path, viterbi(p, seq))
        assert score == pytest.approx(path_log_prob(p, seq, path), rel=1e-12)


def test_missingness_never_produces_nan():
    rng = np.random.default_rng(6)
    p = random_params(rng, 3, 2, (2, 2))
    base = random_sequence(rng, 20, 2, (2, 2))
    for frac in np.linspace(0, 1, 6):
        cmask = base.cont_mask & (rng.random(base.cont_mask.shape) >= frac)
        dmask = base.disc_mask & (rng.random(base.disc_mask.shape) >= frac)
        seq = ObservationSequence(base.continuous, base.discrete, cmask, dmask)
        tab = posteriors(p, seq)
        assert np.all(np.isfinite(tab.log_alpha)) and np.all(np.isfinite(tab.gamma))
        assert np.all((viterbi(p, seq) >= 0) & (viterbi(p, seq) < 3))
