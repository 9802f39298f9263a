"""Heterogeneous hidden Markov model: Gaussian and categorical channels with missing data."""

from .emissions import emission_loglik, log_emission_matrix
from .impute import conditional_mean, impute
from .inference import (
    PosteriorTables,
    decode_many,
    log_backward,
    log_forward,
    loglik_many,
    path_log_prob,
    posteriors,
    posteriors_many,
    viterbi,
)
from .params import FitConfig, HhmmParams, ObservationSequence
from .sampling import n_free_params, sample
from .training import fit_baum_welch, init_params, semi_supervised_mask

__all__ = [
    "FitConfig", "HhmmParams", "ObservationSequence", "PosteriorTables",
    "conditional_mean", "decode_many", "emission_loglik", "fit_baum_welch", "impute",
    "init_params", "log_backward", "log_emission_matrix", "log_forward", "loglik_many",
    "n_free_params", "path_log_prob", "posteriors", "posteriors_many", "sample",
    "semi_supervised_mask", "viterbi",
]
