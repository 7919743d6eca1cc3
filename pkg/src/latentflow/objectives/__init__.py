"""ELBO objectives, estimators, sampling and the AEVB training loop."""

from .elbo import (
    ConfigurationError,
    ElboReport,
    NonFiniteElbo,
    anneal_beta,
    elbo_estimate,
    elbo_gradient,
    elbo_objective,
    free_bits_objective,
    free_bits_penalty,
    group_kl_means,
    iwae_loglik_estimate,
    iwae_objective,
    kl_annealed_elbo,
    per_sample_variational_gradients,
    score_function_gradient,
)
from .model import GenerativeModel, HierarchicalPrior, LatentBlock, Vae, decoder_forward, encoder_forward
from .sampling import ancestral_sample, exact_marginal_linear_gaussian, model_sample
from .train import METRIC_FIELDS, TrainConfig, TrainingDiverged, TrainResult, init_params, train_aevb

__all__ = [
    "ConfigurationError",
    "ElboReport",
    "GenerativeModel",
    "HierarchicalPrior",
    "LatentBlock",
    "METRIC_FIELDS",
    "NonFiniteElbo",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "Vae",
    "ancestral_sample",
    "anneal_beta",
    "decoder_forward",
    "elbo_estimate",
    "elbo_gradient",
    "elbo_objective",
    "encoder_forward",
    "exact_marginal_linear_gaussian",
    "free_bits_objective",
    "free_bits_penalty",
    "group_kl_means",
    "init_params",
    "iwae_loglik_estimate",
    "iwae_objective",
    "kl_annealed_elbo",
    "model_sample",
    "per_sample_variational_gradients",
    "score_function_gradient",
    "train_aevb",
]
