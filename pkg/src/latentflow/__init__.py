"""Amortized variational inference for deep latent-variable models, from scratch."""

__version__ = "0.1.0"
