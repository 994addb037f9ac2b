"""Minimal differentiable-network substrate built on numpy."""

from minehaul.neural.layers import MLP, Activation, Dense, LayerSpec
from minehaul.neural.optim import adam_step, cosine_lr
from minehaul.neural.params import ParamStore
from minehaul.neural.special import digamma, log_gamma

__all__ = [
    "Activation",
    "Dense",
    "LayerSpec",
    "MLP",
    "ParamStore",
    "adam_step",
    "cosine_lr",
    "digamma",
    "log_gamma",
]
