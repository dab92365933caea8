"""Minimal numpy tensor core: autodiff, layers, optimizers, checkpoints."""
from . import autograd, checkpoint
from .autograd import Tensor, no_grad, cross_entropy
from .layers import (
    AttentionConfig,
    Dropout,
    Embedding,
    EncoderLayer,
    FeedForward,
    LayerNorm,
    Linear,
    MultiHeadAttention,
    ParamStore,
    kaiming_uniform,
    sinusoidal_positions,
)
from .optim import adam_step, adamw_step, clip_grad_norm

__all__ = [
    "AttentionConfig", "Dropout", "Embedding", "EncoderLayer", "FeedForward", "LayerNorm",
    "Linear", "MultiHeadAttention", "ParamStore", "Tensor", "adam_step", "adamw_step",
    "autograd", "checkpoint", "clip_grad_norm", "cross_entropy", "kaiming_uniform",
    "no_grad", "sinusoidal_positions",
]
