"""Minimal differentiable substrate: the layers, losses and optimizer the networks need."""

from vser.nn.functional import (
    AttentionConfig,
    conv2d_3x3,
    cross_entropy,
    gelu,
    instance_norm,
    l1_loss,
    layer_norm,
    linear,
    multi_head_self_attention,
    softmax,
)
from vser.nn.optim import Adam, AdamState, adam_step

__all__ = [
    "Adam",
    "AdamState",
    "AttentionConfig",
    "adam_step",
    "conv2d_3x3",
    "cross_entropy",
    "gelu",
    "instance_norm",
    "l1_loss",
    "layer_norm",
    "linear",
    "multi_head_self_attention",
    "softmax",
]
