"""Parameter-holding wrappers around :mod:`vser.nn.functional`."""

from __future__ import annotations

import math

import torch
from torch import nn

from vser.nn import functional as Fn
from vser.nn.functional import AttentionConfig

INIT_STD = 0.02


def trunc_normal(shape, generator: torch.Generator | None = None, std: float = INIT_STD) -> nn.Parameter:
    t = torch.empty(shape)
    nn.init.trunc_normal_(t, mean=0.0, std=std, a=-2 * std, b=2 * std, generator=generator)
    return nn.Parameter(t)


class Linear(nn.Module):
    def __init__(self, d_in: int, d_out: int, generator: torch.Generator | None = None):
        super().__init__()
        self.weight = trunc_normal((d_in, d_out), generator)
        self.bias = nn.Parameter(torch.zeros(d_out))

    def forward(self, x):
        return Fn.linear(x, self.weight, self.bias)


class Conv3x3(nn.Module):
    def __init__(self, c_in: int, c_out: int, generator: torch.Generator | None = None):
        super().__init__()
        # uniform fan-in init, the usual choice for conv layers feeding a norm
        bound = 1.0 / math.sqrt(c_in * 9)
        w = torch.empty(c_out, c_in, 3, 3).uniform_(-bound, bound, generator=generator)
        self.weight = nn.Parameter(w)
        self.bias = nn.Parameter(torch.zeros(c_out))

    def forward(self, x):
        return Fn.conv2d_3x3(x, self.weight, self.bias)


class InstanceNorm(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        return Fn.instance_norm(x, self.weight, self.bias)


class LayerNorm(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))

    def forward(self, x):
        return Fn.layer_norm(x, self.weight, self.bias)


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, cfg: AttentionConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.cfg = cfg
        self.qkv_weight = trunc_normal((cfg.token_dim, 3 * cfg.inner_dim), generator)
        self.qkv_bias = nn.Parameter(torch.zeros(3 * cfg.inner_dim))
        self.out_weight = trunc_normal((cfg.inner_dim, cfg.token_dim), generator)
        self.out_bias = nn.Parameter(torch.zeros(cfg.token_dim))

    def forward(self, x):
        return Fn.multi_head_self_attention(x, self.cfg, dict(self.named_parameters()))


class MLP(nn.Module):
    """Two linear layers with a GELU in between."""

    def __init__(self, d_in: int, hidden: int, d_out: int, generator: torch.Generator | None = None):
        super().__init__()
        self.fc1 = Linear(d_in, hidden, generator)
        self.fc2 = Linear(hidden, d_out, generator)

    def forward(self, x):
        return self.fc2(Fn.gelu(self.fc1(x)))


class TransformerBlock(nn.Module):
    """Pre-norm encoder block: ``x + MHSA(LN(x))`` then ``x + MLP(LN(x))``."""

    def __init__(self, cfg: AttentionConfig, mlp_hidden: int, generator: torch.Generator | None = None):
        super().__init__()
        self.norm1 = LayerNorm(cfg.token_dim)
        self.attn = MultiHeadSelfAttention(cfg, generator)
        self.norm2 = LayerNorm(cfg.token_dim)
        self.mlp = MLP(cfg.token_dim, mlp_hidden, cfg.token_dim, generator)

    def forward(self, x):
        h, attn = self.attn(self.norm1(x))
        x = x + h
        x = x + self.mlp(self.norm2(x))
        return x, attn
