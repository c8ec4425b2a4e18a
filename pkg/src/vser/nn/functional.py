"""Differentiable ops used by the two networks.

Each op is a thin composition of torch primitives, so autograd supplies the
exact analytic backward pass; ``tests/test_gradients.py`` checks every one
against central finite differences. All ops accept float32 or float64 and
keep the input dtype.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import torch
import torch.nn.functional as F

from vser.errors import InvalidLabel, ShapeError

NORM_EPS = 1e-5


@dataclass(frozen=True)
class AttentionConfig:
    token_dim: int = 256
    heads: int = 5
    head_dim: int = 64

    def __post_init__(self):
        if self.heads < 1 or self.head_dim < 1 or self.token_dim < 1:
            raise ShapeError(f"invalid attention config {self}")

    @property
    def inner_dim(self) -> int:
        return self.heads * self.head_dim


def linear(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    """``x @ weight + bias`` with ``weight`` laid out as ``[d_in, d_out]``."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input {tuple(x.shape)} incompatible with weight {tuple(weight.shape)}")
    y = x @ weight
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"linear: bias {tuple(bias.shape)} != ({weight.shape[1]},)")
        y = y + bias
    return y


def conv2d_3x3(x: torch.Tensor, kernels: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    """Stride-1, zero-pad-1 cross-correlation; ``[C,H,W]`` or ``[B,C,H,W]`` in, same spatial size out."""
    if x.ndim not in (3, 4):
        raise ShapeError(f"conv2d_3x3 expects [C,H,W] or [B,C,H,W], got {tuple(x.shape)}")
    if kernels.ndim != 4 or kernels.shape[2:] != (3, 3) or kernels.shape[1] != x.shape[-3]:
        raise ShapeError(f"conv2d_3x3: kernels {tuple(kernels.shape)} do not fit input {tuple(x.shape)}")
    if bias is not None and bias.shape != (kernels.shape[0],):
        raise ShapeError(f"conv2d_3x3: bias {tuple(bias.shape)} != ({kernels.shape[0]},)")
    unbatched = x.ndim == 3
    y = F.conv2d(x.unsqueeze(0) if unbatched else x, kernels, bias, stride=1, padding=1)
    return y.squeeze(0) if unbatched else y


def instance_norm(x: torch.Tensor, weight=None, bias=None, eps: float = NORM_EPS) -> torch.Tensor:
    """Normalize each channel of each instance over its spatial extent."""
    if x.ndim not in (3, 4) or x.shape[-1] * x.shape[-2] < 2:
        raise ShapeError(f"instance_norm expects [C,H,W] or [B,C,H,W] with H*W >= 2, got {tuple(x.shape)}")
    unbatched = x.ndim == 3
    y = F.instance_norm(x.unsqueeze(0) if unbatched else x, weight=weight, bias=bias, eps=eps)
    return y.squeeze(0) if unbatched else y


def layer_norm(x: torch.Tensor, weight=None, bias=None, eps: float = NORM_EPS) -> torch.Tensor:
    if x.shape[-1] < 2:
        raise ShapeError(f"layer_norm needs a last axis of size >= 2, got {tuple(x.shape)}")
    return F.layer_norm(x, (x.shape[-1],), weight, bias, eps)


def gelu(x: torch.Tensor) -> torch.Tensor:
    """Exact GELU, ``x * Phi(x)`` (erf form, not the tanh approximation)."""
    return F.gelu(x)


def softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return torch.softmax(x, dim=dim)


def multi_head_self_attention(
    x: torch.Tensor, cfg: AttentionConfig, params: Mapping[str, torch.Tensor]
) -> tuple[torch.Tensor, torch.Tensor]:
    """Scaled dot-product self-attention over ``cfg.heads`` heads.

    Args:
        x: ``[T, d]`` or ``[B, T, d]`` token sequence.
        cfg: head layout; the concatenated heads (``heads * head_dim`` wide)
            are projected back to ``token_dim``.
        params: ``qkv_weight [d, 3*inner]``, ``qkv_bias [3*inner]``,
            ``out_weight [inner, d]``, ``out_bias [d]``.

    Returns:
        The ``[.., T, d]`` output and the attention weights ``[.., heads, T, T]``
        (rows index queries, columns index keys; each row sums to 1).
    """
    if x.ndim not in (2, 3) or x.shape[-1] != cfg.token_dim or x.shape[-2] < 1:
        raise ShapeError(f"attention expects [.., T, {cfg.token_dim}] with T >= 1, got {tuple(x.shape)}")
    qkv = linear(x, params["qkv_weight"], params.get("qkv_bias"))
    if qkv.shape[-1] != 3 * cfg.inner_dim:
        raise ShapeError(f"qkv projection width {qkv.shape[-1]} != 3 * {cfg.inner_dim}")
    T = x.shape[-2]
    qkv = qkv.reshape(*x.shape[:-2], T, 3, cfg.heads, cfg.head_dim)
    qkv = qkv.movedim(-3, 0).transpose(-3, -2)  # [3, .., heads, T, head_dim]
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = q @ k.transpose(-2, -1) / math.sqrt(cfg.head_dim)
    attn = softmax(scores, dim=-1)
    heads_out = (attn @ v).transpose(-3, -2).reshape(*x.shape[:-2], T, cfg.inner_dim)
    return linear(heads_out, params["out_weight"], params.get("out_bias")), attn


def cross_entropy(logits: torch.Tensor, labels) -> torch.Tensor:
    """Batch-mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects [B, C] logits, got {tuple(logits.shape)}")
    labels = torch.as_tensor(labels, dtype=torch.long)
    if labels.shape != (logits.shape[0],):
        raise ShapeError(f"labels {tuple(labels.shape)} do not match batch of {logits.shape[0]}")
    n_classes = logits.shape[1]
    if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) >= n_classes):
        raise InvalidLabel(f"labels must lie in [0, {n_classes}), got {labels.tolist()}")
    shifted = logits - logits.amax(dim=1, keepdim=True).detach()
    log_probs = shifted - torch.log(torch.exp(shifted).sum(dim=1, keepdim=True))
    return -log_probs.gather(1, labels[:, None]).mean()


def l1_loss(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference over every element; gradient is 0 at ties."""
    if a.shape != b.shape:
        raise ShapeError(f"l1_loss shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()
