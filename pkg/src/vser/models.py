"""Teacher and student vision transformers over 128x128 log-Mel images.

Teacher: conv stem -> image coordinate channels -> 128x1 patches -> ViT.
Student: raw image -> 128x1 patches -> ViT, with no positional signal at all.
Both expose the ``[n_tokens, token_dim]`` output of their last block as the
feature map that stage-B/C matching compares.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
from torch import nn

from vser.errors import InvalidConfig, MatchError, ShapeError
from vser.nn import functional as Fn
from vser.nn.checkpoint import load_checkpoint, save_checkpoint
from vser.nn.functional import AttentionConfig
from vser.nn.layers import MLP, Conv3x3, InstanceNorm, Linear, TransformerBlock

IMAGE_SIZE = 128
STEM_CHANNELS = (16, 32, 64, 32, 16, 1)

ROLES = ("teacher", "student", "square_variant", "teacher_nope")
POSITIONAL = ("none", "image_coordinate")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; both the network and its FLOPs count derive from it.

    ``teacher_nope`` is the teacher with coordinate encoding removed, used for
    the positional-encoding ablation.
    """

    role: str
    depth: int
    heads: int
    n_classes: int
    use_conv_stem: bool
    positional: str
    token_dim: int = 256
    patch_h: int = 128
    patch_w: int = 1
    head_dim: int = 64
    mlp_hidden: int = 512  # classifier hidden width
    block_hidden: int = 512  # transformer-block MLP width
    image_size: int = IMAGE_SIZE

    def __post_init__(self):
        if self.role not in ROLES:
            raise InvalidConfig(f"unknown role {self.role!r}")
        if self.positional not in POSITIONAL:
            raise InvalidConfig(f"unknown positional mode {self.positional!r}")
        if self.role in ("teacher", "square_variant") and not (
            self.use_conv_stem and self.positional == "image_coordinate"
        ):
            raise InvalidConfig(f"{self.role} requires the conv stem and image coordinate encoding")
        if self.role == "teacher_nope" and not (self.use_conv_stem and self.positional == "none"):
            raise InvalidConfig("teacher_nope requires the conv stem and no positional encoding")
        if self.role == "student" and (self.use_conv_stem or self.positional != "none"):
            raise InvalidConfig("student has neither conv stem nor positional encoding")
        if self.image_size % self.patch_h or self.image_size % self.patch_w:
            raise InvalidConfig(f"{self.patch_h}x{self.patch_w} patches do not tile {self.image_size}x{self.image_size}")
        if min(self.depth, self.heads, self.n_classes, self.token_dim, self.head_dim) < 1:
            raise InvalidConfig(f"non-positive size in {self}")

    @property
    def in_channels(self) -> int:
        return 3 if self.positional == "image_coordinate" else 1

    @property
    def n_tokens(self) -> int:
        return (self.image_size // self.patch_h) * (self.image_size // self.patch_w)

    @property
    def patch_dim(self) -> int:
        return self.in_channels * self.patch_h * self.patch_w

    @property
    def attention(self) -> AttentionConfig:
        return AttentionConfig(self.token_dim, self.heads, self.head_dim)

    def to_meta(self) -> dict[str, str]:
        return {f"model.{k}": str(v) for k, v in asdict(self).items()}

    @classmethod
    def from_meta(cls, meta: dict[str, str]) -> ModelSpec:
        kwargs = {}
        for f in fields(cls):
            raw = meta[f"model.{f.name}"]
            if f.type in ("int", int):
                kwargs[f.name] = int(raw)
            elif f.type in ("bool", bool):
                kwargs[f.name] = raw == "True"
            else:
                kwargs[f.name] = raw
        return cls(**kwargs)


def teacher_spec(n_classes: int = 7, depth: int = 6, heads: int = 5) -> ModelSpec:
    return ModelSpec("teacher", depth, heads, n_classes, use_conv_stem=True, positional="image_coordinate")


def teacher_nope_spec(n_classes: int = 7, depth: int = 6, heads: int = 5) -> ModelSpec:
    return ModelSpec("teacher_nope", depth, heads, n_classes, use_conv_stem=True, positional="none")


def student_spec(n_classes: int = 7, depth: int = 3, heads: int = 5) -> ModelSpec:
    return ModelSpec("student", depth, heads, n_classes, use_conv_stem=False, positional="none")


def square_variant_spec(n_classes: int = 7, depth: int = 6, heads: int = 5) -> ModelSpec:
    return ModelSpec(
        "square_variant", depth, heads, n_classes, use_conv_stem=True, positional="image_coordinate",
        patch_h=16, patch_w=16,
    )


def check_matchable(teacher: ModelSpec, student: ModelSpec) -> None:
    """Raise :class:`MatchError` unless the two feature maps share a shape."""
    t_shape = (teacher.n_tokens, teacher.token_dim)
    s_shape = (student.n_tokens, student.token_dim)
    if t_shape != s_shape:
        raise MatchError(f"teacher feature map {t_shape} cannot be matched to student {s_shape}")


# ---------------------------------------------------------------------------
# Input path: stem, coordinate encoding, patchify
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoordinateGrid:
    x_channel: torch.Tensor  # varies along columns only
    y_channel: torch.Tensor  # varies along rows only


def coordinate_grid(size: int = IMAGE_SIZE, dtype=torch.float32) -> CoordinateGrid:
    ramp = torch.linspace(-1.0, 1.0, size, dtype=torch.float64)
    x = ramp[None, :].expand(size, size).to(dtype).contiguous()
    y = ramp[:, None].expand(size, size).to(dtype).contiguous()
    return CoordinateGrid(x, y)


def coordinate_encode(x: torch.Tensor, grid: CoordinateGrid) -> torch.Tensor:
    """Append x/y coordinate channels: ``[1,H,W] -> [3,H,W]`` (or batched)."""
    if x.shape[-3] != 1 or x.shape[-2:] != grid.x_channel.shape:
        raise ShapeError(f"coordinate_encode expects [.., 1, {tuple(grid.x_channel.shape)}], got {tuple(x.shape)}")
    coords = torch.stack([grid.x_channel, grid.y_channel]).to(x.dtype)
    coords = coords.expand(*x.shape[:-3], 2, *x.shape[-2:])
    return torch.cat([x, coords], dim=-3)


def patchify(x: torch.Tensor, patch_h: int, patch_w: int) -> torch.Tensor:
    """``[.., C, H, W] -> [.., n_tokens, C * patch_h * patch_w]``.

    Patches are taken in row-major order (left to right, then top to bottom).
    Within a token, each channel's patch is flattened column by column and the
    channels are concatenated, so a 128x1 patch of a single-channel image is
    exactly one image column.
    """
    C, H, W = x.shape[-3:]
    if H % patch_h or W % patch_w:
        raise ShapeError(f"{patch_h}x{patch_w} patches do not tile {H}x{W}")
    gh, gw = H // patch_h, W // patch_w
    lead = x.shape[:-3]
    p = x.reshape(*lead, C, gh, patch_h, gw, patch_w)
    n = len(lead)
    # -> [.., gh, gw, C, patch_w, patch_h]
    p = p.permute(*range(n), n + 1, n + 3, n, n + 4, n + 2)
    return p.reshape(*lead, gh * gw, C * patch_w * patch_h)


def unpatchify(tokens: torch.Tensor, channels: int, patch_h: int, patch_w: int, size: int = IMAGE_SIZE) -> torch.Tensor:
    """Inverse of :func:`patchify` for a ``size x size`` image."""
    gh, gw = size // patch_h, size // patch_w
    lead = tokens.shape[:-2]
    if tokens.shape[-2:] != (gh * gw, channels * patch_h * patch_w):
        raise ShapeError(f"tokens {tuple(tokens.shape)} do not form a {channels}x{size}x{size} image")
    p = tokens.reshape(*lead, gh, gw, channels, patch_w, patch_h)
    n = len(lead)
    # -> [.., C, gh, patch_h, gw, patch_w]
    p = p.permute(*range(n), n + 2, n, n + 4, n + 1, n + 3)
    return p.reshape(*lead, channels, size, size)


class ConvStem(nn.Module):
    """Six size-preserving [conv3x3 -> instance norm -> GELU] stages."""

    def __init__(self, channels=STEM_CHANNELS, generator: torch.Generator | None = None):
        super().__init__()
        c_in = 1
        self.convs = nn.ModuleList()
        self.norms = nn.ModuleList()
        for c_out in channels:
            self.convs.append(Conv3x3(c_in, c_out, generator))
            self.norms.append(InstanceNorm(c_out))
            c_in = c_out

    def forward(self, x):
        for conv, norm in zip(self.convs, self.norms):
            x = Fn.gelu(norm(conv(x)))
        return x


def conv_stem_forward(img: torch.Tensor, stem: ConvStem) -> torch.Tensor:
    if img.shape[-3:] != (1, IMAGE_SIZE, IMAGE_SIZE):
        raise ShapeError(f"conv stem expects [.., 1, 128, 128], got {tuple(img.shape)}")
    return stem(img)


# ---------------------------------------------------------------------------
# The network
# ---------------------------------------------------------------------------


class VisionTransformer(nn.Module):
    """ViT without class token; classification runs on the token mean."""

    def __init__(self, spec: ModelSpec, seed: int = 0):
        super().__init__()
        self.spec = spec
        gen = torch.Generator().manual_seed(seed)
        self.stem = ConvStem(generator=gen) if spec.use_conv_stem else None
        self.embed = Linear(spec.patch_dim, spec.token_dim, gen)
        self.blocks = nn.ModuleList(TransformerBlock(spec.attention, spec.block_hidden, gen) for _ in range(spec.depth))
        self.head = MLP(spec.token_dim, spec.mlp_hidden, spec.n_classes, gen)
        grid = coordinate_grid(spec.image_size)
        self.register_buffer("coords", torch.stack([grid.x_channel, grid.y_channel]), persistent=False)

    def reset_classifier(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        self.head = MLP(self.spec.token_dim, self.spec.mlp_hidden, self.spec.n_classes, gen)

    @staticmethod
    def _as_batch(img: torch.Tensor) -> torch.Tensor:
        if img.ndim == 2:
            return img[None, None]
        if img.ndim == 3:
            return img[None]
        return img

    def tokens(self, img: torch.Tensor) -> torch.Tensor:
        """Image ``[B,1,128,128]`` (or unbatched) to input tokens ``[B, n_tokens, patch_dim]``."""
        x = self._as_batch(img)
        size = self.spec.image_size
        if x.shape[1:] != (1, size, size):
            raise ShapeError(f"expected a 1x{size}x{size} image, got {tuple(img.shape)}")
        x = x.to(self.embed.weight.dtype)
        if self.stem is not None:
            x = self.stem(x)
        if self.spec.positional == "image_coordinate":
            x = coordinate_encode(x, CoordinateGrid(self.coords[0], self.coords[1]))
        return patchify(x, self.spec.patch_h, self.spec.patch_w)

    def forward_tokens(self, tokens: torch.Tensor):
        """Transformer part on ready-made tokens ``[.., n_tokens, patch_dim]``.

        Returns ``(logits, feature_map, attn_stack)`` where ``feature_map`` is
        the last block's output and ``attn_stack`` holds one
        ``[.., heads, n, n]`` tensor per block.
        """
        if tokens.shape[-2:] != (self.spec.n_tokens, self.spec.patch_dim):
            raise ShapeError(
                f"expected [.., {self.spec.n_tokens}, {self.spec.patch_dim}] tokens, got {tuple(tokens.shape)}"
            )
        x = self.embed(tokens)
        attn_stack = []
        for block in self.blocks:
            x, attn = block(x)
            attn_stack.append(attn)
        logits = self.head(x.mean(dim=-2))
        return logits, x, attn_stack

    def forward(self, img: torch.Tensor):
        return self.forward_tokens(self.tokens(img))

    def features(self, img: torch.Tensor) -> torch.Tensor:
        """Feature map only, skipping the classifier."""
        x = self.embed(self.tokens(img))
        for block in self.blocks:
            x, _ = block(x)
        return x


def build_model(spec: ModelSpec, seed: int = 0) -> VisionTransformer:
    return VisionTransformer(spec, seed)


def save_model(path, model: VisionTransformer, extra_meta: dict[str, str] | None = None) -> None:
    meta = model.spec.to_meta()
    meta.update(extra_meta or {})
    save_checkpoint(path, model.state_dict(), meta)


def load_model(path, expected: ModelSpec | None = None) -> VisionTransformer:
    tensors, meta = load_checkpoint(path)
    spec = ModelSpec.from_meta(meta)
    if expected is not None and expected != spec:
        raise InvalidConfig(f"checkpoint {path} holds {spec}, expected {expected}")
    model = VisionTransformer(spec)
    model.load_state_dict(tensors)
    return model


def parameter_digest(model: nn.Module) -> str:
    """SHA-256 over every parameter's bytes, for bitwise-unchanged checks."""
    h = hashlib.sha256()
    for name, t in model.state_dict().items():
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(t.detach().cpu().numpy()).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# FLOPs
# ---------------------------------------------------------------------------

NORM_OPS = 7  # mean, centre, square, accumulate, scale by rstd, affine mul + add
ACT_OPS = 1
SOFTMAX_OPS = 5


@dataclass
class FlopsReport:
    breakdown: dict[str, int]
    mac_flops: int

    @property
    def total(self) -> int:
        return sum(self.breakdown.values())

    @property
    def block_total(self) -> int:
        return sum(v for k, v in self.breakdown.items() if k.startswith("blocks."))

    def format(self) -> str:
        width = max(len(k) for k in self.breakdown)
        lines = [f"{k:<{width}}  {v / 1e9:10.4f}G" for k, v in self.breakdown.items()]
        lines.append(f"{'total':<{width}}  {self.total / 1e9:10.4f}G")
        return "\n".join(lines)


def count_flops(spec: ModelSpec, mac_flops: int = 1) -> FlopsReport:
    """Analytic forward-pass FLOPs for one image.

    Matrix products and convolutions are charged ``mac_flops`` per
    multiply-accumulate (1 by default, the convention of common PyTorch
    counters); bias and residual adds cost 1 per element, activations 1,
    norms ``NORM_OPS`` and softmax ``SOFTMAX_OPS`` per element.
    """

    def dense(rows, d_in, d_out):
        return mac_flops * rows * d_in * d_out + rows * d_out

    size = spec.image_size
    pixels = size * size
    b: dict[str, int] = {}
    if spec.use_conv_stem:
        conv = norm = act = 0
        c_in = 1
        for c_out in STEM_CHANNELS:
            conv += mac_flops * pixels * c_out * c_in * 9 + pixels * c_out
            norm += NORM_OPS * pixels * c_out
            act += ACT_OPS * pixels * c_out
            c_in = c_out
        b["stem.conv"], b["stem.norm"], b["stem.act"] = conv, norm, act

    n, d, h, hd = spec.n_tokens, spec.token_dim, spec.heads, spec.head_dim
    inner = h * hd
    b["embed"] = dense(n, spec.patch_dim, d)
    per_block = {
        "blocks.norm": 2 * NORM_OPS * n * d,
        "blocks.qkv": dense(n, d, 3 * inner),
        "blocks.scores": mac_flops * h * n * n * hd + h * n * n,  # QK^T then 1/sqrt(d_k)
        "blocks.softmax": SOFTMAX_OPS * h * n * n,
        "blocks.weighted_sum": mac_flops * h * n * n * hd,
        "blocks.out_proj": dense(n, inner, d),
        "blocks.mlp": dense(n, d, spec.block_hidden) + dense(n, spec.block_hidden, d),
        "blocks.act": ACT_OPS * n * spec.block_hidden,
        "blocks.residual": 2 * n * d,
    }
    for key, value in per_block.items():
        b[key] = spec.depth * value
    b["pool"] = n * d
    b["classifier"] = (
        dense(1, d, spec.mlp_hidden) + ACT_OPS * spec.mlp_hidden + dense(1, spec.mlp_hidden, spec.n_classes)
    )
    return FlopsReport(b, mac_flops)
