"""Weighted accuracy, confusion matrices and attention-mask figures."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from scipy.ndimage import correlate1d

from vser.errors import InvalidLabel, InvalidSigma, ShapeError
from vser.formats import write_pgm

DEFAULT_SIGMA = 2.0
SEPARATOR = 2


def weighted_accuracy(preds, labels, n_classes: int) -> float:
    """Correct predictions summed over classes, divided by the number of instances."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ShapeError(f"preds {preds.shape} and labels {labels.shape} must be equal-length vectors")
    if len(labels) == 0:
        raise ShapeError("weighted accuracy needs at least one instance")
    for arr in (preds, labels):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise InvalidLabel(f"class indices must lie in [0, {n_classes})")
    correct = np.bincount(labels[preds == labels], minlength=n_classes)
    totals = np.bincount(labels, minlength=n_classes)
    return float(correct.sum() / totals.sum())


def format_percent(fraction: float) -> str:
    """Percentage with two decimals, truncated rather than rounded: 0.97395 -> '97.39%'."""
    # round away float noise first so 0.9739 does not truncate to 97.38
    hundredths = math.floor(round(fraction * 10_000, 6))
    return f"{hundredths // 100}.{hundredths % 100:02d}%"


@dataclass
class EvalReport:
    label_names: list[str]
    per_class_correct: np.ndarray
    per_class_total: np.ndarray
    confusion: np.ndarray  # rows = true class, columns = predicted class

    @property
    def weighted_accuracy(self) -> float:
        return float(self.per_class_correct.sum() / self.per_class_total.sum())

    def to_text(self) -> str:
        lines = [f"weighted_accuracy\t{format_percent(self.weighted_accuracy)}", ""]
        lines.append("class\tcorrect\ttotal\t" + "\t".join(self.label_names))
        for i, name in enumerate(self.label_names):
            row = "\t".join(str(int(v)) for v in self.confusion[i])
            lines.append(f"{name}\t{int(self.per_class_correct[i])}\t{int(self.per_class_total[i])}\t{row}")
        return "\n".join(lines) + "\n"


def evaluate_predictions(preds, labels, label_names: Sequence[str]) -> EvalReport:
    n = len(label_names)
    wa = weighted_accuracy(preds, labels, n)  # validates inputs
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    confusion = np.zeros((n, n), dtype=np.int64)
    np.add.at(confusion, (labels, preds), 1)
    report = EvalReport(list(label_names), np.diag(confusion).copy(), confusion.sum(axis=1), confusion)
    assert abs(report.weighted_accuracy - wa) < 1e-12
    return report


@torch.no_grad()
def predict(model, images, batch_size: int = 16) -> np.ndarray:
    model.eval()
    images = torch.as_tensor(np.asarray(images, dtype=np.float32))
    out = []
    for start in range(0, len(images), batch_size):
        logits, _, _ = model(images[start : start + batch_size][:, None])
        out.append(logits.argmax(dim=1).numpy())
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


# ---------------------------------------------------------------------------
# Attention masks
# ---------------------------------------------------------------------------


@dataclass
class AttentionMask:
    mask: np.ndarray
    source: str = "last_layer_mean_heads"
    smoothed: bool = False
    sigma: float = 0.0


def _min_max(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if hi - lo <= 0.0:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def received_attention(attn: torch.Tensor) -> np.ndarray:
    """Per-key attention ``[T]`` from one layer's ``[heads, T, T]`` weights."""
    return attn.double().mean(dim=0).mean(dim=0).numpy()


def paint_patches(values: np.ndarray, patch_h: int, patch_w: int, size: int = 128) -> np.ndarray:
    """Spread one scalar per token over its patch footprint (row-major patch order)."""
    grid = np.asarray(values, dtype=np.float64).reshape(size // patch_h, size // patch_w)
    return np.repeat(np.repeat(grid, patch_h, axis=0), patch_w, axis=1)


@torch.no_grad()
def extract_attention_mask(model, img) -> AttentionMask:
    """Final-layer, head-averaged received attention painted onto the image grid."""
    model.eval()
    img = torch.as_tensor(np.asarray(img, dtype=np.float32))
    _, _, attn_stack = model(img)
    scores = received_attention(attn_stack[-1][0])
    spec = model.spec
    raw = paint_patches(scores, spec.patch_h, spec.patch_w, spec.image_size)
    return AttentionMask(_min_max(raw))


def smooth_raw(mask: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian blur, radius ``ceil(3 sigma)``, before any renormalization.

    Borders use half-sample symmetric reflection (``d c b a | a b c d``). With
    an even kernel that makes the blur matrix symmetric with unit row sums, so
    constants stay constant and the total mass is kept exactly, borders
    included; renormalizing a truncated kernel would only manage the first.
    """
    if not sigma > 0:
        raise InvalidSigma(f"sigma must be positive, got {sigma}")
    radius = math.ceil(3 * sigma)
    offsets = np.arange(-radius, radius + 1)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    kernel /= kernel.sum()
    x = np.asarray(mask, dtype=np.float64)
    for axis in (0, 1):
        x = correlate1d(x, kernel, axis=axis, mode="reflect")
    return x


def gaussian_smooth(mask: AttentionMask, sigma: float = DEFAULT_SIGMA) -> AttentionMask:
    return AttentionMask(_min_max(smooth_raw(mask.mask, sigma)), mask.source, True, sigma)


def tile_images(images: Sequence[np.ndarray], rows: int, cols: int) -> np.ndarray:
    """Canvas of ``rows x cols`` equal-size images with white 2-pixel separators."""
    if len(images) != rows * cols or not images:
        raise ShapeError(f"{len(images)} images do not fill a {rows}x{cols} layout")
    h, w = np.asarray(images[0]).shape
    if any(np.asarray(im).shape != (h, w) for im in images):
        raise ShapeError("all images in a figure must share one size")
    canvas = np.ones((rows * h + (rows - 1) * SEPARATOR, cols * w + (cols - 1) * SEPARATOR))
    for i, im in enumerate(images):
        r, c = divmod(i, cols)
        top, left = r * (h + SEPARATOR), c * (w + SEPARATOR)
        canvas[top : top + h, left : left + w] = im
    return canvas


def emit_figure(images: Sequence[np.ndarray], rows: int, cols: int, path) -> Path:
    path = Path(path)
    write_pgm(path, tile_images(images, rows, cols))
    return path
