"""Generated data for tests and desk-scale experiments.

``emotion_clip`` makes speech-like harmonic clips whose pitch, contour and
loudness depend on the class, so a tiny corpus is learnable. ``quadrant_bars``
is the positional benchmark: the label is which quarter of the time axis holds
a bright vertical bar, which a network can only answer if it knows where each
token sits.
"""

from __future__ import annotations

import numpy as np

from vser.audio import SAMPLE_RATE, AudioClip, clip_to_image
from vser.training import ImageSet

SAVEE_CODES = ("a", "d", "f", "h", "n", "sa", "su")
FIXTURE_SPEAKERS = ("DC", "JE", "JK", "KL")


def emotion_clip(label: int, rng: np.random.Generator, sample_rate: int = SAMPLE_RATE) -> AudioClip:
    duration = rng.uniform(1.5, 3.5)
    t = np.arange(int(duration * sample_rate)) / sample_rate
    f0 = 140.0 + 45.0 * label + rng.uniform(-8, 8)
    slope = (label % 3 - 1) * 40.0  # falling, flat or rising contour, in Hz per second
    inst_f = f0 + slope * t + 6.0 * np.sin(2 * np.pi * (2 + label % 4) * t)
    phase = 2 * np.pi * np.cumsum(inst_f) / sample_rate
    voiced = sum(np.sin(k * phase) / k for k in range(1, 8))
    envelope = np.sin(np.pi * t / duration) ** (1 + label % 2)
    x = voiced * envelope * (0.15 + 0.05 * (label % 4)) + 0.002 * rng.standard_normal(len(t))
    return AudioClip(x, sample_rate)


def quadrant_bars(n: int = 400, seed: int = 0, size: int = 128, bar_width: int = 4) -> ImageSet:
    """Balanced 4-class set: bright bar inside time quadrant ``label``."""
    rng = np.random.default_rng(seed)
    quarter = size // 4
    labels = np.arange(n) % 4
    rng.shuffle(labels)
    images = np.empty((n, size, size), dtype=np.float32)
    for i, q in enumerate(labels):
        img = rng.uniform(0.0, 0.3, (size, size))
        start = q * quarter + rng.integers(2, quarter - bar_width - 1)
        height = rng.integers(size // 2, size + 1)
        top = rng.integers(0, size - height + 1)
        img[top : top + height, start : start + bar_width] = rng.uniform(0.75, 1.0)
        images[i] = img
    return ImageSet(images, labels, [f"bars{i:04d}" for i in range(n)], ["q0", "q1", "q2", "q3"])


def class_images(n: int, n_classes: int = 7, seed: int = 0) -> ImageSet:
    """Log-Mel images of :func:`emotion_clip` clips, labels cycling through classes."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % n_classes
    images = np.stack([clip_to_image(emotion_clip(int(c), rng)) for c in labels])
    names = [f"class{c}" for c in range(n_classes)]
    return ImageSet(images, labels, [f"syn{i:04d}" for i in range(n)], names)
