"""Waveform to 128x128 log-Mel image conversion, plus waveform augmentation.

All arithmetic is float64; the finished image is returned as float32 since
that is what the cache files and the networks consume.
"""

from __future__ import annotations

import struct
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from vser.errors import InvalidAudio, InvalidAugment, InvalidConfig, InvalidFrequency

SAMPLE_RATE = 16_000
DURATION_S = 4.0
IMAGE_SIZE = 128
LOG_EPS = 1e-6
RESAMPLER_TAPS = 64

AUGMENT_KINDS = ("noise", "time_shift", "speed")


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InvalidAudio(f"expected mono samples, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise InvalidAudio(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class StftParams:
    n_fft: int = 1024
    hop: int = 64
    win_length: int = 512
    window: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.hop < 1:
            raise InvalidConfig(f"hop must be >= 1, got {self.hop}")
        if not 1 <= self.win_length <= self.n_fft:
            raise InvalidConfig(f"win_length {self.win_length} must lie in [1, n_fft={self.n_fft}]")
        if self.window is None:
            object.__setattr__(self, "window", np.hamming(self.win_length))
        window = np.asarray(self.window, dtype=np.float64)
        if window.shape != (self.win_length,):
            raise InvalidConfig(f"window length {window.shape} != win_length {self.win_length}")
        object.__setattr__(self, "window", window)

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1


@dataclass
class Spectrogram:
    """STFT magnitudes laid out as ``[frequency_bins, time_frames]``."""

    magnitudes: np.ndarray
    sample_rate: int
    n_fft: int

    @property
    def n_bins(self) -> int:
        return self.magnitudes.shape[0]

    @property
    def n_frames(self) -> int:
        return self.magnitudes.shape[1]


@dataclass
class MelFilterbank:
    weights: np.ndarray  # [n_mels, n_bins]
    f_min: float
    f_max: float
    edges_hz: np.ndarray  # n_mels + 2 triangle corner frequencies

    @property
    def n_mels(self) -> int:
        return self.weights.shape[0]

    @property
    def centers_hz(self) -> np.ndarray:
        return self.edges_hz[1:-1]

    def response(self, freqs) -> np.ndarray:
        """Evaluate the continuous triangles at arbitrary frequencies.

        Returns an array of shape ``[n_mels, len(freqs)]``; ``weights`` is this
        function sampled at the FFT bin frequencies.
        """
        return _triangles(self.edges_hz, np.atleast_1d(np.asarray(freqs, dtype=np.float64)))


@dataclass(frozen=True)
class AugmentSpec:
    kind: str
    noise_snr_db: float = 20.0
    shift_seconds: float = 0.0
    speed_factor: float = 1.0

    def __post_init__(self):
        if self.kind not in AUGMENT_KINDS:
            raise InvalidAugment(f"unknown augmentation kind {self.kind!r}")
        if not 15.0 <= self.noise_snr_db <= 30.0:
            raise InvalidAugment(f"noise_snr_db {self.noise_snr_db} outside [15, 30]")
        if abs(self.shift_seconds) > 1.0:
            raise InvalidAugment(f"|shift_seconds| {self.shift_seconds} exceeds 1.0")
        if not 0.9 <= self.speed_factor <= 1.1:
            raise InvalidAugment(f"speed_factor {self.speed_factor} outside [0.9, 1.1]")


# ---------------------------------------------------------------------------
# Resampling and duration standardization
# ---------------------------------------------------------------------------


def resample(samples: np.ndarray, orig_rate: float, target_rate: float, taps: int = RESAMPLER_TAPS) -> np.ndarray:
    """Hamming-windowed sinc interpolation with ``taps`` input samples per output sample.

    The cutoff is lowered to the target Nyquist when downsampling.
    """
    x = np.asarray(samples, dtype=np.float64)
    if orig_rate == target_rate:
        return x.copy()
    ratio = target_rate / orig_rate
    n_out = int(round(len(x) * ratio))
    cutoff = min(1.0, ratio)
    half = taps // 2
    offsets = np.arange(-half + 1, half + 1)
    padded = np.concatenate([np.zeros(half), x, np.zeros(half + 1)])

    out = np.empty(n_out)
    chunk = 16_384
    for start in range(0, n_out, chunk):
        t = np.arange(start, min(start + chunk, n_out)) / ratio
        idx = np.floor(t).astype(np.int64)[:, None] + offsets[None, :]
        dist = t[:, None] - idx
        window = 0.54 + 0.46 * np.cos(np.pi * dist / half)
        window[np.abs(dist) > half] = 0.0
        kernel = cutoff * np.sinc(cutoff * dist) * window
        out[start : start + len(t)] = np.sum(padded[idx + half] * kernel, axis=1)
    return out


def standardize(clip: AudioClip, target_rate: int = SAMPLE_RATE, duration_s: float = DURATION_S) -> AudioClip:
    """Resample to ``target_rate`` and cut or zero-pad the tail to ``duration_s``."""
    if len(clip.samples) == 0:
        raise InvalidAudio("cannot standardize an empty clip")
    x = resample(clip.samples, clip.sample_rate, target_rate)
    n = int(round(target_rate * duration_s))
    if len(x) >= n:
        x = x[:n].copy()
    else:
        x = np.concatenate([x, np.zeros(n - len(x))])
    return AudioClip(x, target_rate)


# ---------------------------------------------------------------------------
# STFT and Mel projection
# ---------------------------------------------------------------------------


def frame_signal(samples: np.ndarray, params: StftParams) -> np.ndarray:
    """Frames ``[n_frames, win_length]``; frame m starts at ``m * hop``, zeros past the end."""
    x = np.asarray(samples, dtype=np.float64)
    n_frames = len(x) // params.hop + 1
    needed = (n_frames - 1) * params.hop + params.win_length
    padded = np.concatenate([x, np.zeros(max(0, needed - len(x)))])
    view = np.lib.stride_tricks.sliding_window_view(padded, params.win_length)
    return view[:: params.hop][:n_frames]


def stft(clip: AudioClip, params: StftParams | None = None) -> Spectrogram:
    params = params or StftParams()
    frames = frame_signal(clip.samples, params) * params.window
    spectrum = np.fft.rfft(frames, n=params.n_fft, axis=1)
    return Spectrogram(np.abs(spectrum).T, clip.sample_rate, params.n_fft)


def mel_scale(f):
    """Hz to mel, ``2595 * log10(1 + f / 700)``. Accepts scalars or arrays."""
    arr = np.asarray(f, dtype=np.float64)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise InvalidFrequency(f"frequency must be >= 0, got {f}")
    mel = 2595.0 * np.log1p(arr / 700.0) / np.log(10.0)
    return float(mel) if mel.ndim == 0 else mel


def mel_to_hz(m):
    arr = np.asarray(m, dtype=np.float64)
    hz = 700.0 * (10.0 ** (arr / 2595.0) - 1.0)
    return float(hz) if hz.ndim == 0 else hz


def _triangles(edges_hz: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    lower = edges_hz[:-2, None]
    center = edges_hz[1:-1, None]
    upper = edges_hz[2:, None]
    rising = (freqs[None, :] - lower) / (center - lower)
    falling = (upper - freqs[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_filterbank(
    n_mels: int = IMAGE_SIZE,
    n_fft: int = 1024,
    sample_rate: int = SAMPLE_RATE,
    f_min: float = 0.0,
    f_max: float | None = None,
) -> MelFilterbank:
    """Triangular filters whose corners are equally spaced on the mel axis."""
    n_bins = n_fft // 2 + 1
    if n_mels < 1:
        raise InvalidConfig(f"n_mels must be >= 1, got {n_mels}")
    if n_mels > n_bins:
        raise InvalidConfig(f"n_mels={n_mels} exceeds the {n_bins} available frequency bins")
    f_max = sample_rate / 2 if f_max is None else f_max
    edges = mel_to_hz(np.linspace(mel_scale(f_min), mel_scale(f_max), n_mels + 2))
    bin_freqs = np.arange(n_bins) * sample_rate / n_fft
    return MelFilterbank(_triangles(edges, bin_freqs), f_min, f_max, edges)


def log_mel_image(spec: Spectrogram, fb: MelFilterbank, width: int = IMAGE_SIZE) -> np.ndarray:
    """Log-Mel image ``[n_mels, width]`` in [0, 1], low frequencies at row 0.

    The time axis is linearly interpolated from ``spec.n_frames`` columns to
    ``width``. A constant image comes back as all zeros.
    """
    if fb.weights.shape[1] != spec.n_bins:
        raise InvalidConfig(f"filterbank expects {fb.weights.shape[1]} bins, spectrogram has {spec.n_bins}")
    mel_power = fb.weights @ (spec.magnitudes**2)
    log_mel = np.log(mel_power + LOG_EPS)

    pos = np.linspace(0.0, spec.n_frames - 1, width)
    left = np.minimum(np.floor(pos).astype(np.int64), spec.n_frames - 1)
    right = np.minimum(left + 1, spec.n_frames - 1)
    frac = pos - left
    resized = log_mel[:, left] * (1.0 - frac) + log_mel[:, right] * frac

    lo, hi = resized.min(), resized.max()
    if hi - lo <= 0.0:
        return np.zeros_like(resized, dtype=np.float32)
    return ((resized - lo) / (hi - lo)).astype(np.float32)


def clip_to_image(clip: AudioClip, params: StftParams | None = None, fb: MelFilterbank | None = None) -> np.ndarray:
    """Full chain: standardize, STFT, Mel projection, log, resize, normalize."""
    params = params or StftParams()
    clip = standardize(clip)
    fb = fb or mel_filterbank(IMAGE_SIZE, params.n_fft, clip.sample_rate)
    return log_mel_image(stft(clip, params), fb)


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------


def augment(clip: AudioClip, spec: AugmentSpec, rng_seed: int = 0) -> AudioClip:
    """Apply one augmentation; output length and rate always equal the input's."""
    x = clip.samples
    if spec.kind == "noise":
        noise = np.random.default_rng(rng_seed).standard_normal(len(x))
        signal_power = np.mean(x**2)
        noise_power = signal_power / 10.0 ** (spec.noise_snr_db / 10.0)
        # rescale so the realized SNR is exact rather than exact in expectation
        noise *= np.sqrt(noise_power / np.mean(noise**2))
        return AudioClip(x + noise, clip.sample_rate)
    if spec.kind == "time_shift":
        shift = int(round(spec.shift_seconds * clip.sample_rate))
        out = np.zeros_like(x)
        if abs(shift) >= len(x):
            return AudioClip(out, clip.sample_rate)
        if shift >= 0:
            out[shift:] = x[: len(x) - shift]
        else:
            out[:shift] = x[-shift:]
        return AudioClip(out, clip.sample_rate)
    # speed: reinterpret the clip at rate*factor, so pitch scales by 1/factor
    y = resample(x, clip.sample_rate, clip.sample_rate * spec.speed_factor)
    y = y[: len(x)] if len(y) >= len(x) else np.concatenate([y, np.zeros(len(x) - len(y))])
    return AudioClip(y, clip.sample_rate)


def sample_augment_spec(kind: str, rng: np.random.Generator) -> AugmentSpec:
    """Draw augmentation parameters uniformly from their allowed ranges."""
    if kind == "noise":
        return AugmentSpec(kind, noise_snr_db=float(rng.uniform(15.0, 30.0)))
    if kind == "time_shift":
        return AugmentSpec(kind, shift_seconds=float(rng.uniform(-1.0, 1.0)))
    if kind == "speed":
        return AugmentSpec(kind, speed_factor=float(rng.uniform(0.9, 1.1)))
    raise InvalidAugment(f"unknown augmentation kind {kind!r}")


def clip_seed(global_seed: int, clip_id: str, kind: str) -> int:
    """Per-(clip, augmentation) seed, independent of processing order."""
    kind_index = AUGMENT_KINDS.index(kind) if kind in AUGMENT_KINDS else len(AUGMENT_KINDS)
    seq = np.random.SeedSequence([global_seed, zlib.crc32(clip_id.encode("utf-8")), kind_index])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------------------
# WAV I/O
# ---------------------------------------------------------------------------


def read_wav(path) -> AudioClip:
    """Read PCM16 / float32 WAV; stereo channels are averaged to mono."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(Path(path))
    except (ValueError, OSError, EOFError, struct.error) as exc:
        raise InvalidAudio(f"{path}: {exc}") from exc
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        x = data.astype(np.float64)
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    else:
        raise InvalidAudio(f"{path}: unsupported sample type {data.dtype}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        raise InvalidAudio(f"{path}: no samples")
    return AudioClip(x, int(rate))


def write_wav(path, clip: AudioClip, pcm16: bool = True) -> None:
    if pcm16:
        data = np.clip(np.round(clip.samples * 32767.0), -32768, 32767).astype(np.int16)
    else:
        data = clip.samples.astype(np.float32)
    wavfile.write(Path(path), clip.sample_rate, data)
