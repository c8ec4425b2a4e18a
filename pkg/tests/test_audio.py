import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import wavfile

from oracles import naive_dft_magnitudes, sinc_resample
from vser.audio import (
    AUGMENT_KINDS,
    AudioClip,
    AugmentSpec,
    Spectrogram,
    StftParams,
    augment,
    clip_seed,
    clip_to_image,
    frame_signal,
    log_mel_image,
    mel_filterbank,
    mel_scale,
    mel_to_hz,
    read_wav,
    resample,
    sample_augment_spec,
    standardize,
    stft,
    write_wav,
)
from vser.errors import InvalidAudio, InvalidAugment, InvalidConfig, InvalidFrequency

SR = 16_000


def tone(freq, seconds=4.0, rate=SR, amp=0.5):
    t = np.arange(int(seconds * rate)) / rate
    return AudioClip(amp * np.sin(2 * np.pi * freq * t), rate)


def peak_frequency(x, rate):
    spectrum = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    k = int(np.argmax(spectrum))
    # parabolic interpolation on the log magnitude around the peak bin
    a, b, c = np.log(spectrum[k - 1 : k + 2])
    offset = 0.5 * (a - c) / (a - 2 * b + c)
    return (k + offset) * rate / len(x)


# -- standardization and resampling --


def test_short_clip_is_zero_padded_to_four_seconds():
    out = standardize(tone(440, 2.0))
    assert len(out.samples) == 64_000
    assert np.all(out.samples[32_000:] == 0.0)
    assert np.any(out.samples[:32_000] != 0.0)


def test_four_second_clip_passes_through_unchanged():
    clip = tone(440, 4.0)
    out = standardize(clip)
    assert out.sample_rate == SR
    np.testing.assert_array_equal(out.samples, clip.samples)


def test_upsampled_long_clip_is_truncated_and_keeps_its_energy():
    rate = 8_000
    t = np.arange(8 * rate) / rate
    x = 0.4 * np.sin(2 * np.pi * 300 * t) + 0.2 * np.sin(2 * np.pi * 1700 * t + 0.3)
    out = standardize(AudioClip(x, rate))
    assert len(out.samples) == 64_000

    # The first 4 s of the input, sampled at 16 kHz, carry twice the samples
    # at the same mean power.
    energy_in = np.sum(x[: 4 * rate] ** 2) * (SR / rate)
    energy_out = np.sum(out.samples**2)
    assert abs(energy_out / energy_in - 1) < 0.01

    # Direct band-limited reconstruction over a window away from the ends.
    seg = x[: 4 * rate]
    oracle = sinc_resample(seg, rate, SR, 2 * len(seg))
    inner = slice(4_000, 60_000)
    assert np.max(np.abs(out.samples[inner] - oracle[inner])) < 2e-3


def test_downsampling_suppresses_content_above_the_new_nyquist():
    rate = 32_000
    t = np.arange(rate) / rate
    x = np.sin(2 * np.pi * 1000 * t) + np.sin(2 * np.pi * 12_000 * t)
    y = resample(x, rate, SR)
    spectrum = np.abs(np.fft.rfft(y * np.hanning(len(y))))
    freqs = np.fft.rfftfreq(len(y), 1 / SR)
    # 12 kHz would alias to 4 kHz if the cutoff were left at the old Nyquist
    alias = spectrum[np.argmin(np.abs(freqs - 4000))]
    assert alias < 0.05 * spectrum[np.argmin(np.abs(freqs - 1000))]


def test_standardize_rejects_empty_clip():
    with pytest.raises(InvalidAudio):
        standardize(AudioClip(np.zeros(0), SR))


# -- STFT --


def test_frame_count_for_four_seconds():
    spec = stft(AudioClip(np.zeros(64_000), SR))
    assert spec.magnitudes.shape == (513, 1001)
    assert np.all(spec.magnitudes == 0.0)


def test_frames_start_at_multiples_of_hop_and_zero_extend():
    params = StftParams()
    x = np.arange(1, 1001, dtype=float)
    frames = frame_signal(x, params)
    assert frames.shape == (1000 // 64 + 1, 512)
    np.testing.assert_array_equal(frames[3, :10], x[192:202])
    last = frames[-1]
    np.testing.assert_array_equal(last[: 1000 - 960], x[960:])
    assert np.all(last[1000 - 960 :] == 0.0)


def test_bin_centred_sine_peaks_at_bin_32_with_low_leakage():
    clip = tone(SR * 32 / 1024)
    mags = stft(clip).magnitudes
    frame = mags[:, 500]
    assert int(np.argmax(frame)) == 32
    far = np.abs(np.arange(513) - 32) > 8
    assert frame[far].max() <= 0.01 * frame[32]


def test_unit_impulse_gives_flat_first_frame_equal_to_window_start():
    x = np.zeros(64_000)
    x[0] = 1.0
    params = StftParams()
    mags = stft(AudioClip(x, SR), params).magnitudes
    np.testing.assert_allclose(mags[:, 0], params.window[0], atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_stft_matches_direct_dft_on_single_frame(seed):
    rng = np.random.default_rng(seed)
    params = StftParams()
    x = rng.standard_normal(512)
    mags = stft(AudioClip(x, SR), params).magnitudes
    expected = naive_dft_magnitudes(x * params.window, 1024)
    assert np.max(np.abs(mags[:, 0] - expected)) < 1e-5


@pytest.mark.parametrize("seed", range(3))
def test_parseval_on_interior_frame(seed):
    rng = np.random.default_rng(seed)
    params = StftParams()
    x = rng.standard_normal(4_000)
    m = 20  # frame [1280, 1792) lies inside the signal
    windowed = x[m * 64 : m * 64 + 512] * params.window
    n = params.n_fft
    for mags in (stft(AudioClip(x, SR), params).magnitudes[:, m], naive_dft_magnitudes(windowed, n)):
        power = mags**2
        full = power[0] + power[-1] + 2 * power[1:-1].sum()
        expected = n * np.sum(windowed**2)
        assert abs(full / expected - 1) < 1e-6


# -- mel scale and filterbank --


def test_mel_scale_reference_points():
    assert mel_scale(0.0) == 0.0
    assert mel_scale(700.0) == pytest.approx(781.1728387480312, abs=1e-9)
    assert mel_scale(1000.0) == pytest.approx(999.9855371396244, abs=1e-9)


def test_mel_scale_rejects_negative_frequency():
    with pytest.raises(InvalidFrequency):
        mel_scale(-1.0)
    with pytest.raises(InvalidFrequency):
        mel_scale(np.array([10.0, -0.5]))


@given(st.floats(0, 1e5), st.floats(0, 1e5))
def test_mel_scale_is_strictly_increasing(f1, f2):
    lo, hi = sorted((f1, f2))
    if hi - lo <= 1e-9 * max(hi, 1.0):
        return  # below float64 resolution of the output
    assert mel_scale(lo) < mel_scale(hi)


@given(st.floats(0, 2e4))
def test_mel_inverse_round_trip(f):
    assert mel_to_hz(mel_scale(f)) == pytest.approx(f, rel=1e-9, abs=1e-9)


def test_single_filter_spans_the_band_and_peaks_at_one():
    fb = mel_filterbank(1)
    assert fb.weights.shape == (1, 513)
    assert fb.edges_hz[0] == 0.0 and fb.edges_hz[-1] == pytest.approx(8000.0)
    assert fb.response(fb.centers_hz).max() == pytest.approx(1.0)


def test_filter_centres_are_equally_spaced_in_mel():
    fb = mel_filterbank(128, 1024, SR)
    assert fb.weights.shape == (128, 513)
    top = 2595 * math.log10(1 + 8000 / 700)
    mels = np.linspace(0, top, 130)[1:-1]
    oracle_hz = 700 * (10 ** (mels / 2595) - 1)
    np.testing.assert_allclose(fb.centers_hz, oracle_hz, rtol=1e-12)
    assert np.all(np.diff(fb.centers_hz) > 0)
    np.testing.assert_allclose(fb.response(fb.centers_hz).max(axis=1), 1.0)
    assert np.all(fb.weights <= 1.0) and np.all(fb.weights >= 0.0)


def test_adjacent_filters_cross_at_one_half():
    fb = mel_filterbank(128, 1024, SR)
    centres = fb.centers_hz
    for i in (0, 10, 63, 126):
        mid = 0.5 * (centres[i] + centres[i + 1])
        resp = fb.response(mid)[:, 0]
        assert resp[i] == pytest.approx(0.5, abs=1e-12)
        assert resp[i + 1] == pytest.approx(0.5, abs=1e-12)


def test_too_many_mel_bands_is_a_config_error():
    with pytest.raises(InvalidConfig):
        mel_filterbank(600, 1024, SR)


# -- log-Mel image --


def test_zero_spectrogram_gives_zero_image():
    fb = mel_filterbank()
    img = log_mel_image(Spectrogram(np.zeros((513, 1001)), SR, 1024), fb)
    assert img.shape == (128, 128)
    assert np.all(img == 0.0)


def test_image_is_min_max_normalized():
    rng = np.random.default_rng(1)
    img = clip_to_image(AudioClip(rng.standard_normal(64_000), SR))
    assert img.shape == (128, 128) and img.dtype == np.float32
    assert img.min() == 0.0 and img.max() == 1.0


def test_time_axis_is_linearly_interpolated():
    fb = mel_filterbank()
    mags = np.ones((513, 1001))
    mags[:, 500:] = 10.0
    row = log_mel_image(Spectrogram(mags, SR, 1024), fb).astype(np.float64)[64]
    # column c samples frame c * 1000 / 127; frames before 500 are dark
    pos = np.arange(128) * 1000 / 127
    expected = np.clip(pos - 499, 0, 1)
    rescaled = (row - row[0]) / (row[-1] - row[0])
    np.testing.assert_allclose(rescaled, expected, atol=1e-5)


@pytest.mark.parametrize("row", [20, 50, 90])
def test_tone_at_a_filter_centre_lights_up_that_row(row):
    fb = mel_filterbank()
    top = 2595 * math.log10(1 + 8000 / 700)
    freq = 700 * (10 ** (np.linspace(0, top, 130)[row + 1] / 2595) - 1)
    img = clip_to_image(tone(freq))
    row_energy = img[:, 10:118].mean(axis=1)
    assert int(np.argmax(row_energy)) == row
    assert fb.response(freq)[:, 0].argmax() == row


def test_one_kilohertz_tone_has_one_dominant_row():
    img = clip_to_image(tone(1000.0))
    row_energy = img[:, 10:118].mean(axis=1)
    # the filter with the largest weight at 1 kHz, found through the mel formula
    top = 2595 * math.log10(1 + 8000 / 700)
    centres_mel = np.linspace(0, top, 130)
    m = 2595 * math.log10(1 + 1000 / 700)
    expected = int(np.argmin(np.abs(centres_mel[1:-1] - m)))
    assert int(np.argmax(row_energy)) == expected
    runner_up = np.sort(row_energy)[-2]
    assert row_energy[expected] > runner_up


def test_image_is_deterministic():
    rng = np.random.default_rng(5)
    clip = AudioClip(rng.standard_normal(50_000), SR)
    np.testing.assert_array_equal(clip_to_image(clip), clip_to_image(clip))


# -- augmentation --


def test_zero_shift_is_identity():
    clip = tone(300)
    out = augment(clip, AugmentSpec("time_shift", shift_seconds=0.0))
    np.testing.assert_array_equal(out.samples, clip.samples)


@pytest.mark.parametrize("shift", [0.25, -0.5])
def test_time_shift_is_not_circular(shift):
    x = np.arange(1, 64_001, dtype=float)
    out = augment(AudioClip(x, SR), AugmentSpec("time_shift", shift_seconds=shift)).samples
    n = int(round(abs(shift) * SR))
    if shift > 0:
        assert np.all(out[:n] == 0.0)
        np.testing.assert_array_equal(out[n:], x[:-n])
    else:
        assert np.all(out[-n:] == 0.0)
        np.testing.assert_array_equal(out[:-n], x[n:])


@pytest.mark.parametrize("snr", [15.0, 20.0, 30.0])
def test_noise_is_added_at_the_requested_snr(snr):
    clip = standardize(tone(440, 3.0))
    out = augment(clip, AugmentSpec("noise", noise_snr_db=snr), rng_seed=3)
    noise = out.samples - clip.samples
    measured = 10 * np.log10(np.mean(clip.samples**2) / np.mean(noise**2))
    assert abs(measured - snr) < 0.5


def test_slowing_down_raises_pitch_by_the_inverse_factor():
    out = augment(tone(1000.0), AugmentSpec("speed", speed_factor=0.9))
    assert len(out.samples) == 64_000
    f = peak_frequency(out.samples[:30_000], SR)
    assert f == pytest.approx(1000 / 0.9, abs=3.0)


@settings(max_examples=25, deadline=None)
@given(
    kind=st.sampled_from(AUGMENT_KINDS),
    length=st.integers(200, 6_000),
    seed=st.integers(0, 2**32 - 1),
)
def test_augmentation_preserves_length_and_rate(kind, length, seed):
    rng = np.random.default_rng(seed)
    clip = AudioClip(rng.standard_normal(length), 8_000)
    spec = sample_augment_spec(kind, rng)
    out = augment(clip, spec, rng_seed=seed)
    assert len(out.samples) == length and out.sample_rate == 8_000


def test_augmentation_is_reproducible_from_its_seed():
    clip = standardize(tone(500, 2.0))
    for kind in AUGMENT_KINDS:
        s = clip_seed(7, "DC_a01", kind)
        a = augment(clip, sample_augment_spec(kind, np.random.default_rng(s)), rng_seed=s)
        b = augment(clip, sample_augment_spec(kind, np.random.default_rng(s)), rng_seed=s)
        np.testing.assert_array_equal(a.samples, b.samples)


def test_clip_seeds_differ_per_clip_and_kind():
    seeds = {clip_seed(0, cid, kind) for cid in ("a", "b", "c") for kind in AUGMENT_KINDS}
    assert len(seeds) == 9
    assert clip_seed(1, "a", "noise") != clip_seed(0, "a", "noise")


@pytest.mark.parametrize(
    "kwargs",
    [
        {"kind": "reverb"},
        {"kind": "noise", "noise_snr_db": 10.0},
        {"kind": "time_shift", "shift_seconds": 1.5},
        {"kind": "speed", "speed_factor": 1.2},
    ],
)
def test_out_of_range_augmentation_is_rejected(kwargs):
    with pytest.raises(InvalidAugment):
        AugmentSpec(**kwargs)


# -- WAV I/O --


def test_wav_round_trip_pcm16(tmp_path):
    clip = tone(440, 0.5, amp=0.3)
    write_wav(tmp_path / "a.wav", clip)
    back = read_wav(tmp_path / "a.wav")
    assert back.sample_rate == SR
    assert np.max(np.abs(back.samples - clip.samples)) < 1 / 32768 + 1e-9


def test_float_stereo_wav_is_averaged_to_mono(tmp_path):
    left = np.linspace(-0.5, 0.5, 100, dtype=np.float32)
    right = np.full(100, 0.25, dtype=np.float32)
    wavfile.write(tmp_path / "s.wav", 22_050, np.stack([left, right], axis=1))
    back = read_wav(tmp_path / "s.wav")
    assert back.sample_rate == 22_050
    np.testing.assert_allclose(back.samples, (left.astype(float) + 0.25) / 2, atol=1e-7)


def test_unreadable_wav_is_invalid_audio(tmp_path):
    (tmp_path / "bad.wav").write_bytes(b"RIFF0000WAVEjunk")
    with pytest.raises(InvalidAudio):
        read_wav(tmp_path / "bad.wav")
