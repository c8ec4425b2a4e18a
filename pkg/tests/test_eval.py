import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_gaussian_smooth
from vser.errors import InvalidLabel, InvalidSigma, ShapeError
from vser.evaluation import (
    AttentionMask,
    emit_figure,
    evaluate_predictions,
    extract_attention_mask,
    format_percent,
    gaussian_smooth,
    paint_patches,
    predict,
    received_attention,
    smooth_raw,
    tile_images,
    weighted_accuracy,
)
from vser.formats import read_pgm
from vser.models import build_model, square_variant_spec, student_spec, teacher_spec


# -- accuracy --


def test_all_correct():
    assert weighted_accuracy([0, 1, 2], [0, 1, 2], 3) == 1.0


def test_hand_counted_example():
    assert weighted_accuracy([0, 1, 1, 2], [0, 1, 2, 2], 3) == 0.75


@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=1, max_size=200))
def test_weighted_accuracy_is_micro_accuracy(pairs):
    preds, labels = map(np.array, zip(*pairs))
    per_example = float(np.mean(preds == labels))
    assert weighted_accuracy(preds, labels, 7) == pytest.approx(per_example, abs=1e-15)
    report = evaluate_predictions(preds, labels, [f"c{i}" for i in range(7)])
    assert report.weighted_accuracy == pytest.approx(per_example, abs=1e-15)
    np.testing.assert_array_equal(report.confusion.sum(axis=1), report.per_class_total)
    assert report.confusion.sum() == len(pairs)


def test_accuracy_input_errors():
    with pytest.raises(ShapeError):
        weighted_accuracy([0, 1], [0], 2)
    with pytest.raises(ShapeError):
        weighted_accuracy([], [], 2)
    with pytest.raises(InvalidLabel):
        weighted_accuracy([0, 5], [0, 1], 2)


@pytest.mark.parametrize(
    "fraction, text",
    [(0.97395, "97.39%"), (0.9739, "97.39%"), (0.9947, "99.47%"), (1.0, "100.00%"), (0.0, "0.00%"), (0.12349, "12.34%")],
)
def test_percent_is_truncated(fraction, text):
    assert format_percent(fraction) == text


def test_report_text_has_a_confusion_row_per_class():
    report = evaluate_predictions([0, 1, 1, 0], [0, 1, 0, 0], ["anger", "fear"])
    lines = report.to_text().splitlines()
    assert lines[0] == "weighted_accuracy\t75.00%"
    assert lines[3] == "anger\t2\t3\t2\t1"
    assert lines[4] == "fear\t1\t1\t0\t1"


def test_predict_handles_batches_and_empty_input():
    model = build_model(student_spec(3), 0)
    imgs = np.random.default_rng(0).random((5, 128, 128), dtype=np.float32)
    preds = predict(model, imgs, batch_size=2)
    assert preds.shape == (5,) and preds.max() < 3
    assert predict(model, imgs[:0]).shape == (0,)


# -- attention masks --


def test_received_attention_averages_heads_then_queries():
    attn = torch.zeros(2, 3, 3)
    attn[0, :, 0] = 1.0  # head 0: everyone looks at token 0
    attn[1] = 1 / 3  # head 1: uniform
    np.testing.assert_allclose(received_attention(attn), [2 / 3, 1 / 6, 1 / 6])


def test_uniform_attention_gives_zero_mask():
    raw = paint_patches(np.full(128, 1 / 128), 128, 1)
    assert raw.shape == (128, 128)
    assert np.all(gaussian_smooth(AttentionMask(raw)).mask == 0.0)


def test_square_patches_paint_squares():
    values = np.arange(64, dtype=float)
    raw = paint_patches(values, 16, 16)
    assert raw[16:32, 32:48].min() == raw[16:32, 32:48].max() == 10.0


@pytest.fixture(scope="module")
def student():
    return build_model(student_spec(7), seed=2)


def test_vertical_patch_masks_are_constant_per_column(student):
    img = np.random.default_rng(0).random((128, 128), dtype=np.float32)
    mask = extract_attention_mask(student, img).mask
    assert mask.shape == (128, 128)
    assert np.all(mask == mask[0:1, :])
    assert mask.min() == 0.0 and mask.max() == 1.0


def test_masks_are_deterministic_and_batch_independent(student):
    rng = np.random.default_rng(1)
    imgs = rng.random((3, 128, 128), dtype=np.float32)
    a = extract_attention_mask(student, imgs[1]).mask
    b = extract_attention_mask(student, imgs[1]).mask
    assert np.array_equal(a, b)
    with torch.no_grad():
        _, _, stack = student(torch.from_numpy(imgs)[:, None])
    batched = paint_patches(received_attention(stack[-1][1]), 128, 1)
    batched = (batched - batched.min()) / (batched.max() - batched.min())
    np.testing.assert_allclose(a, batched, atol=1e-5)


def test_student_mask_columns_follow_input_columns():
    model = build_model(student_spec(7), seed=3).double()
    img = np.random.default_rng(2).random((128, 128))
    perm = np.random.default_rng(3).permutation(128)
    a = extract_attention_mask(model, torch.from_numpy(img)).mask
    b = extract_attention_mask(model, torch.from_numpy(img[:, perm])).mask
    np.testing.assert_allclose(a[:, perm], b, atol=1e-9)


def test_square_variant_mask_and_teacher_mask_shapes():
    img = np.random.default_rng(4).random((128, 128), dtype=np.float32)
    sq = extract_attention_mask(build_model(square_variant_spec(7), 0), img).mask
    assert sq.shape == (128, 128) and np.all(sq[:16, :16] == sq[0, 0])
    tm = extract_attention_mask(build_model(teacher_spec(7), 0), img).mask
    assert np.all(tm == tm[0:1, :])


# -- smoothing --


def test_constant_mask_stays_constant():
    raw = smooth_raw(np.full((20, 30), 0.7), 2.0)
    np.testing.assert_allclose(raw, 0.7, rtol=1e-14)
    assert np.all(gaussian_smooth(AttentionMask(np.full((20, 30), 0.7))).mask == 0.0)


def test_impulse_response_peaks_at_centre_and_decays_along_axes():
    m = np.zeros((41, 41))
    m[20, 20] = 1.0
    out = smooth_raw(m, 2.0)
    assert out.argmax() == 20 * 41 + 20
    row, col = out[20, 20:], out[20:, 20]
    assert np.all(np.diff(row) <= 0) and np.all(np.diff(col) <= 0)
    # interior impulse: the response is the normalized 2-D Gaussian itself
    d = np.arange(-6, 7)
    g = np.exp(-0.5 * (d[:, None] ** 2 + d[None, :] ** 2) / 4.0)
    np.testing.assert_allclose(out[14:27, 14:27], g / g.sum(), rtol=1e-12)


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
def test_smoothing_matches_brute_force(sigma):
    m = np.random.default_rng(int(sigma * 10)).random((16, 13))
    np.testing.assert_allclose(smooth_raw(m, sigma), brute_gaussian_smooth(m, sigma), atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (24, 24), elements=st.floats(0, 1)), st.floats(0.3, 3.0))
def test_smoothing_conserves_mass_and_commutes_with_transpose(m, sigma):
    raw = smooth_raw(m, sigma)
    total = m.sum()
    assert abs(raw.sum() - total) <= 1e-3 * max(total, 1e-12)
    np.testing.assert_allclose(smooth_raw(m.T, sigma), raw.T, atol=1e-12)


def test_mass_is_conserved_for_border_impulse():
    m = np.zeros((128, 128))
    m[0, 127] = 3.0
    assert smooth_raw(m, 2.0).sum() == pytest.approx(3.0, rel=1e-12)


@pytest.mark.parametrize("sigma", [0.0, -1.0, float("nan")])
def test_nonpositive_sigma(sigma):
    with pytest.raises(InvalidSigma):
        smooth_raw(np.zeros((4, 4)), sigma)


def test_smoothed_mask_records_its_sigma():
    m = AttentionMask(np.random.default_rng(0).random((10, 10)))
    out = gaussian_smooth(m, 1.5)
    assert out.smoothed and out.sigma == 1.5
    assert out.mask.min() == 0.0 and out.mask.max() == 1.0


# -- figures --


def test_single_image_figure(tmp_path):
    img = np.random.default_rng(0).random((128, 128))
    path = emit_figure([img], 1, 1, tmp_path / "one.pgm")
    back = read_pgm(path)
    assert back.shape == (128, 128)
    assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12


def test_two_by_two_canvas_has_white_separators(tmp_path):
    imgs = [np.full((128, 128), v) for v in (0.0, 0.25, 0.5, 0.75)]
    back = read_pgm(emit_figure(imgs, 2, 2, tmp_path / "grid.pgm"))
    assert back.shape == (258, 258)
    assert np.all(back[128:130, :] == 1.0) and np.all(back[:, 128:130] == 1.0)
    assert back[0, 0] == 0.0 and back[257, 257] == round(0.75 * 255) / 255
    assert back[0, 200] == round(0.25 * 255) / 255


def test_figure_layout_errors():
    with pytest.raises(ShapeError):
        tile_images([np.zeros((4, 4))] * 3, 2, 2)
    with pytest.raises(ShapeError):
        tile_images([np.zeros((4, 4)), np.zeros((4, 5))], 1, 2)
