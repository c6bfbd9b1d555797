import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from activecine.analysis.metrics import class_dsc, dsc, mae, mean_dsc, psnr, ssim


def test_mae_examples(rng):
    x = rng.uniform(size=(4, 4))
    assert mae(x, x) == 0.0
    assert mae(x, x + 0.5) == pytest.approx(0.5, abs=1e-15)
    y = rng.uniform(size=(4, 4))
    assert abs(mae(x, y) - oracles.mae(x, y)) <= 1e-12


@pytest.mark.parametrize("n", [8, 11, 16])
def test_metrics_match_oracles(rng, n):
    x, y = rng.uniform(size=(n, n)), rng.uniform(size=(n, n))
    assert abs(mae(x, y) - oracles.mae(x, y)) <= 1e-10
    assert abs(psnr(x, y) - oracles.psnr(x, y)) <= 1e-10
    assert abs(ssim(x, y) - oracles.ssim(x, y)) <= 1e-10
    a, b = rng.uniform(size=(n, n)) > 0.5, rng.uniform(size=(n, n)) > 0.4
    assert abs(dsc(a, b) - oracles.dsc(a, b)) <= 1e-10


def test_ssim_stack_averages_frames(rng):
    x, y = rng.uniform(size=(3, 12, 12)), rng.uniform(size=(3, 12, 12))
    x[:, 0, 0] = 1.0  # same L in every frame
    per_frame = [oracles.ssim(x[t], y[t]) for t in range(3)]
    assert ssim(x, y) == pytest.approx(np.mean(per_frame), abs=1e-12)


def test_ssim_examples(rng):
    x = rng.uniform(size=(16, 16))
    assert ssim(x, x) == 1.0
    assert ssim(x, x + 0.1) < 1.0
    w = np.indices((16, 16)).sum(axis=0) % 2 * 2.0 - 1.0  # every 8x8 window has zero mean
    assert ssim(w, -w) < 0


def test_ssim_zero_range():
    z = np.zeros((8, 8))
    assert ssim(z, z) == 1.0


def test_ssim_window_too_large():
    with pytest.raises(ValueError):
        ssim(np.ones((4, 4)), np.ones((4, 4)))


def test_psnr_examples():
    x = np.zeros((10, 10))
    x[0, 0] = 1.0
    assert psnr(x, x) == float("inf")
    y = x + 0.01  # MSE 1e-4
    assert psnr(x, y) == pytest.approx(40.0, abs=1e-9)


def test_dsc_examples():
    a = np.zeros(300, bool)
    b = np.zeros(300, bool)
    a[:100] = True
    b[50:150] = True
    assert dsc(a, a) == 1.0
    assert dsc(a, ~a) == 0.0
    assert dsc(a, b) == 0.5
    assert dsc(np.zeros(4, bool), np.zeros(4, bool)) == 1.0


def test_class_dsc_identity(rng):
    labels = rng.integers(0, 4, (2, 8, 8))
    assert class_dsc(labels, labels) == {"lv": 1.0, "myo": 1.0, "rv": 1.0}
    assert mean_dsc(labels, labels) == 1.0


@pytest.mark.parametrize("fn", [mae, psnr, ssim, dsc])
def test_shape_mismatch(fn):
    with pytest.raises(ValueError):
        fn(np.ones((8, 8)), np.ones((8, 9)))


_img = arrays(np.float64, (10, 10), elements=st.floats(0, 1))


@given(_img, _img)
@settings(max_examples=50, deadline=None)
def test_symmetry_and_ranges(x, y):
    assert mae(x, y) == mae(y, x) >= 0
    a, b = x > 0.5, y > 0.5
    assert dsc(a, b) == dsc(b, a)
    assert 0.0 <= dsc(a, b) <= 1.0
    if x.max() > 0:
        assert -1.0 - 1e-12 <= ssim(x, y) <= 1.0 + 1e-12
        assert ssim(x, y, data_range=1.0) == pytest.approx(ssim(y, x, data_range=1.0), abs=1e-12)
