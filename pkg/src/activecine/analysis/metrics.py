"""Image and segmentation quality metrics (MAE, SSIM, PSNR, Dice)."""

from __future__ import annotations

import numpy as np

LABELS = {"lv": 1, "myo": 2, "rv": 3}


def _check_shapes(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def mae(ix, iy):
    """Mean absolute error over all pixels."""
    ix, iy = np.asarray(ix), np.asarray(iy)
    _check_shapes(ix, iy)
    return float(np.mean(np.abs(ix - iy)))


def psnr(reference, test):
    """Peak signal-to-noise ratio in dB; identical inputs give ``inf``.

    The peak is the maximum magnitude of ``reference``.
    """
    reference, test = np.asarray(reference), np.asarray(test)
    _check_shapes(reference, test)
    mse = float(np.mean(np.abs(reference - test) ** 2))
    if mse == 0.0:
        return float("inf")
    return 20.0 * np.log10(float(np.max(np.abs(reference)))) - 10.0 * np.log10(mse)


def _box_sums(x, win):
    """Sums over every fully contained win x win window of the last two axes."""
    c = np.cumsum(np.cumsum(x, axis=-2), axis=-1)
    c = np.pad(c, [(0, 0)] * (x.ndim - 2) + [(1, 0), (1, 0)])
    return c[..., win:, win:] - c[..., :-win, win:] - c[..., win:, :-win] + c[..., :-win, :-win]


def ssim(ix, iy, window=8, k1=0.01, k2=0.03, data_range=None):
    """Mean structural similarity over sliding uniform windows.

    Windows are ``window`` x ``window`` with stride 1 and must lie fully
    inside the image; statistics use population (1/n) moments. The dynamic
    range L defaults to max(ix), so ``ix`` is treated as the reference.
    Stacks of shape (..., ny, nx) are averaged over every window of every
    frame.
    """
    ix = np.asarray(ix, dtype=float)
    iy = np.asarray(iy, dtype=float)
    _check_shapes(ix, iy)
    if ix.ndim < 2:
        raise ValueError("ssim needs at least 2D inputs")
    if window > min(ix.shape[-2:]):
        raise ValueError(f"window {window} exceeds image size {ix.shape[-2:]}")
    L = float(np.max(ix)) if data_range is None else float(data_range)
    if L == 0.0:
        return 1.0 if np.array_equal(ix, iy) else 0.0
    c1 = (k1 * L) ** 2
    c2 = (k2 * L) ** 2
    n = float(window * window)
    mx = _box_sums(ix, window) / n
    my = _box_sums(iy, window) / n
    vx = _box_sums(ix * ix, window) / n - mx * mx
    vy = _box_sums(iy * iy, window) / n - my * my
    cxy = _box_sums(ix * iy, window) / n - mx * my
    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


def dsc(a, b):
    """Dice overlap of two binary regions; two empty regions score 1.0."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    _check_shapes(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def class_dsc(pred_labels, gt_labels):
    """Per-class Dice for LV, myocardium and RV label maps."""
    pred_labels = np.asarray(pred_labels)
    gt_labels = np.asarray(gt_labels)
    return {name: dsc(pred_labels == v, gt_labels == v) for name, v in LABELS.items()}


def mean_dsc(pred_labels, gt_labels):
    return float(np.mean(list(class_dsc(pred_labels, gt_labels).values())))
