"""Sampling operator A = M F, its adjoint, and the gradient-descent DC step."""

from __future__ import annotations

import numpy as np

from activecine.kspace import fft2c, ifft2c


def forward_operator(x, mask):
    """A x: centered orthonormal FFT followed by the sampling mask."""
    x = np.asarray(x)
    mask = np.asarray(mask, dtype=bool)
    if x.shape != mask.shape:
        raise ValueError(f"image shape {x.shape} != mask shape {mask.shape}")
    return np.where(mask, fft2c(x), 0)


def adjoint_operator(kdata, use_dcf=False):
    """A* f, optionally density-compensated (the gridding/nuFFT baseline)."""
    data = np.where(kdata.mask, kdata.data, 0)
    if use_dcf:
        data = data * kdata.weights
    return ifft2c(data)


def normal_operator(x, mask):
    """A* A x, an orthogonal projection onto the sampled frequencies."""
    return ifft2c(np.where(mask, fft2c(x), 0))


def dc_residual(z, kdata):
    """A* (A z - f) without density compensation."""
    return ifft2c(np.where(kdata.mask, fft2c(z) - kdata.data, 0))


def dc_step(z, kdata, lam, eta=1.0):
    """One gradient step on the data term: z - eta * lam * A*(A z - f)."""
    if lam < 0 or eta < 0:
        raise ValueError("lambda and eta must be nonnegative")
    if lam == 0 or eta == 0:
        return np.array(z, copy=True)
    return z - (eta * lam) * dc_residual(z, kdata)


def dc_replace(z, kdata):
    """Hard data consistency: overwrite sampled k-space cells with f."""
    return ifft2c(np.where(kdata.mask, kdata.data, fft2c(z)))
