"""
Cartesian k-space simulation of golden-angle radial cine acquisition.

Arrays follow a (nt, ny, nx) C-order layout, so the flat index of sample
(t, y, x) is (t * ny + y) * nx + x. k-space grids are centered: the DC cell
sits at (ny // 2, nx // 2).

Quick start::

    P = profiles_for_scan_time(4, tr_ms=2.6, nt=50)        # 30
    traj = make_trajectory("golden", P, nt=50, tr_ms=2.6)
    mask = rasterize_mask(traj, nx=96, ny=96)
    kdata = undersample(fft2c(image), mask)
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import fft as sp_fft

GOLDEN_ANGLE_DEG = 111.246117975
TINY_GOLDEN_ANGLE_DEG = 23.62815  # 7th tiny golden angle
DEFAULT_FULL_SPOKES = 293.7

SCHEMES = ("golden", "tiny-golden", "fixed-step")


class ScanTimeTooShortError(ValueError):
    """The scan time does not cover a single profile per frame."""


class EmptyFrameError(ValueError):
    """A frame of a sampling mask has no acquired cells."""


@dataclass(frozen=True)
class CineImage:
    """Complex 2D+time image stack with its acquisition geometry.

    ``data`` has shape (nt, ny, nx). Spacing and thickness are in mm,
    ``tr_ms`` in milliseconds.
    """

    data: np.ndarray
    dx: float = 1.8
    dy: float = 1.8
    thickness: float = 8.0
    tr_ms: float = 2.6

    def __post_init__(self):
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ValueError(f"cine data must be 3D (nt, ny, nx), got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("cine data contains non-finite values")

    @property
    def shape(self):
        return self.data.shape

    @property
    def nt(self):
        return self.data.shape[0]

    def with_data(self, data):
        return replace(self, data=data)


@dataclass(frozen=True)
class Trajectory:
    """Per-frame radial spoke angles plus the global acquisition order.

    ``angles`` has shape (nt, P), radians in [0, pi). ``order_frame``,
    ``order_angle`` and ``order_time_ms`` list every spoke in acquisition
    order (frames interleaved round-robin, one spoke every TR).
    """

    angles: np.ndarray
    scheme: str
    step_deg: float
    tr_ms: float
    order_frame: np.ndarray = field(repr=False)
    order_angle: np.ndarray = field(repr=False)
    order_time_ms: np.ndarray = field(repr=False)

    @property
    def nt(self):
        return self.angles.shape[0]

    @property
    def profiles(self):
        return self.angles.shape[1]


@dataclass(frozen=True)
class KSpaceData:
    """Undersampled centered Cartesian k-space with its mask and DCF.

    ``data`` is zero wherever ``mask`` is False; ``weights`` are zero
    off-mask and strictly positive on-mask.
    """

    data: np.ndarray
    mask: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if not (self.data.shape == self.mask.shape == self.weights.shape):
            raise ValueError("k-space data, mask and weights must share a shape")

    @property
    def shape(self):
        return self.data.shape


# ---------------------------------------------------------------------------
# Fourier transforms
# ---------------------------------------------------------------------------


@lru_cache(maxsize=16)
def _checkerboard(ny, nx):
    sign = (-1.0) ** ((nx // 2 + ny // 2) % 2)
    board = (-1.0) ** np.add.outer(np.arange(ny), np.arange(nx))
    board.setflags(write=False)
    return board, sign


def fft2c(x, inverse=False):
    """Centered orthonormal 2D FFT applied over the last two axes.

    Equivalent to ``fftshift(fft2(ifftshift(x)))`` with ``norm="ortho"``;
    for even grids the shifts are replaced by a checkerboard modulation.
    """
    x = np.asarray(x)
    ny, nx = x.shape[-2:]
    transform = sp_fft.ifft2 if inverse else sp_fft.fft2
    if ny % 2 == 0 and nx % 2 == 0:
        board, sign = _checkerboard(ny, nx)
        out = transform(x * board, norm="ortho", overwrite_x=True)
        out *= board * sign
    else:
        axes = (-2, -1)
        out = np.fft.fftshift(transform(np.fft.ifftshift(x, axes=axes), norm="ortho"), axes=axes)
    # a non-finite input poisons the sum; only then pay for the full scan
    if not np.isfinite(out.sum()) and not np.all(np.isfinite(x)):
        raise ValueError("fft2c input contains non-finite values")
    return out


def ifft2c(k):
    return fft2c(k, inverse=True)


# ---------------------------------------------------------------------------
# Acquisition bookkeeping
# ---------------------------------------------------------------------------


def profiles_for_scan_time(scan_time_s, tr_ms=2.6, nt=50):
    """Spokes per frame acquired in ``scan_time_s`` seconds.

    P = floor(scan_time * 1000 / (TR * nt)). Raises ScanTimeTooShortError
    when that is zero.
    """
    if scan_time_s <= 0 or tr_ms <= 0 or nt < 1:
        raise ValueError("scan time, TR and frame count must be positive")
    # tolerance keeps exact quotients such as 13 s -> 100 from flooring to 99
    P = int(np.floor(scan_time_s * 1000.0 / (tr_ms * nt) + 1e-9))
    if P == 0:
        raise ScanTimeTooShortError(
            f"{scan_time_s} s at TR {tr_ms} ms gives no profile for each of {nt} frames")
    return P


def acceleration_factor(P, full_spokes=DEFAULT_FULL_SPOKES):
    if P < 1 or full_spokes <= 0:
        raise ValueError("P must be >= 1 and full_spokes > 0")
    return full_spokes / P


def scheme_step_deg(scheme, step_deg=None):
    if scheme == "golden":
        return GOLDEN_ANGLE_DEG
    if scheme == "tiny-golden":
        return TINY_GOLDEN_ANGLE_DEG
    if scheme == "fixed-step":
        if step_deg is None or step_deg <= 0:
            raise ValueError("fixed-step scheme needs a positive step_deg")
        return float(step_deg)
    raise ValueError(f"unknown trajectory scheme {scheme!r}; expected one of {SCHEMES}")


def make_trajectory(scheme, P, nt, tr_ms=2.6, seed=None, step_deg=None):
    """Build a radial trajectory with ``P`` spokes in each of ``nt`` frames.

    Within a frame successive spokes advance by the scheme increment (mod
    180 deg); frame f starts at f * increment / nt. A non-None ``seed``
    rotates the whole pattern by a random angle. Spokes are acquired
    frame-interleaved, so the first ``P * nt`` spokes of a longer
    trajectory are exactly this one.
    """
    if P < 1 or nt < 1:
        raise ValueError("P and nt must be >= 1")
    step = np.deg2rad(scheme_step_deg(scheme, step_deg))
    offset = 0.0
    if seed is not None:
        offset = np.random.default_rng(seed).uniform(0.0, np.pi)
    frames = np.arange(nt)[:, None]
    j = np.arange(P)[None, :]
    angles = np.mod(offset + frames * step / nt + j * step, np.pi)

    k = np.arange(P * nt)
    order_frame = k % nt
    order_angle = angles[order_frame, k // nt]
    return Trajectory(
        angles=angles,
        scheme=scheme,
        step_deg=float(np.rad2deg(step)),
        tr_ms=float(tr_ms),
        order_frame=order_frame,
        order_angle=order_angle,
        order_time_ms=k * float(tr_ms),
    )


def _spoke_cells(angles, nx, ny):
    """Flat in-frame cell indices marked by the given spokes."""
    r_max = np.sqrt(2.0) * max(nx, ny) / 2.0
    n = int(np.floor(r_max / 0.5))
    s = 0.5 * np.arange(-n, n + 1)
    cx, cy = nx // 2, ny // 2
    x = np.floor(cx + np.cos(angles)[..., None] * s + 0.5).astype(np.int64)
    y = np.floor(cy + np.sin(angles)[..., None] * s + 0.5).astype(np.int64)
    ok = (x >= 0) & (x < nx) & (y >= 0) & (y < ny)
    return y, x, ok


def rasterize_angles(angles, nx, ny, out=None):
    """OR the nearest-cell rasterization of per-frame spokes into a mask.

    ``angles`` has shape (nt, P). Each spoke is marched through the grid
    center at half-cell steps out to sqrt(2) * max(nx, ny) / 2.
    """
    angles = np.asarray(angles, dtype=float)
    nt = angles.shape[0]
    if out is None:
        out = np.zeros((nt, ny, nx), dtype=bool)
    y, x, ok = _spoke_cells(angles, nx, ny)
    t = np.broadcast_to(np.arange(nt)[:, None, None], ok.shape)
    out[t[ok], y[ok], x[ok]] = True
    return out


def rasterize_mask(trajectory, nx, ny):
    if nx < 8 or ny < 8:
        raise ValueError("grid dimensions must be at least 8")
    return rasterize_angles(trajectory.angles, nx, ny)


# ---------------------------------------------------------------------------
# Undersampling and density compensation
# ---------------------------------------------------------------------------


def _kspace_radius(ny, nx):
    ky = np.arange(ny) - ny // 2
    kx = np.arange(nx) - nx // 2
    return np.hypot(ky[:, None], kx[None, :])


def density_compensation(mask, method="ring"):
    """Density-compensation weights for a Cartesian sampling mask.

    ``"ramp"`` uses max(|k|, 0.5) on acquired cells, rescaled per frame so
    the weights sum to the acquired-cell count. ``"ring"`` weights each
    acquired cell by the inverse fraction of its integer-radius ring that
    was acquired, which equals 1 wherever the ring is fully sampled and
    grows like pi * |k| / P along the outer spokes.
    """
    mask = np.asarray(mask, dtype=bool)
    counts = mask.sum(axis=(-2, -1))
    if np.any(counts == 0):
        raise EmptyFrameError("density compensation needs at least one acquired cell per frame")
    ny, nx = mask.shape[-2:]
    radius = _kspace_radius(ny, nx)

    if method == "ramp":
        w = np.where(mask, np.maximum(radius, 0.5), 0.0)
        return w * (counts / w.sum(axis=(-2, -1)))[..., None, None]
    if method == "ring":
        ring = np.floor(radius + 0.5).astype(np.int64).ravel()
        n_rings = ring.max() + 1
        total = np.bincount(ring, minlength=n_rings).astype(float)
        flat = mask.reshape(-1, ny * nx)
        w = np.zeros(flat.shape)
        for i, m in enumerate(flat):
            acquired = np.bincount(ring[m], minlength=n_rings)
            scale = np.divide(total, acquired, out=np.zeros(n_rings), where=acquired > 0)
            w[i] = np.where(m, scale[ring], 0.0)
        return w.reshape(mask.shape)
    raise ValueError(f"unknown density compensation method {method!r}")


def undersample(full_kspace, mask, dcf="ring"):
    """Keep the masked cells of a fully sampled k-space stack."""
    full_kspace = np.asarray(full_kspace)
    mask = np.array(mask, dtype=bool)  # a copy: callers may keep growing theirs
    if full_kspace.shape != mask.shape:
        raise ValueError(f"k-space shape {full_kspace.shape} != mask shape {mask.shape}")
    weights = density_compensation(mask, method=dcf)
    return KSpaceData(data=np.where(mask, full_kspace, 0), mask=mask, weights=weights)


# ---------------------------------------------------------------------------
# Synthetic phase and noise
# ---------------------------------------------------------------------------


def _lowpass_window(ny, nx, cutoff_fraction, taper=4.0):
    radius = cutoff_fraction * min(nx, ny) / 2.0
    r = _kspace_radius(ny, nx)
    w = np.zeros_like(r)
    w[r <= radius] = 1.0
    edge = (r > radius) & (r < radius + taper)
    w[edge] = 0.5 * (1.0 + np.cos(np.pi * (r[edge] - radius) / taper))
    return w


def synth_phase(magnitude, cutoff_fraction=0.1, seed=0, perturbation=0.1):
    """Attach a smooth synthetic phase to a real magnitude stack.

    The phase is the argument of a low-pass filtered copy of the image plus
    complex white Gaussian noise of standard deviation ``perturbation *
    max(magnitude)``; the filter is a centered circular window with a
    4-cell raised-cosine taper. The output magnitude is the input's.
    """
    magnitude = np.asarray(magnitude)
    if np.iscomplexobj(magnitude):
        if np.any(magnitude.imag != 0):
            raise ValueError("synth_phase expects a zero-phase (real) magnitude image")
        magnitude = magnitude.real
    if not 0 < cutoff_fraction <= 1:
        raise ValueError("cutoff_fraction must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    scale = perturbation * float(np.max(np.abs(magnitude)))
    noise = rng.standard_normal(magnitude.shape) + 1j * rng.standard_normal(magnitude.shape)
    window = _lowpass_window(*magnitude.shape[-2:], cutoff_fraction)
    smooth = ifft2c(fft2c(magnitude + scale / np.sqrt(2.0) * noise) * window)
    # round-off leaves ~1e-17 imaginary parts on real inputs; snap them so a
    # noise-free nonnegative image keeps exactly zero phase
    tol = 1e-9 * max(float(np.max(np.abs(smooth))), 1e-300)
    smooth = np.where(np.abs(smooth.imag) < tol, smooth.real, smooth)
    phase = np.angle(smooth)
    out = magnitude * np.exp(1j * phase)
    # zero-magnitude pixels would otherwise carry signed zeros
    out[magnitude == 0] = 0
    return out


def add_noise(image, target_psnr_db=40.0, seed=0):
    """Add complex white Gaussian noise hitting ``target_psnr_db``.

    The total noise standard deviation is max|I| * 10^(-PSNR/20), split
    evenly between real and imaginary parts; ``np.inf`` returns a copy.
    """
    image = np.asarray(image)
    if target_psnr_db <= 0:
        raise ValueError("target PSNR must be positive")
    if np.isinf(target_psnr_db):
        return image.astype(complex, copy=True)
    sigma = float(np.max(np.abs(image))) * 10.0 ** (-target_psnr_db / 20.0)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(image.shape) + 1j * rng.standard_normal(image.shape)
    return image + sigma / np.sqrt(2.0) * noise
