"""
Dynamic short-axis cardiac phantom with analytic ground truth.

The LV blood pool is a disc whose radius follows a raised-cosine cycle
between end-diastole (frame 0) and end-systole (frame floor(s * nt)). The
myocardium is the surrounding annulus with constant area. The RV is a
crescent: a disc centered one epicardial radius to the left of the LV,
minus the epicardial disc, with its radius solved per frame so the
crescent area follows the same cycle and hits the RV EF target. Everything
sits in an elliptical torso of background tissue; the image corners are
air.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.optimize import brentq

from activecine.analysis.biomarkers import biomarkers_from_volumes
from activecine.kspace import CineImage

BACKGROUND, LV, MYO, RV = 0, 1, 2, 3
RV_ED_SCALE = 1.4
TORSO_SEMI_AXES = (0.46, 0.42)
SUBSAMPLES = 4


@dataclass(frozen=True)
class PhantomParams:
    """Phantom geometry and contrast; lengths in pixels unless noted."""

    nx: int = 96
    ny: int = 96
    nt: int = 50
    dx: float = 1.8  # mm
    dy: float = 1.8  # mm
    thickness: float = 8.0  # mm
    lv_radius: float = 14.0
    lv_ef: float = 0.60
    rv_ef: float = 0.55
    wall_thickness: float = 4.0
    blood: float = 1.0
    myocardium: float = 0.5
    background: float = 0.15
    center: tuple | None = None
    systole_fraction: float = 0.35
    texture: float = 0.1
    seed: int = 0

    def to_dict(self):
        d = asdict(self)
        d["center"] = None if self.center is None else list(self.center)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("center") is not None:
            d["center"] = tuple(d["center"])
        return cls(**d)


@dataclass(frozen=True)
class GroundTruth:
    labels: np.ndarray
    lv_area_mm2: np.ndarray
    myo_area_mm2: np.ndarray
    rv_area_mm2: np.ndarray
    biomarkers: object
    center: tuple
    max_radius: float
    es_frame: int
    meta: dict = field(default_factory=dict)


def _validate(p):
    if p.nx < 32 or p.ny < 32:
        raise ValueError("phantom grid must be at least 32 x 32")
    if p.nt < 2:
        raise ValueError("phantom needs at least 2 frames")
    for name in ("lv_ef", "rv_ef", "systole_fraction"):
        v = getattr(p, name)
        if not 0 < v < 1:
            raise ValueError(f"{name} must lie strictly between 0 and 1, got {v}")
    if p.wall_thickness <= 0 or p.lv_radius <= 0:
        raise ValueError("LV radius and wall thickness must be positive")
    if min(p.dx, p.dy, p.thickness) <= 0:
        raise ValueError("spacing and thickness must be positive")


def es_frame(params):
    return int(min(max(np.floor(params.systole_fraction * params.nt), 1), params.nt - 1))


def cycle_profile(params):
    """Per-frame contraction profile: 1 at end-diastole, 0 at end-systole."""
    t = np.arange(params.nt, dtype=float)
    e = es_frame(params)
    systole = 0.5 * (1.0 + np.cos(np.pi * t / e))
    diastole = 0.5 * (1.0 - np.cos(np.pi * (t - e) / (params.nt - e)))
    return np.where(t <= e, systole, diastole)


def lens_area(r1, r2, d):
    """Overlap area of two discs with radii r1, r2 and center distance d."""
    if d >= r1 + r2:
        return 0.0
    if d <= abs(r1 - r2):
        return np.pi * min(r1, r2) ** 2
    a1 = r1 * r1 * np.arccos((d * d + r1 * r1 - r2 * r2) / (2 * d * r1))
    a2 = r2 * r2 * np.arccos((d * d + r2 * r2 - r1 * r1) / (2 * d * r2))
    k = 0.5 * np.sqrt((-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2))
    return a1 + a2 - k


def crescent_area(rv_radius, epi_radius):
    """RV crescent area: disc centered on the epicardium minus the epicardial disc."""
    return np.pi * rv_radius ** 2 - lens_area(rv_radius, epi_radius, epi_radius)


def geometry(params):
    """Per-frame analytic radii and areas (pixel units)."""
    _validate(params)
    g = cycle_profile(params)
    r_ed = params.lv_radius
    r_es = r_ed * np.sqrt(1.0 - params.lv_ef)
    lv_r = r_es + (r_ed - r_es) * g
    myo_area = np.pi * ((r_ed + params.wall_thickness) ** 2 - r_ed ** 2)
    epi_r = np.sqrt(lv_r ** 2 + myo_area / np.pi)

    rv_ed_area = crescent_area(RV_ED_SCALE * r_ed, epi_r[0])
    rho_ed = np.sqrt(rv_ed_area)
    rho_es = np.sqrt((1.0 - params.rv_ef) * rv_ed_area)
    rv_area = (rho_es + (rho_ed - rho_es) * g) ** 2
    rv_area[0] = rv_ed_area
    rv_r = np.empty(params.nt)
    for t in range(params.nt):
        if t == 0:
            rv_r[t] = RV_ED_SCALE * r_ed
            continue
        rv_r[t] = brentq(lambda R: crescent_area(R, epi_r[t]) - rv_area[t],
                         1e-9, 4.0 * RV_ED_SCALE * r_ed, xtol=1e-13, rtol=1e-15)
    return {
        "profile": g,
        "lv_radius": lv_r,
        "epi_radius": epi_r,
        "rv_radius": rv_r,
        "lv_area": np.pi * lv_r ** 2,
        "myo_area": np.full(params.nt, myo_area),
        "rv_area": rv_area,
    }


def heart_center(params):
    if params.center is not None:
        return float(params.center[0]), float(params.center[1])
    # shift right so the LV + RV bounding box is centered in the field of view
    return params.nx / 2.0 + RV_ED_SCALE * params.lv_radius / 2.0, params.ny / 2.0


def segmentation_priors(params):
    """Heart center and a radius enclosing the whole heart, for segmenters."""
    cx, cy = heart_center(params)
    epi = params.lv_radius + params.wall_thickness
    return {"center": (cx, cy), "max_radius": epi + 2 * RV_ED_SCALE * params.lv_radius + 3.0}


def _torso(params, x, y):
    a = TORSO_SEMI_AXES[0] * params.nx
    b = TORSO_SEMI_AXES[1] * params.ny
    x0, y0 = (params.nx - 1) / 2.0, (params.ny - 1) / 2.0
    return ((x - x0) / a) ** 2 + ((y - y0) / b) ** 2


def _check_fits(params, geo):
    cx, cy = heart_center(params)
    theta = np.linspace(0, 2 * np.pi, 720, endpoint=False)
    margin = 2.0
    for t in range(params.nt):
        re, R = geo["epi_radius"][t], geo["rv_radius"][t]
        for (ox, oy, rad) in ((cx, cy, re), (cx - re, cy, R)):
            px = ox + (rad + margin) * np.cos(theta)
            py = oy + (rad + margin) * np.sin(theta)
            if np.any(_torso(params, px, py) > 1.0):
                raise ValueError(
                    f"heart geometry overflows the torso at frame {t}: LV radius "
                    f"{params.lv_radius}, wall {params.wall_thickness}, center ({cx:.1f}, {cy:.1f}) "
                    f"on a {params.nx}x{params.ny} grid")


def _texture(params):
    if params.texture == 0:
        return np.ones((params.ny, params.nx))
    rng = np.random.default_rng(params.seed)
    field_ = gaussian_filter(rng.standard_normal((params.ny, params.nx)), sigma=params.nx / 12.0)
    field_ /= np.max(np.abs(field_))
    return 1.0 + params.texture * field_


def _render_frame(params, geo, t, tex):
    s = SUBSAMPLES
    off = (np.arange(s) + 0.5) / s - 0.5
    xs = (np.arange(params.nx)[:, None] + off[None, :]).ravel()
    ys = (np.arange(params.ny)[:, None] + off[None, :]).ravel()
    X, Y = np.meshgrid(xs, ys)
    cx, cy = heart_center(params)
    d = np.hypot(X - cx, Y - cy)
    re = geo["epi_radius"][t]
    in_rv = np.hypot(X - (cx - re), Y - cy) < geo["rv_radius"][t]

    label = np.zeros(X.shape, dtype=np.uint8)
    label[in_rv] = RV
    label[d < re] = MYO
    label[d < geo["lv_radius"][t]] = LV

    torso = _torso(params, X, Y) <= 1.0
    bg = np.repeat(np.repeat(tex, s, axis=0), s, axis=1) * params.background
    value = np.where(torso, bg, 0.0)
    value[label == MYO] = params.myocardium
    value[(label == LV) | (label == RV)] = params.blood

    shape = (params.ny, s, params.nx, s)
    image = value.reshape(shape).mean(axis=(1, 3))
    counts = np.stack([(label == c).reshape(shape).sum(axis=(1, 3)) for c in range(4)]).astype(float)
    coverage = counts.sum(axis=(1, 2)) / (s * s)
    # ties go to the higher class on even pixels and the lower on odd ones
    parity = np.where(np.add.outer(np.arange(params.ny), np.arange(params.nx)) % 2 == 0, 1.0, -1.0)
    counts += 1e-3 * parity * np.arange(4)[:, None, None]
    return image, np.argmax(counts, axis=0).astype(np.uint8), coverage


def generate_phantom(params):
    """Render the phantom cine and its ground truth.

    Returns a zero-phase magnitude CineImage and a GroundTruth with
    majority-vote label maps (4 x 4 subpixel sampling), analytic areas in
    mm^2 and analytic biomarkers. Raises ValueError when the heart does not
    fit inside the torso.
    """
    geo = geometry(params)
    _check_fits(params, geo)
    tex = _texture(params)
    frames, labels, coverage = zip(*(_render_frame(params, geo, t, tex) for t in range(params.nt)))
    px_area = params.dx * params.dy
    coverage = np.stack(coverage) * px_area
    lv_ml = geo["lv_area"] * px_area * params.thickness / 1000.0
    rv_ml = geo["rv_area"] * px_area * params.thickness / 1000.0
    priors = segmentation_priors(params)
    truth = GroundTruth(
        labels=np.stack(labels),
        lv_area_mm2=geo["lv_area"] * px_area,
        myo_area_mm2=geo["myo_area"] * px_area,
        rv_area_mm2=geo["rv_area"] * px_area,
        biomarkers=biomarkers_from_volumes(lv_ml, rv_ml),
        center=priors["center"],
        max_radius=priors["max_radius"],
        es_frame=es_frame(params),
        meta={"lv_radius": geo["lv_radius"], "rv_radius": geo["rv_radius"],
              "epi_radius": geo["epi_radius"],
              # subpixel-coverage areas (mm^2) per frame, columns = class label
              "coverage_mm2": coverage},
    )
    image = CineImage(np.stack(frames), dx=params.dx, dy=params.dy, thickness=params.thickness)
    return image, truth


def analytic_volumes(params, frame):
    """Analytic (LV, RV) volumes in ml for one frame."""
    if not 0 <= frame < params.nt:
        raise IndexError(f"frame {frame} outside 0..{params.nt - 1}")
    geo = geometry(params)
    scale = params.dx * params.dy * params.thickness / 1000.0
    return float(geo["lv_area"][frame] * scale), float(geo["rv_area"][frame] * scale)
