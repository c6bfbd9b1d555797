"""
Four-class cardiac segmentation (background, LV, myocardium, RV).

The built-in segmenter is a classical intensity/shape-prior pipeline run
frame by frame on magnitude images:

1. three-class Otsu quantisation (dark / mid / bright) inside a disc of
   interest around the heart-center prior;
2. the bright component containing (or nearest to) the center is the LV;
3. the largest elongated bright component left of the LV is the RV;
4. rays cast outward from the LV centroid collect the mid-intensity wall;
5. each class is closed with a radius-1 disc.

It is deliberately simple: clean images segment well, while streak
artifacts break the intensity classes, which is what the QC2 gate is meant
to catch. Learned segmenters can be plugged in via ``load_external_mask``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage.filters import threshold_multiotsu
from skimage.measure import regionprops
from skimage.morphology import disk

BACKGROUND, LV, MYO, RV = 0, 1, 2, 3
EMPTY_FLAG = "segmentation-empty"
PARTIAL_FLAG = "segmentation-partial"

_FOUR_CONN = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class SegmentationMask:
    """Label stack of shape (nt, ny, nx) with values in {0, 1, 2, 3}.

    ``empty_frames`` marks frames where no LV could be found (left all
    background). The mask counts as empty only when every frame is.
    """

    labels: np.ndarray
    dx: float = 1.8
    dy: float = 1.8
    thickness: float = 8.0
    empty_frames: np.ndarray | None = field(default=None)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3:
            raise ValueError(f"label stack must be 3D (nt, ny, nx), got shape {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() > RV):
            bad = sorted(set(np.unique(labels).tolist()) - {0, 1, 2, 3})
            raise ValueError(f"labels must lie in {{0, 1, 2, 3}}, found {bad}")
        if not np.array_equal(labels, np.asarray(labels).astype(np.uint8)):
            raise ValueError("labels must be integers")
        object.__setattr__(self, "labels", labels.astype(np.uint8))
        if self.empty_frames is None:
            object.__setattr__(self, "empty_frames", np.zeros(labels.shape[0], dtype=bool))

    @property
    def shape(self):
        return self.labels.shape

    @property
    def is_empty(self):
        return bool(np.all(self.empty_frames))

    @property
    def flags(self):
        if self.is_empty:
            return (EMPTY_FLAG,)
        return (PARTIAL_FLAG,) if np.any(self.empty_frames) else ()


# ---------------------------------------------------------------------------
# Built-in segmenter
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SegmenterSettings:
    min_lv_area: float = 40.0  # px
    min_lv_solidity: float = 0.8
    min_rv_area: float = 15.0  # px
    min_rv_eccentricity: float = 0.6
    max_wall: float = 10.0  # px, ray length beyond the LV boundary
    n_rays: int = 180
    closing_radius: int = 1


def _check_priors(shape, center, max_radius):
    ny, nx = shape
    cx, cy = center
    if not (0 <= cx < nx and 0 <= cy < ny):
        raise ValueError(f"heart center ({cx}, {cy}) lies outside the {nx}x{ny} grid")
    if max_radius <= 0:
        raise ValueError("max_radius must be positive")


def _pick_lv(components, n, center, settings):
    cx, cy = center
    ic, jc = int(round(cy)), int(round(cx))
    ny, nx = components.shape
    hit = components[min(max(ic, 0), ny - 1), min(max(jc, 0), nx - 1)]
    props = {p.label: p for p in regionprops(components)}
    if hit:
        candidates = [hit]
    else:
        # order by distance of the nearest pixel to the center
        yy, xx = np.nonzero(components)
        d = np.hypot(yy - cy, xx - cx)
        best = {}
        for lab, dist in zip(components[yy, xx], d):
            best[lab] = min(best.get(lab, np.inf), dist)
        candidates = sorted(best, key=lambda lab: (best[lab], lab))
    for lab in candidates:
        p = props[lab]
        if p.area >= settings.min_lv_area and p.solidity >= settings.min_lv_solidity:
            return lab
    return None


def _pick_rv(components, lv_label, lv_centroid, settings):
    best, best_area = None, 0
    for p in regionprops(components):
        if p.label == lv_label or p.area < settings.min_rv_area:
            continue
        if p.centroid[1] >= lv_centroid[1]:
            continue
        if p.eccentricity < settings.min_rv_eccentricity:
            continue
        if p.area > best_area:
            best, best_area = p.label, p.area
    return best


def _cast_wall(lv, mid, centroid, reach, settings):
    """Mid-intensity pixels met on rays leaving the LV, up to ``max_wall`` px.

    Each ray keeps the unbroken run of mid pixels that starts right after
    its last LV sample.
    """
    ny, nx = lv.shape
    cy, cx = centroid
    theta = np.linspace(0.0, 2 * np.pi, settings.n_rays, endpoint=False)[:, None]
    dist = np.arange(0.0, reach + settings.max_wall + 1.0, 0.5)[None, :]
    ys = np.floor(cy + dist * np.sin(theta) + 0.5).astype(int)
    xs = np.floor(cx + dist * np.cos(theta) + 0.5).astype(int)
    ok = (ys >= 0) & (ys < ny) & (xs >= 0) & (xs < nx)
    ys, xs = np.where(ok, ys, 0), np.where(ok, xs, 0)
    inside = ok & lv[ys, xs]
    has_lv = inside.any(axis=1)
    steps = np.arange(dist.shape[1])[None, :]
    last_in = np.where(has_lv, dist.shape[1] - 1 - np.argmax(inside[:, ::-1], axis=1), -1)[:, None]
    limit = np.take_along_axis(np.broadcast_to(dist, inside.shape), np.maximum(last_in, 0), axis=1)
    beyond = steps > last_in
    cand = ok & mid[ys, xs] & (dist <= limit + settings.max_wall)
    run = np.logical_and.accumulate(cand | ~beyond, axis=1) & beyond & has_lv[:, None]
    wall = np.zeros_like(lv)
    wall[ys[run], xs[run]] = True
    return wall


def _refined_thresholds(values):
    """Otsu thresholds moved to the midpoints between the Otsu class medians.

    Midpoints between class levels split partial-volume pixels by majority
    content, matching how the reference labels are drawn; medians keep air
    and rim pixels from dragging the levels. Returns
    (dark/mid, mid/bright, dark/bright) thresholds.
    """
    t_low, t_high = threshold_multiotsu(values, classes=3)
    classes = np.digitize(values, [t_low, t_high])
    means = [np.median(values[classes == c]) if np.any(classes == c) else None for c in range(3)]
    if any(m is None for m in means):
        return t_low, t_high, 0.5 * (t_low + t_high)
    m0, m1, m2 = means
    return 0.5 * (m0 + m1), 0.5 * (m1 + m2), 0.5 * (m0 + m2)


def segment_frame(magnitude, center, max_radius, settings=SegmenterSettings()):
    """Segment one magnitude frame. Returns (labels, found_lv)."""
    ny, nx = magnitude.shape
    yy, xx = np.mgrid[:ny, :nx]
    roi = np.hypot(yy - center[1], xx - center[0]) <= max_radius
    labels = np.zeros((ny, nx), dtype=np.uint8)
    values = magnitude[roi]
    if values.size < 3 or np.ptp(values) == 0:
        return labels, False
    try:
        t_low, t_high, t_edge = _refined_thresholds(values)
    except ValueError:
        return labels, False
    bright = roi & (magnitude > t_high)
    mid = roi & (magnitude > t_low) & ~bright

    components, n = ndimage.label(bright, structure=_FOUR_CONN)
    if n == 0:
        return labels, False
    lv_label = _pick_lv(components, n, center, settings)
    if lv_label is None:
        return labels, False
    lv = ndimage.binary_fill_holes(components == lv_label)
    lv_centroid = np.argwhere(lv).mean(axis=0)
    rv_label = _pick_rv(components, lv_label, lv_centroid, settings)
    rv = components == rv_label if rv_label is not None else np.zeros_like(lv)
    myo = _cast_wall(lv, mid, lv_centroid, max_radius, settings)
    if rv_label is not None:
        # RV/background partial-volume rim: more blood than background
        rim = ndimage.binary_dilation(rv, structure=_FOUR_CONN) & ~rv & ~lv & ~myo
        rv |= rim & roi & (magnitude > t_edge)

    se = disk(settings.closing_radius)
    rv = ndimage.binary_closing(rv, structure=se)
    myo = ndimage.binary_closing(myo, structure=se)
    lv = ndimage.binary_closing(lv, structure=se)
    labels[rv] = RV
    labels[myo] = MYO
    labels[lv] = LV
    return labels, True


def segment_builtin(image, center, max_radius, settings=SegmenterSettings()):
    """Segment every frame of a CineImage given heart-center/radius priors.

    ``center`` is (x, y) in pixels. Frames where no plausible LV is found
    stay all-background and are marked in ``empty_frames``.
    """
    data = np.abs(np.asarray(image.data))
    _check_priors(data.shape[1:], center, max_radius)
    labels = np.zeros(data.shape, dtype=np.uint8)
    empty = np.zeros(data.shape[0], dtype=bool)
    for t in range(data.shape[0]):
        labels[t], found = segment_frame(data[t], center, max_radius, settings)
        empty[t] = not found
    return SegmentationMask(labels, dx=image.dx, dy=image.dy, thickness=image.thickness,
                            empty_frames=empty)


def load_external_mask(container, array_name, reference_shape=None):
    """Read a label stack from a CineContainer and validate it.

    Raises KeyError for an unknown array and ValueError for invalid labels
    or a shape that disagrees with ``reference_shape``.
    """
    labels = np.asarray(container[array_name])
    if reference_shape is not None and labels.shape != tuple(reference_shape):
        raise ValueError(f"mask {array_name!r} has shape {labels.shape}, image is {tuple(reference_shape)}")
    if np.iscomplexobj(labels) or not np.all(np.mod(labels, 1) == 0):
        raise ValueError(f"mask {array_name!r} must hold integer labels")
    return SegmentationMask(labels.astype(np.int64), dx=container.dx, dy=container.dy,
                            thickness=container.thickness)
