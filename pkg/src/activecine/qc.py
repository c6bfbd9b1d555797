"""
Quality gates: QC1 on reconstructed images, QC2 on image/segmentation pairs.

Each gate supports three strategies:

``oracle``
    Reference-based (SSIM against the fully-sampled image for QC1, mean
    3-class DSC against the ground-truth mask for QC2). Only available in
    simulation, where the reference is known.
``heuristic``
    Reference-free image/shape statistics.
``model``
    Forward inference of a small conv classifier loaded from a weights file
    (global average pooling and a logistic output). Training is not done
    in this package.

Every decision records its score, threshold and strategy; ``passed`` is
always ``score >= threshold`` (all scores are higher-is-better), except
for the QC2 oracle whose DSC rule is a strict inequality by default.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from activecine.analysis.metrics import mean_dsc, ssim
from activecine.recon import convnet
from activecine.segment import LV, MYO, RV

STRATEGIES = ("oracle", "heuristic", "model")
QC1_ORACLE_THRESHOLD = 0.85
QC1_HEURISTIC_THRESHOLD = 0.999  # ~ SSIM 0.85 on 96x96 phantoms (97% agreement)
QC2_ORACLE_THRESHOLD = 0.7
QC2_HEURISTIC_THRESHOLD = 0.75
MODEL_THRESHOLD = 0.5
# DSC bins for balanced QC2 training sets; [0.6, 0.7) is deliberately absent
DEFAULT_DSC_BINS = ((0.0, 0.2), (0.2, 0.3), (0.3, 0.4), (0.4, 0.5), (0.5, 0.6), (0.7, 1.0))
# physiologic short-axis area bands in mm^2, per class
DEFAULT_AREA_BANDS = {LV: (150.0, 5000.0), MYO: (250.0, 4000.0), RV: (80.0, 7000.0)}


@dataclass(frozen=True)
class QCDecision:
    stage: str
    passed: bool
    score: float
    threshold: float
    strategy: str
    note: str = ""
    strict: bool = False

    def to_dict(self):
        d = asdict(self)
        if not np.isfinite(d["score"]):
            d["score"] = None
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("score") is None:
            d["score"] = float("nan")
        return cls(**d)


@dataclass(frozen=True)
class QCLabel:
    sample_id: str
    label: str  # "analyzable"/"non-analyzable" for QC1, "good"/"bad" for QC2
    provenance: str = "rule"
    score: float | None = None

    @property
    def positive(self):
        return self.label in ("analyzable", "good")


@dataclass
class ClassifierWeights:
    """Conv classifier: a conv stack ending in one linear channel, then GAP."""

    net: convnet.ConvNetWeights
    in_channels: int
    stage: str

    def validate(self):
        self.net.validate(self.in_channels, 1)
        return self


def _decide(stage, score, threshold, strategy, note="", strict=False):
    score = float(score)
    passed = score > threshold if strict else score >= threshold
    return QCDecision(stage, bool(passed), score, float(threshold), strategy, note, strict)


def _check_strategy(strategy):
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown QC strategy {strategy!r}; choose from {STRATEGIES}")


def _data(image):
    return np.asarray(getattr(image, "data", image))


# ---------------------------------------------------------------------------
# QC1
# ---------------------------------------------------------------------------


def artifact_score(image, patch=8):
    """1 - (corner-patch power / central-window power), pooled over frames.

    The corners sit outside the body, so their energy is noise plus
    streaks; the central quarter-area window holds the anatomy.
    """
    x = _data(image)
    ny, nx = x.shape[-2:]
    if ny < 2 * patch or nx < 2 * patch:
        raise ValueError("image too small for the corner patches")
    power = np.abs(x) ** 2
    corners = np.concatenate([
        power[..., :patch, :patch], power[..., :patch, -patch:],
        power[..., -patch:, :patch], power[..., -patch:, -patch:]], axis=-1)
    cy, cx = ny // 4, nx // 4
    centre = power[..., cy:cy + ny // 2, cx:cx + nx // 2]
    signal = float(centre.mean())
    if signal == 0:
        return 0.0
    return 1.0 - float(corners.mean()) / signal


def _classifier_probability(weights, channels):
    weights.validate()
    out, _ = convnet.net_forward(channels, weights.net)
    logit = float(out.mean())
    return 1.0 / (1.0 + np.exp(-logit))


def _image_channels(x):
    scale = np.max(np.abs(x))
    x = x / scale if scale > 0 else x
    return convnet.complex_to_channels(x.astype(complex))


def qc1_evaluate(image, strategy="oracle", reference=None, threshold=None, weights=None):
    """Gate a reconstruction on image quality."""
    _check_strategy(strategy)
    x = _data(image)
    if strategy == "oracle":
        if reference is None:
            raise ValueError("QC1 oracle needs the fully-sampled reference image")
        threshold = QC1_ORACLE_THRESHOLD if threshold is None else threshold
        score = ssim(np.abs(_data(reference)), np.abs(x))
        return _decide("QC1", score, threshold, strategy, "SSIM vs reference")
    if strategy == "heuristic":
        threshold = QC1_HEURISTIC_THRESHOLD if threshold is None else threshold
        return _decide("QC1", artifact_score(x), threshold, strategy, "corner artifact power")
    if weights is None:
        raise ValueError("QC1 model strategy needs classifier weights")
    threshold = MODEL_THRESHOLD if threshold is None else threshold
    prob = _classifier_probability(weights, _image_channels(x))
    return _decide("QC1", prob, threshold, strategy, "classifier probability")


# ---------------------------------------------------------------------------
# QC2
# ---------------------------------------------------------------------------


def _lv_single_component(labels):
    for frame in labels:
        _, n = ndimage.label(frame == LV)
        if n != 1:
            return False
    return True


def _myo_adjacency(labels):
    """Fraction of pixels bordering the LV (4-neighbourhood) that are myocardium."""
    lv = labels == LV
    struct = np.zeros((3, 3, 3), dtype=bool)
    struct[1] = ndimage.generate_binary_structure(2, 1)
    ring = ndimage.binary_dilation(lv, structure=struct) & ~lv
    total = ring.sum()
    if total == 0:
        return 0.0
    return float((labels[ring] == MYO).sum() / total)


def _areas_in_band(labels, pixel_mm2, bands):
    for cls, (lo, hi) in bands.items():
        area = (labels == cls).sum(axis=(1, 2)) * pixel_mm2
        if np.any(area < lo) or np.any(area > hi):
            return False
    return True


def _max_lv_change(labels):
    area = (labels == LV).sum(axis=(1, 2)).astype(float)
    if area.size < 2:
        return 0.0
    if np.any(area[:-1] == 0):
        return np.inf
    return float(np.max(np.abs(np.diff(area)) / area[:-1]))


def plausibility_checks(mask, area_bands=None, adjacency=0.9, max_change=0.2):
    """The four shape checks behind the QC2 heuristic, by name."""
    bands = DEFAULT_AREA_BANDS if area_bands is None else area_bands
    labels = mask.labels
    return {
        "lv_single_component": _lv_single_component(labels),
        "myo_adjacency": _myo_adjacency(labels) >= adjacency,
        "area_bands": _areas_in_band(labels, mask.dx * mask.dy, bands),
        "lv_area_change": _max_lv_change(labels) <= max_change,
    }


def _mask_channels(x, labels):
    onehot = np.stack([labels == c for c in range(4)], axis=-1).astype(float)
    return np.concatenate([_image_channels(x), onehot], axis=-1)


def qc2_evaluate(image, mask, strategy="oracle", gt_mask=None, threshold=None, weights=None,
                 area_bands=None, strict=True):
    """Gate an image/segmentation pair. Empty segmentations always fail."""
    _check_strategy(strategy)
    x = _data(image)
    if mask.labels.shape != x.shape:
        raise ValueError(f"mask shape {mask.labels.shape} does not match image shape {x.shape}")
    if strategy == "oracle" and gt_mask is None:
        raise ValueError("QC2 oracle needs the ground-truth mask")
    if strategy == "model" and weights is None:
        raise ValueError("QC2 model strategy needs classifier weights")
    default = {"oracle": QC2_ORACLE_THRESHOLD, "heuristic": QC2_HEURISTIC_THRESHOLD,
               "model": MODEL_THRESHOLD}[strategy]
    threshold = default if threshold is None else threshold
    if mask.is_empty:
        return QCDecision("QC2", False, 0.0, float(threshold), strategy, "segmentation empty",
                          strict and strategy == "oracle")
    if strategy == "oracle":
        score = mean_dsc(mask.labels, gt_mask.labels)
        return _decide("QC2", score, threshold, strategy, "mean DSC (LV, MYO, RV)", strict=strict)
    if strategy == "heuristic":
        checks = plausibility_checks(mask, area_bands)
        failed = [k for k, ok in checks.items() if not ok]
        note = "failed: " + ", ".join(failed) if failed else "all checks passed"
        return _decide("QC2", 0.25 * sum(checks.values()), threshold, strategy, note)
    prob = _classifier_probability(weights, _mask_channels(x, mask.labels))
    return _decide("QC2", prob, threshold, strategy, "classifier probability")


# ---------------------------------------------------------------------------
# Labels, balanced sampling, classifier metrics
# ---------------------------------------------------------------------------


def make_qc2_labels(pred_masks, gt_masks, threshold=QC2_ORACLE_THRESHOLD, sample_ids=None):
    """good iff mean 3-class DSC is strictly above ``threshold``."""
    pred_masks, gt_masks = list(pred_masks), list(gt_masks)
    if len(pred_masks) != len(gt_masks):
        raise ValueError(f"{len(pred_masks)} predictions vs {len(gt_masks)} ground-truth masks")
    if sample_ids is None:
        sample_ids = [str(i) for i in range(len(pred_masks))]
    out = []
    for sid, p, g in zip(sample_ids, pred_masks, gt_masks):
        score = mean_dsc(getattr(p, "labels", p), getattr(g, "labels", g))
        out.append(label_from_dsc(score, threshold, sid))
    return out


def label_from_dsc(score, threshold=QC2_ORACLE_THRESHOLD, sample_id="0"):
    return QCLabel(str(sample_id), "good" if score > threshold else "bad", "rule", float(score))


@dataclass(frozen=True)
class StratifiedSample:
    indices: tuple
    bin_counts: tuple
    quota: int
    flags: tuple = field(default=())


def _bin_index(score, bins):
    # half-open [lo, hi), except that the top edge of the last bin is kept
    for i, (lo, hi) in enumerate(bins):
        if lo <= score < hi or (i == len(bins) - 1 and score == hi):
            return i
    return None


def stratified_sample_by_dsc(scores, bins=DEFAULT_DSC_BINS, seed=0):
    """Draw the same number of samples from every DSC bin.

    The per-bin quota is the smallest bin population, so an empty bin
    empties the whole sample (flagged). Scores outside every bin are
    ignored. Returned indices are sorted by bin, then ascending.
    """
    bins = [tuple(map(float, b)) for b in bins]
    if not bins:
        raise ValueError("need at least one bin")
    for lo, hi in bins:
        if not lo < hi:
            raise ValueError(f"bin ({lo}, {hi}) is not increasing")
    for (_, h1), (l2, _) in zip(bins, bins[1:]):
        if l2 < h1:
            raise ValueError("bins must be ordered and non-overlapping")
    members = [[] for _ in bins]
    for i, s in enumerate(scores):
        b = _bin_index(float(s), bins)
        if b is not None:
            members[b].append(i)
    counts = tuple(len(m) for m in members)
    quota = min(counts)
    flags = ("empty-bin",) if quota == 0 else ()
    rng = np.random.default_rng(seed)
    chosen = []
    for m in members:
        if quota:
            chosen.extend(sorted(rng.choice(m, size=quota, replace=False).tolist()))
    return StratifiedSample(tuple(int(i) for i in chosen), counts, quota, flags)


def classifier_metrics(predictions, labels):
    """Sensitivity, specificity, balanced accuracy, precision and recall.

    Ratios with a zero denominator are returned as None.
    """
    p = np.asarray(predictions, dtype=bool)
    y = np.asarray(labels, dtype=bool)
    if p.shape != y.shape:
        raise ValueError(f"{p.size} predictions vs {y.size} labels")
    if p.size == 0:
        raise ValueError("need at least one prediction")
    tp = int(np.sum(p & y))
    tn = int(np.sum(~p & ~y))
    fp = int(np.sum(p & ~y))
    fn = int(np.sum(~p & y))

    def ratio(a, b):
        return a / b if b else None

    sen = ratio(tp, tp + fn)
    spe = ratio(tn, tn + fp)
    bacc = (sen + spe) / 2 if sen is not None and spe is not None else None
    return {"bacc": bacc, "sen": sen, "spe": spe, "precision": ratio(tp, tp + fp), "recall": sen,
            "tp": tp, "tn": tn, "fp": fp, "fn": fn}
