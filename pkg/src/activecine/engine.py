"""
Active-acquisition state machine.

For each scheduled scan time the session extends the radial trajectory,
ORs the new spokes into the sampling mask, undersamples one fixed
fully-sampled k-space (phase and noise are drawn once per session),
reconstructs, and gates the result: QC1 on the image, then segmentation and
QC2 on the image/mask pair. The session stops at the first scan time where
both gates pass.

Example::

    cfg = SessionConfig(phantom=PhantomParams(lv_ef=0.5), recon="cascade-tv")
    log = run_session(cfg)
    log.status, log.passed_at_s
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from activecine import qc
from activecine.analysis.biomarkers import compute_biomarkers
from activecine.analysis.metrics import LABELS, class_dsc, mae, psnr, ssim
from activecine.container import load_container
from activecine.kspace import (
    DEFAULT_FULL_SPOKES,
    SCHEMES,
    CineImage,
    acceleration_factor,
    add_noise,
    fft2c,
    make_trajectory,
    profiles_for_scan_time,
    rasterize_angles,
    synth_phase,
    undersample,
)
from activecine.phantom import PhantomParams, generate_phantom
from activecine.recon.cascade import CascadeConfig, reconstruct_cascade, tv_preset
from activecine.recon.operators import adjoint_operator
from activecine.recon.weights_io import load_classifier, load_weights
from activecine.segment import SegmentationMask, load_external_mask, segment_builtin

SCHEMA_VERSION = 1
RECON_METHODS = ("nufft", "cascade-tv", "cascade-conv")


class SessionError(RuntimeError):
    """A component failed mid-session; ``log`` holds the steps done so far."""

    def __init__(self, message, log):
        super().__init__(message)
        self.log = log


def parse_schedule(text):
    """'START:STOP:STEP' -> (start, stop, step) floats."""
    parts = str(text).split(":")
    if len(parts) != 3:
        raise ValueError(f"schedule must be START:STOP:STEP, got {text!r}")
    return tuple(float(p) for p in parts)


def schedule_times(schedule):
    start, stop, step = schedule
    if step <= 0:
        raise ValueError("schedule step must be positive")
    if stop < start:
        raise ValueError("schedule stop precedes start")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 9) for i in range(n)]


@dataclass(frozen=True)
class SessionConfig:
    phantom: PhantomParams | None = None
    container: str | None = None
    subject: str = "subject"
    recon: str = "nufft"
    weights: object = None  # path or CascadeWeights, for cascade-conv
    cascade: CascadeConfig | None = None  # overrides the TV preset
    qc1: str = "oracle"
    qc1_threshold: float | None = None
    qc1_weights: object = None
    qc2: str = "oracle"
    qc2_threshold: float | None = None
    qc2_weights: object = None
    schedule: tuple = (1.0, 30.0, 1.0)
    tr_ms: float = 2.6
    nt: int = 50
    scheme: str = "golden"
    seed: int = 0
    full_spokes: float = DEFAULT_FULL_SPOKES
    noise_psnr_db: float = 40.0
    phase_cutoff: float = 0.1
    dcf: str = "ring"

    def __post_init__(self):
        if (self.phantom is None) == (self.container is None):
            raise ValueError("give exactly one source: phantom params or a container path")
        if self.recon not in RECON_METHODS:
            raise ValueError(f"unknown recon method {self.recon!r}; choose from {RECON_METHODS}")
        if self.recon == "cascade-conv" and self.weights is None:
            raise ValueError("cascade-conv needs a weights file")
        for name in ("qc1", "qc2"):
            if getattr(self, name) not in qc.STRATEGIES:
                raise ValueError(f"unknown {name} strategy {getattr(self, name)!r}")
            if getattr(self, name) == "model" and getattr(self, f"{name}_weights") is None:
                raise ValueError(f"{name} model strategy needs classifier weights")
        self._check_threshold("qc1", self.qc1_threshold, -1.0 if self.qc1 == "oracle" else -np.inf)
        self._check_threshold("qc2", self.qc2_threshold, 0.0)
        if self.scheme not in SCHEMES or self.scheme == "fixed-step":
            raise ValueError(f"session scheme must be 'golden' or 'tiny-golden', got {self.scheme!r}")
        if not schedule_times(self.schedule):
            raise ValueError("empty schedule")
        if self.tr_ms <= 0 or self.nt < 2 or self.full_spokes <= 0:
            raise ValueError("TR, frame count and full-spoke count must be positive (nt >= 2)")

    @staticmethod
    def _check_threshold(name, value, lower):
        # thresholds above the score range are allowed: they force exhaustion
        if value is None:
            return
        if not np.isfinite(value) or value < lower:
            raise ValueError(f"{name} threshold {value} is outside the score range")

    def times(self):
        return schedule_times(self.schedule)

    def to_dict(self):
        d = {}
        for k in self.__dataclass_fields__:
            v = getattr(self, k)
            if k == "phantom" and v is not None:
                v = v.to_dict()
            elif k == "cascade" and v is not None:
                v = v.to_dict()
            elif k.endswith("weights") and v is not None and not isinstance(v, (str, Path)):
                v = "<in-memory>"
            elif isinstance(v, Path):
                v = str(v)
            elif isinstance(v, tuple):
                v = list(v)
            d[k] = v
        return d


# ---------------------------------------------------------------------------
# Data preparation
# ---------------------------------------------------------------------------


@dataclass
class Subject:
    """Everything a session needs about one dataset."""

    subject: str
    magnitude: CineImage
    gt_mask: SegmentationMask | None
    center: tuple
    max_radius: float
    gt_biomarkers: dict | None = None
    subject_seed: int = 0


def load_subject(config):
    if config.phantom is not None:
        image, truth = generate_phantom(config.phantom)
        gt = SegmentationMask(truth.labels, image.dx, image.dy, image.thickness)
        return Subject(config.subject, image, gt, truth.center, truth.max_radius,
                       truth.biomarkers.to_dict(), config.phantom.seed)
    path = Path(config.container)
    if not path.exists():
        raise FileNotFoundError(f"container not found: {path}")
    box = load_container(path)
    data = box["image"].astype(np.float64) if box["image"].dtype != np.complex64 else box["image"]
    image = CineImage(data, box.dx, box.dy, box.thickness, box.tr_ms)
    gt = None
    if "labels" in box:
        gt = load_external_mask(box, "labels", reference_shape=data.shape)
    attrs = box.attrs
    if "center" not in attrs or "max_radius" not in attrs:
        raise ValueError(f"{path}: container lacks heart-center priors (attrs 'center', 'max_radius')")
    return Subject(attrs.get("subject", config.subject), image, gt, tuple(attrs["center"]),
                   float(attrs["max_radius"]), attrs.get("biomarkers"), int(attrs.get("seed", 0)))


def simulate_acquisition(magnitude, config, subject_seed=0):
    """Phase + noise applied once: returns (reference image, full k-space)."""
    data = np.asarray(magnitude.data)
    if np.iscomplexobj(data):
        x = data.astype(complex)
    else:
        x = synth_phase(data, config.phase_cutoff, seed=[config.seed, subject_seed, 0])
    x = add_noise(x, config.noise_psnr_db, seed=[config.seed, subject_seed, 1])
    return x, fft2c(x)


def _resolve_weights(value, loader):
    if value is None or not isinstance(value, (str, Path)):
        return value
    path = Path(value)
    if not path.exists():
        raise FileNotFoundError(f"weights file not found: {path}")
    return loader(path)


def reconstruct(kdata, method, cascade=None, weights=None):
    if method == "nufft":
        return adjoint_operator(kdata, use_dcf=True)
    if method == "cascade-tv":
        return reconstruct_cascade(kdata, cascade or tv_preset())
    return reconstruct_cascade(kdata, weights.config, weights)


def image_metrics(reference, recon):
    ref, rec = np.abs(reference), np.abs(recon)
    return {"MAE": mae(ref, rec), "PSNR": psnr(ref, rec), "SSIM": ssim(ref, rec)}


# ---------------------------------------------------------------------------
# Session
# ---------------------------------------------------------------------------


@dataclass
class AcquisitionLog:
    subject: str
    recon: str
    config: dict
    steps: list = field(default_factory=list)
    status: str = "running"  # running | passed | exhausted | failed
    passed_at_s: float | None = None
    best_step: int | None = None
    biomarkers: dict | None = None
    gt_biomarkers: dict | None = None
    error: str | None = None
    final_image: np.ndarray | None = field(default=None, repr=False)
    final_mask: SegmentationMask | None = field(default=None, repr=False)

    def to_dict(self, include_timing=False):
        steps = self.steps if include_timing else [
            {k: v for k, v in s.items() if k != "wall_ms"} for s in self.steps]
        return _jsonable({
            "schema_version": SCHEMA_VERSION, "subject": self.subject, "recon": self.recon,
            "config": self.config, "steps": steps, "status": self.status,
            "passed_at_s": self.passed_at_s, "best_step": self.best_step,
            "biomarkers": self.biomarkers, "gt_biomarkers": self.gt_biomarkers, "error": self.error,
        })

    def to_json(self, include_timing=False):
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported acquisition log schema {d.get('schema_version')!r}")
        keys = ("subject", "recon", "config", "steps", "status", "passed_at_s", "best_step",
                "biomarkers", "gt_biomarkers", "error")
        return cls(**{k: d.get(k) for k in keys})


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    return obj


class Session:
    """One subject's acquisition, advanced one scan time at a time."""

    def __init__(self, config, subject=None):
        self.config = config
        self.subject = subject if subject is not None else load_subject(config)
        self.weights = _resolve_weights(config.weights, load_weights)
        self.qc1_weights = _resolve_weights(config.qc1_weights, load_classifier)
        self.qc2_weights = _resolve_weights(config.qc2_weights, load_classifier)
        self.reference, self.kspace = simulate_acquisition(
            self.subject.magnitude, config, self.subject.subject_seed)
        nt, ny, nx = self.reference.shape
        if nt != config.nt:
            raise ValueError(f"image has {nt} frames but the session expects nt = {config.nt}")
        self.mask = np.zeros(self.reference.shape, dtype=bool)
        self.P = 0
        self.log = AcquisitionLog(self.subject.subject, config.recon, config.to_dict(),
                                  gt_biomarkers=self.subject.gt_biomarkers)
        self._last_t = None
        self.latest = None  # (recon, mask) of the most recent step

    def _extend(self, P):
        if P > self.P:
            traj = make_trajectory(self.config.scheme, P, self.config.nt, self.config.tr_ms)
            rasterize_angles(traj.angles[:, self.P:], self.mask.shape[2], self.mask.shape[1], out=self.mask)
            self.P = P

    def step_once(self, t):
        """Run one scheduled scan time and append its record to the log."""
        if self._last_t is not None and t <= self._last_t:
            raise ValueError(f"scan time {t} s does not follow the previous step at {self._last_t} s")
        cfg = self.config
        start = time.perf_counter()
        P = profiles_for_scan_time(t, cfg.tr_ms, cfg.nt)
        self._extend(P)
        self._last_t = t
        kdata = undersample(self.kspace, self.mask, dcf=cfg.dcf)
        recon = reconstruct(kdata, cfg.recon, cfg.cascade, self.weights)
        image = CineImage(recon, *self._geometry())
        record = {"scan_time_s": float(t), "P": P,
                  "R": acceleration_factor(P, cfg.full_spokes),
                  "metrics": image_metrics(self.reference, recon),
                  "dsc": None, "biomarkers": None, "qc2": None}
        d1 = qc.qc1_evaluate(image, cfg.qc1, reference=self.reference, threshold=cfg.qc1_threshold,
                             weights=self.qc1_weights)
        record["qc1"] = d1.to_dict()
        mask = None
        if d1.passed:
            mask = segment_builtin(image, self.subject.center, self.subject.max_radius)
            if self.subject.gt_mask is not None:
                record["dsc"] = class_dsc(mask.labels, self.subject.gt_mask.labels)
            record["biomarkers"] = compute_biomarkers(mask).to_dict()
            record["segmentation_flags"] = list(mask.flags)
            d2 = qc.qc2_evaluate(image, mask, cfg.qc2, gt_mask=self.subject.gt_mask,
                                 threshold=cfg.qc2_threshold, weights=self.qc2_weights)
            record["qc2"] = d2.to_dict()
        record["wall_ms"] = 1000.0 * (time.perf_counter() - start)
        self.log.steps.append(record)
        self.latest = (recon, mask)
        return record

    def _geometry(self):
        m = self.subject.magnitude
        return m.dx, m.dy, m.thickness, self.config.tr_ms

    @staticmethod
    def passed(record):
        return bool(record["qc1"]["passed"] and record["qc2"] and record["qc2"]["passed"])

    def run(self):
        log = self.log
        try:
            for t in self.config.times():
                record = self.step_once(t)
                if self.passed(record):
                    log.status = "passed"
                    log.passed_at_s = record["scan_time_s"]
                    log.biomarkers = record["biomarkers"]
                    log.best_step = len(log.steps) - 1
                    log.final_image, log.final_mask = self.latest
                    return log
        except Exception as exc:
            log.status = "failed"
            log.error = f"{type(exc).__name__}: {exc}"
            raise SessionError(log.error, log) from exc
        log.status = "exhausted"
        scores = [s["qc1"]["score"] if s["qc1"]["score"] is not None else -np.inf for s in log.steps]
        log.best_step = int(np.argmax(scores)) if scores else None
        return log


def run_session(config, subject=None):
    """Run the full schedule, stopping at the first double pass."""
    return Session(config, subject).run()


# ---------------------------------------------------------------------------
# Ungated sweep (quality vs undersampling level)
# ---------------------------------------------------------------------------


def sweep(config, subject=None, methods=None, segment=True):
    """Evaluate every scheduled scan time for each method without QC gating.

    Returns a list of dicts with scan_time_s, P, R, method, image metrics
    and (when ``segment``) per-class DSC against the ground truth.
    """
    methods = methods or (config.recon,)
    base = Session(config, subject)
    rows = []
    for t in config.times():
        P = profiles_for_scan_time(t, config.tr_ms, config.nt)
        base._extend(P)
        kdata = undersample(base.kspace, base.mask, dcf=config.dcf)
        for method in methods:
            recon = reconstruct(kdata, method, config.cascade, base.weights)
            row = {"scan_time_s": float(t), "P": P, "R": acceleration_factor(P, config.full_spokes),
                   "method": method, **image_metrics(base.reference, recon)}
            if segment:
                image = CineImage(recon, *base._geometry())
                mask = segment_builtin(image, base.subject.center, base.subject.max_radius)
                if base.subject.gt_mask is not None:
                    d = class_dsc(mask.labels, base.subject.gt_mask.labels)
                    row.update({f"DSC_{k.upper()}": v for k, v in d.items()})
                    row["DSC_MEAN"] = float(np.mean([d[k] for k in LABELS]))
            rows.append(row)
    return rows


def with_recon(config, recon, **kw):
    return replace(config, recon=recon, **kw)
