"""Ventricular volumes and ejection fractions from label maps."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from activecine.analysis.metrics import LABELS

BIOMARKERS = ("LVEDV", "LVESV", "LVEF", "RVEDV", "RVESV", "RVEF")


@dataclass(frozen=True)
class BiomarkerReport:
    """LV/RV end-diastolic and end-systolic volumes (ml) and EF (percent).

    An EF of ``None`` means the ventricle was never segmented; the reason
    is listed in ``flags``.
    """

    LVEDV: float
    LVESV: float
    LVEF: float | None
    RVEDV: float
    RVESV: float
    RVEF: float | None
    lv_ed_frame: int
    lv_es_frame: int
    rv_ed_frame: int
    rv_es_frame: int
    flags: tuple = field(default=())

    def values(self):
        return {name: getattr(self, name) for name in BIOMARKERS}

    def to_dict(self):
        d = asdict(self)
        d["flags"] = list(self.flags)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["flags"] = tuple(d.get("flags", ()))
        return cls(**d)


def ejection_fraction(edv, esv):
    """EF in percent, or None when EDV is zero."""
    if edv <= 0:
        return None
    return 100.0 * (edv - esv) / edv


def _ventricle(volumes):
    # np.argmax/argmin return the earliest index on ties
    ed = int(np.argmax(volumes))
    es = int(np.argmin(volumes))
    return float(volumes[ed]), float(volumes[es]), ed, es


def biomarkers_from_volumes(lv_volumes, rv_volumes, flags=()):
    """Assemble a report from per-frame LV and RV volume curves in ml."""
    lv_volumes = np.asarray(lv_volumes, dtype=float)
    rv_volumes = np.asarray(rv_volumes, dtype=float)
    flags = list(flags)
    lvedv, lvesv, lv_ed, lv_es = _ventricle(lv_volumes)
    rvedv, rvesv, rv_ed, rv_es = _ventricle(rv_volumes)
    lvef = ejection_fraction(lvedv, lvesv)
    rvef = ejection_fraction(rvedv, rvesv)
    if lvef is None:
        flags.append("lv-empty")
    if rvef is None:
        flags.append("rv-empty")
    return BiomarkerReport(
        LVEDV=lvedv, LVESV=lvesv, LVEF=lvef,
        RVEDV=rvedv, RVESV=rvesv, RVEF=rvef,
        lv_ed_frame=lv_ed, lv_es_frame=lv_es,
        rv_ed_frame=rv_ed, rv_es_frame=rv_es,
        flags=tuple(flags),
    )


def compute_biomarkers(mask):
    """Biomarkers from a segmentation with ``labels``, ``dx``, ``dy``, ``thickness``.

    Per-frame volume is the class voxel count times the voxel volume;
    EDV/ESV are the maximum/minimum over the cycle.
    """
    labels = np.asarray(mask.labels)
    if labels.ndim != 3 or labels.shape[0] < 2:
        raise ValueError("biomarkers need a label stack with at least two frames")
    voxel_ml = mask.dx * mask.dy * mask.thickness / 1000.0
    lv = (labels == LABELS["lv"]).sum(axis=(1, 2)) * voxel_ml
    rv = (labels == LABELS["rv"]).sum(axis=(1, 2)) * voxel_ml
    return biomarkers_from_volumes(lv, rv)
