import numpy as np
import pytest

from activecine.analysis.biomarkers import BiomarkerReport, compute_biomarkers
from activecine.segment import SegmentationMask


def test_ground_truth_ef(phantom):
    params, _, truth = phantom
    report = compute_biomarkers(SegmentationMask(truth.labels, params.dx, params.dy, params.thickness))
    assert report.LVEF == pytest.approx(60.0, abs=2.0)
    assert report.RVEF == pytest.approx(50.0, abs=2.0)
    assert report.LVEDV >= report.LVESV and report.RVEDV >= report.RVESV


def test_constant_mask_zero_ef():
    labels = np.zeros((4, 8, 8), int)
    labels[:, 2:5, 2:5] = 1
    labels[:, 6:8, 6:8] = 3
    r = compute_biomarkers(SegmentationMask(labels))
    assert r.LVEDV == r.LVESV and r.LVEF == 0.0 and r.RVEF == 0.0


def test_single_pixel_edge():
    labels = np.zeros((3, 4, 4), int)
    labels[1, 0, 0] = 1
    labels[:, 3, 3] = 3
    r = compute_biomarkers(SegmentationMask(labels, 2.0, 2.0, 5.0))
    assert r.LVEDV == pytest.approx(0.02) and r.LVESV == 0.0 and r.LVEF == 100.0
    assert r.lv_ed_frame == 1 and r.lv_es_frame == 0  # earliest frame on ties


def test_empty_ventricle_flagged():
    labels = np.zeros((2, 4, 4), int)
    labels[:, 0, 0] = 1
    r = compute_biomarkers(SegmentationMask(labels))
    assert r.RVEF is None and "rv-empty" in r.flags and r.LVEF == 0.0


def test_needs_two_frames():
    with pytest.raises(ValueError):
        compute_biomarkers(SegmentationMask(np.zeros((1, 4, 4), int)))


def test_frame_order_invariance(phantom):
    _, _, truth = phantom
    order = np.random.default_rng(0).permutation(truth.labels.shape[0])
    a = compute_biomarkers(SegmentationMask(truth.labels))
    b = compute_biomarkers(SegmentationMask(truth.labels[order]))
    assert a.values() == b.values()
    lv_area = (truth.labels == 1).sum(axis=(1, 2))
    assert lv_area[order[b.lv_ed_frame]] == lv_area[a.lv_ed_frame]


def test_myocardium_relabel_invariance(phantom):
    _, _, truth = phantom
    labels = truth.labels.copy()
    labels[labels == 2] = 0  # only LV and RV counts matter
    assert compute_biomarkers(SegmentationMask(labels)).values() == \
        compute_biomarkers(SegmentationMask(truth.labels)).values()


def test_report_roundtrip(phantom):
    _, _, truth = phantom
    r = compute_biomarkers(SegmentationMask(truth.labels))
    assert BiomarkerReport.from_dict(r.to_dict()) == r
