import numpy as np
import pytest

from activecine.analysis.metrics import class_dsc, mean_dsc
from activecine.container import CineContainer, from_bytes, to_bytes
from activecine.kspace import (
    CineImage,
    fft2c,
    make_trajectory,
    rasterize_mask,
    undersample,
)
from activecine.recon import adjoint_operator
from activecine.phantom import segmentation_priors
from activecine.segment import EMPTY_FLAG, PARTIAL_FLAG, SegmentationMask, load_external_mask, segment_builtin


def _segment(params, image):
    pri = segmentation_priors(params)
    return segment_builtin(image, pri["center"], pri["max_radius"])


@pytest.fixture(scope="module")
def clean_mask(phantom):
    params, image, _ = phantom
    return _segment(params, image)


def test_labels_valid_and_shaped(phantom, clean_mask):
    _, image, _ = phantom
    assert clean_mask.shape == image.data.shape
    assert set(np.unique(clean_mask.labels)) <= {0, 1, 2, 3}
    assert clean_mask.flags == ()


def test_clean_phantom_dsc(phantom, clean_mask):
    _, _, truth = phantom
    per_class = class_dsc(clean_mask.labels, truth.labels)
    assert mean_dsc(clean_mask.labels, truth.labels) >= 0.9
    assert per_class["lv"] >= 0.9 and per_class["rv"] >= 0.85 and per_class["myo"] >= 0.8


def test_pure_noise_is_empty():
    rng = np.random.default_rng(0)
    image = CineImage(rng.standard_normal((3, 64, 64)) * 0.05)
    mask = segment_builtin(image, (32, 32), 20)
    assert mask.is_empty and mask.flags == (EMPTY_FLAG,)
    assert not mask.labels.any()


def test_flat_image_is_empty():
    mask = segment_builtin(CineImage(np.ones((2, 32, 32))), (16, 16), 10)
    assert mask.is_empty


def test_partial_flag():
    mask = SegmentationMask(np.zeros((3, 4, 4), int), empty_frames=np.array([True, False, False]))
    assert not mask.is_empty and mask.flags == (PARTIAL_FLAG,)


def test_undersampling_degrades_segmentation(phantom):
    params, image, truth = phantom
    k = fft2c(image.data)
    scores = {}
    for P in (7, 230):
        m = rasterize_mask(make_trajectory("golden", P, params.nt), params.nx, params.ny)
        recon = adjoint_operator(undersample(k, m), use_dcf=True)
        mask = _segment(params, CineImage(np.abs(recon)))
        scores[P] = mean_dsc(mask.labels, truth.labels)
    assert scores[7] < scores[230]


def test_deterministic_and_permutation_stable(phantom, clean_mask):
    params, image, _ = phantom
    order = np.random.default_rng(5).permutation(params.nt)[:8]
    sub = CineImage(image.data[order])
    permuted = _segment(params, sub)
    assert np.array_equal(permuted.labels, clean_mask.labels[order])
    assert np.array_equal(_segment(params, image).labels, clean_mask.labels)


def test_priors_outside_grid_rejected(phantom):
    _, image, _ = phantom
    with pytest.raises(ValueError):
        segment_builtin(image, (500, 10), 20)
    with pytest.raises(ValueError):
        segment_builtin(image, (40, 40), 0)


def test_external_mask_roundtrip(phantom):
    _, image, truth = phantom
    box = from_bytes(to_bytes(CineContainer({"labels": truth.labels.astype(np.uint8)})))
    mask = load_external_mask(box, "labels", reference_shape=image.data.shape)
    assert np.array_equal(mask.labels, truth.labels)


def test_external_mask_rejects_bad_labels():
    box = CineContainer({"labels": np.full((2, 4, 4), 4, np.uint8)})
    with pytest.raises(ValueError):
        load_external_mask(box, "labels")


def test_external_mask_rejects_shape_mismatch():
    box = CineContainer({"labels": np.zeros((2, 4, 4), np.uint8)})
    with pytest.raises(ValueError):
        load_external_mask(box, "labels", reference_shape=(2, 4, 5))


def test_external_mask_unknown_array():
    with pytest.raises(KeyError):
        load_external_mask(CineContainer({}), "labels")
