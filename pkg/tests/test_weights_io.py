import json

import numpy as np
import pytest

from activecine.qc import ClassifierWeights
from activecine.recon import CascadeConfig, init_cascade_weights
from activecine.recon.convnet import init_convnet
from activecine.recon.weights_io import (
    WeightsFormatError,
    blob_path,
    load_classifier,
    load_weights,
    save_classifier,
    save_weights,
)


def _f32(w):
    for net in w.nets:
        for a in net.arrays():
            a[...] = a.astype(np.float32)
    w.lambdas = w.lambdas.astype(np.float32).astype(float)
    return w


@pytest.fixture
def weights():
    cfg = CascadeConfig(n_cascades=3, n_layers=3, channels=4, lambda_init=0.7)
    return _f32(init_cascade_weights(cfg, seed=2, zero_final=False))


def test_roundtrip_bit_identical(tmp_path, weights):
    path = tmp_path / "w.json"
    save_weights(path, weights)
    back = load_weights(path)
    assert back.config == weights.config
    assert back.lambdas.tobytes() == weights.lambdas.tobytes()
    for a, b in zip(weights.nets, back.nets):
        for p, q in zip(a.arrays(), b.arrays()):
            assert p.tobytes() == q.tobytes()
    assert blob_path(path).exists()


def test_save_is_deterministic(tmp_path, weights):
    save_weights(tmp_path / "a.json", weights)
    save_weights(tmp_path / "b.json", weights)
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_classifier_roundtrip(tmp_path):
    w = ClassifierWeights(init_convnet(2, 3, in_channels=6, out_channels=1, rng=1, zero_final=False), 6, "QC2")
    for a in w.net.arrays():
        a[...] = a.astype(np.float32)
    save_classifier(tmp_path / "c.json", w)
    back = load_classifier(tmp_path / "c.json")
    assert back.stage == "QC2" and back.in_channels == 6
    assert all(p.tobytes() == q.tobytes() for p, q in zip(w.net.arrays(), back.net.arrays()))


def test_missing_files(tmp_path, weights):
    with pytest.raises(FileNotFoundError):
        load_weights(tmp_path / "nope.json")
    save_weights(tmp_path / "w.json", weights)
    (tmp_path / "w.bin").unlink()
    with pytest.raises(FileNotFoundError):
        load_weights(tmp_path / "w.json")


def test_truncated_blob(tmp_path, weights):
    save_weights(tmp_path / "w.json", weights)
    blob = (tmp_path / "w.bin").read_bytes()
    (tmp_path / "w.bin").write_bytes(blob[:-4])
    with pytest.raises(WeightsFormatError):
        load_weights(tmp_path / "w.json")


@pytest.mark.parametrize("edit", [
    lambda m: m.update(format_version=9),
    lambda m: m.update(kind="classifier"),
    lambda m: m.update(lambdas=[1.0]),
    lambda m: m["arrays"][0]["shape"].__setitem__(0, 99),
])
def test_bad_manifest(tmp_path, weights, edit):
    save_weights(tmp_path / "w.json", weights)
    m = json.loads((tmp_path / "w.json").read_text())
    edit(m)
    (tmp_path / "w.json").write_text(json.dumps(m))
    with pytest.raises(WeightsFormatError):
        load_weights(tmp_path / "w.json")


def test_not_json(tmp_path):
    (tmp_path / "w.json").write_text("garbage")
    with pytest.raises(WeightsFormatError):
        load_weights(tmp_path / "w.json")
