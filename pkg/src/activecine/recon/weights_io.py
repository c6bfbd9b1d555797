"""
Weights files: a JSON manifest plus a raw little-endian float32 blob.

``save_weights("model.json", w)`` writes ``model.json`` and ``model.bin``.
The manifest lists every parameter array in blob order, with its name,
shape and byte offset. Arrays are laid out as::

    net 0: layer 0 kernel (out, in, k, k), layer 0 bias, layer 1 kernel, ...
    net 1: ...

Stage lambdas and the cascade configuration are echoed in the manifest.
Parameters are stored as float32; values that are already float32
representable (as ``train_cascade`` output is) round-trip bit-exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from activecine.container import atomic_write_bytes, atomic_write_text
from activecine.recon.cascade import CascadeConfig, CascadeWeights
from activecine.recon.convnet import ConvLayer, ConvNetWeights

FORMAT = "activecine-weights"
FORMAT_VERSION = 1
BLOB_DTYPE = np.dtype("<f4")


class WeightsFormatError(ValueError):
    pass


def blob_path(manifest_path):
    return Path(manifest_path).with_suffix(".bin")


def _pack(nets):
    entries, chunks, offset = [], [], 0
    net_meta = []
    for n, net in enumerate(nets):
        layers = []
        for i, layer in enumerate(net.layers):
            layers.append({"kernel_shape": list(layer.kernel.shape), "activation": layer.activation})
            for part, arr in (("kernel", layer.kernel), ("bias", layer.bias)):
                raw = np.ascontiguousarray(arr, dtype=BLOB_DTYPE).tobytes()
                entries.append({"name": f"net{n}.layer{i}.{part}", "shape": list(arr.shape),
                                "offset": offset, "nbytes": len(raw)})
                chunks.append(raw)
                offset += len(raw)
        net_meta.append({"layers": layers})
    return net_meta, entries, b"".join(chunks)


def _unpack(net_meta, entries, blob):
    by_name = {e["name"]: e for e in entries}
    nets = []
    for n, meta in enumerate(net_meta):
        layers = []
        for i, lm in enumerate(meta["layers"]):
            parts = {}
            for part in ("kernel", "bias"):
                name = f"net{n}.layer{i}.{part}"
                if name not in by_name:
                    raise WeightsFormatError(f"manifest lists no blob entry {name!r}")
                e = by_name[name]
                shape = tuple(e["shape"])
                count = int(np.prod(shape, dtype=np.int64))
                if count * BLOB_DTYPE.itemsize != e["nbytes"]:
                    raise WeightsFormatError(f"{name}: shape {shape} disagrees with {e['nbytes']} bytes")
                if e["offset"] + e["nbytes"] > len(blob):
                    raise WeightsFormatError(f"{name}: blob is truncated")
                arr = np.frombuffer(blob, dtype=BLOB_DTYPE, count=count, offset=e["offset"])
                parts[part] = arr.astype(np.float64).reshape(shape)
            if list(parts["kernel"].shape) != lm["kernel_shape"]:
                raise WeightsFormatError(f"net {n} layer {i}: kernel shape disagrees with manifest")
            layers.append(ConvLayer(parts["kernel"], parts["bias"], lm["activation"]))
        nets.append(ConvNetWeights(layers))
    return nets


def _write(path, manifest, blob):
    path = Path(path)
    manifest = dict(manifest, blob=blob_path(path).name)
    atomic_write_bytes(blob_path(path), blob)
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _read(path, kind):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"weights manifest not found: {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise WeightsFormatError(f"{path}: not a JSON manifest ({exc})") from exc
    if manifest.get("format") != FORMAT or manifest.get("format_version") != FORMAT_VERSION:
        raise WeightsFormatError(f"{path}: unsupported weights format "
                                 f"{manifest.get('format')!r} v{manifest.get('format_version')!r}")
    if manifest.get("kind") != kind:
        raise WeightsFormatError(f"{path}: holds {manifest.get('kind')!r} weights, expected {kind!r}")
    bpath = path.parent / manifest["blob"]
    if not bpath.exists():
        raise FileNotFoundError(f"weights blob not found: {bpath}")
    return manifest, bpath.read_bytes()


def save_weights(path, weights):
    """Write cascade weights (conv nets, stage lambdas, config echo)."""
    net_meta, entries, blob = _pack(weights.nets)
    lambdas = np.asarray(weights.lambdas, dtype=BLOB_DTYPE).astype(float).tolist()
    manifest = {
        "format": FORMAT, "format_version": FORMAT_VERSION, "kind": "cascade",
        "byte_order": "little", "dtype": "float32",
        "config": weights.config.to_dict(), "lambdas": lambdas,
        "nets": net_meta, "arrays": entries,
    }
    _write(path, manifest, blob)


def load_weights(path):
    manifest, blob = _read(path, "cascade")
    config = CascadeConfig.from_dict(manifest["config"])
    nets = _unpack(manifest["nets"], manifest["arrays"], blob)
    lambdas = np.asarray(manifest["lambdas"], dtype=float)
    if lambdas.shape != (config.n_cascades,):
        raise WeightsFormatError(f"{path}: {lambdas.size} lambdas for {config.n_cascades} stages")
    for net in nets:
        net.validate(2, 2)
    return CascadeWeights(nets, lambdas, config)


def save_classifier(path, weights):
    """Write a QC classifier (single conv net ending in one logit channel)."""
    net_meta, entries, blob = _pack([weights.net])
    manifest = {
        "format": FORMAT, "format_version": FORMAT_VERSION, "kind": "classifier",
        "byte_order": "little", "dtype": "float32",
        "stage": weights.stage, "in_channels": weights.in_channels,
        "nets": net_meta, "arrays": entries,
    }
    _write(path, manifest, blob)


def load_classifier(path):
    from activecine.qc import ClassifierWeights

    manifest, blob = _read(path, "classifier")
    (net,) = _unpack(manifest["nets"], manifest["arrays"], blob)
    return ClassifierWeights(net, int(manifest["in_channels"]), manifest["stage"]).validate()
