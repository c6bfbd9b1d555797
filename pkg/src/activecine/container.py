"""
Single-file cine container: magic bytes, a length-prefixed JSON manifest and
a raw little-endian payload.

Layout::

    b"ACINE\\0\\0\\0"  (8 bytes)
    manifest length  (uint32, little-endian)
    manifest         (UTF-8 JSON, sorted keys)
    payload          (arrays back to back, offsets relative to payload start)

Arrays are stored row-major, so a (nt, ny, nx) stack has element index
(t * ny + y) * nx + x. Complex arrays are interleaved (real, imag) float32.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"ACINE\x00\x00\x00"
FORMAT_VERSION = 1
DTYPES = {"c64": np.dtype("<c8"), "f32": np.dtype("<f4"), "u8": np.dtype("u1")}


class ContainerError(ValueError):
    """Base class for malformed container files."""


class ContainerVersionError(ContainerError):
    """Unknown format version, magic or dtype tag."""


class ContainerShapeError(ContainerError):
    """Manifest shapes disagree with byte lengths or offsets."""


class ContainerTruncatedError(ContainerError):
    """File ends before the manifest or payload is complete."""


@dataclass
class CineContainer:
    arrays: dict = field(default_factory=dict)
    dx: float = 1.8
    dy: float = 1.8
    thickness: float = 8.0
    tr_ms: float = 2.6
    attrs: dict = field(default_factory=dict)

    def __getitem__(self, name):
        try:
            return self.arrays[name]
        except KeyError:
            raise KeyError(f"container has no array {name!r}; available: {sorted(self.arrays)}") from None

    def __contains__(self, name):
        return name in self.arrays


def dtype_tag(arr):
    if np.iscomplexobj(arr):
        return "c64"
    if arr.dtype == np.uint8 or arr.dtype == np.bool_:
        return "u8"
    if np.issubdtype(arr.dtype, np.integer):
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise ValueError("integer arrays must fit in uint8")
        return "u8"
    return "f32"


def _encode(arr):
    tag = dtype_tag(arr)
    return tag, np.ascontiguousarray(arr, dtype=DTYPES[tag]).tobytes()


def to_bytes(container):
    entries, blobs, offset = {}, [], 0
    for name in sorted(container.arrays):
        arr = np.asarray(container.arrays[name])
        tag, blob = _encode(arr)
        entries[name] = {"dtype": tag, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)}
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "format_version": FORMAT_VERSION,
        "spacing_mm": [float(container.dx), float(container.dy)],
        "thickness_mm": float(container.thickness),
        "tr_ms": float(container.tr_ms),
        "arrays": entries,
        "attrs": container.attrs,
    }
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", len(head)) + head + b"".join(blobs)


def from_bytes(raw):
    if len(raw) < len(MAGIC) + 4:
        raise ContainerTruncatedError("file too short for a container header")
    if raw[:len(MAGIC)] != MAGIC:
        raise ContainerVersionError("not a cine container (bad magic)")
    (hlen,) = struct.unpack("<I", raw[len(MAGIC):len(MAGIC) + 4])
    start = len(MAGIC) + 4
    if len(raw) < start + hlen:
        raise ContainerTruncatedError(f"manifest needs {hlen} bytes, file has {len(raw) - start}")
    try:
        manifest = json.loads(raw[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerVersionError(f"unreadable manifest: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise ContainerVersionError(f"unsupported container version {version!r} (expected {FORMAT_VERSION})")
    payload = memoryview(raw)[start + hlen:]
    arrays = {}
    for name, e in manifest["arrays"].items():
        tag = e["dtype"]
        if tag not in DTYPES:
            raise ContainerVersionError(f"array {name!r}: unsupported dtype tag {tag!r}")
        dt = DTYPES[tag]
        shape = tuple(int(s) for s in e["shape"])
        expected = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if expected != e["nbytes"]:
            raise ContainerShapeError(
                f"array {name!r}: shape {shape} x {tag} needs {expected} bytes, manifest says {e['nbytes']}")
        off = e["offset"]
        if off < 0 or off + expected > len(payload):
            raise ContainerTruncatedError(
                f"array {name!r}: payload ends at {len(payload)} bytes, need {off + expected}")
        arrays[name] = np.frombuffer(payload[off:off + expected], dtype=dt).reshape(shape).copy()
    dx, dy = manifest["spacing_mm"]
    return CineContainer(arrays, dx=dx, dy=dy, thickness=manifest["thickness_mm"],
                         tr_ms=manifest["tr_ms"], attrs=manifest.get("attrs", {}))


def atomic_write_bytes(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def save_container(path, container):
    atomic_write_bytes(path, to_bytes(container))


def load_container(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
