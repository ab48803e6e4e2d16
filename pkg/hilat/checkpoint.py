"""
Checkpoint file format.

    HILATCKPT\n
    <manifest: one line of JSON>\n
    <payload: little-endian float32 arrays, in manifest order>

The manifest carries format_version, d_e, n_labels, n_chunks, payload_bytes,
a tensor directory [{name, shape, offset}], and a free-form meta object. The
manifest is fully validated before any payload byte is read.
"""
import json
import logging
import os
from typing import Dict, Mapping, Optional, Tuple, Union

import numpy as np

from hilat.errors import CheckpointFormatError, LookupFailedError, TruncatedPayloadError
from hilat.tensor import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"HILATCKPT\n"
FORMAT_VERSION = 1
PAYLOAD_DTYPE = np.dtype("<f4")

ArrayLike = Union[np.ndarray, Tensor]


def _as_array(value: ArrayLike) -> np.ndarray:
    arr = value.data if isinstance(value, Tensor) else np.asarray(value)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise CheckpointFormatError(f"expected a 2-D array, got shape {arr.shape}", field="tensors")
    return arr


def save_checkpoint(
    path: str,
    tensors: Mapping[str, ArrayLike],
    d_e: Optional[int] = None,
    n_labels: Optional[int] = None,
    n_chunks: Optional[int] = None,
    meta: Optional[dict] = None,
) -> dict:
    """Write tensors (cast to float32) with their manifest; returns the manifest."""
    directory = []
    payloads = []
    offset = 0
    for name, value in tensors.items():
        arr = np.ascontiguousarray(_as_array(value), dtype=PAYLOAD_DTYPE)
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payloads.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {
        "format_version": FORMAT_VERSION,
        "d_e": d_e,
        "n_labels": n_labels,
        "n_chunks": n_chunks,
        "payload_bytes": offset,
        "tensors": directory,
        "meta": meta or {},
    }
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(json.dumps(manifest, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        for payload in payloads:
            f.write(payload)
    logger.debug("Wrote %d tensors (%d bytes) to %s", len(directory), offset, path)
    return manifest


def _read_header(f) -> Tuple[dict, int]:
    if f.read(len(MAGIC)) != MAGIC:
        raise CheckpointFormatError("not a checkpoint file", field="magic")
    line = f.readline()
    if not line.endswith(b"\n"):
        raise CheckpointFormatError("manifest line is not terminated", field="manifest")
    try:
        manifest = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CheckpointFormatError(f"manifest is not valid JSON: {e}", field="manifest")
    return manifest, f.tell()


def validate_manifest(
    manifest: dict,
    expected_d_e: Optional[int] = None,
    expected_n_labels: Optional[int] = None,
    expected_n_chunks: Optional[int] = None,
) -> None:
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported version {version!r} (expected {FORMAT_VERSION})", field="format_version")
    for field, expected in (("d_e", expected_d_e), ("n_labels", expected_n_labels), ("n_chunks", expected_n_chunks)):
        if expected is not None and manifest.get(field) != expected:
            raise CheckpointFormatError(f"shape mismatch: file has {manifest.get(field)}, expected {expected}", field=field)

    directory = manifest.get("tensors")
    if not isinstance(directory, list):
        raise CheckpointFormatError("missing tensor directory", field="tensors")
    offset = 0
    for entry in directory:
        shape = entry.get("shape")
        if not (isinstance(shape, list) and len(shape) == 2 and all(isinstance(s, int) and s >= 0 for s in shape)):
            raise CheckpointFormatError(f"bad shape for {entry.get('name')!r}", field="tensors")
        if entry.get("offset") != offset:
            raise CheckpointFormatError(f"bad offset for {entry.get('name')!r}", field="tensors")
        offset += shape[0] * shape[1] * PAYLOAD_DTYPE.itemsize
    if manifest.get("payload_bytes") != offset:
        raise CheckpointFormatError(
            f"declares {manifest.get('payload_bytes')} bytes, directory sums to {offset}",
            field="payload_bytes",
        )


def read_manifest(path: str) -> dict:
    try:
        with open(path, "rb") as f:
            manifest, _ = _read_header(f)
    except OSError as e:
        raise CheckpointFormatError(f"cannot read {path}: {e}", field="path")
    validate_manifest(manifest)
    return manifest


def load_checkpoint(
    path: str,
    expected_d_e: Optional[int] = None,
    expected_n_labels: Optional[int] = None,
    expected_n_chunks: Optional[int] = None,
) -> Tuple[Dict[str, np.ndarray], dict]:
    """Read all tensors as float64 arrays; returns (tensors, manifest)."""
    try:
        f = open(path, "rb")
    except OSError as e:
        raise CheckpointFormatError(f"cannot read {path}: {e}", field="path")
    with f:
        manifest, start = _read_header(f)
        validate_manifest(manifest, expected_d_e, expected_n_labels, expected_n_chunks)
        payload = f.read()
    expected = manifest["payload_bytes"]
    if len(payload) < expected:
        raise TruncatedPayloadError(f"{len(payload)} bytes present, {expected} expected", field="payload")
    if len(payload) > expected:
        raise CheckpointFormatError(f"{len(payload) - expected} unexpected trailing bytes", field="payload")

    tensors = {}
    for entry in manifest["tensors"]:
        rows, cols = entry["shape"]
        arr = np.frombuffer(payload, dtype=PAYLOAD_DTYPE, count=rows * cols, offset=entry["offset"])
        tensors[entry["name"]] = arr.reshape(rows, cols).astype(np.float64)
    return tensors, manifest


class TensorIndex:
    """Tensor directory of one file, parsed once; each read seeks straight to its slice."""

    def __init__(self, path: str):
        self.path = path
        try:
            f = open(path, "rb")
        except OSError as e:
            raise CheckpointFormatError(f"cannot read {path}: {e}", field="path")
        with f:
            self.manifest, self._start = _read_header(f)
        validate_manifest(self.manifest)
        self.entries = {e["name"]: e for e in self.manifest["tensors"]}

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def read(self, name: str) -> np.ndarray:
        entry = self.entries.get(name)
        if entry is None:
            raise LookupFailedError(f"no tensor named {name!r} in {self.path}")
        rows, cols = entry["shape"]
        nbytes = rows * cols * PAYLOAD_DTYPE.itemsize
        try:
            with open(self.path, "rb") as f:
                f.seek(self._start + entry["offset"])
                raw = f.read(nbytes)
        except OSError as e:
            raise CheckpointFormatError(f"cannot read {self.path}: {e}", field="path")
        if len(raw) < nbytes:
            raise TruncatedPayloadError(f"tensor {name!r} is cut short", field="payload")
        return np.frombuffer(raw, dtype=PAYLOAD_DTYPE).reshape(rows, cols).astype(np.float64)


def read_tensor(path: str, name: str) -> Tuple[np.ndarray, dict]:
    """Read one named tensor without loading the whole payload."""
    index = TensorIndex(path)
    return index.read(name), index.manifest
