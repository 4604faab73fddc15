"""Flat tensor files: one JSON manifest line, then raw little-endian float32.

The manifest's ``entries`` list gives ``{name, shape, offset}`` for each array,
with ``offset`` counted in bytes from the start of the payload.
"""
import json
import os

import numpy as np

from .errors import ManifestError, TruncatedPayloadError, VersionMismatchError

FORMAT = "ecgfuse-tensors"
VERSION = 1
_LE_F32 = np.dtype("<f4")


def save_tensors(path, arrays, header=None):
    """Write ``arrays`` (name -> ndarray, insertion order kept) to ``path``."""
    entries, offset = [], 0
    blobs = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype=_LE_F32)
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes(order="C"))
        offset += a.nbytes
    manifest = {"format": FORMAT, "format_version": VERSION, **(header or {}),
                "entries": entries, "payload_bytes": offset}
    line = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(line + b"\n")
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def load_tensors(path):
    """Return ``(header, arrays)``; arrays come back as float32."""
    with open(path, "rb") as fh:
        line = fh.readline()
        payload = fh.read()
    try:
        manifest = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{path}: unreadable manifest: {exc}") from None
    if manifest.get("format") != FORMAT:
        raise ManifestError(f"{path}: not a tensor file (format={manifest.get('format')!r})")
    if manifest.get("format_version") != VERSION:
        raise VersionMismatchError(
            f"{path}: format_version {manifest.get('format_version')} != {VERSION}")
    if len(payload) != manifest.get("payload_bytes"):
        raise TruncatedPayloadError(
            f"{path}: payload has {len(payload)} bytes, expected {manifest.get('payload_bytes')}")
    arrays = {}
    for entry in manifest.pop("entries"):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arrays[entry["name"]] = np.frombuffer(
            payload, dtype=_LE_F32, count=count, offset=entry["offset"]).reshape(shape).astype(np.float32)
    return manifest, arrays
