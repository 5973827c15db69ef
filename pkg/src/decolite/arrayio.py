"""A small checksummed container for named float/int arrays plus JSON metadata.

The byte layout is fixed (magic, header length, JSON header, raw array
bytes, sha256 trailer), writes are fully deterministic for identical
content, and round trips are bit-exact. Any corruption, truncation or
version mismatch surfaces as :class:`CheckpointError`.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import CheckpointError

_MAGIC = b"DLBUNDLE1\n"
FORMAT_VERSION = 1


def save_bundle(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write ``arrays`` (order-preserving) and ``meta`` to ``path``."""
    entries = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "kind": kind, "meta": meta, "arrays": entries},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    body = _MAGIC + len(header).to_bytes(8, "big") + header + b"".join(blobs)
    digest = hashlib.sha256(body).digest()
    Path(path).write_bytes(body + digest)


def load_bundle(path, expected_kind: str | None = None):
    """Read a bundle back; returns ``(kind, meta, arrays)``."""
    raw = Path(path).read_bytes()
    if len(raw) < len(_MAGIC) + 8 + 32 or not raw.startswith(_MAGIC):
        raise CheckpointError(f"{path}: not a bundle file")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (file corrupt)")
    hlen = int.from_bytes(body[len(_MAGIC):len(_MAGIC) + 8], "big")
    hstart = len(_MAGIC) + 8
    try:
        header = json.loads(body[hstart:hstart + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    kind = header.get("kind")
    if expected_kind is not None and kind != expected_kind:
        raise CheckpointError(f"{path}: expected a {expected_kind!r} bundle, found {kind!r}")
    arrays: dict[str, np.ndarray] = {}
    off = hstart + hlen
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        chunk = body[off:off + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: truncated array data for {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype=dtype).reshape(shape).copy()
        off += nbytes
    if off != len(body):
        raise CheckpointError(f"{path}: trailing bytes after declared arrays")
    return kind, header.get("meta", {}), arrays


def arrays_checksum(arrays: dict[str, np.ndarray]) -> str:
    """Order-sensitive sha256 over names, dtypes, shapes and raw bytes."""
    h = hashlib.sha256()
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        h.update(name.encode("utf-8"))
        h.update(arr.dtype.str.encode("ascii"))
        h.update(str(arr.shape).encode("ascii"))
        h.update(arr.tobytes())
    return h.hexdigest()
