"""Flat little-endian float64 blobs with a JSON shape manifest.

``save_arrays(prefix, arrays)`` writes ``prefix.bin`` and ``prefix.json``.
The manifest lists every array in write order with its shape and offset
(counted in float64 elements).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ParseError

FORMAT = "seqprompt-f64"
_DTYPE = np.dtype("<f8")


def save_arrays(prefix, arrays: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    with open(prefix.with_suffix(".bin"), "wb") as fh:
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype=_DTYPE)
            fh.write(arr.tobytes())
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.size
    manifest = {"format": FORMAT, "dtype": "float64-le", "count": offset, "arrays": entries}
    if meta:
        manifest["meta"] = dict(meta)
    prefix.with_suffix(".json").write_text(json.dumps(manifest, indent=2))


def load_arrays(prefix) -> tuple[dict, dict]:
    """Return ``(arrays, meta)``; raises ParseError on any mismatch."""
    prefix = Path(prefix)
    try:
        manifest = json.loads(prefix.with_suffix(".json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"unreadable manifest for {prefix}: {exc}") from exc
    if manifest.get("format") != FORMAT:
        raise ParseError(f"{prefix}: unexpected format {manifest.get('format')!r}")
    raw = prefix.with_suffix(".bin").read_bytes()
    if len(raw) != manifest["count"] * _DTYPE.itemsize:
        raise ParseError(f"{prefix}.bin holds {len(raw)} bytes, manifest expects {manifest['count'] * 8}")
    flat = np.frombuffer(raw, dtype=_DTYPE)
    arrays = {}
    for entry in manifest["arrays"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        arrays[entry["name"]] = flat[start:start + n].reshape(entry["shape"]).astype(np.float64)
    return arrays, manifest.get("meta", {})
