"""Class-incremental session streams and their on-disk format.

On disk a stream is a directory holding ``manifest.json`` plus one raw
little-endian float64 block per split, e.g. ``session1_train.f64``. Labels
live in the manifest. Original labels may be arbitrary integers; in memory
they are remapped to ``0 .. N*K-1`` in session order so that session ``t``
owns the contiguous block ``K(t-1) .. Kt-1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ParseError, ProtocolError

FORMAT = "seqprompt-stream"
VERSION = 1


@dataclass
class SessionData:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray


@dataclass
class SessionStream:
    sessions: list
    K: int
    input_dim: int
    class_maps: list  # class_maps[t-1][j] is the original label of class K(t-1)+j

    @property
    def num_sessions(self) -> int:
        return len(self.sessions)

    def session(self, t: int) -> SessionData:
        return self.sessions[t - 1]

    def classes(self, t: int) -> np.ndarray:
        return np.arange(self.K * (t - 1), self.K * t)

    def test_set(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Cumulative test data for sessions ``1..t``."""
        xs = [s.test_x for s in self.sessions[:t]]
        ys = [s.test_y for s in self.sessions[:t]]
        return np.concatenate(xs), np.concatenate(ys)

    def validate(self) -> None:
        seen = set()
        for t, cmap in enumerate(self.class_maps, start=1):
            if len(cmap) != self.K or len(set(cmap)) != self.K:
                raise ProtocolError(f"session {t} must hold exactly {self.K} distinct classes")
            overlap = seen.intersection(cmap)
            if overlap:
                raise ProtocolError(f"session {t} reuses labels {sorted(overlap)}")
            seen.update(cmap)
        for t, s in enumerate(self.sessions, start=1):
            allowed = set(self.classes(t).tolist())
            for split in ("train", "test"):
                x, y = getattr(s, f"{split}_x"), getattr(s, f"{split}_y")
                if x.ndim != 2 or x.shape[1] != self.input_dim or x.shape[0] != y.size:
                    raise ProtocolError(f"session {t} {split} split has inconsistent shapes")
                if not set(y.tolist()) <= allowed:
                    raise ProtocolError(f"session {t} {split} labels fall outside its class set")


def make_synthetic_stream(
    num_sessions: int = 5,
    K: int = 4,
    samples_per_class: int = 50,
    input_dim: int = 16,
    cluster_spread: float = 1.0,
    seed: int = 0,
) -> SessionStream:
    """One isotropic Gaussian cluster per class, split 80/20 into train/test."""
    if min(num_sessions, K, samples_per_class, input_dim) < 1 or cluster_spread <= 0:
        raise ValueError("all stream sizes and the spread must be positive")
    rng = np.random.default_rng(seed)
    n_train = int(round(0.8 * samples_per_class))
    centers = rng.normal(0.0, 1.0, size=(num_sessions * K, input_dim))
    sessions = []
    for t in range(num_sessions):
        parts = {"train_x": [], "train_y": [], "test_x": [], "test_y": []}
        for c in range(t * K, (t + 1) * K):
            pts = centers[c] + cluster_spread * rng.normal(size=(samples_per_class, input_dim))
            parts["train_x"].append(pts[:n_train])
            parts["test_x"].append(pts[n_train:])
            parts["train_y"].append(np.full(n_train, c))
            parts["test_y"].append(np.full(samples_per_class - n_train, c))
        sessions.append(SessionData(**{k: np.concatenate(v) for k, v in parts.items()}))
    class_maps = [list(range(t * K, (t + 1) * K)) for t in range(num_sessions)]
    stream = SessionStream(sessions, K, input_dim, class_maps)
    stream.validate()
    return stream


def save_stream(stream: SessionStream, path) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for t, s in enumerate(stream.sessions, start=1):
        cmap = stream.class_maps[t - 1]
        entry = {"session": t}
        for split in ("train", "test"):
            x, y = getattr(s, f"{split}_x"), getattr(s, f"{split}_y")
            fname = f"session{t}_{split}.f64"
            (root / fname).write_bytes(np.ascontiguousarray(x, dtype="<f8").tobytes())
            entry[split] = {
                "file": fname,
                "count": int(x.shape[0]),
                "labels": [int(cmap[int(v) - stream.K * (t - 1)]) for v in y],
            }
        entries.append(entry)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "num_sessions": stream.num_sessions,
        "K": stream.K,
        "input_dim": stream.input_dim,
        "class_maps": [[int(c) for c in m] for m in stream.class_maps],
        "sessions": entries,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return root


def _read_block(path: Path, count: int, dim: int) -> np.ndarray:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    if len(raw) != count * dim * 8:
        raise ParseError(f"{path.name}: {len(raw)} bytes, expected {count * dim * 8}")
    return np.frombuffer(raw, dtype="<f8").reshape(count, dim).astype(np.float64)


def load_stream(path) -> SessionStream:
    path = Path(path)
    manifest_path = path / "manifest.json" if path.is_dir() else path
    root = manifest_path.parent
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot parse stream manifest {manifest_path}: {exc}") from exc
    try:
        if manifest["format"] != FORMAT:
            raise ParseError(f"unexpected format {manifest['format']!r}")
        K, dim = int(manifest["K"]), int(manifest["input_dim"])
        class_maps = [list(map(int, m)) for m in manifest["class_maps"]]
        entries = manifest["sessions"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"stream manifest is missing fields: {exc}") from exc
    if len(entries) != len(class_maps) or len(entries) != manifest.get("num_sessions", len(entries)):
        raise ParseError("session count disagrees with class maps")

    # Disjointness is checked before any label lookup so overlap reports as a protocol error.
    stream = SessionStream([], K, dim, class_maps)
    stream.validate()

    for t, entry in enumerate(entries, start=1):
        local = {orig: K * (t - 1) + j for j, orig in enumerate(class_maps[t - 1])}
        arrays = {}
        for split in ("train", "test"):
            try:
                info = entry[split]
                count = int(info["count"])
                labels = info["labels"]
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"session {t} {split}: malformed entry ({exc})") from exc
            if len(labels) != count:
                raise ParseError(f"session {t} {split}: {len(labels)} labels for {count} rows")
            unknown = set(labels) - set(local)
            if unknown:
                raise ProtocolError(f"session {t} {split} uses labels {sorted(unknown)} outside its class map")
            arrays[f"{split}_x"] = _read_block(root / info["file"], count, dim)
            arrays[f"{split}_y"] = np.array([local[v] for v in labels], dtype=np.int64)
        stream.sessions.append(SessionData(**arrays))
    stream.validate()
    return stream
