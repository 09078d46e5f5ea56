"""Closed-form classification head on frozen random features.

Features are lifted by a fixed random projection and a ReLU, and the head
keeps only the running second-moment statistics ``G^T G`` and ``G^T Y``.
Class weights come from the ridge system ``(G^T G + r I) W = G^T Y``, so
nothing in here is trained by gradient descent.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from . import tensor as T
from .errors import ContractError, DimensionError, NumericError, ProtocolError
from .snapshot import load_arrays, save_arrays
from .tensor import Tensor


class AnalyticHead:
    def __init__(self, d: int, D: int, seed: int, ridge: float = 1.0):
        if D < 1:
            raise ContractError("projection dimension must be >= 1")
        if ridge <= 0:
            raise ContractError("ridge must be positive")
        rng = np.random.default_rng(seed)
        self.d, self.D, self.ridge = d, D, float(ridge)
        self.projection = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, D))
        self.projection.setflags(write=False)
        self.gram = np.zeros((D, D))
        self.cross = np.zeros((D, 0))
        # labels below range_start belong to finished sessions
        self.range_start = 0
        self._weights = None

    @property
    def num_classes(self) -> int:
        return self.cross.shape[1]

    def lift(self, features: np.ndarray) -> np.ndarray:
        return np.maximum(np.asarray(features, dtype=np.float64) @ self.projection, 0.0)

    def reserve(self, n_new: int) -> None:
        """Open a new session: add ``n_new`` empty class columns."""
        self.range_start = self.num_classes
        self.cross = np.hstack([self.cross, np.zeros((self.D, n_new))])
        self._weights = None

    def update(self, features, labels) -> None:
        feats = features.data if isinstance(features, Tensor) else np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if feats.ndim != 2 or feats.shape[1] != self.d:
            raise DimensionError(f"expected B x {self.d} features, got {feats.shape}")
        if feats.shape[0] != labels.size:
            raise DimensionError("feature and label counts differ")
        if labels.size == 0:
            return
        if labels.min() < self.range_start:
            raise ProtocolError(f"label {labels.min()} belongs to a finished session (< {self.range_start})")
        needed = int(labels.max()) + 1
        if needed > self.num_classes:
            self.cross = np.hstack([self.cross, np.zeros((self.D, needed - self.num_classes))])
        phi = self.lift(feats)
        onehot = np.zeros((labels.size, self.num_classes))
        onehot[np.arange(labels.size), labels] = 1.0
        self.gram += phi.T @ phi
        self.cross += phi.T @ onehot
        self._weights = None

    def weights(self) -> np.ndarray:
        if self._weights is None:
            system = self.gram + self.ridge * np.eye(self.D)
            try:
                w = scipy.linalg.solve(system, self.cross, assume_a="pos")
            except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
                raise NumericError(f"ridge system is singular: {exc}") from exc
            if not np.all(np.isfinite(w)):
                raise NumericError("ridge solve produced non-finite weights")
            self._weights = w
        return self._weights

    def logits(self, features):
        """``relu(f P) W``. Tensors stay on the tape (P and W are constants)."""
        if self.num_classes == 0:
            lead = features.shape[:-1]
            empty = np.zeros((*lead, 0))
            return Tensor(empty) if isinstance(features, Tensor) else empty
        w = self.weights()
        if isinstance(features, Tensor):
            if features.shape[-1] != self.d:
                raise DimensionError(f"expected width {self.d}, got {features.shape}")
            return T.relu(features @ Tensor(self.projection)) @ Tensor(w)
        feats = np.asarray(features, dtype=np.float64)
        if feats.shape[-1] != self.d:
            raise DimensionError(f"expected width {self.d}, got {feats.shape}")
        if feats.shape[0] == 0:
            return np.zeros((0, self.num_classes))
        return self.lift(feats) @ w

    def save(self, prefix) -> None:
        save_arrays(
            prefix,
            {"projection": self.projection, "gram": self.gram, "cross": self.cross},
            meta={"ridge": self.ridge, "range_start": self.range_start},
        )

    @classmethod
    def load(cls, prefix) -> "AnalyticHead":
        arrays, meta = load_arrays(prefix)
        d, D = arrays["projection"].shape
        head = cls(d, D, seed=0, ridge=meta["ridge"])
        head.projection = arrays["projection"]
        head.projection.setflags(write=False)
        head.gram = arrays["gram"]
        head.cross = arrays["cross"]
        head.range_start = int(meta["range_start"])
        return head


def head_init(d: int, D: int, seed: int, ridge: float = 1.0) -> AnalyticHead:
    return AnalyticHead(d, D, seed, ridge)


def head_update(head: AnalyticHead, features, labels) -> None:
    head.update(features, labels)


def head_logits(head: AnalyticHead, features):
    return head.logits(features)
