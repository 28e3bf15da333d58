"""Shared record types: embedding batches and per-batch loss reports."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class EmbeddingBatch:
    """A (B, d) block of embeddings with optional per-row metadata."""

    vectors: np.ndarray
    labels: np.ndarray | None = None
    ids: np.ndarray | None = None
    split: str = ""

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"expected (B, d) embeddings, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("embeddings have non-finite entries")
        object.__setattr__(self, "vectors", v)
        if self.labels is not None:
            y = np.asarray(self.labels, dtype=np.int64)
            if y.shape != (v.shape[0],):
                raise ValueError("labels length does not match batch size")
            object.__setattr__(self, "labels", y)
        if self.ids is not None:
            ids = np.asarray(self.ids, dtype=np.int64)
            if ids.shape != (v.shape[0],):
                raise ValueError("ids length does not match batch size")
            object.__setattr__(self, "ids", ids)

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass
class LossReport:
    """Named scalar loss terms, their weights, and the weighted total."""

    terms: dict[str, float]
    weights: dict[str, float]
    total: float
    extras: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name, value in self.terms.items():
            if not np.isfinite(value):
                raise ValueError(f"non-finite loss term '{name}'")
        if not np.isfinite(self.total):
            raise ValueError("non-finite loss total")

    def to_dict(self) -> dict:
        return {
            "terms": dict(self.terms),
            "weights": dict(self.weights),
            "total": self.total,
            "extras": dict(self.extras),
        }
