"""Dense float64 kernels shared by every other module.

Vectors are 1-D numpy arrays, matrices 2-D row-major numpy arrays. All
exported operations validate finiteness and reject degenerate inputs
instead of clamping them; silent clamping would hide upstream bugs the
test suite is meant to catch.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

# Norms below this are treated as degenerate rather than normalized.
MIN_NORM = 1e-30


def as_vector(x) -> np.ndarray:
    """Coerce to a finite 1-D float64 array."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite entries")
    return v


def as_matrix(x) -> np.ndarray:
    """Coerce to a finite 2-D float64 array."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def unit(v: np.ndarray) -> np.ndarray:
    """v / ||v||, rejecting degenerate vectors."""
    v = as_vector(v)
    n = float(np.linalg.norm(v))
    if n < MIN_NORM:
        raise ValueError("degenerate vector: norm below 1e-30")
    return v / n


def unit_rows(m: np.ndarray) -> np.ndarray:
    """Row-normalized copy of a matrix; any near-zero row is an error."""
    m = as_matrix(m)
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms < MIN_NORM):
        bad = int(np.argmin(norms))
        raise ValueError(f"degenerate vector: row {bad} has norm below 1e-30")
    return m / norms[:, None]


def cosine_sim(a, b) -> float:
    """Cosine similarity of two nonzero vectors, in [-1, 1]."""
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return float(np.dot(unit(a), unit(b)))


def softmax(logits, temperature: float = 1.0) -> np.ndarray:
    """Max-shifted softmax of a vector of logits at the given temperature."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    x = as_vector(logits) / temperature
    x = x - np.max(x)
    e = np.exp(x)
    return e / np.sum(e)


def softmax_rows(logits, temperature: float = 1.0) -> np.ndarray:
    """Row-wise max-shifted softmax of a matrix of logits."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    x = as_matrix(logits) / temperature
    x = x - np.max(x, axis=1, keepdims=True)
    e = np.exp(x)
    return e / np.sum(e, axis=1, keepdims=True)


def logsumexp_rows(x: np.ndarray) -> np.ndarray:
    """Stable row-wise log-sum-exp with a detached max shift."""
    m = np.max(x, axis=1, keepdims=True)
    return (m + np.log(np.sum(np.exp(x - m), axis=1, keepdims=True)))[:, 0]


def tangential_project(z, v) -> np.ndarray:
    """(I - zz^T/||z||^2) v: remove the component of v radial to z."""
    z = as_vector(z)
    v = as_vector(v)
    if z.shape != v.shape:
        raise ValueError(f"dimension mismatch: {z.shape[0]} vs {v.shape[0]}")
    zh = unit(z)
    return v - np.dot(zh, v) * zh


def finite_diff_grad(f: Callable[[np.ndarray], float], x, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar field, one coordinate at a time.

    The oracle against which every analytic gradient in this package is
    checked; it must stay independent of those implementations.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = as_vector(x)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        fp = float(f(x + e))
        fm = float(f(x - e))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite function evaluation at coordinate {i}")
        g[i] = (fp - fm) / (2.0 * step)
    return g
