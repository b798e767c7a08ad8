"""Dense vector primitives: normalization, cosine, tempered softmax, batching.

All arithmetic is done in float64; callers that store embeddings on disk
downcast to float32/float16 at the storage boundary, never here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, DimMismatch, EmptyBatch, InvalidTemperature

NORM_TOL = 1e-6


def _as_vector(x) -> np.ndarray:
    """Coerce an Embedding, array, or sequence to a finite 1-D float64 array."""
    if isinstance(x, Embedding):
        return x.values
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimMismatch(f"expected a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise DegenerateInput("vector contains non-finite entries")
    return v


@dataclass(frozen=True)
class Embedding:
    """A dense vector, optionally certified unit-norm.

    When ``normalized`` is True the L2 norm must be within 1e-6 of 1.
    """

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise DimMismatch(f"embedding must be 1-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DegenerateInput("embedding contains non-finite entries")
        if self.normalized and abs(np.linalg.norm(v) - 1.0) > NORM_TOL:
            raise DegenerateInput("normalized flag set but norm is not 1")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class MultiVector:
    """Per-token matrix of unit-norm row vectors (late-interaction documents)."""

    rows: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.rows, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] < 1:
            raise EmptyBatch("multi-vector needs at least one row")
        if not np.all(np.isfinite(m)):
            raise DegenerateInput("multi-vector contains non-finite entries")
        norms = np.linalg.norm(m, axis=1)
        if np.any(np.abs(norms - 1.0) > NORM_TOL):
            raise DegenerateInput("every multi-vector row must be unit-norm")
        object.__setattr__(self, "rows", m)

    @property
    def token_count(self) -> int:
        return int(self.rows.shape[0])

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])


def l2_normalize(v) -> Embedding:
    """Scale ``v`` to unit L2 norm, preserving direction.

    Raises DegenerateInput on a zero-norm vector: silently mapping it to
    zero would propagate NaNs into training invisibly.
    """
    vec = _as_vector(v)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise DegenerateInput("cannot normalize a zero vector")
    return Embedding(vec / norm, normalized=True)


def cosine(a, b) -> float:
    """Cosine similarity via the normalize-then-dot path. Result in [-1, 1]."""
    va, vb = _as_vector(a), _as_vector(b)
    if va.shape[0] != vb.shape[0]:
        raise DimMismatch(f"dims differ: {va.shape[0]} vs {vb.shape[0]}")
    ua = l2_normalize(va).values
    ub = l2_normalize(vb).values
    return float(np.dot(ua, ub))


def tempered_softmax(scores, tau: float) -> np.ndarray:
    """softmax(scores / tau) with max-subtraction for stability.

    Temperatures as low as 0.05 divide logits by 20, so the naive
    exponentiation would overflow; the shift makes the largest logit 0.
    """
    if not tau > 0:
        raise InvalidTemperature(f"temperature must be > 0, got {tau}")
    s = _as_vector(scores) / float(tau)
    s -= s.max()
    e = np.exp(s)
    return e / e.sum()


def log_softmax(scores, tau: float) -> np.ndarray:
    """log of tempered_softmax, computed via log-sum-exp (never log(0))."""
    if not tau > 0:
        raise InvalidTemperature(f"temperature must be > 0, got {tau}")
    s = _as_vector(scores) / float(tau)
    shifted = s - s.max()
    return shifted - np.log(np.exp(shifted).sum())


def stack_batch(embs) -> np.ndarray:
    """Stack embeddings into a B x d matrix; row i equals embs[i]."""
    items = list(embs)
    if not items:
        raise EmptyBatch("cannot stack an empty batch")
    vecs = [_as_vector(e) for e in items]
    dim = vecs[0].shape[0]
    for i, v in enumerate(vecs[1:], start=1):
        if v.shape[0] != dim:
            raise DimMismatch(f"row {i} has dim {v.shape[0]}, expected {dim}")
    return np.stack(vecs, axis=0)
