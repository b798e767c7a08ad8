"""Distillation objectives with analytic gradients.

All three losses consume student and teacher query embeddings that are
already unit-normalized (the encoder guarantees this for student outputs),
plus, for the batch-level objectives, a shared bank of unit document
embeddings. Losses and gradients are computed in float64. Gradients are
taken with respect to the normalized student vectors; the encoder's backward
pass owns the normalization Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, EmptyBatch, InvalidTemperature
from .vectors import log_softmax, tempered_softmax

TEACHER_TAU = 0.07
STUDENT_TAU = 0.05


@dataclass(frozen=True)
class LossOutput:
    """Scalar loss plus gradient wrt the normalized student embeddings."""

    value: float
    grad: np.ndarray


def _check_pair(student: np.ndarray, teacher: np.ndarray, ndim: int) -> None:
    if student.ndim != ndim or teacher.ndim != ndim:
        raise DimMismatch(
            f"expected {ndim}-d arrays, got {student.ndim}-d and {teacher.ndim}-d"
        )
    if student.shape != teacher.shape:
        raise DimMismatch(
            f"student shape {student.shape} != teacher shape {teacher.shape}"
        )


def align_loss(student_vec: np.ndarray, teacher_vec: np.ndarray) -> LossOutput:
    """1 - cos(student, teacher) for one pair of unit vectors.

    The gradient is taken wrt the raw student vector through the cosine, so
    it stays correct even if the input has drifted slightly off unit norm:
    d/ds [s.t / (|s||t|)] = (t_hat - cos * s_hat) / |s|.
    """
    s = np.asarray(student_vec, dtype=np.float64)
    t = np.asarray(teacher_vec, dtype=np.float64)
    _check_pair(s, t, 1)
    s_norm = float(np.linalg.norm(s))
    t_norm = float(np.linalg.norm(t))
    s_hat = s / s_norm
    t_hat = t / t_norm
    cos = float(s_hat @ t_hat)
    grad = -(t_hat - cos * s_hat) / s_norm
    return LossOutput(1.0 - cos, grad)


def align_loss_batch(student: np.ndarray, teacher: np.ndarray) -> LossOutput:
    """Mean of per-pair align losses over a batch; gradient carries the 1/B."""
    s = np.asarray(student, dtype=np.float64)
    t = np.asarray(teacher, dtype=np.float64)
    _check_pair(s, t, 2)
    batch = s.shape[0]
    if batch == 0:
        raise EmptyBatch("align_loss_batch on zero rows")
    s_norms = np.linalg.norm(s, axis=1, keepdims=True)
    t_norms = np.linalg.norm(t, axis=1, keepdims=True)
    s_hat = s / s_norms
    t_hat = t / t_norms
    cos = np.sum(s_hat * t_hat, axis=1)
    grad = -(t_hat - cos[:, None] * s_hat) / s_norms / batch
    return LossOutput(float(np.mean(1.0 - cos)), grad)


def _similarities(queries: np.ndarray, docs: np.ndarray) -> np.ndarray:
    q = np.asarray(queries, dtype=np.float64)
    d = np.asarray(docs, dtype=np.float64)
    if q.ndim != 2 or d.ndim != 2:
        raise DimMismatch("queries and docs must be 2-d arrays")
    if q.shape[0] == 0:
        raise EmptyBatch("no query rows")
    if d.shape[0] == 0:
        raise EmptyBatch("no document rows")
    if q.shape[1] != d.shape[1]:
        raise DimMismatch(f"query dim {q.shape[1]} != doc dim {d.shape[1]}")
    return q @ d.T


def rank_loss(
    student_q: np.ndarray,
    teacher_q: np.ndarray,
    docs: np.ndarray,
    teacher_tau: float = TEACHER_TAU,
    student_tau: float = STUDENT_TAU,
) -> LossOutput:
    """Mean per-query KL(teacher || student) over tempered doc distributions.

    Rows of the similarity matrices are dot products against a shared unit
    document bank. The gradient wrt student row i is
    (p_s - p_t) @ docs / (student_tau * B).
    """
    if teacher_tau <= 0.0 or student_tau <= 0.0:
        raise InvalidTemperature("temperatures must be positive")
    sims_t = _similarities(teacher_q, docs)
    sims_s = _similarities(student_q, docs)
    if sims_t.shape != sims_s.shape:
        raise DimMismatch("student and teacher score shapes differ")
    batch = sims_s.shape[0]
    p_t = np.vstack([tempered_softmax(row, teacher_tau) for row in sims_t])
    log_p_t = np.vstack([log_softmax(row, teacher_tau) for row in sims_t])
    p_s = np.vstack([tempered_softmax(row, student_tau) for row in sims_s])
    log_p_s = np.vstack([log_softmax(row, student_tau) for row in sims_s])
    kl = np.sum(p_t * (log_p_t - log_p_s), axis=1)
    docs64 = np.asarray(docs, dtype=np.float64)
    grad = (p_s - p_t) @ docs64 / (student_tau * batch)
    return LossOutput(float(np.mean(kl)), grad)


def infonce_loss(
    student_q: np.ndarray,
    docs: np.ndarray,
    student_tau: float = STUDENT_TAU,
) -> LossOutput:
    """In-batch InfoNCE with positives on the diagonal.

    Requires as many documents as queries so row i's positive is docs[i].
    Gradient wrt row i: (p - onehot_i) @ docs / (student_tau * B).
    """
    if student_tau <= 0.0:
        raise InvalidTemperature("temperatures must be positive")
    sims = _similarities(student_q, docs)
    batch, n_docs = sims.shape
    if batch != n_docs:
        raise DimMismatch(
            f"in-batch InfoNCE needs square scores, got {batch} queries x {n_docs} docs"
        )
    log_p = np.vstack([log_softmax(row, student_tau) for row in sims])
    p = np.exp(log_p)
    nll = -np.diag(log_p)
    target = np.eye(batch)
    docs64 = np.asarray(docs, dtype=np.float64)
    grad = (p - target) @ docs64 / (student_tau * batch)
    return LossOutput(float(np.mean(nll)), grad)


@dataclass(frozen=True)
class ObjectiveWeights:
    """Weighted combination: align_weight * align + rank_weight * rank.

    use_infonce swaps the rank term for in-batch InfoNCE (the contrastive
    baseline); in that mode align_weight is forced to zero by convention.
    """

    align_weight: float = 1.0
    rank_weight: float = 1.0
    use_infonce: bool = False

    def label(self) -> str:
        if self.use_infonce:
            return "infonce"
        return f"align={self.align_weight:g},rank={self.rank_weight:g}"


def combined_loss(
    weights: ObjectiveWeights,
    student_q: np.ndarray,
    teacher_q: np.ndarray,
    docs: np.ndarray,
    teacher_tau: float = TEACHER_TAU,
    student_tau: float = STUDENT_TAU,
) -> tuple[LossOutput, dict[str, float]]:
    """Batch objective used by the trainer; returns loss and named components."""
    s = np.asarray(student_q, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] == 0:
        raise EmptyBatch("combined_loss needs a non-empty 2-d student batch")
    if weights.use_infonce:
        out = infonce_loss(s, docs, student_tau)
        return out, {"infonce": out.value}

    total = 0.0
    grad = np.zeros_like(s)
    components: dict[str, float] = {}
    if weights.align_weight != 0.0:
        a = align_loss_batch(s, teacher_q)
        total += weights.align_weight * a.value
        grad += weights.align_weight * a.grad
        components["align"] = a.value
    if weights.rank_weight != 0.0:
        r = rank_loss(s, teacher_q, docs, teacher_tau, student_tau)
        total += weights.rank_weight * r.value
        grad += weights.rank_weight * r.grad
        components["rank"] = r.value
    if not components:
        raise EmptyBatch("objective has no active terms")
    return LossOutput(total, grad), components


def objective_grid() -> list[ObjectiveWeights]:
    """The ablation grid: five weight pairs plus the InfoNCE baseline."""
    return [
        ObjectiveWeights(1.0, 0.0),
        ObjectiveWeights(1.0, 0.5),
        ObjectiveWeights(1.0, 1.0),
        ObjectiveWeights(0.5, 1.0),
        ObjectiveWeights(0.0, 1.0),
        ObjectiveWeights(0.0, 0.0, use_infonce=True),
    ]
