"""Retrieval evaluation: exhaustive scoring, NDCG@k, and retention analysis.

Two scoring modes share one ranking/metric path. Single-vector mode scores a
query embedding against every document embedding by dot product (cosine,
since both sides are unit vectors). Late-interaction mode scores token-level
multi-vectors with MaxSim. Ranking ties break on ascending document id so
evaluation is reproducible across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateInput,
    DimMismatch,
    EmptyBatch,
    EmptySubset,
    MissingDocEmbeddings,
)

DEFAULT_K = 5


def score_single_vector(query_matrix: np.ndarray, doc_matrix: np.ndarray) -> np.ndarray:
    """Dense Q x N dot-product score matrix in float64."""
    q = np.asarray(query_matrix, dtype=np.float64)
    d = np.asarray(doc_matrix, dtype=np.float64)
    if q.ndim != 2 or d.ndim != 2:
        raise DimMismatch("expected 2-d query and document matrices")
    if q.shape[1] != d.shape[1]:
        raise DimMismatch(f"query dim {q.shape[1]} != doc dim {d.shape[1]}")
    if q.shape[0] == 0:
        raise EmptyBatch("no queries to score")
    if d.shape[0] == 0:
        raise EmptyBatch("no documents to score")
    return q @ d.T


def _rows_of(mv) -> np.ndarray:
    rows = getattr(mv, "rows", mv)
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise DimMismatch("multi-vector must be a non-empty 2-d array")
    return rows


def maxsim_score(query_mv, doc_mv) -> float:
    """Late-interaction relevance: sum over query tokens of the best doc token."""
    q = _rows_of(query_mv)
    d = _rows_of(doc_mv)
    if q.shape[1] != d.shape[1]:
        raise DimMismatch(f"token dim {q.shape[1]} != {d.shape[1]}")
    return float(np.sum(np.max(q @ d.T, axis=1)))


def score_late_interaction(query_mvs: list, doc_mvs: list) -> np.ndarray:
    if not query_mvs:
        raise EmptyBatch("no queries to score")
    if not doc_mvs:
        raise EmptyBatch("no documents to score")
    scores = np.empty((len(query_mvs), len(doc_mvs)))
    for i, q in enumerate(query_mvs):
        for j, d in enumerate(doc_mvs):
            scores[i, j] = maxsim_score(q, d)
    return scores


def rank_top_k(scores_row: np.ndarray, doc_ids: list[str], k: int) -> list[str]:
    """Top-k doc ids by descending score, ties broken by ascending doc id."""
    ids = np.asarray(doc_ids)
    order = np.lexsort((ids, -np.asarray(scores_row, dtype=np.float64)))
    return [str(ids[i]) for i in order[:k]]


def ndcg_at_k(
    ranked_ids: list[str], grades: dict[str, int], k: int = DEFAULT_K
) -> float | None:
    """NDCG@k with gain 2^grade - 1 and discount log2(rank + 1).

    Returns None when the ideal DCG is zero (no positively graded document
    exists), which callers must exclude from averages rather than count as 0.
    """
    gains = sorted((2.0**g - 1.0 for g in grades.values()), reverse=True)[:k]
    idcg = sum(g / np.log2(r + 2.0) for r, g in enumerate(gains))
    if idcg == 0.0:
        return None
    dcg = 0.0
    for r, doc_id in enumerate(ranked_ids[:k]):
        grade = grades.get(doc_id, 0)
        dcg += (2.0**grade - 1.0) / np.log2(r + 2.0)
    return dcg / idcg


@dataclass
class EvalReport:
    k: int
    per_query: dict[str, float]  # scored queries only
    excluded: list[str]  # zero-IDCG queries, dropped from all averages

    @property
    def mean(self) -> float:
        if not self.per_query:
            raise EmptySubset("no scorable queries in report")
        return float(np.mean(list(self.per_query.values())))


def evaluate_ranking(
    query_ids: list[str],
    scores: np.ndarray,
    doc_ids: list[str],
    qrels: dict[str, dict[str, int]],
    k: int = DEFAULT_K,
) -> EvalReport:
    """NDCG@k per query from a dense score matrix.

    Every graded document must have a score column; a grade for an unknown
    document means the document embeddings are incomplete.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (len(query_ids), len(doc_ids)):
        raise DimMismatch(
            f"score matrix {scores.shape} does not match "
            f"{len(query_ids)} queries x {len(doc_ids)} docs"
        )
    known = set(doc_ids)
    per_query: dict[str, float] = {}
    excluded: list[str] = []
    for i, qid in enumerate(query_ids):
        grades = qrels.get(qid, {})
        missing = [d for d in grades if d not in known]
        if missing:
            raise MissingDocEmbeddings(
                f"query {qid!r} grades document(s) {missing[:3]} with no embedding"
            )
        value = ndcg_at_k(rank_top_k(scores[i], doc_ids, k), grades, k)
        if value is None:
            excluded.append(qid)
        else:
            per_query[qid] = value
    return EvalReport(k, per_query, excluded)


def evaluate_single_vector(
    query_ids: list[str],
    query_matrix: np.ndarray,
    doc_ids: list[str],
    doc_matrix: np.ndarray,
    qrels: dict[str, dict[str, int]],
    k: int = DEFAULT_K,
) -> EvalReport:
    scores = score_single_vector(query_matrix, doc_matrix)
    return evaluate_ranking(query_ids, scores, doc_ids, qrels, k)


def retention_percent(student_mean: float, teacher_mean: float) -> float:
    """Student quality as a percentage of teacher quality."""
    if teacher_mean == 0.0:
        raise DegenerateInput("teacher mean metric is zero; retention undefined")
    return 100.0 * student_mean / teacher_mean


def aggregate_by_language(
    report: EvalReport, language_of: dict[str, str]
) -> dict[str, float]:
    """Macro mean NDCG per language over the report's scored queries."""
    buckets: dict[str, list[float]] = {}
    for qid, value in report.per_query.items():
        lang = language_of.get(qid)
        if lang is None:
            raise KeyError(f"no language recorded for query {qid!r}")
        buckets.setdefault(lang, []).append(value)
    if not buckets:
        raise EmptySubset("no scored queries carry a language tag")
    return {lang: float(np.mean(vals)) for lang, vals in sorted(buckets.items())}


def retention_by_language(
    student: EvalReport, teacher: EvalReport, language_of: dict[str, str]
) -> dict[str, float]:
    """Per-language retention over languages present in both reports."""
    s = aggregate_by_language(student, language_of)
    t = aggregate_by_language(teacher, language_of)
    shared = sorted(set(s) & set(t))
    if not shared:
        raise EmptySubset("student and teacher share no evaluated language")
    return {lang: retention_percent(s[lang], t[lang]) for lang in shared}


def pearson_correlation(x, y) -> float:
    """Plain Pearson r; degenerate (constant or too-short) inputs are errors."""
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise DimMismatch("pearson needs two equal-length 1-d arrays")
    if xa.size < 2:
        raise DegenerateInput("pearson needs at least two points")
    if np.ptp(xa) == 0.0 or np.ptp(ya) == 0.0:
        raise DegenerateInput("pearson undefined for a constant series")
    return float(np.corrcoef(xa, ya)[0, 1])
