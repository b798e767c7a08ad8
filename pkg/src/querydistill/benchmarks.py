"""Deployment-cost measurement: query latency and index storage arithmetic.

Latency is measured on the monotonic clock with fixed warmup and repeat
counts and reported as median, mean, and p95 so a stray scheduler hiccup
cannot masquerade as a speedup. Scoring and top-k selection are timed as
separate stages. Storage figures are exact byte counts; gigabytes are
decimal (1 GB = 1e9 bytes).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import InvalidBenchConfig

MIN_WARMUP = 5
MIN_REPEATS = 30
BYTES_PER_GB = 1e9


@dataclass(frozen=True)
class BenchConfig:
    warmup: int = MIN_WARMUP
    repeats: int = MIN_REPEATS

    def __post_init__(self):
        if self.warmup < MIN_WARMUP:
            raise InvalidBenchConfig(
                f"warmup must be >= {MIN_WARMUP}, got {self.warmup}"
            )
        if self.repeats < MIN_REPEATS:
            raise InvalidBenchConfig(
                f"repeats must be >= {MIN_REPEATS}, got {self.repeats}"
            )


@dataclass
class TimingStats:
    samples_ns: np.ndarray

    @property
    def median_ns(self) -> float:
        return float(np.median(self.samples_ns))

    @property
    def mean_ns(self) -> float:
        return float(np.mean(self.samples_ns))

    @property
    def p95_ns(self) -> float:
        return float(np.percentile(self.samples_ns, 95))

    def to_dict(self) -> dict:
        return {
            "repeats": int(self.samples_ns.size),
            "median_ns": self.median_ns,
            "mean_ns": self.mean_ns,
            "p95_ns": self.p95_ns,
        }


def time_callable(fn, cfg: BenchConfig = BenchConfig()) -> TimingStats:
    """Run fn warmup times unmeasured, then repeats times on perf_counter_ns."""
    for _ in range(cfg.warmup):
        fn()
    samples = np.empty(cfg.repeats)
    for i in range(cfg.repeats):
        start = time.perf_counter_ns()
        fn()
        samples[i] = time.perf_counter_ns() - start
    return TimingStats(samples)


def top_k_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k best scores, descending; argpartition then local sort."""
    part = np.argpartition(-scores, k - 1)[:k]
    return part[np.argsort(-scores[part], kind="stable")]


def bench_single_vector_query(
    doc_matrix: np.ndarray,
    query_vec: np.ndarray,
    k: int,
    cfg: BenchConfig = BenchConfig(),
) -> dict:
    """Time exhaustive scoring and top-k selection as separate stages."""
    docs = np.ascontiguousarray(doc_matrix)
    q = np.ascontiguousarray(query_vec)
    if docs.ndim != 2 or q.ndim != 1 or docs.shape[1] != q.shape[0]:
        raise InvalidBenchConfig(
            f"doc matrix {docs.shape} incompatible with query {q.shape}"
        )
    if not 1 <= k <= docs.shape[0]:
        raise InvalidBenchConfig(f"k={k} outside [1, {docs.shape[0]}]")

    scores = docs @ q
    score_stats = time_callable(lambda: docs @ q, cfg)
    select_stats = time_callable(lambda: top_k_indices(scores, k), cfg)
    return {
        "num_docs": int(docs.shape[0]),
        "dim": int(docs.shape[1]),
        "k": k,
        "score": score_stats,
        "select": select_stats,
    }


def bench_callable_stage(name: str, fn, cfg: BenchConfig = BenchConfig()) -> dict:
    """Generic stage timer for encode or end-to-end pipelines."""
    return {"stage": name, "timing": time_callable(fn, cfg)}


# -- storage arithmetic ---------------------------------------------------------


@dataclass(frozen=True)
class IndexSpec:
    """Shape of a vector index: docs x tokens-per-doc x dim at a value width."""

    name: str
    num_docs: int
    tokens_per_doc: int
    dim: int
    bytes_per_value: int

    def __post_init__(self):
        if min(self.num_docs, self.tokens_per_doc, self.dim, self.bytes_per_value) < 1:
            raise InvalidBenchConfig("index spec fields must all be >= 1")

    @property
    def total_bytes(self) -> int:
        return self.num_docs * self.tokens_per_doc * self.dim * self.bytes_per_value

    @property
    def gigabytes(self) -> float:
        return self.total_bytes / BYTES_PER_GB


def single_vector_index(
    name: str, num_docs: int, dim: int, bytes_per_value: int = 4
) -> IndexSpec:
    return IndexSpec(name, num_docs, 1, dim, bytes_per_value)


def late_interaction_index(
    name: str, num_docs: int, tokens_per_doc: int, dim: int, bytes_per_value: int = 2
) -> IndexSpec:
    return IndexSpec(name, num_docs, tokens_per_doc, dim, bytes_per_value)


def cache_storage_bytes(count: int, dim: int, bytes_per_value: int) -> int:
    """Payload bytes for a flat embedding cache (ids excluded)."""
    if min(count, dim, bytes_per_value) < 1:
        raise InvalidBenchConfig("cache storage fields must all be >= 1")
    return count * dim * bytes_per_value


@dataclass(frozen=True)
class PrecachePlan:
    """What must be precomputed before training a given objective.

    An alignment-only objective touches nothing but teacher query embeddings;
    any rank or contrastive term additionally needs the teacher's document
    embeddings, which is where nearly all of the precompute and storage goes.
    """

    needs_query_cache: bool
    needs_doc_cache: bool
    query_cache_bytes: int
    doc_cache_bytes: int

    @property
    def total_bytes(self) -> int:
        return self.query_cache_bytes + self.doc_cache_bytes

    @property
    def gigabytes(self) -> float:
        return self.total_bytes / BYTES_PER_GB


def precache_plan(
    weights, num_pairs: int, dim: int, bytes_per_value: int = 2
) -> PrecachePlan:
    """Storage plan for one objective over num_pairs query-document pairs.

    weights is an objective description with rank_weight and use_infonce
    attributes; anything with rank_weight == 0 and no contrastive term is
    alignment-only and skips the document cache entirely.
    """
    needs_docs = bool(getattr(weights, "use_infonce", False)) or (
        getattr(weights, "rank_weight", 0.0) != 0.0
    )
    query_bytes = cache_storage_bytes(num_pairs, dim, bytes_per_value)
    doc_bytes = cache_storage_bytes(num_pairs, dim, bytes_per_value) if needs_docs else 0
    return PrecachePlan(True, needs_docs, query_bytes, doc_bytes)


def format_storage_table(specs: list[IndexSpec]) -> str:
    """Fixed-width text table of index sizes for reports."""
    header = f"{'index':<28} {'docs':>10} {'tokens':>7} {'dim':>5} {'bytes':>6} {'GB':>10}"
    lines = [header, "-" * len(header)]
    for s in specs:
        lines.append(
            f"{s.name:<28} {s.num_docs:>10} {s.tokens_per_doc:>7} "
            f"{s.dim:>5} {s.bytes_per_value:>6} {s.gigabytes:>10.1f}"
        )
    return "\n".join(lines)
