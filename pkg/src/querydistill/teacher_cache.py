"""Frozen teacher embedding caches and the synthetic teacher generator.

Training never calls a live teacher model. Teacher outputs are precomputed
once into cache files and looked up by id. The on-disk format is binary
little-endian: magic "NVTC", u32 version=1, u32 dim, u32 dtype bits (16 or
32), u64 record count, u32 kind (0=query, 1=document), then per record a u32
id length, the UTF-8 id, and dim floats of the stated width.

The synthetic teacher builds a topic-mixture geometry on the unit sphere so
the whole pipeline can run end to end on a laptop: documents scatter around
topic centers, queries scatter around their positive document, and query
text embeds the document and topic tokens a text-only student can learn.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .data_pipeline import QueryRecord
from .errors import CorruptCache, DegenerateInput, DimMismatch, DuplicateId
from .fileio import atomic_write_bytes

CACHE_MAGIC = b"NVTC"
CACHE_VERSION = 1
_KIND_CODES = {"query": 0, "document": 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


@dataclass
class TeacherCache:
    """In-memory id -> unit embedding map for one side (queries or docs)."""

    kind: str
    ids: list[str]
    matrix: np.ndarray  # N x dim, float64, unit rows
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ValueError(f"kind must be 'query' or 'document', got {self.kind!r}")
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.ids):
            raise DimMismatch(
                f"matrix shape {self.matrix.shape} does not match {len(self.ids)} ids"
            )
        self._index = {}
        for i, rec_id in enumerate(self.ids):
            if rec_id in self._index:
                raise DuplicateId(f"cache contains id {rec_id!r} twice")
            self._index[rec_id] = i

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, rec_id: str) -> bool:
        return rec_id in self._index

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def lookup(self, rec_id: str) -> np.ndarray:
        try:
            return self.matrix[self._index[rec_id]]
        except KeyError:
            raise KeyError(f"id {rec_id!r} not in {self.kind} cache") from None

    def row_of(self, rec_id: str) -> int:
        return self._index[rec_id]

    def subset(self, ids: list[str]) -> "TeacherCache":
        rows = np.array([self._index[i] for i in ids], dtype=np.intp)
        return TeacherCache(self.kind, list(ids), self.matrix[rows].copy())


def _renormalize_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateInput("cache contains a zero embedding")
    return matrix / norms


def write_teacher_cache(path, cache: TeacherCache, dtype_bits: int = 16) -> None:
    """Serialize, quantizing embeddings to float16 or float32."""
    if dtype_bits not in (16, 32):
        raise ValueError(f"dtype_bits must be 16 or 32, got {dtype_bits}")
    np_dtype = "<f2" if dtype_bits == 16 else "<f4"
    payload = bytearray()
    payload += CACHE_MAGIC
    payload += struct.pack(
        "<IIIQI",
        CACHE_VERSION,
        cache.dim,
        dtype_bits,
        len(cache.ids),
        _KIND_CODES[cache.kind],
    )
    for i, rec_id in enumerate(cache.ids):
        id_bytes = rec_id.encode("utf-8")
        payload += struct.pack("<I", len(id_bytes))
        payload += id_bytes
        payload += cache.matrix[i].astype(np_dtype).tobytes()
    atomic_write_bytes(path, bytes(payload))


_HEADER_SIZE = 4 + 4 + 4 + 4 + 8 + 4


def load_teacher_cache(path, renormalize: bool = True) -> TeacherCache:
    """Read and validate a cache file.

    Quantization to float16 perturbs norms by up to about 1e-3, so rows are
    renormalized after upconversion by default; pass renormalize=False to see
    the stored values exactly as widened floats.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER_SIZE or data[:4] != CACHE_MAGIC:
        raise CorruptCache(f"{path}: not a teacher cache file")
    version, dim, dtype_bits, count, kind_code = struct.unpack_from("<IIIQI", data, 4)
    if version != CACHE_VERSION:
        raise CorruptCache(f"{path}: unsupported version {version}")
    if dtype_bits not in (16, 32):
        raise CorruptCache(f"{path}: invalid dtype bits {dtype_bits}")
    if kind_code not in _KIND_NAMES:
        raise CorruptCache(f"{path}: invalid kind code {kind_code}")
    if dim == 0:
        raise CorruptCache(f"{path}: zero embedding dimension")
    np_dtype = "<f2" if dtype_bits == 16 else "<f4"
    bytes_per_value = dtype_bits // 8

    offset = _HEADER_SIZE
    ids: list[str] = []
    rows = np.empty((count, dim))
    for i in range(count):
        if offset + 4 > len(data):
            raise CorruptCache(f"{path}: truncated record header at index {i}")
        (id_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        end = offset + id_len + bytes_per_value * dim
        if end > len(data):
            raise CorruptCache(f"{path}: truncated record payload at index {i}")
        try:
            ids.append(data[offset : offset + id_len].decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise CorruptCache(f"{path}: undecodable id at index {i}") from exc
        offset += id_len
        rows[i] = np.frombuffer(data, dtype=np_dtype, count=dim, offset=offset)
        offset += bytes_per_value * dim
    if offset != len(data):
        raise CorruptCache(f"{path}: {len(data) - offset} trailing bytes")
    if not np.all(np.isfinite(rows)):
        raise CorruptCache(f"{path}: non-finite embedding values")
    if renormalize and count > 0:
        rows = _renormalize_rows(rows)
    return TeacherCache(_KIND_NAMES[kind_code], ids, rows)


# -- synthetic teacher ---------------------------------------------------------

_LANG_VERBS = {
    "en": "find",
    "fr": "trouver",
    "es": "buscar",
    "de": "finden",
    "it": "trovare",
    "pt": "procurar",
}


@dataclass(frozen=True)
class SyntheticTeacherSpec:
    """Geometry and size knobs for the generated corpus."""

    dim: int = 64
    num_topics: int = 16
    num_docs: int = 512
    num_train_queries: int = 2048
    num_heldout_queries: int = 256
    doc_spread: float = 0.25
    query_noise: float = 0.10
    seed: int = 0
    languages: tuple[str, ...] = ("en", "fr", "es", "de", "it", "pt")

    def __post_init__(self):
        if self.dim < 2 or self.num_topics < 1 or self.num_docs < 1:
            raise ValueError("dim >= 2, num_topics >= 1, num_docs >= 1 required")
        if self.num_train_queries < 1 or self.num_heldout_queries < 0:
            raise ValueError("need at least one training query")
        if self.doc_spread < 0 or self.query_noise < 0:
            raise ValueError("spread and noise must be non-negative")
        for lang in self.languages:
            if lang not in _LANG_VERBS:
                raise ValueError(f"unsupported language tag {lang!r}")


@dataclass
class SyntheticCorpus:
    doc_cache: TeacherCache
    query_cache: TeacherCache  # covers train and held-out queries
    train_records: list[QueryRecord]
    heldout_records: list[QueryRecord]
    qrels: dict[str, dict[str, int]]  # query id -> {doc id: grade}


def _unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    rows = rng.normal(size=(n, dim))
    return _renormalize_rows(rows)


def generate_synthetic_corpus(spec: SyntheticTeacherSpec) -> SyntheticCorpus:
    """Deterministic topic-mixture corpus with teacher embeddings and qrels.

    Document j sits near the center of topic j mod num_topics; each query
    perturbs its positive document's embedding. Query text carries the
    document and topic tokens ("d00007", "t03") plus a unique query token, so
    held-out queries about already-seen documents are solvable from text.
    """
    rng = np.random.default_rng(spec.seed)
    centers = _unit_rows(rng, spec.num_topics, spec.dim)

    doc_ids = [f"d{j:05d}" for j in range(spec.num_docs)]
    doc_vecs = centers[np.arange(spec.num_docs) % spec.num_topics]
    doc_vecs = doc_vecs + spec.doc_spread * rng.normal(size=(spec.num_docs, spec.dim))
    doc_vecs = _renormalize_rows(doc_vecs)

    total = spec.num_train_queries + spec.num_heldout_queries
    pos = rng.integers(0, spec.num_docs, size=total)
    q_vecs = doc_vecs[pos] + spec.query_noise * rng.normal(size=(total, spec.dim))
    q_vecs = _renormalize_rows(q_vecs)

    records: list[QueryRecord] = []
    qrels: dict[str, dict[str, int]] = {}
    query_ids: list[str] = []
    for i in range(total):
        lang = spec.languages[i % len(spec.languages)]
        doc_idx = int(pos[i])
        topic = doc_idx % spec.num_topics
        qid = f"q{i:06d}"
        text = f"{_LANG_VERBS[lang]} q{i:06d} document d{doc_idx:05d} topic t{topic:02d}"
        records.append(
            QueryRecord(
                id=qid,
                text=text,
                language=lang,
                source="synthetic",
                positive_doc_id=doc_ids[doc_idx],
            )
        )
        qrels[qid] = {doc_ids[doc_idx]: 1}
        query_ids.append(qid)

    return SyntheticCorpus(
        doc_cache=TeacherCache("document", doc_ids, doc_vecs),
        query_cache=TeacherCache("query", query_ids, q_vecs),
        train_records=records[: spec.num_train_queries],
        heldout_records=records[spec.num_train_queries :],
        qrels=qrels,
    )
