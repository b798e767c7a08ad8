"""Text-only student encoder with analytic forward and backward passes.

The encoder is backbone -> mean pooling -> two-layer projector with GELU ->
L2 normalization. The backbone is a hashed embedding bag: token ids are
FNV-1a hashes reduced modulo a power-of-two bucket count, so tokenization is
stable across runs and platforms. An external feature provider file can
replace the backbone entirely, in which case a pre-pooled vector enters the
projector directly and only the projector weights train.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import (
    CorruptCache,
    DegenerateInput,
    DimMismatch,
    EmptyQuery,
    MissingFeature,
)
from .fileio import atomic_write_bytes
from .vectors import Embedding, l2_normalize

_WORD_RE = re.compile(r"\w+", re.UNICODE)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64_MASK = 0xFFFFFFFFFFFFFFFF

FEATURE_MAGIC = b"NVFP"
FEATURE_VERSION = 1


def fnv1a_64(data: bytes) -> int:
    """FNV-1a 64-bit hash; the platform-independent token id source."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _U64_MASK
    return h


@dataclass(frozen=True)
class TokenizerConfig:
    vocab_hash_buckets: int = 16384
    lowercase: bool = True
    token_pattern: str = "unicode"  # "unicode" word segmentation or "whitespace"

    def __post_init__(self):
        n = self.vocab_hash_buckets
        if n < 2 or (n & (n - 1)) != 0:
            raise ValueError("vocab_hash_buckets must be a power of two >= 2")
        if self.token_pattern not in ("unicode", "whitespace"):
            raise ValueError(f"unknown token_pattern {self.token_pattern!r}")


def tokenize(text: str, cfg: TokenizerConfig) -> list[int]:
    """Hash text into bucket ids. Deterministic; raises EmptyQuery on no tokens."""
    if cfg.lowercase:
        text = text.lower()
    if cfg.token_pattern == "whitespace":
        pieces = text.split()
    else:
        pieces = _WORD_RE.findall(text)
    if not pieces:
        raise EmptyQuery("text produced no tokens")
    mask = cfg.vocab_hash_buckets - 1
    return [fnv1a_64(p.encode("utf-8")) & mask for p in pieces]


@dataclass
class StudentParams:
    """All trainable state: embedding bag table plus the two projector layers."""

    backbone_table: np.ndarray  # hash_buckets x h_dim
    w1: np.ndarray  # h_dim x p_dim
    b1: np.ndarray  # p_dim
    w2: np.ndarray  # p_dim x out_dim
    b2: np.ndarray  # out_dim

    @property
    def hash_buckets(self) -> int:
        return int(self.backbone_table.shape[0])

    @property
    def h_dim(self) -> int:
        return int(self.backbone_table.shape[1])

    @property
    def p_dim(self) -> int:
        return int(self.w1.shape[1])

    @property
    def out_dim(self) -> int:
        return int(self.w2.shape[1])

    def all_finite(self) -> bool:
        return all(
            bool(np.all(np.isfinite(a)))
            for a in (self.backbone_table, self.w1, self.b1, self.w2, self.b2)
        )

    def copy(self) -> "StudentParams":
        return StudentParams(
            self.backbone_table.copy(),
            self.w1.copy(),
            self.b1.copy(),
            self.w2.copy(),
            self.b2.copy(),
        )

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "backbone_table": self.backbone_table,
            "w1": self.w1,
            "b1": self.b1,
            "w2": self.w2,
            "b2": self.b2,
        }


def init_params(
    hash_buckets: int,
    h_dim: int,
    p_dim: int,
    out_dim: int,
    seed: int,
    init_scale: float = 0.02,
) -> StudentParams:
    """Normal(0, init_scale) weights, zero biases, deterministic in seed."""
    rng = np.random.default_rng(seed)
    return StudentParams(
        backbone_table=rng.normal(0.0, init_scale, (hash_buckets, h_dim)),
        w1=rng.normal(0.0, init_scale, (h_dim, p_dim)),
        b1=np.zeros(p_dim),
        w2=rng.normal(0.0, init_scale, (p_dim, out_dim)),
        b2=np.zeros(out_dim),
    )


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact erf-form GELU: x * Phi(x)."""
    return x * 0.5 * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    """d/dx of exact GELU: Phi(x) + x * phi(x)."""
    phi = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * phi


@dataclass
class ForwardTape:
    """Intermediates cached by forward for the analytic backward pass."""

    token_ids: list[int]  # sorted; empty when a provided feature vector was used
    pooled: np.ndarray
    pre_act: np.ndarray
    hidden: np.ndarray
    pre_norm: np.ndarray
    output: Embedding


@dataclass
class ParamGrads:
    """Per-call gradients; backbone rows are sparse (only touched buckets)."""

    backbone_rows: dict[int, np.ndarray]
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


def _project(params: StudentParams, pooled: np.ndarray):
    pre_act = pooled @ params.w1 + params.b1
    hidden = gelu(pre_act)
    pre_norm = hidden @ params.w2 + params.b2
    return pre_act, hidden, pre_norm


def forward(params: StudentParams, token_ids: list[int]) -> ForwardTape:
    """Mean-pool backbone rows, project, normalize.

    Token ids are summed in sorted order so floating-point accumulation does
    not depend on the caller's token order.
    """
    if not token_ids:
        raise EmptyQuery("forward needs at least one token id")
    ids = sorted(token_ids)
    pooled = params.backbone_table[ids].sum(axis=0) / len(ids)
    pre_act, hidden, pre_norm = _project(params, pooled)
    output = l2_normalize(pre_norm)
    return ForwardTape(ids, pooled, pre_act, hidden, pre_norm, output)


def forward_from_vector(params: StudentParams, vec: np.ndarray) -> ForwardTape:
    """Feature-provider path: the given vector enters the projector directly."""
    pooled = np.asarray(vec, dtype=np.float64)
    if pooled.shape != (params.h_dim,):
        raise DimMismatch(
            f"feature vector has shape {pooled.shape}, expected ({params.h_dim},)"
        )
    pre_act, hidden, pre_norm = _project(params, pooled)
    output = l2_normalize(pre_norm)
    return ForwardTape([], pooled, pre_act, hidden, pre_norm, output)


def backward(
    tape: ForwardTape, params: StudentParams, grad_output: np.ndarray
) -> ParamGrads:
    """Chain rule from d(loss)/d(normalized output) back to every parameter.

    Applies the normalization Jacobian (I - y y^T)/||pre_norm|| and the exact
    GELU derivative. Each touched backbone row receives 1/T of the pooled
    gradient per occurrence.
    """
    g_y = np.asarray(grad_output, dtype=np.float64)
    y = tape.output.values
    norm = float(np.linalg.norm(tape.pre_norm))
    g_z = (g_y - y * float(y @ g_y)) / norm

    g_w2 = np.outer(tape.hidden, g_z)
    g_b2 = g_z.copy()
    g_hidden = g_z @ params.w2.T
    g_pre = g_hidden * gelu_grad(tape.pre_act)
    g_w1 = np.outer(tape.pooled, g_pre)
    g_b1 = g_pre.copy()

    rows: dict[int, np.ndarray] = {}
    if tape.token_ids:
        g_pooled = g_pre @ params.w1.T
        share = g_pooled / len(tape.token_ids)
        for tok in tape.token_ids:
            if tok in rows:
                rows[tok] = rows[tok] + share
            else:
                rows[tok] = share.copy()
    return ParamGrads(rows, g_w1, g_b1, g_w2, g_b2)


# -- batched training path ---------------------------------------------------
#
# Identical math to the per-item functions, vectorized over the batch axis.
# The trainer uses these for speed; tests pin batched == per-item.


@dataclass
class BatchTape:
    token_lists: list[list[int]] | None
    pooled: np.ndarray  # B x h
    pre_act: np.ndarray  # B x p
    hidden: np.ndarray  # B x p
    pre_norm: np.ndarray  # B x d
    norms: np.ndarray  # B
    outputs: np.ndarray  # B x d, unit rows


@dataclass
class EncoderGrads:
    """Dense parameter gradients for one micro-batch (summed over items)."""

    table: np.ndarray | None  # hash_buckets x h_dim, None on the feature path
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


def forward_batch(params: StudentParams, token_lists: list[list[int]]) -> BatchTape:
    sorted_lists = [sorted(ids) for ids in token_lists]
    pooled = np.empty((len(sorted_lists), params.h_dim))
    for i, ids in enumerate(sorted_lists):
        if not ids:
            raise EmptyQuery(f"batch item {i} has no tokens")
        pooled[i] = params.backbone_table[ids].sum(axis=0) / len(ids)
    return _finish_batch(params, pooled, sorted_lists)


def forward_batch_from_vectors(params: StudentParams, feats: np.ndarray) -> BatchTape:
    pooled = np.asarray(feats, dtype=np.float64)
    if pooled.ndim != 2 or pooled.shape[1] != params.h_dim:
        raise DimMismatch(
            f"feature matrix has shape {pooled.shape}, expected (B, {params.h_dim})"
        )
    return _finish_batch(params, pooled.copy(), None)


def _finish_batch(params, pooled, token_lists) -> BatchTape:
    pre_act = pooled @ params.w1 + params.b1
    hidden = gelu(pre_act)
    pre_norm = hidden @ params.w2 + params.b2
    norms = np.linalg.norm(pre_norm, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateInput("a batch item produced a zero pre-normalization vector")
    outputs = pre_norm / norms[:, None]
    return BatchTape(token_lists, pooled, pre_act, hidden, pre_norm, norms, outputs)


def backward_batch(
    params: StudentParams, tape: BatchTape, grad_outputs: np.ndarray
) -> EncoderGrads:
    """Sum of per-item parameter gradients, reduced in batch-index order."""
    g_y = np.asarray(grad_outputs, dtype=np.float64)
    y = tape.outputs
    g_z = (g_y - y * np.sum(y * g_y, axis=1, keepdims=True)) / tape.norms[:, None]

    g_w2 = tape.hidden.T @ g_z
    g_b2 = g_z.sum(axis=0)
    g_hidden = g_z @ params.w2.T
    g_pre = g_hidden * gelu_grad(tape.pre_act)
    g_w1 = tape.pooled.T @ g_pre
    g_b1 = g_pre.sum(axis=0)

    table_grad = None
    if tape.token_lists is not None:
        g_pooled = g_pre @ params.w1.T
        table_grad = np.zeros_like(params.backbone_table)
        for i, ids in enumerate(tape.token_lists):
            np.add.at(table_grad, ids, g_pooled[i] / len(ids))
    return EncoderGrads(table_grad, g_w1, g_b1, g_w2, g_b2)


def encode(params: StudentParams, text: str, cfg: TokenizerConfig) -> Embedding:
    """Tokenize + forward; the single-query inference entry point."""
    return forward(params, tokenize(text, cfg)).output


# -- feature provider file ----------------------------------------------------
#
# Little-endian binary: magic "NVFP", u32 version=1, u32 dim, u64 count, then
# per record u32 id-length, UTF-8 id bytes, dim x float32 values.


def write_feature_file(path, records: list[tuple[str, np.ndarray]], dim: int) -> None:
    payload = bytearray()
    payload += FEATURE_MAGIC
    payload += struct.pack("<IIQ", FEATURE_VERSION, dim, len(records))
    for rec_id, vec in records:
        arr = np.asarray(vec, dtype="<f4")
        if arr.shape != (dim,):
            raise DimMismatch(f"record {rec_id!r} has shape {arr.shape}, expected ({dim},)")
        id_bytes = rec_id.encode("utf-8")
        payload += struct.pack("<I", len(id_bytes))
        payload += id_bytes
        payload += arr.tobytes()
    atomic_write_bytes(path, bytes(payload))


def load_external_features(path) -> "FeatureProvider":
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 20 or data[:4] != FEATURE_MAGIC:
        raise CorruptCache(f"{path}: not a feature-provider file")
    version, dim, count = struct.unpack_from("<IIQ", data, 4)
    if version != FEATURE_VERSION:
        raise CorruptCache(f"{path}: unsupported version {version}")
    offset = 20
    features: dict[str, np.ndarray] = {}
    for _ in range(count):
        if offset + 4 > len(data):
            raise CorruptCache(f"{path}: truncated record header")
        (id_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        end = offset + id_len + 4 * dim
        if end > len(data):
            raise CorruptCache(f"{path}: truncated record payload")
        rec_id = data[offset : offset + id_len].decode("utf-8")
        offset += id_len
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).copy()
        offset += 4 * dim
        features[rec_id] = vec
    return FeatureProvider(features, dim)


class FeatureProvider:
    """Id -> pre-pooled vector store backing the external-backbone path."""

    def __init__(self, features: dict[str, np.ndarray], dim: int):
        self._features = features
        self.dim = dim

    def __len__(self) -> int:
        return len(self._features)

    def __contains__(self, rec_id: str) -> bool:
        return rec_id in self._features

    def lookup(self, rec_id: str) -> np.ndarray:
        try:
            return self._features[rec_id]
        except KeyError:
            raise MissingFeature(f"no feature vector for id {rec_id!r}") from None
