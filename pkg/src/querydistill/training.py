"""Distillation training loop with a one-cycle schedule and analytic grads.

The student trains against frozen caches only: teacher query embeddings are
the alignment targets and teacher document embeddings form the in-batch
similarity banks. The learning-rate schedule is indexed by optimizer update,
not micro-batch, so gradient accumulation changes memory shape but not the
schedule. Checkpoint selection is by validation alignment loss, which stays
comparable across objective mixtures.
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import encoder
from .data_pipeline import QueryRecord, stratified_split
from .encoder import StudentParams, TokenizerConfig
from .errors import (
    CorruptCache,
    DivergedRun,
    EmptyBatch,
    EmptySubset,
    InvalidStep,
    MissingDocEmbeddings,
)
from .evaluation import (
    EvalReport,
    evaluate_single_vector,
    retention_by_language,
    retention_percent,
)
from .fileio import atomic_write_bytes, sha256_bytes
from .losses import ObjectiveWeights, align_loss_batch, combined_loss, objective_grid
from .teacher_cache import TeacherCache

CHECKPOINT_MAGIC = b"NVCK"
CHECKPOINT_VERSION = 1


def onecycle_lr(
    step: int,
    total_steps: int,
    peak_lr: float,
    warmup_frac: float = 0.03,
    div_factor: float = 25.0,
    final_div_factor: float = 1e4,
) -> float:
    """One-cycle schedule value for one optimizer update.

    Linear warmup from peak_lr/div_factor to peak_lr over the first
    warmup_frac of steps, then cosine decay to peak_lr/(div_factor *
    final_div_factor) at the last step.
    """
    if total_steps <= 0:
        raise InvalidStep(f"total_steps must be positive, got {total_steps}")
    if not 0 <= step < total_steps:
        raise InvalidStep(f"step {step} outside [0, {total_steps})")
    if peak_lr <= 0 or div_factor <= 0 or final_div_factor <= 0:
        raise ValueError("peak_lr, div_factor, final_div_factor must be positive")
    if not 0.0 <= warmup_frac < 1.0:
        raise ValueError(f"warmup_frac must be in [0, 1), got {warmup_frac}")

    initial = peak_lr / div_factor
    final = initial / final_div_factor
    warmup_steps = int(round(warmup_frac * total_steps))
    if step < warmup_steps:
        return initial + (peak_lr - initial) * (step / warmup_steps)
    decay_span = (total_steps - 1) - warmup_steps
    if decay_span <= 0:
        return final if total_steps > 1 else peak_lr
    progress = (step - warmup_steps) / decay_span
    return final + (peak_lr - final) * 0.5 * (1.0 + math.cos(math.pi * progress))


def updates_per_epoch(n_records: int, batch_size: int, accum_steps: int) -> int:
    if n_records <= 0:
        raise EmptyBatch("cannot schedule over an empty training set")
    micro = math.ceil(n_records / batch_size)
    return math.ceil(micro / accum_steps)


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a training run, bit for bit."""

    seed: int = 0
    epochs: int = 20
    batch_size: int = 256
    accum_steps: int = 4
    peak_lr: float = 2e-4
    warmup_frac: float = 0.03
    div_factor: float = 25.0
    final_div_factor: float = 1e4
    align_weight: float = 1.0
    rank_weight: float = 1.0
    use_infonce: bool = False
    teacher_tau: float = 0.07
    student_tau: float = 0.05
    optimizer: str = "adam"
    hash_buckets: int = 16384
    h_dim: int = 128
    p_dim: int = 256
    init_scale: float = 0.02
    lowercase: bool = True
    token_pattern: str = "unicode"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.accum_steps < 1:
            raise ValueError("epochs, batch_size, accum_steps must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.align_weight < 0 or self.rank_weight < 0:
            raise ValueError("objective weights must be non-negative")
        if not self.use_infonce and self.align_weight == 0 and self.rank_weight == 0:
            raise ValueError("objective has no active terms")

    def objective(self) -> ObjectiveWeights:
        if self.use_infonce:
            return ObjectiveWeights(0.0, 0.0, use_infonce=True)
        return ObjectiveWeights(self.align_weight, self.rank_weight)

    def tokenizer(self) -> TokenizerConfig:
        return TokenizerConfig(self.hash_buckets, self.lowercase, self.token_pattern)


def multilingual_preset(out_dim_hint: int | None = None) -> RunConfig:
    """Recipe for large multilingual runs: shorter, hotter than the default."""
    del out_dim_hint  # output dim always follows the teacher cache
    return RunConfig(seed=42, epochs=10, peak_lr=3e-4)


def fixture_spec():
    """The shipped laptop-scale synthetic teacher everything demos against."""
    from .teacher_cache import SyntheticTeacherSpec

    return SyntheticTeacherSpec(
        dim=32,
        num_topics=16,
        num_docs=512,
        num_train_queries=2048,
        num_heldout_queries=256,
        doc_spread=0.15,
        query_noise=0.10,
        seed=0,
    )


def fixture_run_config() -> RunConfig:
    """Alignment-only recipe for the shipped fixture: 480 updates, seconds on CPU."""
    return RunConfig(
        seed=0,
        epochs=60,
        batch_size=256,
        accum_steps=1,
        peak_lr=8e-3,
        align_weight=1.0,
        rank_weight=0.0,
        hash_buckets=16384,
        h_dim=128,
        p_dim=256,
    )


def fixture_grid_config() -> RunConfig:
    """Objective-ablation recipe for the shipped fixture.

    Batches span the whole document pool, so queries sharing a positive
    document routinely co-occur in a batch. That is the regime where one-hot
    contrastive targets fight duplicate positives; the weighted objectives
    are insensitive to it.
    """
    return RunConfig(
        seed=0,
        epochs=30,
        batch_size=512,
        accum_steps=1,
        peak_lr=8e-3,
        hash_buckets=16384,
        h_dim=128,
        p_dim=256,
    )


def config_digest(config: RunConfig) -> str:
    blob = json.dumps(dataclasses.asdict(config), sort_keys=True).encode("utf-8")
    return sha256_bytes(blob)


# -- optimizers ----------------------------------------------------------------


class _Optimizer:
    def step(self, arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float):
        raise NotImplementedError


class SGD(_Optimizer):
    def step(self, arrays, grads, lr):
        for name, g in grads.items():
            arrays[name] -= lr * g


class Adam(_Optimizer):
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, arrays, grads, lr):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            arrays[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def _make_optimizer(name: str) -> _Optimizer:
    return Adam() if name == "adam" else SGD()


# -- training loop -------------------------------------------------------------


@dataclass
class TrainResult:
    params: StudentParams  # best validation checkpoint
    final_params: StudentParams
    history: list[dict]  # one entry per optimizer update
    val_history: list[dict]
    best_update: int  # 0 means the untrained init won (never happens in practice)
    best_val_loss: float
    total_updates: int


def _validation_loss(
    params: StudentParams,
    token_lists,
    feats,
    targets: np.ndarray,
    batch_size: int,
) -> float:
    """Mean alignment loss over the validation set, computed in batches."""
    n = targets.shape[0]
    total = 0.0
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        if feats is not None:
            tape = encoder.forward_batch_from_vectors(params, feats[lo:hi])
        else:
            tape = encoder.forward_batch(params, token_lists[lo:hi])
        out = align_loss_batch(tape.outputs, targets[lo:hi])
        total += out.value * (hi - lo)
    return total / n


def _prepare_inputs(records, tok_cfg, feature_provider):
    if feature_provider is not None:
        feats = np.vstack([feature_provider.lookup(r.id) for r in records]).astype(
            np.float64
        )
        return None, feats
    token_lists = [encoder.tokenize(r.text, tok_cfg) for r in records]
    return token_lists, None


def train(
    records: list[QueryRecord],
    teacher_queries: TeacherCache,
    doc_cache: TeacherCache | None,
    config: RunConfig,
    val_records: list[QueryRecord] | None = None,
    feature_provider=None,
    metrics_path=None,
    checkpoint_path=None,
) -> TrainResult:
    """Distill the teacher's query embeddings into the student.

    records supply text (or feature-provider ids); teacher_queries supplies
    the per-record target vectors; doc_cache supplies the in-batch document
    bank and is required whenever the objective has a rank or InfoNCE term.
    """
    if not records:
        raise EmptyBatch("no training records")
    objective = config.objective()
    needs_docs = objective.use_infonce or objective.rank_weight != 0.0
    if needs_docs:
        if doc_cache is None:
            raise MissingDocEmbeddings("objective needs a document cache")
        for r in records:
            if r.positive_doc_id is None:
                raise MissingDocEmbeddings(f"record {r.id!r} has no positive document")
            if r.positive_doc_id not in doc_cache:
                raise MissingDocEmbeddings(
                    f"record {r.id!r} positive {r.positive_doc_id!r} not in doc cache"
                )

    tok_cfg = config.tokenizer()
    token_lists, feats = _prepare_inputs(records, tok_cfg, feature_provider)
    targets = np.vstack([teacher_queries.lookup(r.id) for r in records])
    out_dim = teacher_queries.dim
    pos_rows = (
        np.array([doc_cache.row_of(r.positive_doc_id) for r in records], dtype=np.intp)
        if needs_docs
        else None
    )

    params = encoder.init_params(
        config.hash_buckets,
        config.h_dim,
        config.p_dim,
        out_dim,
        config.seed,
        config.init_scale,
    )
    arrays = params.arrays()
    trainable = sorted(arrays)
    if feats is not None:
        trainable = [n for n in trainable if n != "backbone_table"]
    optimizer = _make_optimizer(config.optimizer)

    n = len(records)
    per_epoch = updates_per_epoch(n, config.batch_size, config.accum_steps)
    total_updates = config.epochs * per_epoch

    val_tok, val_feats, val_targets = None, None, None
    if val_records:
        val_tok, val_feats = _prepare_inputs(val_records, tok_cfg, feature_provider)
        val_targets = np.vstack([teacher_queries.lookup(r.id) for r in val_records])

    def run_validation():
        if val_targets is None:
            return None
        return _validation_loss(
            params, val_tok, val_feats, val_targets, config.batch_size
        )

    history: list[dict] = []
    val_history: list[dict] = []
    best_val = math.inf
    best_update = 0
    best_params = params.copy()

    init_val = run_validation()
    if init_val is not None:
        val_history.append({"update": 0, "val_loss": init_val})
        best_val = init_val

    metrics_fh = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
    try:
        update_idx = 0
        for epoch in range(config.epochs):
            order = np.random.default_rng([config.seed, epoch]).permutation(n)
            micro_starts = list(range(0, n, config.batch_size))
            for g_lo in range(0, len(micro_starts), config.accum_steps):
                group = micro_starts[g_lo : g_lo + config.accum_steps]
                acc: dict[str, np.ndarray] = {k: np.zeros_like(arrays[k]) for k in trainable}
                loss_sum = 0.0
                comp_sums: dict[str, float] = {}
                for lo in group:
                    idx = order[lo : lo + config.batch_size]
                    if feats is not None:
                        tape = encoder.forward_batch_from_vectors(params, feats[idx])
                    else:
                        tape = encoder.forward_batch(
                            params, [token_lists[i] for i in idx]
                        )
                    t_rows = targets[idx]
                    docs = doc_cache.matrix[pos_rows[idx]] if needs_docs else None
                    out, components = combined_loss(
                        objective,
                        tape.outputs,
                        t_rows,
                        docs,
                        config.teacher_tau,
                        config.student_tau,
                    )
                    grads = encoder.backward_batch(params, tape, out.grad)
                    acc["w1"] += grads.w1
                    acc["b1"] += grads.b1
                    acc["w2"] += grads.w2
                    acc["b2"] += grads.b2
                    if grads.table is not None and "backbone_table" in acc:
                        acc["backbone_table"] += grads.table
                    loss_sum += out.value
                    for name, value in components.items():
                        comp_sums[name] = comp_sums.get(name, 0.0) + value

                scale = 1.0 / len(group)
                for name in acc:
                    acc[name] *= scale
                mean_loss = loss_sum * scale
                if not math.isfinite(mean_loss):
                    raise DivergedRun(
                        f"non-finite training loss at update {update_idx}", update_idx
                    )

                lr = onecycle_lr(
                    update_idx,
                    total_updates,
                    config.peak_lr,
                    config.warmup_frac,
                    config.div_factor,
                    config.final_div_factor,
                )
                optimizer.step(arrays, acc, lr)
                update_idx += 1

                entry = {
                    "update": update_idx,
                    "epoch": epoch,
                    "lr": lr,
                    "loss": mean_loss,
                }
                for name, value in comp_sums.items():
                    entry[name] = value * scale
                history.append(entry)
                if metrics_fh is not None:
                    metrics_fh.write(json.dumps(entry) + "\n")

            if not params.all_finite():
                raise DivergedRun(
                    f"non-finite parameters after epoch {epoch}", update_idx
                )
            val = run_validation()
            if val is not None:
                val_history.append({"update": update_idx, "val_loss": val})
                if val < best_val:
                    best_val = val
                    best_update = update_idx
                    best_params = params.copy()
    finally:
        if metrics_fh is not None:
            metrics_fh.close()

    if val_targets is None:
        best_params = params.copy()
        best_update = update_idx
        best_val = math.nan
    if checkpoint_path is not None:
        save_checkpoint(
            checkpoint_path, best_params, best_update, best_val, config_digest(config)
        )
    return TrainResult(
        params=best_params,
        final_params=params,
        history=history,
        val_history=val_history,
        best_update=best_update,
        best_val_loss=best_val,
        total_updates=total_updates,
    )


# -- checkpoint file -----------------------------------------------------------
#
# Little-endian: magic "NVCK", u32 version=1, u64 update, f64 val_loss,
# u32 digest length + UTF-8 config digest, u32 tensor count, then per tensor
# u32 name length, name, u32 ndim, u64 dims, float64 values.


def save_checkpoint(
    path, params: StudentParams, update: int, val_loss: float, digest: str
) -> None:
    payload = bytearray()
    payload += CHECKPOINT_MAGIC
    payload += struct.pack("<IQd", CHECKPOINT_VERSION, update, val_loss)
    digest_b = digest.encode("utf-8")
    payload += struct.pack("<I", len(digest_b))
    payload += digest_b
    arrays = params.arrays()
    payload += struct.pack("<I", len(arrays))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        name_b = name.encode("utf-8")
        payload += struct.pack("<I", len(name_b))
        payload += name_b
        payload += struct.pack("<I", arr.ndim)
        payload += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        payload += arr.tobytes()
    atomic_write_bytes(path, bytes(payload))


@dataclass
class Checkpoint:
    params: StudentParams
    update: int
    val_loss: float
    config_digest: str


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 24 or data[:4] != CHECKPOINT_MAGIC:
        raise CorruptCache(f"{path}: not a checkpoint file")
    version, update, val_loss = struct.unpack_from("<IQd", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CorruptCache(f"{path}: unsupported version {version}")
    offset = 24
    try:
        (digest_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        digest = data[offset : offset + digest_len].decode("utf-8")
        offset += digest_len
        (n_tensors,) = struct.unpack_from("<I", data, offset)
        offset += 4
        tensors: dict[str, np.ndarray] = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack_from("<I", data, offset)
            offset += 4
            name = data[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<I", data, offset)
            offset += 4
            shape = struct.unpack_from(f"<{ndim}Q", data, offset)
            offset += 8 * ndim
            count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
            offset += 8 * count
            tensors[name] = arr.reshape(shape).copy()
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise CorruptCache(f"{path}: truncated or malformed checkpoint") from exc
    if offset != len(data):
        raise CorruptCache(f"{path}: {len(data) - offset} trailing bytes")
    expected = {"backbone_table", "w1", "b1", "w2", "b2"}
    if set(tensors) != expected:
        raise CorruptCache(f"{path}: tensor set {sorted(tensors)} != {sorted(expected)}")
    params = StudentParams(
        tensors["backbone_table"],
        tensors["w1"],
        tensors["b1"],
        tensors["w2"],
        tensors["b2"],
    )
    return Checkpoint(params, update, val_loss, digest)


# -- experiments ---------------------------------------------------------------


def encode_records(
    params: StudentParams,
    records: list[QueryRecord],
    tok_cfg: TokenizerConfig,
    feature_provider=None,
    batch_size: int = 256,
) -> np.ndarray:
    """Student embeddings for a record list, in record order."""
    token_lists, feats = _prepare_inputs(records, tok_cfg, feature_provider)
    out = np.empty((len(records), params.out_dim))
    for lo in range(0, len(records), batch_size):
        hi = min(lo + batch_size, len(records))
        if feats is not None:
            tape = encoder.forward_batch_from_vectors(params, feats[lo:hi])
        else:
            tape = encoder.forward_batch(params, token_lists[lo:hi])
        out[lo:hi] = tape.outputs
    return out


@dataclass
class ExperimentResult:
    train_result: TrainResult
    student_report: EvalReport
    teacher_report: EvalReport
    retention: float
    per_language_retention: dict[str, float]


def run_distillation_experiment(
    train_records: list[QueryRecord],
    heldout_records: list[QueryRecord],
    query_cache: TeacherCache,
    doc_cache: TeacherCache,
    qrels: dict[str, dict[str, int]],
    config: RunConfig,
    k: int = 5,
    val_frac: float = 0.1,
    feature_provider=None,
    metrics_path=None,
    checkpoint_path=None,
) -> ExperimentResult:
    """Train, then measure held-out retrieval retention against the teacher."""
    fit_records, val_records = stratified_split(train_records, val_frac, config.seed)
    result = train(
        fit_records,
        query_cache,
        doc_cache,
        config,
        val_records=val_records,
        feature_provider=feature_provider,
        metrics_path=metrics_path,
        checkpoint_path=checkpoint_path,
    )
    if not heldout_records:
        raise EmptySubset("no held-out records to evaluate")
    qids = [r.id for r in heldout_records]
    student_matrix = encode_records(
        result.params, heldout_records, config.tokenizer(), feature_provider
    )
    teacher_matrix = np.vstack([query_cache.lookup(q) for q in qids])
    student_report = evaluate_single_vector(
        qids, student_matrix, doc_cache.ids, doc_cache.matrix, qrels, k
    )
    teacher_report = evaluate_single_vector(
        qids, teacher_matrix, doc_cache.ids, doc_cache.matrix, qrels, k
    )
    language_of = {r.id: r.language for r in heldout_records}
    return ExperimentResult(
        train_result=result,
        student_report=student_report,
        teacher_report=teacher_report,
        retention=retention_percent(student_report.mean, teacher_report.mean),
        per_language_retention=retention_by_language(
            student_report, teacher_report, language_of
        ),
    )


def run_objective_grid(
    train_records,
    heldout_records,
    query_cache,
    doc_cache,
    qrels,
    base_config: RunConfig,
    k: int = 5,
) -> dict[str, ExperimentResult]:
    """The ablation: every objective mixture under one shared recipe."""
    results: dict[str, ExperimentResult] = {}
    for weights in objective_grid():
        config = replace(
            base_config,
            align_weight=weights.align_weight,
            rank_weight=weights.rank_weight,
            use_infonce=weights.use_infonce,
        )
        results[weights.label()] = run_distillation_experiment(
            train_records, heldout_records, query_cache, doc_cache, qrels, config, k
        )
    return results


DEFAULT_FRACTIONS = (0.01, 0.05, 0.10, 0.25, 0.50, 1.0)


def data_efficiency_sweep(
    train_records,
    heldout_records,
    query_cache,
    doc_cache,
    qrels,
    config: RunConfig,
    fractions=DEFAULT_FRACTIONS,
    k: int = 5,
) -> dict[float, dict]:
    """Retention as a function of training-set fraction.

    Each fraction draws its own seeded subsample. A diverging cell records
    its failure step instead of aborting the sweep.
    """
    n = len(train_records)
    results: dict[float, dict] = {}
    for frac in fractions:
        if not 0.0 < frac <= 1.0:
            raise ValueError(f"fraction {frac} outside (0, 1]")
        m = math.floor(frac * n)
        if m < 1:
            raise EmptySubset(f"fraction {frac} of {n} records leaves nothing to train")
        rng = np.random.default_rng([config.seed, int(round(frac * 1_000_000))])
        picks = sorted(rng.choice(n, size=m, replace=False).tolist())
        subset = [train_records[i] for i in picks]
        try:
            exp = run_distillation_experiment(
                subset, heldout_records, query_cache, doc_cache, qrels, config, k
            )
        except DivergedRun as err:
            results[frac] = {"diverged_at": err.step, "n_train": m}
            continue
        results[frac] = {
            "n_train": m,
            "retention": exp.retention,
            "student_ndcg": exp.student_report.mean,
            "teacher_ndcg": exp.teacher_report.mean,
        }
    return results


def format_sweep_table(results: dict[float, dict]) -> str:
    """Data-efficiency table: ascending fractions, student vs teacher ceiling.

    Columns: fraction of training pairs, pair count, student NDCG@5, the
    teacher's NDCG@5 upper bound, and retention (student/teacher).
    """
    header = (
        f"{'fraction':>9} {'pairs':>8} {'student NDCG@5':>15} "
        f"{'teacher NDCG@5':>15} {'retention':>10}"
    )
    lines = [header, "-" * len(header)]
    for frac in sorted(results):
        cell = results[frac]
        label = f"{100 * frac:g}%"
        if "diverged_at" in cell:
            lines.append(
                f"{label:>9} {cell['n_train']:>8} "
                f"{'diverged@' + str(cell['diverged_at']):>31} {'':>10}"
            )
            continue
        lines.append(
            f"{label:>9} {cell['n_train']:>8} {cell['student_ndcg']:>15.4f} "
            f"{cell['teacher_ndcg']:>15.4f} {cell['retention']:>9.1f}%"
        )
    return "\n".join(lines)
