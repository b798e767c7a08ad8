"""Command-line pipeline: synth, cache, prepare, train, eval, grid, sweep, bench.

Configuration is TOML. Unknown keys or wrong value types are hard errors,
and every violation in the file is reported at once, not just the first.
Every artifact-producing command writes a reproduction manifest holding the
config digest, seed, and SHA-256 of each input and output file.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .benchmarks import (
    BenchConfig,
    bench_single_vector_query,
    format_storage_table,
    late_interaction_index,
    single_vector_index,
)
from .data_pipeline import (
    dedup_records,
    language_counts,
    read_records,
    stratified_split,
    write_records,
)
from .errors import ConfigError, QueryDistillError
from .fileio import atomic_write_json, sha256_file
from .teacher_cache import (
    SyntheticTeacherSpec,
    TeacherCache,
    generate_synthetic_corpus,
    load_teacher_cache,
    write_teacher_cache,
)
from .training import (
    DEFAULT_FRACTIONS,
    RunConfig,
    config_digest,
    data_efficiency_sweep,
    format_sweep_table,
    load_checkpoint,
    run_distillation_experiment,
    run_objective_grid,
)
from . import evaluation, training

_EVAL_KEYS = {"k": int, "val_frac": float}
_SWEEP_KEYS = {"fractions": list}


@dataclasses.dataclass
class AppConfig:
    run: RunConfig
    synth: SyntheticTeacherSpec
    eval_k: int = 5
    val_frac: float = 0.1
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS


def _check_value(expected_type, value):
    """TOML value against a field's default type; returns coerced or None."""
    if expected_type is bool:
        return value if isinstance(value, bool) else None
    if expected_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            return None
        return value
    if expected_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return None
        return float(value)
    if expected_type is str:
        return value if isinstance(value, str) else None
    if expected_type is tuple:
        return tuple(value) if isinstance(value, list) else None
    return None


def _section_kwargs(table: dict, cls, section: str, violations: list[str]) -> dict:
    defaults = cls()
    kwargs = {}
    for key, value in table.items():
        if not hasattr(defaults, key) or key.startswith("_"):
            violations.append(f"[{section}] {key}: unknown key")
            continue
        expected = type(getattr(defaults, key))
        coerced = _check_value(expected, value)
        if coerced is None:
            violations.append(
                f"[{section}] {key}: expected {expected.__name__}, "
                f"got {type(value).__name__}"
            )
            continue
        kwargs[key] = coerced
    return kwargs


def parse_config(data: dict, source: str = "<config>") -> AppConfig:
    """Strict-by-construction config parse; collects every violation."""
    violations: list[str] = []
    known_sections = {"run", "synth", "eval", "sweep"}
    for section in data:
        if section not in known_sections:
            violations.append(f"[{section}]: unknown section")

    run_kwargs = _section_kwargs(data.get("run", {}), RunConfig, "run", violations)
    synth_kwargs = _section_kwargs(
        data.get("synth", {}), SyntheticTeacherSpec, "synth", violations
    )

    eval_k, val_frac = 5, 0.1
    for key, value in data.get("eval", {}).items():
        if key not in _EVAL_KEYS:
            violations.append(f"[eval] {key}: unknown key")
        elif key == "k":
            coerced = _check_value(int, value)
            if coerced is None or coerced < 1:
                violations.append(f"[eval] k: expected positive int, got {value!r}")
            else:
                eval_k = coerced
        else:
            coerced = _check_value(float, value)
            if coerced is None or not 0.0 <= coerced < 1.0:
                violations.append("[eval] val_frac: expected float in [0, 1)")
            else:
                val_frac = coerced

    fractions = DEFAULT_FRACTIONS
    for key, value in data.get("sweep", {}).items():
        if key != "fractions":
            violations.append(f"[sweep] {key}: unknown key")
            continue
        if not isinstance(value, list) or not value:
            violations.append("[sweep] fractions: expected non-empty list of floats")
            continue
        ok = all(
            isinstance(v, (int, float)) and not isinstance(v, bool) and 0 < v <= 1
            for v in value
        )
        if not ok:
            violations.append("[sweep] fractions: every value must be in (0, 1]")
        else:
            fractions = tuple(float(v) for v in value)

    run = synth = None
    if not violations:
        try:
            run = RunConfig(**run_kwargs)
        except ValueError as exc:
            violations.append(f"[run]: {exc}")
        try:
            synth = SyntheticTeacherSpec(**synth_kwargs)
        except ValueError as exc:
            violations.append(f"[synth]: {exc}")
    if violations:
        raise ConfigError([f"{source}: {v}" for v in violations])
    return AppConfig(run, synth, eval_k, val_frac, fractions)


def load_config(path: str | None) -> AppConfig:
    if path is None:
        return AppConfig(RunConfig(), SyntheticTeacherSpec())
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError([f"{path}: invalid TOML: {exc}"]) from exc
    return parse_config(data, source=path)


def _write_manifest(out_dir, command, cfg: AppConfig | None, inputs, artifacts):
    manifest = {
        "command": command,
        "created_unix": int(time.time()),
        "config_digest": config_digest(cfg.run) if cfg else None,
        "seed": cfg.run.seed if cfg else None,
        "inputs": {os.path.basename(p): sha256_file(p) for p in inputs},
        "artifacts": {os.path.basename(p): sha256_file(p) for p in artifacts},
    }
    path = os.path.join(out_dir, f"manifest-{command}.json")
    atomic_write_json(path, manifest)
    return path


def _data_paths(data_dir):
    return {
        "train": os.path.join(data_dir, "train.jsonl"),
        "heldout": os.path.join(data_dir, "heldout.jsonl"),
        "queries": os.path.join(data_dir, "queries.nvtc"),
        "docs": os.path.join(data_dir, "docs.nvtc"),
        "qrels": os.path.join(data_dir, "qrels.json"),
    }


def _load_data_dir(data_dir):
    p = _data_paths(data_dir)
    train = read_records(p["train"])
    heldout = read_records(p["heldout"])
    queries = load_teacher_cache(p["queries"])
    docs = load_teacher_cache(p["docs"])
    with open(p["qrels"], "r", encoding="utf-8") as fh:
        qrels = {q: {d: int(g) for d, g in v.items()} for q, v in json.load(fh).items()}
    return train, heldout, queries, docs, qrels


# -- subcommands ----------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    corpus = generate_synthetic_corpus(cfg.synth)
    os.makedirs(args.out_dir, exist_ok=True)
    p = _data_paths(args.out_dir)
    write_teacher_cache(p["docs"], corpus.doc_cache, args.dtype_bits)
    write_teacher_cache(p["queries"], corpus.query_cache, args.dtype_bits)
    write_records(p["train"], corpus.train_records)
    write_records(p["heldout"], corpus.heldout_records)
    atomic_write_json(p["qrels"], corpus.qrels)
    manifest = _write_manifest(args.out_dir, "synth", cfg, [], p.values())
    print(
        f"synthetic corpus: {len(corpus.doc_cache)} docs, "
        f"{len(corpus.train_records)} train / {len(corpus.heldout_records)} held-out "
        f"queries, dim {cfg.synth.dim}"
    )
    print(f"wrote {args.out_dir} (manifest {os.path.basename(manifest)})")
    return 0


def cmd_cache(args) -> int:
    vectors = np.load(args.vectors)
    with open(args.ids, "r", encoding="utf-8") as fh:
        ids = [line.strip() for line in fh if line.strip()]
    norms = np.linalg.norm(vectors.astype(np.float64), axis=1, keepdims=True)
    cache = TeacherCache(args.kind, ids, vectors.astype(np.float64) / norms)
    write_teacher_cache(args.out, cache, args.dtype_bits)
    print(f"wrote {args.kind} cache: {len(cache)} embeddings, dim {cache.dim}")
    return 0


def cmd_prepare(args) -> int:
    records = read_records(args.input)
    deduped, removed = dedup_records(records)
    train, val = stratified_split(deduped, args.val_frac, args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    train_path = os.path.join(args.out_dir, "train-split.jsonl")
    val_path = os.path.join(args.out_dir, "val-split.jsonl")
    write_records(train_path, train)
    write_records(val_path, val)
    stats = {
        "input": len(records),
        "duplicates_removed": removed,
        "train": len(train),
        "val": len(val),
        "train_languages": language_counts(train),
        "val_languages": language_counts(val),
    }
    stats_path = os.path.join(args.out_dir, "prepare-stats.json")
    atomic_write_json(stats_path, stats)
    _write_manifest(
        args.out_dir, "prepare", None, [args.input], [train_path, val_path, stats_path]
    )
    print(
        f"prepare: {len(records)} in, {removed} duplicates removed, "
        f"{len(train)} train / {len(val)} val"
    )
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    train, heldout, queries, docs, qrels = _load_data_dir(args.data_dir)
    os.makedirs(args.out_dir, exist_ok=True)
    metrics_path = os.path.join(args.out_dir, "metrics.jsonl")
    ckpt_path = os.path.join(args.out_dir, "checkpoint.nvck")
    result = run_distillation_experiment(
        train,
        heldout,
        queries,
        docs,
        qrels,
        cfg.run,
        k=cfg.eval_k,
        val_frac=cfg.val_frac,
        metrics_path=metrics_path,
        checkpoint_path=ckpt_path,
    )
    eval_path = os.path.join(args.out_dir, "eval.json")
    atomic_write_json(eval_path, _experiment_dict(result, cfg.eval_k))
    inputs = list(_data_paths(args.data_dir).values())
    _write_manifest(args.out_dir, "train", cfg, inputs, [metrics_path, ckpt_path, eval_path])
    tr = result.train_result
    print(
        f"trained {tr.total_updates} updates; best val loss "
        f"{tr.best_val_loss:.6f} at update {tr.best_update}"
    )
    print(
        f"held-out NDCG@{cfg.eval_k}: student {result.student_report.mean:.4f}, "
        f"teacher {result.teacher_report.mean:.4f}, retention {result.retention:.1f}%"
    )
    return 0


def _experiment_dict(result, k) -> dict:
    return {
        "k": k,
        "student_ndcg": result.student_report.mean,
        "teacher_ndcg": result.teacher_report.mean,
        "retention_percent": result.retention,
        "per_language_retention": result.per_language_retention,
        "excluded_queries": len(result.student_report.excluded),
        "best_update": result.train_result.best_update,
        "best_val_loss": result.train_result.best_val_loss,
        "total_updates": result.train_result.total_updates,
    }


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    _, heldout, queries, docs, qrels = _load_data_dir(args.data_dir)
    ckpt = load_checkpoint(args.checkpoint)
    qids = [r.id for r in heldout]
    student = training.encode_records(ckpt.params, heldout, cfg.run.tokenizer())
    teacher = np.vstack([queries.lookup(q) for q in qids])
    student_report = evaluation.evaluate_single_vector(
        qids, student, docs.ids, docs.matrix, qrels, cfg.eval_k
    )
    teacher_report = evaluation.evaluate_single_vector(
        qids, teacher, docs.ids, docs.matrix, qrels, cfg.eval_k
    )
    language_of = {r.id: r.language for r in heldout}
    report = {
        "k": cfg.eval_k,
        "checkpoint_update": ckpt.update,
        "student_ndcg": student_report.mean,
        "teacher_ndcg": teacher_report.mean,
        "retention_percent": evaluation.retention_percent(
            student_report.mean, teacher_report.mean
        ),
        "per_language_retention": evaluation.retention_by_language(
            student_report, teacher_report, language_of
        ),
        "per_language_student_ndcg": evaluation.aggregate_by_language(
            student_report, language_of
        ),
        "excluded_queries": len(student_report.excluded),
    }
    atomic_write_json(args.out, report)
    print(
        f"NDCG@{cfg.eval_k}: student {report['student_ndcg']:.4f}, "
        f"teacher {report['teacher_ndcg']:.4f}, "
        f"retention {report['retention_percent']:.1f}%"
    )
    for lang, ret in report["per_language_retention"].items():
        print(f"  {lang}: {ret:.1f}%")
    return 0


def cmd_grid(args) -> int:
    cfg = load_config(args.config)
    train, heldout, queries, docs, qrels = _load_data_dir(args.data_dir)
    results = run_objective_grid(
        train, heldout, queries, docs, qrels, cfg.run, k=cfg.eval_k
    )
    payload = {label: _experiment_dict(r, cfg.eval_k) for label, r in results.items()}
    atomic_write_json(args.out, payload)
    print(f"{'objective':<24} {'student':>8} {'teacher':>8} {'retention':>10}")
    for label, r in results.items():
        print(
            f"{label:<24} {r.student_report.mean:>8.4f} "
            f"{r.teacher_report.mean:>8.4f} {r.retention:>9.1f}%"
        )
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    train, heldout, queries, docs, qrels = _load_data_dir(args.data_dir)
    results = data_efficiency_sweep(
        train, heldout, queries, docs, qrels, cfg.run, cfg.fractions, cfg.eval_k
    )
    atomic_write_json(args.out, {str(f): v for f, v in results.items()})
    print(format_sweep_table(results))
    return 0


def cmd_bench(args) -> int:
    rng = np.random.default_rng(args.seed)
    docs = rng.normal(size=(args.num_docs, args.dim))
    docs /= np.linalg.norm(docs, axis=1, keepdims=True)
    query = rng.normal(size=args.dim)
    query /= np.linalg.norm(query)
    bcfg = BenchConfig(args.warmup, args.repeats)
    timing = bench_single_vector_query(
        docs.astype(np.float32), query.astype(np.float32), args.k, bcfg
    )
    specs = [
        single_vector_index("student-single-vector-f32", args.num_docs, args.dim, 4),
        late_interaction_index(
            "late-interaction-f16", args.num_docs, args.tokens_per_doc, args.dim, 2
        ),
    ]
    report = {
        "num_docs": timing["num_docs"],
        "dim": timing["dim"],
        "k": timing["k"],
        "score": timing["score"].to_dict(),
        "select": timing["select"].to_dict(),
        "storage": {
            s.name: {"bytes": s.total_bytes, "gigabytes": s.gigabytes} for s in specs
        },
    }
    if args.out:
        atomic_write_json(args.out, report)
    score_ms = timing["score"].median_ns / 1e6
    select_ms = timing["select"].median_ns / 1e6
    print(
        f"score {args.num_docs} docs x dim {args.dim}: median {score_ms:.3f} ms, "
        f"top-{args.k} select: median {select_ms:.3f} ms"
    )
    print(format_storage_table(specs))
    return 0


def cmd_report(args) -> int:
    eval_path = os.path.join(args.run_dir, "eval.json")
    with open(eval_path, "r", encoding="utf-8") as fh:
        ev = json.load(fh)
    print(f"run report: {args.run_dir}")
    print(
        f"  NDCG@{ev['k']}: student {ev['student_ndcg']:.4f} "
        f"teacher {ev['teacher_ndcg']:.4f} retention {ev['retention_percent']:.1f}%"
    )
    for lang, ret in sorted(ev.get("per_language_retention", {}).items()):
        print(f"    {lang}: {ret:.1f}%")
    metrics_path = os.path.join(args.run_dir, "metrics.jsonl")
    if os.path.exists(metrics_path):
        with open(metrics_path, "r", encoding="utf-8") as fh:
            lines = [json.loads(l) for l in fh if l.strip()]
        if lines:
            first, last = lines[0], lines[-1]
            print(
                f"  loss: {first['loss']:.4f} -> {last['loss']:.4f} "
                f"over {last['update']} updates"
            )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="querydistill",
        description="Distill frozen retrieval-teacher query embeddings into a "
        "tiny text-only encoder, then evaluate and benchmark it.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic teacher corpus")
    p.add_argument("--config", help="TOML config path")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--dtype-bits", type=int, default=32, choices=(16, 32))
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("cache", help="pack id+vector files into a teacher cache")
    p.add_argument("--ids", required=True, help="text file, one id per line")
    p.add_argument("--vectors", required=True, help=".npy matrix, rows match ids")
    p.add_argument("--kind", required=True, choices=("query", "document"))
    p.add_argument("--out", required=True)
    p.add_argument("--dtype-bits", type=int, default=16, choices=(16, 32))
    p.set_defaults(fn=cmd_cache)

    p = sub.add_parser("prepare", help="dedup and split a query corpus")
    p.add_argument("--input", required=True, help="JSONL query records")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--val-frac", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("train", help="distill and evaluate one configuration")
    p.add_argument("--config", help="TOML config path")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate an existing checkpoint")
    p.add_argument("--config", help="TOML config path")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("grid", help="run the objective-mixture ablation grid")
    p.add_argument("--config", help="TOML config path")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_grid)

    p = sub.add_parser("sweep", help="retention vs training-data fraction")
    p.add_argument("--config", help="TOML config path")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("bench", help="time query scoring and size the index")
    p.add_argument("--num-docs", type=int, default=100_000)
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--tokens-per-doc", type=int, default=1000)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--repeats", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("report", help="summarize a finished training run")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        for violation in exc.violations:
            print(f"config error: {violation}", file=sys.stderr)
        return 2
    except QueryDistillError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        detail = exc.strerror or str(exc)
        if exc.filename:
            detail = f"{detail}: {exc.filename}"
        print(f"error: {detail}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
