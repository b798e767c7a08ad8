"""Query-side distillation toolkit for visual document retrieval.

Trains a tiny text-only student encoder to reproduce a frozen retrieval
teacher's query embeddings, so an existing document index keeps working
while query encoding sheds almost all of its cost. Includes the training
loop, retrieval evaluation with per-language retention, corpus plumbing,
and deployment benchmarks, all NumPy-based and deterministic.
"""

from .errors import (
    ConfigError,
    CorruptCache,
    DegenerateInput,
    DimMismatch,
    DivergedRun,
    DuplicateId,
    EmptyBatch,
    EmptyQuery,
    EmptySubset,
    InsufficientTranslations,
    InvalidBenchConfig,
    InvalidStep,
    InvalidTemperature,
    MissingDocEmbeddings,
    MissingFeature,
    QueryDistillError,
)
from .vectors import Embedding, MultiVector, cosine, l2_normalize, tempered_softmax
from .encoder import StudentParams, TokenizerConfig, encode, init_params, tokenize
from .losses import (
    ObjectiveWeights,
    align_loss,
    combined_loss,
    infonce_loss,
    objective_grid,
    rank_loss,
)
from .teacher_cache import (
    SyntheticTeacherSpec,
    TeacherCache,
    generate_synthetic_corpus,
    load_teacher_cache,
    write_teacher_cache,
)
from .evaluation import (
    EvalReport,
    evaluate_single_vector,
    maxsim_score,
    ndcg_at_k,
    pearson_correlation,
    retention_by_language,
    retention_percent,
)
from .data_pipeline import (
    QueryRecord,
    build_merge_plan,
    dedup_records,
    execute_merge_plan,
    stratified_split,
)
from .training import (
    RunConfig,
    TrainResult,
    data_efficiency_sweep,
    fixture_grid_config,
    fixture_run_config,
    fixture_spec,
    format_sweep_table,
    load_checkpoint,
    multilingual_preset,
    onecycle_lr,
    run_distillation_experiment,
    run_objective_grid,
    save_checkpoint,
    train,
    updates_per_epoch,
)
from .benchmarks import (
    BenchConfig,
    IndexSpec,
    bench_single_vector_query,
    cache_storage_bytes,
    late_interaction_index,
    precache_plan,
    single_vector_index,
    time_callable,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "QueryDistillError",
    "ConfigError",
    "CorruptCache",
    "DegenerateInput",
    "DimMismatch",
    "DivergedRun",
    "DuplicateId",
    "EmptyBatch",
    "EmptyQuery",
    "EmptySubset",
    "InsufficientTranslations",
    "InvalidBenchConfig",
    "InvalidStep",
    "InvalidTemperature",
    "MissingDocEmbeddings",
    "MissingFeature",
    # vectors
    "Embedding",
    "MultiVector",
    "cosine",
    "l2_normalize",
    "tempered_softmax",
    # encoder
    "StudentParams",
    "TokenizerConfig",
    "encode",
    "init_params",
    "tokenize",
    # losses
    "ObjectiveWeights",
    "align_loss",
    "combined_loss",
    "infonce_loss",
    "objective_grid",
    "rank_loss",
    # teacher cache
    "SyntheticTeacherSpec",
    "TeacherCache",
    "generate_synthetic_corpus",
    "load_teacher_cache",
    "write_teacher_cache",
    # evaluation
    "EvalReport",
    "evaluate_single_vector",
    "maxsim_score",
    "ndcg_at_k",
    "pearson_correlation",
    "retention_by_language",
    "retention_percent",
    # data pipeline
    "QueryRecord",
    "build_merge_plan",
    "dedup_records",
    "execute_merge_plan",
    "stratified_split",
    # training
    "RunConfig",
    "TrainResult",
    "data_efficiency_sweep",
    "fixture_grid_config",
    "fixture_run_config",
    "fixture_spec",
    "format_sweep_table",
    "load_checkpoint",
    "multilingual_preset",
    "onecycle_lr",
    "run_distillation_experiment",
    "run_objective_grid",
    "save_checkpoint",
    "train",
    "updates_per_epoch",
    # benchmarks
    "BenchConfig",
    "IndexSpec",
    "bench_single_vector_query",
    "cache_storage_bytes",
    "late_interaction_index",
    "precache_plan",
    "single_vector_index",
    "time_callable",
]
