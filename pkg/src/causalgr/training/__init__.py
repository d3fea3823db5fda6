"""Multi-task BCE training, candidate-isolated evaluation, NE and benchmarking."""
from causalgr.training.bench import (
    TABLE_COLUMNS,
    BenchmarkReport,
    benchmark,
    relative_delta,
    synthetic_batch,
    time_train_step,
    timing_comparison,
)
from causalgr.training.losses import (
    DEFAULT_CLAMP,
    bce_values,
    binary_entropy,
    multitask_bce,
    normalized_entropy,
    stable_sigmoid,
)
from causalgr.training.loop import (
    TIMING_FIELDS,
    MetricsReport,
    TrainConfig,
    TrainResult,
    candidate_logits,
    candidate_predictions,
    evaluate,
    sequence_blind_accuracy,
    train,
    train_step,
)
from causalgr.training.optim import Adam
from causalgr.training.reports import (
    format_table,
    metrics_document,
    report_json,
    write_bench_reports,
)

__all__ = [
    "DEFAULT_CLAMP", "TABLE_COLUMNS", "TIMING_FIELDS", "Adam", "BenchmarkReport",
    "MetricsReport", "TrainConfig", "TrainResult", "bce_values", "benchmark",
    "binary_entropy", "candidate_logits", "candidate_predictions", "evaluate",
    "format_table", "metrics_document", "multitask_bce", "normalized_entropy",
    "relative_delta", "report_json", "sequence_blind_accuracy", "stable_sigmoid",
    "synthetic_batch", "time_train_step", "timing_comparison", "train", "train_step",
    "write_bench_reports",
]
