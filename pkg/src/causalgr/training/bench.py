"""Comparative runs: same data, same hyperparameters, different architectures."""
from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from causalgr.data import UserSequence, split_users
from causalgr.errors import ConfigError
from causalgr.models import Architecture, ModelConfig, SequenceBatch, init_params
from causalgr.numeric import resolve_dtype
from causalgr.training.loop import MetricsReport, TrainConfig, train, train_step
from causalgr.training.optim import Adam

TABLE_COLUMNS = ("eval_loss", "ne_long_dwell", "ne_contribution", "ne_like", "time")


def relative_delta(value: float, reference: float) -> float:
    """Percent change vs. ``reference``; negative means lower (better for loss, NE, time)."""
    if reference == 0:
        return 0.0 if value == 0 else float("inf")
    return 100.0 * (value - reference) / reference


def _row(report: MetricsReport) -> dict[str, float]:
    row = {"eval_loss": report.eval_loss}
    for task, ne in report.per_task_ne.items():
        row[f"ne_{task}"] = ne
    row["time"] = report.train_wall_clock_s
    return row


@dataclass
class BenchmarkReport:
    reports: list[MetricsReport]

    @property
    def architectures(self) -> list[str]:
        return [r.architecture for r in self.reports]

    def deltas(self) -> list[dict[str, float]]:
        """Relative percentage per column against the first report."""
        base = _row(self.reports[0])
        return [{k: relative_delta(v, base[k]) for k, v in _row(r).items()} for r in self.reports]


def benchmark(model_configs: list[ModelConfig], train_config: TrainConfig,
              dataset: list[UserSequence]) -> BenchmarkReport:
    """Train and evaluate each config in turn on one shared user split."""
    if len(model_configs) < 2:
        raise ConfigError("model: benchmark needs at least two architectures")
    shared = [replace(c, architecture=model_configs[0].architecture) for c in model_configs]
    if any(s != shared[0] for s in shared):
        raise ConfigError("model: benchmark configs may differ only in architecture")
    train_set, eval_set = split_users(dataset, train_config.eval_fraction)
    reports = [train(cfg, train_config, train_set, eval_set=eval_set).report
               for cfg in model_configs]
    return BenchmarkReport(reports)


def synthetic_batch(config: ModelConfig, seq_len: int, batch_size: int = 1, seed: int = 0,
                    dtype="f32") -> SequenceBatch:
    """Random full-length batch for timing; labels and features carry no structure."""
    rng = np.random.default_rng(seed)
    dt = resolve_dtype(dtype)
    shape = (batch_size, seq_len)
    context = np.full(batch_size, seq_len - max(1, seq_len // 4), dtype=np.int64)
    return SequenceBatch(
        rng.normal(size=shape + (config.d_item,)).astype(dt),
        rng.random(shape + (config.d_action,)).astype(dt),
        rng.integers(0, 2, size=shape + (config.n_tasks,)),
        context, np.full(batch_size, seq_len, dtype=np.int64),
        rng.integers(0, 5, size=shape + (config.late_fusion_dim,)).astype(dt))


def time_train_step(config: ModelConfig, seq_len: int, batch_size: int = 1, steps: int = 3,
                    warmup: int = 1, seed: int = 0, dtype="f32") -> float:
    """Median milliseconds of a full optimizer step (forward, backward, update)."""
    params = init_params(config, seed=seed, dtype=dtype)
    opt = Adam(params, lr=1e-4)
    batch = synthetic_batch(config, seq_len, batch_size, seed, dtype)
    times = []
    for i in range(warmup + steps):
        t0 = time.perf_counter()
        train_step(params, opt, batch, config)
        if i >= warmup:
            times.append(1e3 * (time.perf_counter() - t0))
    return float(np.median(times))


def timing_comparison(d_model: int = 64, n_layers: int = 12, seq_len: int = 512, runs: int = 5,
                      n_heads: int = 4, decoupled: Architecture = Architecture.ATTN_LFA,
                      steps: int = 2) -> list[tuple[float, float]]:
    """``(interleaved_ms, decoupled_ms)`` per run, the two measured back to back."""
    base = ModelConfig(architecture=Architecture.INTERLEAVED_BASELINE, d_model=d_model,
                       n_layers=n_layers, n_heads=n_heads, max_len=max(2048, 2 * seq_len))
    other = replace(base, architecture=decoupled)
    return [(time_train_step(base, seq_len, steps=steps, seed=r),
             time_train_step(other, seq_len, steps=steps, seed=r)) for r in range(runs)]
