"""``causalgr`` command line: generate, train, eval, bench, verify.

Config files are YAML with optional sections ``generator``, ``model``, ``train``
and the keys ``architectures``, ``output_dir`` and ``report_format``.  Flags
override file values field by field.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from causalgr.data import (
    GeneratorConfig,
    UserSequence,
    dog_cat_dataset,
    generate_dataset,
    read_dataset,
    split_users,
    task_names,
    write_dataset,
)
from causalgr.errors import CausalGRError, ConfigError
from causalgr.models import Architecture, ModelConfig, load_checkpoint, save_checkpoint
from causalgr.training import (
    TrainConfig,
    benchmark,
    evaluate,
    format_table,
    report_json,
    train,
    write_bench_reports,
)

DEFAULT_BENCH = ["InterleavedBaseline", "AttnLFA", "AttnMVP", "AttnMVPNoLFA"]
REPORT_FORMATS = ("table", "json")


def _desk_model() -> dict:
    return {"d_model": 32, "n_layers": 2, "n_heads": 4}


@dataclass
class ExperimentConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    model: dict = field(default_factory=_desk_model)
    train: TrainConfig = field(default_factory=TrainConfig)
    architectures: list[str] = field(default_factory=lambda: list(DEFAULT_BENCH))
    output_dir: str = "runs"
    report_format: str = "table"

    def validate(self) -> None:
        if not self.architectures:
            raise ConfigError("architectures: list must be non-empty")
        for name in self.architectures:
            Architecture.parse(name)
        if self.report_format not in REPORT_FORMATS:
            raise ConfigError(f"report_format: must be one of {', '.join(REPORT_FORMATS)}")
        out = Path(self.output_dir)
        if out.exists() and not out.is_dir():
            raise ConfigError(f"output_dir: {out} exists and is not a directory")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {"generator", "model", "train", "architectures", "output_dir", "report_format"}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"config: unknown key(s) {', '.join(unknown)}")
        cfg = cls()
        if "generator" in raw:
            cfg.generator = GeneratorConfig.from_dict(raw["generator"] or {})
        if "train" in raw:
            cfg.train = TrainConfig.from_dict(raw["train"] or {})
        if "model" in raw:
            cfg.model = {**_desk_model(), **(raw["model"] or {})}
        if "architectures" in raw:
            archs = raw["architectures"]
            cfg.architectures = [archs] if isinstance(archs, str) else list(archs or [])
        for key in ("output_dir", "report_format"):
            if key in raw:
                setattr(cfg, key, raw[key])
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(raw)

    def model_config(self, arch: str, dataset: list[UserSequence]) -> ModelConfig:
        """Model hyperparameters with feature extents taken from the data."""
        dims = _data_dims(dataset)
        raw = dict(self.model)
        for key, value in dims.items():
            if key in raw and raw[key] != value:
                raise ConfigError(f"model.{key}: config says {raw[key]}, data has {value}")
        raw.update(dims, architecture=arch)
        try:
            return ModelConfig.from_dict(raw)
        except ConfigError as exc:
            raise ConfigError(f"model.{exc}") from exc


def _data_dims(dataset: list[UserSequence]) -> dict:
    first = next((s.events[0] for s in dataset if s.events), None)
    if first is None:
        raise ConfigError("data: dataset has no events")
    n_tasks = len(first.labels)
    return {"d_item": len(first.features), "d_action": len(first.action_features),
            "n_tasks": n_tasks, "late_fusion_dim": 1 + n_tasks}


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.generator = replace(cfg.generator, seed=args.seed)
        cfg.train = replace(cfg.train, seed=args.seed)
    if args.arch:
        cfg.architectures = [a.strip() for a in args.arch.split(",") if a.strip()]
    if args.out:
        cfg.output_dir = args.out
    if args.format:
        cfg.report_format = args.format
    cfg.validate()
    return cfg


def _dataset(args, cfg: ExperimentConfig) -> list[UserSequence]:
    if getattr(args, "data", None):
        return read_dataset(args.data)
    return generate_dataset(cfg.generator)


def _summary(seqs: list[UserSequence]) -> dict:
    labels = [s.labels() for s in seqs if len(s)]
    stacked = np.concatenate(labels) if labels else np.zeros((0, 0))
    names = task_names(stacked.shape[1]) if stacked.size else []
    return {
        "users": len(seqs),
        "events": int(sum(len(s) for s in seqs)),
        "candidates": int(sum(s.n_candidates for s in seqs)),
        "base_rates": {t: float(stacked[:, i].mean()) for i, t in enumerate(names)},
    }


def _emit(text: str, out=None) -> None:
    (out or sys.stdout).write(text if text.endswith("\n") else text + "\n")


# ---------------------------------------------------------------------------
# commands

def cmd_generate(args) -> int:
    if args.preset == "fig3":
        seed = args.seed if args.seed is not None else 0
        seqs = dog_cat_dataset(seed=seed)
    else:
        seqs = generate_dataset(_load_config(args).generator)
    out = Path(args.out or "dataset.jsonl")
    write_dataset(seqs, out)
    summary = _summary(seqs)
    _emit(json.dumps({"path": str(out), **summary}, indent=2))
    return 0


def _single_arch(cfg: ExperimentConfig) -> str:
    if len(cfg.architectures) != 1:
        raise ConfigError("architectures: train needs exactly one (use --arch)")
    return cfg.architectures[0]


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if not args.arch and args.config is None:
        cfg.architectures = ["AttnLFA"]
    arch = _single_arch(cfg)
    seqs = _dataset(args, cfg)
    model_cfg = cfg.model_config(arch, seqs)
    train_set, eval_set = split_users(seqs, cfg.train.eval_fraction)
    result = train(model_cfg, cfg.train, train_set, eval_set=eval_set)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint", result.params, model_cfg,
                    extra={"train": cfg.train.to_dict(), "eval_fraction": cfg.train.eval_fraction})
    (out / "metrics.json").write_text(report_json(result.report))
    _emit(report_json(result.report) if cfg.report_format == "json" else _report_text(result.report))
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    if not args.checkpoint:
        raise ConfigError("--checkpoint: required for eval")
    params, model_cfg = load_checkpoint(args.checkpoint)
    if args.arch and Architecture.parse(_single_arch(cfg)) is not model_cfg.architecture:
        raise ConfigError(f"--arch: checkpoint holds {model_cfg.architecture.value}, "
                          f"not {cfg.architectures[0]}")
    seqs = _dataset(args, cfg)
    dims = _data_dims(seqs)
    for key, value in dims.items():
        if getattr(model_cfg, key) != value:
            raise ConfigError(f"model.{key}: checkpoint expects {getattr(model_cfg, key)}, "
                              f"data has {value}")
    _, eval_set = split_users(seqs, cfg.train.eval_fraction)
    report = evaluate(params, model_cfg, eval_set, cfg.train.label_clamp)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "eval_metrics.json").write_text(report_json(report, timing=False))
    _emit(report_json(report, timing=False) if cfg.report_format == "json" else _report_text(report))
    return 0


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    if len(cfg.architectures) < 2:
        raise ConfigError("architectures: bench needs at least two")
    seqs = _dataset(args, cfg)
    configs = [cfg.model_config(a, seqs) for a in cfg.architectures]
    bench = benchmark(configs, cfg.train, seqs)
    meta = {"generator": cfg.generator.to_dict() if not getattr(args, "data", None) else None,
            "model": configs[0].to_dict() | {"architecture": None},
            "train": cfg.train.to_dict()}
    paths = write_bench_reports(bench, cfg.output_dir, meta, cfg.report_format)
    _emit(format_table(bench) if cfg.report_format == "table"
          else paths["metrics"].read_text())
    return 0


def cmd_verify(args) -> int:
    from causalgr.verify import SUITES, run_suites

    names = args.suite or list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ConfigError(f"--suite: unknown {', '.join(unknown)}; valid: {', '.join(SUITES)}")
    failed = 0
    for result in run_suites(names):
        status = "PASS" if result.ok else "FAIL"
        line = f"{status} {result.name}: {result.passed}/{result.total}"
        if not result.ok:
            failed += 1
            line += "  failing: " + "; ".join(result.failures())
        _emit(line)
    return 1 if failed else 0


def _report_text(report) -> str:
    lines = [f"architecture       {report.architecture}",
             f"eval_loss          {report.eval_loss:.6f}",
             f"primary_accuracy   {report.primary_accuracy:.4f}"]
    lines += [f"ne_{t:<16}{v:.6f}" for t, v in report.per_task_ne.items()]
    lines += [f"n_eval_labels      {report.n_eval_labels}",
              f"attention_flops    {report.attention_flops}"]
    if report.n_steps:
        lines += [f"train_wall_clock_s {report.train_wall_clock_s:.3f}",
                  f"per_step_ms        {report.per_step_ms:.2f}"]
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causalgr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--seed", type=int, help="overrides generator.seed and train.seed")
        p.add_argument("--arch", help="architecture name, or comma list for bench")
        p.add_argument("--out", help="output file (generate) or directory")
        p.add_argument("--format", choices=REPORT_FORMATS, help="report format")
        if data:
            p.add_argument("--data", help="dataset JSONL; generated from the config if omitted")
        return p

    gen = common(sub.add_parser("generate", help="write a synthetic dataset"), data=False)
    gen.add_argument("--preset", choices=["fig3"], help="built-in two-user dog/cat fixture")
    gen.set_defaults(func=cmd_generate)
    common(sub.add_parser("train", help="train one architecture")).set_defaults(func=cmd_train)
    ev = common(sub.add_parser("eval", help="evaluate a checkpoint on held-out users"))
    ev.add_argument("--checkpoint", help="checkpoint directory written by train")
    ev.set_defaults(func=cmd_eval)
    common(sub.add_parser("bench", help="compare architectures")).set_defaults(func=cmd_bench)
    ver = sub.add_parser("verify", help="run the invariant suites")
    ver.add_argument("--suite", action="append", help="suite to run (repeatable)")
    ver.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CausalGRError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
