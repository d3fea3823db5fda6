"""Training, candidate-only evaluation and the sequence-blind reference predictor."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from causalgr.attention import attention_flops
from causalgr.data import UserSequence, make_batches, task_names
from causalgr.errors import ConfigError, ContractError, NumericError, TrainingError
from causalgr.models import (
    Architecture,
    ModelConfig,
    Params,
    count_params,
    forward,
    init_params,
    model_attention_flops,
)
from causalgr.numeric import Tape, resolve_dtype
from causalgr.training.losses import (
    DEFAULT_CLAMP,
    bce_values,
    multitask_bce,
    normalized_entropy,
    stable_sigmoid,
)
from causalgr.training.optim import Adam


@dataclass
class TrainConfig:
    learning_rate: float = 3e-3
    lr_scale_dhn: float = 0.5
    epochs: int = 1
    batch_size: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    label_clamp: float = DEFAULT_CLAMP
    eval_fraction: float = 0.2
    dtype: str = "f32"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def bad(name, why):
            raise ConfigError(f"train.{name}: {why}")

        if not self.learning_rate >= 0:
            bad("learning_rate", f"must be >= 0, got {self.learning_rate}")
        if not self.lr_scale_dhn > 0:
            bad("lr_scale_dhn", "must be > 0")
        if self.epochs < 1:
            bad("epochs", "must be >= 1")
        if self.batch_size < 1:
            bad("batch_size", "must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            bad("beta1" if not 0 <= self.beta1 < 1 else "beta2", "must lie in [0, 1)")
        if not 0 < self.label_clamp < 0.5:
            bad("label_clamp", f"must lie in (0, 0.5), got {self.label_clamp}")
        if not 0 < self.eval_fraction < 1:
            bad("eval_fraction", "must lie in (0, 1)")
        if self.dtype not in ("f32", "f64"):
            bad("dtype", "must be 'f32' or 'f64'")

    def lr_for(self, arch: Architecture) -> float:
        scale = self.lr_scale_dhn if Architecture.parse(arch) is Architecture.ATTN_DHN else 1.0
        return self.learning_rate * scale

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"train: unknown field(s) {', '.join(unknown)}")
        return cls(**raw)


# fields that depend on the clock; everything else is a pure function of the seeds
TIMING_FIELDS = ("train_wall_clock_s", "per_step_ms")


@dataclass
class MetricsReport:
    architecture: str
    eval_loss: float
    per_task_bce: dict[str, float]
    per_task_ne: dict[str, float]
    primary_accuracy: float
    n_eval_labels: int
    attention_flops: int
    model_attention_flops: int
    n_params: int
    train_wall_clock_s: float = 0.0
    per_step_ms: float = 0.0
    train_loss_first: float | None = None
    train_loss_last: float | None = None
    n_steps: int = 0

    def to_dict(self, timing: bool = True) -> dict:
        out = asdict(self)
        if not timing:
            for key in TIMING_FIELDS:
                out.pop(key)
        return out


@dataclass
class TrainResult:
    params: Params
    report: MetricsReport
    losses: list[float] = field(default_factory=list)
    step_ms: list[float] = field(default_factory=list)


def train_step(params: Params, optimizer: Adam, batch, config: ModelConfig,
               clamp: float = DEFAULT_CLAMP) -> float:
    with Tape() as tape:
        logits = forward(batch, config, params).logits
        loss = multitask_bce(logits, batch.labels, batch.loss_mask(), clamp)
        grads = tape.backward(loss)
    optimizer.step(grads)
    return float(loss.item())


def train(model_config: ModelConfig, train_config: TrainConfig, dataset: list[UserSequence],
          params: Params | None = None, eval_set: list[UserSequence] | None = None) -> TrainResult:
    """Adam over seeded-shuffled batches, supervising every non-pad position.

    ``per_step_ms`` is the median step time; batch assembly happens before the
    clock starts.  If ``eval_set`` is given the report carries its metrics.
    """
    if not dataset:
        raise ContractError("train: dataset is empty")
    dtype = resolve_dtype(train_config.dtype)
    if params is None:
        params = init_params(model_config, seed=train_config.seed, dtype=train_config.dtype)
    optimizer = Adam(params, lr=train_config.lr_for(model_config.architecture),
                     beta1=train_config.beta1, beta2=train_config.beta2, eps=train_config.eps,
                     weight_decay=train_config.weight_decay)
    rng = np.random.default_rng(train_config.seed)
    losses: list[float] = []
    step_ms: list[float] = []
    wall = 0.0
    for _ in range(train_config.epochs):
        order = rng.permutation(len(dataset))
        batches = list(make_batches([dataset[i] for i in order], train_config.batch_size,
                                    dtype=dtype))
        for batch in batches:
            step = len(losses)
            t0 = time.perf_counter()
            try:
                loss = train_step(params, optimizer, batch, model_config, train_config.label_clamp)
            except NumericError as exc:
                raise TrainingError(step, str(exc)) from exc
            dt = time.perf_counter() - t0
            if not np.isfinite(loss):
                raise TrainingError(step, f"loss is {loss}")
            losses.append(loss)
            step_ms.append(1e3 * dt)
            wall += dt

    seq_len = max(len(s) for s in dataset)
    if eval_set:
        report = evaluate(params, model_config, eval_set, train_config.label_clamp)
    else:
        report = _empty_report(model_config, params, seq_len)
    report.train_wall_clock_s = wall
    report.per_step_ms = float(np.median(step_ms))
    report.train_loss_first = losses[0]
    report.train_loss_last = losses[-1]
    report.n_steps = len(losses)
    return TrainResult(params, report, losses, step_ms)


def _empty_report(config: ModelConfig, params: Params, seq_len: int) -> MetricsReport:
    names = task_names(config.n_tasks)
    nan = float("nan")
    return MetricsReport(
        architecture=config.architecture.value, eval_loss=nan,
        per_task_bce={t: nan for t in names}, per_task_ne={t: nan for t in names},
        primary_accuracy=nan, n_eval_labels=0,
        attention_flops=_flops(config, seq_len),
        model_attention_flops=model_attention_flops(config, seq_len),
        n_params=count_params(params))


def _flops(config: ModelConfig, seq_len: int) -> int:
    interleaved = config.architecture is Architecture.INTERLEAVED_BASELINE
    return attention_flops(seq_len, config.d_model, config.n_layers, interleaved)


def _params_dtype(params: Params):
    return next(iter(params.values())).dtype


def candidate_predictions(params: Params, config: ModelConfig, dataset: list[UserSequence],
                          batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Isolated-candidate logits and labels, each ``[n_candidates, n_tasks]``."""
    logits, labels = [], []
    dtype = _params_dtype(params)
    for batch in make_batches(dataset, batch_size, isolate_candidates=True, dtype=dtype):
        z = forward(batch, config, params, isolate=True).logits.data
        mask = batch.loss_mask(candidates_only=True)
        logits.append(z[mask])
        labels.append(batch.labels[mask])
    if not logits:
        return np.zeros((0, config.n_tasks)), np.zeros((0, config.n_tasks), dtype=np.int64)
    return np.concatenate(logits), np.concatenate(labels)


def evaluate(params: Params, model_config: ModelConfig, dataset: list[UserSequence],
             label_clamp: float = DEFAULT_CLAMP) -> MetricsReport:
    """Loss, NE and primary accuracy over candidate positions only."""
    if any(s.n_candidates < 1 for s in dataset):
        raise ContractError("evaluate: every sequence needs at least one candidate")
    logits, labels = candidate_predictions(params, model_config, dataset)
    if len(labels) == 0:
        raise ContractError("evaluate: empty candidate set")
    probs = stable_sigmoid(logits)
    names = task_names(model_config.n_tasks)
    bce = bce_values(probs, labels, label_clamp)
    per_task_bce = {t: float(bce[:, i].mean()) for i, t in enumerate(names)}
    per_task_ne = {t: normalized_entropy(probs[:, i], labels[:, i], label_clamp)
                   for i, t in enumerate(names)}
    seq_len = max(len(s) for s in dataset)
    return MetricsReport(
        architecture=model_config.architecture.value,
        eval_loss=float(bce.mean()),
        per_task_bce=per_task_bce,
        per_task_ne=per_task_ne,
        primary_accuracy=float(np.mean((probs[:, 0] > 0.5) == (labels[:, 0] == 1))),
        n_eval_labels=int(len(labels)),
        attention_flops=_flops(model_config, seq_len),
        model_attention_flops=model_attention_flops(model_config, seq_len),
        n_params=count_params(params))


def candidate_logits(params: Params, config: ModelConfig, seq: UserSequence,
                     one_at_a_time: bool = False) -> np.ndarray:
    """Logits of every candidate of ``seq``, ``[n_candidates, n_tasks]``.

    Joint mode scores all candidates in one isolated pass.  One-at-a-time mode
    appends each candidate alone to the context and runs the ordinary training
    forward; isolation is correct exactly when both agree.
    """
    dtype = _params_dtype(params)
    c = seq.context_len
    if not one_at_a_time:
        batch = next(make_batches([seq], 1, isolate_candidates=True, dtype=dtype))
        return forward(batch, config, params, isolate=True).logits.data[0, c:len(seq)]
    rows = []
    for j in range(c, len(seq)):
        single = UserSequence(seq.user_id, seq.preference, seq.events[:c] + [seq.events[j]], c)
        batch = next(make_batches([single], 1, dtype=dtype))
        rows.append(forward(batch, config, params).logits.data[0, c])
    return np.stack(rows) if rows else np.zeros((0, config.n_tasks))


def sequence_blind_accuracy(train_set: list[UserSequence], eval_set: list[UserSequence],
                            seed: int = 0) -> float:
    """Primary-task accuracy of a logistic regression on item features alone."""
    from sklearn.linear_model import LogisticRegression

    x = np.array([e.features for s in train_set for e in s.events])
    y = np.array([e.labels[0] for s in train_set for e in s.events])
    model = LogisticRegression(random_state=seed).fit(x, y)
    xe = np.array([e.features for s in eval_set for e in s.events[s.context_len:]])
    ye = np.array([e.labels[0] for s in eval_set for e in s.events[s.context_len:]])
    return float(np.mean(model.predict(xe) == ye))
