"""Invariant probes and the self-check suites behind ``causalgr verify``.

The probes are plain functions so tests can call them directly.  Every suite
takes an optional attention ``kernel`` (``kernel(q, k, v, mask)``) that replaces
the production router, which is how negative controls are injected.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from causalgr.attention import (
    AttentionMask,
    MaskVariant,
    attend,
    masked_attention_oracle,
)
from causalgr.data import GeneratorConfig, generate_user
from causalgr.models import Architecture, ModelConfig, SequenceBatch, forward, init_params
from causalgr.numeric import Tape, Tensor, grad_check
from causalgr.training import candidate_logits, multitask_bce, normalized_entropy

Kernel = Callable[[Tensor, Tensor, Tensor, AttentionMask], Tensor]
ALL_ARCHITECTURES = tuple(Architecture)


# ---------------------------------------------------------------------------
# probes

def small_config(arch, d_model: int = 16, n_layers: int = 2, n_heads: int = 2, **kw) -> ModelConfig:
    return ModelConfig(architecture=arch, d_model=d_model, n_layers=n_layers, n_heads=n_heads,
                       expert_dim=8, tower_hidden=4, mmoe_experts=2, **kw)


def random_batch(config: ModelConfig, seq_len: int, batch_size: int = 2, seed: int = 0,
                 context_len: int | None = None) -> SequenceBatch:
    rng = np.random.default_rng(seed)
    shape = (batch_size, seq_len)
    ctx = seq_len - max(1, seq_len // 4) if context_len is None else context_len
    return SequenceBatch(
        rng.normal(size=shape + (config.d_item,)),
        rng.random(shape + (config.d_action,)),
        rng.integers(0, 2, size=shape + (config.n_tasks,)),
        np.full(batch_size, ctx), np.full(batch_size, seq_len),
        rng.integers(0, 6, size=shape + (config.late_fusion_dim,)).astype(np.float64))


def _with_actions(batch: SequenceBatch, actions) -> SequenceBatch:
    return SequenceBatch(batch.item_features, actions, batch.labels, batch.context_len,
                         batch.valid_len, batch.late_fusion, batch.user_ids)


def leakage_violations(arch, seq_len: int = 16, seed: int = 0, kernel: Kernel | None = None,
                       config: ModelConfig | None = None) -> list[str]:
    """Steps whose logits move when actions at the same or later steps are perturbed.

    Compares bit for bit; also requires an exactly-zero gradient of the step-n
    loss with respect to the action input at step n.
    """
    config = config or small_config(arch)
    params = init_params(config, seed=seed)
    batch = random_batch(config, seq_len, seed=seed)
    base = forward(batch, config, params, kernel=kernel).logits.data
    rng = np.random.default_rng(seed + 1)
    bad = []
    for n in range(seq_len):
        actions = batch.action_features.copy()
        actions[:, n:] += rng.normal(size=actions[:, n:].shape)
        moved = forward(_with_actions(batch, actions), config, params, kernel=kernel).logits.data
        if not np.array_equal(moved[:, n], base[:, n]):
            bad.append(f"step {n}: logits depend on actions at steps >= {n}")
        leaf = Tensor(batch.action_features.copy(), requires_grad=True)
        step_mask = np.zeros(batch.labels.shape[:2], dtype=bool)
        step_mask[:, n] = True
        with Tape() as tape:
            logits = forward(_with_actions(batch, leaf), config, params, kernel=kernel).logits
            grads = tape.backward(multitask_bce(logits, batch.labels, step_mask))
        g = grads.get(leaf)
        if g is not None and np.any(g[:, n:] != 0):
            bad.append(f"step {n}: nonzero gradient w.r.t. actions at steps >= {n}")
    return bad


def model_gradient_error(arch, seed: int = 0, seq_len: int = 8, per_tensor: int = 2,
                         eps: float = 1e-5) -> dict[str, float]:
    """Max relative tape-vs-central-difference error per parameter tensor and input.

    ``per_tensor`` random coordinates are probed in each tensor (all of them
    when the tensor is that small).
    """
    config = small_config(arch)
    params = init_params(config, seed=seed)
    batch = random_batch(config, seq_len, seed=seed)
    mask = batch.loss_mask()
    rng = np.random.default_rng(seed)

    def loss_with(name: str) -> Callable[[Tensor], Tensor]:
        def f(x: Tensor) -> Tensor:
            p = dict(params)
            p[name] = x
            return multitask_bce(forward(batch, config, p).logits, batch.labels, mask)
        return f

    def loss_inputs(which: str) -> Callable[[Tensor], Tensor]:
        def f(x: Tensor) -> Tensor:
            b = SequenceBatch(x if which == "items" else batch.item_features,
                              x if which == "actions" else batch.action_features,
                              batch.labels, batch.context_len, batch.valid_len, batch.late_fusion)
            return multitask_bce(forward(b, config, params).logits, batch.labels, mask)
        return f

    def pick(size: int) -> np.ndarray:
        return rng.choice(size, size=min(per_tensor, size), replace=False)

    errors = {name: grad_check(loss_with(name), p.data, eps=eps, coords=pick(p.size))
              for name, p in params.items()}
    errors["<items>"] = grad_check(loss_inputs("items"), batch.item_features, eps=eps,
                                   coords=pick(batch.item_features.size))
    errors["<actions>"] = grad_check(loss_inputs("actions"), batch.action_features, eps=eps,
                                     coords=pick(batch.action_features.size))
    return errors


def isolation_gap(arch, n_sequences: int = 10, seed: int = 0, seq_len: int = 12) -> float:
    """Max |joint - one-at-a-time| candidate logit over random generated users."""
    config = small_config(arch)
    params = init_params(config, seed=seed)
    gen = GeneratorConfig(n_users=n_sequences, seq_len=seq_len, min_seq_len=4, seed=seed,
                          candidate_fraction=0.4)
    worst = 0.0
    for u in range(n_sequences):
        seq = generate_user(gen, u)
        joint = candidate_logits(params, config, seq)
        single = candidate_logits(params, config, seq, one_at_a_time=True)
        worst = max(worst, float(np.max(np.abs(joint - single))))
    return worst


def strict_causal_checks(kernel: Kernel | None = None, max_len: int = 16, seeds: int = 5,
                         dtype=np.float64) -> dict[str, bool]:
    """Named invariants of strict-causal attention through ``kernel``."""
    kernel = kernel or attend
    tol = 1e-12 if dtype == np.float64 else 1e-6
    ok = {"matches-oracle": True, "excludes-self": True, "ignores-future": True,
          "first-row-zero": True}
    for n in range(1, max_len + 1):
        mask = AttentionMask(MaskVariant.STRICT_CAUSAL, n)
        for s in range(seeds):
            rng = np.random.default_rng([n, s])
            q, k, v = (Tensor(rng.normal(size=(2, n, 4)).astype(dtype)) for _ in range(3))
            out = kernel(q, k, v, mask).data
            ref = masked_attention_oracle(q, k, v, mask).data
            if np.max(np.abs(out - ref)) > tol:
                ok["matches-oracle"] = False
            if np.any(out[:, 0] != 0):
                ok["first-row-zero"] = False
            for row in range(n):
                v2 = v.data.copy()
                v2[:, row] += 1.0
                if not np.array_equal(kernel(q, k, Tensor(v2), mask).data[:, row], out[:, row]):
                    ok["excludes-self"] = False
                k2, vv = k.data.copy(), v.data.copy()
                k2[:, row + 1:] += 1.0
                vv[:, row + 1:] -= 1.0
                if not np.array_equal(kernel(q, Tensor(k2), Tensor(vv), mask).data[:, row],
                                      out[:, row]):
                    ok["ignores-future"] = False
    return ok


def ne_checks() -> dict[str, bool]:
    rng = np.random.default_rng(0)
    labels = (rng.random(400) < 0.3).astype(np.int64)
    base = labels.mean()
    ne_const = normalized_entropy(np.full(labels.shape, base), labels)
    path = [normalized_entropy((1 - t) * base + t * labels, labels) for t in np.linspace(0, 1, 21)]
    return {
        "constant-predictor-is-one": abs(ne_const - 1.0) <= 1e-9,
        "monotone-toward-truth": all(b < a for a, b in zip(path, path[1:])),
        "perfect-below-one": path[-1] < 1.0,
        "nonnegative": min(path) >= 0.0,
    }


# ---------------------------------------------------------------------------
# suites

@dataclass
class SuiteResult:
    name: str
    checks: dict[str, bool] = field(default_factory=dict)

    @property
    def passed(self) -> int:
        return sum(self.checks.values())

    @property
    def total(self) -> int:
        return len(self.checks)

    @property
    def ok(self) -> bool:
        return self.passed == self.total

    def failures(self) -> list[str]:
        return [k for k, v in self.checks.items() if not v]


def suite_strict_causal(kernel: Kernel | None = None) -> SuiteResult:
    checks = {f"f64 {k}": v for k, v in strict_causal_checks(kernel).items()}
    checks.update({f"f32 {k}": v for k, v in
                   strict_causal_checks(kernel, max_len=8, seeds=2, dtype=np.float32).items()})
    return SuiteResult("strict-causal", checks)


def suite_leakage(kernel: Kernel | None = None) -> SuiteResult:
    return SuiteResult("leakage", {f"{a.value} leak-free": not leakage_violations(a, kernel=kernel)
                                   for a in ALL_ARCHITECTURES})


def suite_isolation(kernel: Kernel | None = None) -> SuiteResult:
    checks = {f"{a.value} joint == one-at-a-time": isolation_gap(a, n_sequences=4) <= 1e-12
              for a in ALL_ARCHITECTURES}
    mask = AttentionMask(MaskVariant.CANDIDATE_ISOLATION, 6, context_len=3,
                         context_rule=MaskVariant.STRICT_CAUSAL)
    rng = np.random.default_rng(0)
    q, k, v = (Tensor(rng.normal(size=(1, 6, 4))) for _ in range(3))
    out = (kernel or attend)(q, k, v, mask).data
    v2 = v.data.copy()
    v2[:, 3:] += 1.0
    moved = (kernel or attend)(q, k, Tensor(v2), mask).data
    checks["candidates ignore candidates"] = bool(np.array_equal(out[:, 3:], moved[:, 3:]))
    return SuiteResult("isolation", checks)


def suite_gradients() -> SuiteResult:
    return SuiteResult("gradients", {
        f"{a.value} fd<=1e-5": max(model_gradient_error(a, per_tensor=1).values()) <= 1e-5
        for a in ALL_ARCHITECTURES})


def suite_ne() -> SuiteResult:
    return SuiteResult("ne-laws", ne_checks())


SUITES: dict[str, Callable[..., SuiteResult]] = {
    "strict-causal": suite_strict_causal,
    "leakage": suite_leakage,
    "isolation": suite_isolation,
    "gradients": lambda kernel=None: suite_gradients(),
    "ne-laws": lambda kernel=None: suite_ne(),
}


def run_suites(names: list[str] | None = None, kernel: Kernel | None = None) -> list[SuiteResult]:
    return [SUITES[n](kernel=kernel) for n in (names or list(SUITES))]
