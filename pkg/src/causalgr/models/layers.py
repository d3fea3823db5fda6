"""Building blocks shared by every architecture.

Parameters live in a flat ``dict[str, Tensor]`` keyed by dotted names, which is
also the checkpoint layout.
"""
from __future__ import annotations

import math

import numpy as np

from causalgr.errors import DimensionError, ParameterError
from causalgr.numeric import Tensor, concat, gelu, layernorm, masked_softmax, reshape

Params = dict[str, Tensor]


class ParamInit:
    """Deterministic parameter factory; creation order fixes the RNG stream."""

    def __init__(self, seed: int, dtype):
        self.rng = np.random.default_rng(seed)
        self.dtype = np.dtype(dtype)
        self.params: Params = {}

    def _add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise ParameterError(f"duplicate parameter {name}")
        self.params[name] = Tensor(value.astype(self.dtype), requires_grad=True, name=name)

    def linear(self, name: str, d_in: int, d_out: int, bias: bool = True, scale: float = 1.0) -> None:
        self._add(f"{name}.w", self.rng.normal(0.0, scale / math.sqrt(d_in), (d_in, d_out)))
        if bias:
            self._add(f"{name}.b", np.zeros(d_out))

    def matrix(self, name: str, d_in: int, d_out: int, scale: float = 1.0) -> None:
        self._add(name, self.rng.normal(0.0, scale / math.sqrt(d_in), (d_in, d_out)))

    def norm(self, name: str, d: int) -> None:
        self._add(f"{name}.g", np.ones(d))
        self._add(f"{name}.b", np.zeros(d))

    def mlp(self, name: str, d_in: int, d_hidden: int, d_out: int, out_scale: float = 1.0) -> None:
        self.linear(f"{name}.l1", d_in, d_hidden)
        self.linear(f"{name}.l2", d_hidden, d_out, scale=out_scale)

    def attention(self, name: str, d: int, out_scale: float = 1.0) -> None:
        for part in ("wq", "wk", "wv"):
            self.matrix(f"{name}.{part}", d, d)
        self.matrix(f"{name}.wo", d, d, scale=out_scale)


def linear(x: Tensor, params: Params, name: str) -> Tensor:
    out = x @ params[f"{name}.w"]
    b = params.get(f"{name}.b")
    return out if b is None else out + b


def mlp(x: Tensor, params: Params, name: str) -> Tensor:
    return linear(gelu(linear(x, params, f"{name}.l1")), params, f"{name}.l2")


def norm(x: Tensor, params: Params, name: str) -> Tensor:
    return layernorm(x, params[f"{name}.g"], params[f"{name}.b"])


def _check_extent(raw: Tensor, expected: int, what: str) -> None:
    if raw.shape[-1] != expected:
        raise ParameterError(f"{what} features have extent {raw.shape[-1]}, config expects {expected}")


def project_items(raw: Tensor, params: Params, d_item: int) -> Tensor:
    """Two-layer GELU MLP from raw item features to ``d_model``."""
    _check_extent(raw, d_item, "item")
    return mlp(raw, params, "item_proj")


def project_actions(raw: Tensor, params: Params, d_action: int) -> Tensor:
    """Same shape as :func:`project_items`, independent parameters."""
    _check_extent(raw, d_action, "action")
    return mlp(raw, params, "action_proj")


def interleave(items: Tensor, actions: Tensor) -> Tensor:
    """``[b, n, d]`` x2 -> ``[b, 2n, d]`` ordered ``i0, a0, i1, a1, ...``."""
    if items.shape != actions.shape:
        raise ParameterError(f"interleave extents differ: {items.shape} vs {actions.shape}")
    b, n, d = items.shape
    pairs = concat([reshape(items, (b, n, 1, d)), reshape(actions, (b, n, 1, d))], axis=2)
    return reshape(pairs, (b, 2 * n, d))


def deinterleave(tokens: Tensor) -> tuple[Tensor, Tensor]:
    if tokens.shape[1] % 2:
        raise DimensionError("interleaved stream must have even length")
    return tokens[:, 0::2, :], tokens[:, 1::2, :]


def init_mmoe(init: ParamInit, d_in: int, n_tasks: int, n_experts: int, expert_dim: int,
              tower_hidden: int, name: str = "head") -> None:
    if n_experts < 1 or n_tasks < 1:
        raise ParameterError("MMoE needs at least one expert and one task")
    for e in range(n_experts):
        init.mlp(f"{name}.expert{e}", d_in, expert_dim, expert_dim)
    for t in range(n_tasks):
        init.linear(f"{name}.gate{t}", d_in, n_experts)
    for t in range(n_tasks):
        init.mlp(f"{name}.tower{t}", expert_dim, tower_hidden, 1)


def mmoe_gates(features: Tensor, params: Params, n_tasks: int, name: str = "head") -> list[Tensor]:
    return [masked_softmax(linear(features, params, f"{name}.gate{t}")) for t in range(n_tasks)]


def mmoe_head(features: Tensor, n_tasks: int, n_experts: int, params: Params,
              name: str = "head") -> Tensor:
    """Multi-gate mixture of experts: shared experts, per-task gates and towers."""
    lead = features.shape[:-1]
    experts = []
    for e in range(n_experts):
        out = mlp(features, params, f"{name}.expert{e}")
        experts.append(reshape(out, lead + (1, out.shape[-1])))
    stacked = concat(experts, axis=-2)  # [..., E, d_e]
    logits = []
    for t, gate in enumerate(mmoe_gates(features, params, n_tasks, name)):
        mixed = reshape(gate, lead + (1, n_experts)) @ stacked  # [..., 1, d_e]
        logits.append(mlp(reshape(mixed, lead + (stacked.shape[-1],)), params, f"{name}.tower{t}"))
    return concat(logits, axis=-1)
