"""Attention kernels, masks, rotary embeddings and FLOP accounting.

Three mask variants exist:

* ``CAUSAL``        query ``i`` sees keys ``j <= i``
* ``STRICT_CAUSAL`` query ``i`` sees keys ``j < i``; row 0 is fully masked
* ``CANDIDATE_ISOLATION`` rows before ``context_len`` follow ``context_rule``;
  candidate rows see only the context segment (plus their own position when the
  context rule is ``CAUSAL``)

Fully-masked rows produce a zero output vector.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from causalgr.errors import DimensionError, ParameterError
from causalgr.numeric import (
    Tensor,
    concat,
    masked_softmax,
    matmul,
    mul,
    pad_left,
    reshape,
    transpose,
)


class MaskVariant(str, enum.Enum):
    CAUSAL = "causal"
    STRICT_CAUSAL = "strict_causal"
    CANDIDATE_ISOLATION = "candidate_isolation"


@dataclass(frozen=True)
class AttentionMask:
    variant: MaskVariant
    seq_len: int
    # int, or one entry per batch row; only read by CANDIDATE_ISOLATION
    context_len: int | np.ndarray | None = None
    context_rule: MaskVariant = MaskVariant.CAUSAL

    def __post_init__(self):
        if self.variant is MaskVariant.CANDIDATE_ISOLATION:
            if self.context_len is None:
                raise ParameterError("candidate isolation needs context_len")
            if self.context_rule is MaskVariant.CANDIDATE_ISOLATION:
                raise ParameterError("context_rule must be CAUSAL or STRICT_CAUSAL")

    def allowed(self) -> np.ndarray:
        """Boolean permission matrix, ``[S, S]`` or ``[B, S, S]`` for per-row context."""
        n = self.seq_len
        if self.variant is MaskVariant.CAUSAL:
            return np.tri(n, n, 0, dtype=bool)
        if self.variant is MaskVariant.STRICT_CAUSAL:
            return np.tri(n, n, -1, dtype=bool)
        ctx = np.asarray(self.context_len)
        if ctx.ndim == 0:
            return _isolation_allowed(int(ctx), n, self.context_rule)
        return np.stack([_isolation_allowed(int(c), n, self.context_rule) for c in ctx])

    def bias(self) -> np.ndarray:
        return np.where(self.allowed(), 0.0, -np.inf)


def _isolation_allowed(context_len: int, seq_len: int, context_rule: MaskVariant) -> np.ndarray:
    if not 0 <= context_len <= seq_len:
        raise ParameterError(f"context_len={context_len} outside [0, seq_len={seq_len}]")
    diag = 0 if context_rule is MaskVariant.CAUSAL else -1
    allowed = np.tri(seq_len, seq_len, diag, dtype=bool)
    allowed[context_len:, context_len:] = False
    if context_rule is MaskVariant.CAUSAL:
        idx = np.arange(context_len, seq_len)
        allowed[idx, idx] = True
    return allowed


def build_candidate_isolation_bias(context_len: int, seq_len: int,
                                   context_rule: MaskVariant = MaskVariant.STRICT_CAUSAL) -> np.ndarray:
    """Additive 0/-inf bias for evaluation with isolated candidates."""
    if context_len > seq_len:
        raise ParameterError(f"context_len={context_len} exceeds seq_len={seq_len}")
    return np.where(_isolation_allowed(context_len, seq_len, MaskVariant(context_rule)), 0.0, -np.inf)


# ---------------------------------------------------------------------------
# rotary embeddings

@dataclass(frozen=True)
class RopeParams:
    head_dim: int
    base: float = 10000.0
    max_len: int = 2048

    def __post_init__(self):
        if self.head_dim <= 0 or self.head_dim % 2:
            raise ParameterError(f"RoPE head_dim must be even and positive, got {self.head_dim}")

    def inv_freq(self) -> np.ndarray:
        return 1.0 / self.base ** (np.arange(0, self.head_dim, 2, dtype=np.float64) / self.head_dim)


def apply_rope(x: Tensor, params: RopeParams, position_offset: int = 0,
               positions: np.ndarray | None = None) -> Tensor:
    """Rotate ``x[..., seq, heads, head_dim]`` by position.

    Dimension ``i`` is paired with ``i + head_dim/2``.  ``positions`` overrides
    the default ``offset + arange(seq)`` and may be ``[seq]`` or ``[batch, seq]``.
    """
    hd = x.shape[-1]
    if hd % 2:
        raise ParameterError(f"RoPE needs an even head_dim, got {hd}")
    if hd != params.head_dim:
        raise DimensionError(f"head_dim {hd} does not match RoPE params ({params.head_dim})")
    seq = x.shape[-3]
    if positions is None:
        positions = position_offset + np.arange(seq)
    positions = np.asarray(positions)
    if positions.size and positions.max() + 1 > params.max_len:
        raise ParameterError(f"position {positions.max()} beyond RoPE max_len={params.max_len}")

    angles = positions[..., None].astype(np.float64) * params.inv_freq()  # [.., seq, hd/2]
    cos = np.cos(angles)[..., None, :].astype(x.dtype)
    sin = np.sin(angles)[..., None, :].astype(x.dtype)
    half = hd // 2
    x1 = x[..., :half]
    x2 = x[..., half:]
    return concat([x1 * cos - x2 * sin, x1 * sin + x2 * cos], axis=-1)


# ---------------------------------------------------------------------------
# kernels; q, k, v are [..., seq, head_dim]

def _scores(q: Tensor, k: Tensor) -> Tensor:
    return mul(matmul(q, k.swapaxes(-1, -2)), 1.0 / math.sqrt(q.shape[-1]))


def masked_attention_oracle(q: Tensor, k: Tensor, v: Tensor, mask: AttentionMask) -> Tensor:
    """Dense ``softmax(QK^T/sqrt(d) + bias) V`` with an explicit 0/-inf bias."""
    if q.shape[-2] != mask.seq_len or k.shape[-2] != mask.seq_len or v.shape[-2] != mask.seq_len:
        raise DimensionError("q/k/v sequence length does not match the mask")
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"query/key widths differ: {q.shape[-1]} vs {k.shape[-1]}")
    if mask.seq_len == 0:
        return Tensor(np.zeros(q.shape[:-1] + (v.shape[-1],), dtype=v.dtype))
    allowed = np.isfinite(mask.bias())
    if allowed.ndim == 3 and q.ndim == 4:
        allowed = allowed[:, None]  # per-row context broadcasts over heads
    return matmul(masked_softmax(_scores(q, k), allowed), v)


def causal_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Plain causal kernel (the ``is_causal=True`` contract)."""
    n = q.shape[-2]
    if n == 0:
        return Tensor(np.zeros(q.shape[:-1] + (v.shape[-1],), dtype=v.dtype))
    return matmul(masked_softmax(_scores(q, k), np.tri(n, n, 0, dtype=bool)), v)


def strict_causal_attention_shifted(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Strict-causal attention built from the causal kernel by query shifting.

    Queries ``1..N-1`` run causally against keys/values ``0..N-2``; the output is
    then left-padded with one zero row so row ``n`` only ever mixes ``v_0..v_{n-1}``.
    """
    if not (q.shape[-2] == k.shape[-2] == v.shape[-2]):
        raise DimensionError("q, k, v must share a sequence length")
    n = q.shape[-2]
    if n <= 1:
        return Tensor(np.zeros(q.shape[:-1] + (v.shape[-1],), dtype=v.dtype))
    out = causal_attention(q[..., 1:, :], k[..., :-1, :], v[..., :-1, :])
    return pad_left(out, 1, axis=-2)


def attend(q: Tensor, k: Tensor, v: Tensor, mask: AttentionMask) -> Tensor:
    """Route to the production kernel for ``mask``."""
    if mask.variant is MaskVariant.CAUSAL:
        return causal_attention(q, k, v)
    if mask.variant is MaskVariant.STRICT_CAUSAL:
        return strict_causal_attention_shifted(q, k, v)
    return masked_attention_oracle(q, k, v, mask)


# ---------------------------------------------------------------------------

@dataclass
class AttentionWeights:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor

    @classmethod
    def from_params(cls, params: dict, prefix: str) -> "AttentionWeights":
        return cls(*(params[f"{prefix}.{n}"] for n in ("wq", "wk", "wv", "wo")))


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, s, d = x.shape
    return reshape(x, (b, s, n_heads, d // n_heads))


def multihead_attention(x_q: Tensor, x_k: Tensor, x_v: Tensor, weights: AttentionWeights,
                        mask: AttentionMask, rope: RopeParams | None = None, n_heads: int = 1,
                        positions: np.ndarray | None = None, kernel=None) -> Tensor:
    """Project, rotate q/k, attend per head, merge heads, project out.

    Inputs are ``[batch, seq, d_model]``.  ``kernel`` overrides the kernel
    routing (used by negative-control tests).
    """
    d_model = x_q.shape[-1]
    if n_heads < 1 or d_model % n_heads:
        raise ParameterError(f"d_model={d_model} is not divisible by n_heads={n_heads}")
    q = _split_heads(x_q @ weights.wq, n_heads)
    k = _split_heads(x_k @ weights.wk, n_heads)
    v = _split_heads(x_v @ weights.wv, n_heads)
    if rope is not None:
        q = apply_rope(q, rope, positions=positions)
        k = apply_rope(k, rope, positions=positions)
    q, k, v = (transpose(t, (0, 2, 1, 3)) for t in (q, k, v))  # [b, h, s, hd]
    out = (kernel or attend)(q, k, v, mask)
    b, _, s, _ = out.shape
    out = reshape(transpose(out, (0, 2, 1, 3)), (b, s, d_model))
    return out @ weights.wo


def attention_flops(seq_len: int, d_model: int, n_layers: int, interleaved: bool) -> int:
    """Multiply-accumulates in ``QK^T`` and ``weights @ V`` over the stack.

    Each layer costs ``2 * L^2 * d_model`` MACs where ``L`` is the attended
    length: ``2 * seq_len`` for the interleaved stream, ``seq_len`` otherwise.
    """
    if seq_len <= 0 or d_model <= 0 or n_layers <= 0:
        raise ParameterError("attention_flops needs positive extents")
    length = 2 * seq_len if interleaved else seq_len
    return 2 * length * length * d_model * n_layers
