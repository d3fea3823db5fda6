"""Forward passes for the five architectures.

Every model ends in the same MMoE head fed with ``[representation, log1p(late
fusion counts)]``.  What differs is how the representation at step ``n`` is
built and which attention rule each stage uses:

================  ==========================  =======================  ===========
architecture      stack input                 stack mask               final stage
================  ==========================  =======================  ===========
baseline          interleaved ``i, a`` (2N)   causal                   item token
AttnLFA           items                       causal                   action pool
AttnMVP           items, ``V = H + lam*a``    strict causal            pool + fuse
AttnMVPNoLFA      same as AttnMVP             strict causal            item rep
AttnDHN           item and action streams     strict causal            pool + fuse
================  ==========================  =======================  ===========

With ``isolate=True`` every attention call swaps its rule for candidate
isolation (same rule on the context segment) and candidate positions are all
rotated as if they were the next event after the context.
"""
from __future__ import annotations

import numpy as np

from causalgr.attention import AttentionMask, AttentionWeights, MaskVariant, multihead_attention
from causalgr.models.config import Architecture, ModelConfig, ModelOutput, SequenceBatch
from causalgr.models.layers import (
    ParamInit,
    Params,
    init_mmoe,
    interleave,
    linear,
    mlp,
    mmoe_head,
    norm,
    project_actions,
    project_items,
)
from causalgr.numeric import Tensor, as_tensor, concat, mul, resolve_dtype

A = Architecture


# ---------------------------------------------------------------------------
# parameters

def init_params(config: ModelConfig, seed: int = 0, dtype="f64") -> Params:
    arch = config.architecture
    d = config.d_model
    init = ParamInit(seed, resolve_dtype(dtype))
    resid = 1.0 / np.sqrt(2.0 * config.n_layers)

    init.mlp("item_proj", config.d_item, d, d)
    init.mlp("action_proj", config.d_action, d, d)

    def block(prefix: str) -> None:
        init.norm(f"{prefix}.ln1", d)
        init.attention(f"{prefix}.attn", d, out_scale=resid)
        init.norm(f"{prefix}.ln2", d)
        init.mlp(f"{prefix}.ffn", d, config.ffn_mult * d, d, out_scale=resid)

    for layer in range(config.n_layers):
        block(f"blocks.{layer}")
        if arch is A.ATTN_DHN:
            init.norm(f"blocks.{layer}.lna", d)          # action stream as item-update value
            block(f"blocks.{layer}.act")
            init.norm(f"blocks.{layer}.act.lni", d)      # item stream as action-update value
    init.norm("ln_f", d)
    if arch is A.ATTN_DHN:
        init.norm("ln_fa", d)
    if arch.pools_actions:
        init.attention("pool", d)
    if arch in (A.ATTN_MVP, A.ATTN_DHN):
        init.linear("fuse", 2 * d, d)
    init_mmoe(init, d + config.late_fusion_dim, config.n_tasks, config.mmoe_experts,
              config.expert_dim, config.tower_hidden)
    return init.params


def count_params(params: Params) -> int:
    return int(sum(p.size for p in params.values()))


def attention_param_count(params: Params) -> int:
    return int(sum(p.size for name, p in params.items()
                   if ".attn." in name or name.startswith("pool.")))


# ---------------------------------------------------------------------------
# shared pieces

class ForwardContext:
    """Per-forward constants: masks, rotary positions, kernel override."""

    def __init__(self, config: ModelConfig, seq_len: int, context_len: np.ndarray,
                 isolate: bool, kernel=None):
        self.config = config
        self.seq_len = seq_len
        self.context_len = np.asarray(context_len)
        self.isolate = isolate
        self.kernel = kernel
        pos = np.arange(seq_len)
        if isolate:
            self.positions = np.minimum(pos[None, :], self.context_len[:, None])
        else:
            self.positions = pos

    def mask(self, rule: MaskVariant) -> AttentionMask:
        if self.isolate:
            return AttentionMask(MaskVariant.CANDIDATE_ISOLATION, self.seq_len,
                                 context_len=self.context_len, context_rule=rule)
        return AttentionMask(rule, self.seq_len)


def _attend(x_qk: Tensor, x_v: Tensor, params: Params, name: str, ctx: ForwardContext,
            rule: MaskVariant, rotary: bool = True) -> Tensor:
    cfg = ctx.config
    return multihead_attention(
        x_qk, x_qk, x_v, AttentionWeights.from_params(params, name), ctx.mask(rule),
        rope=cfg.rope if rotary else None, n_heads=cfg.n_heads,
        positions=ctx.positions if rotary else None, kernel=ctx.kernel)


def _ffn(h: Tensor, params: Params, prefix: str) -> Tensor:
    return h + mlp(norm(h, params, f"{prefix}.ln2"), params, f"{prefix}.ffn")


def transformer_block(h: Tensor, params: Params, prefix: str, ctx: ForwardContext, rule: MaskVariant,
                      value_extra: Tensor | None = None) -> Tensor:
    """Pre-norm block; ``value_extra`` is added to the normalized values only."""
    x = norm(h, params, f"{prefix}.ln1")
    v = x if value_extra is None else x + value_extra
    h = h + _attend(x, v, params, f"{prefix}.attn", ctx, rule)
    return _ffn(h, params, prefix)


def action_pooling(h_items: Tensor, values: Tensor, params: Params, ctx: ForwardContext) -> Tensor:
    """Strict-causal pooling of ``values`` weighted by item similarity.

    No rotary embedding here: the weights depend on item content only.
    """
    return _attend(h_items, values, params, "pool", ctx, MaskVariant.STRICT_CAUSAL, rotary=False)


def _late_fusion(batch: SequenceBatch, config: ModelConfig, dtype) -> Tensor | None:
    if config.late_fusion_dim == 0:
        return None
    lf = np.asarray(batch.late_fusion)
    if lf.shape[-1] != config.late_fusion_dim:
        raise ValueError(f"late fusion extent {lf.shape[-1]} != config {config.late_fusion_dim}")
    return Tensor(np.log1p(lf).astype(dtype))


def _head(rep: Tensor, batch: SequenceBatch, config: ModelConfig, params: Params) -> Tensor:
    lf = _late_fusion(batch, config, rep.dtype)
    feats = rep if lf is None else concat([rep, lf], axis=-1)
    return mmoe_head(feats, config.n_tasks, config.mmoe_experts, params)


def _inputs(batch: SequenceBatch, config: ModelConfig, params: Params) -> tuple[Tensor, Tensor]:
    dtype = params["item_proj.l1.w"].dtype
    items = as_tensor(batch.item_features)
    actions = as_tensor(batch.action_features)
    if items.dtype != dtype:
        items = Tensor(items.data.astype(dtype))
    if actions.dtype != dtype:
        actions = Tensor(actions.data.astype(dtype))
    return (project_items(items, params, config.d_item),
            project_actions(actions, params, config.d_action))


def _fuse(h: Tensor, pooled: Tensor, params: Params) -> Tensor:
    return linear(concat([h, pooled], axis=-1), params, "fuse")


# ---------------------------------------------------------------------------
# architectures

def forward_interleaved_baseline(batch: SequenceBatch, config: ModelConfig, params: Params,
                                 isolate: bool = False, kernel=None) -> ModelOutput:
    items, actions = _inputs(batch, config, params)
    n = batch.seq_len
    ctx = ForwardContext(config, 2 * n, 2 * np.asarray(batch.context_len), isolate, kernel)
    if isolate:
        # candidate item tokens share the slot right after the context, action tokens the next
        tok = np.arange(2 * n)[None, :]
        ctx2 = ctx.context_len[:, None]
        ctx.positions = np.where(tok < ctx2, tok, ctx2 + tok % 2)
    h = interleave(items, actions)
    for layer in range(config.n_layers):
        h = transformer_block(h, params, f"blocks.{layer}", ctx, MaskVariant.CAUSAL)
    h = norm(h, params, "ln_f")
    rep = h[:, 0::2, :]  # item token of step n; its action token comes after it
    return ModelOutput(_head(rep, batch, config, params), per_position_flops(config, n))


def forward_attnlfa(batch: SequenceBatch, config: ModelConfig, params: Params,
                    isolate: bool = False, kernel=None) -> ModelOutput:
    items, actions = _inputs(batch, config, params)
    ctx = ForwardContext(config, batch.seq_len, batch.context_len, isolate, kernel)
    h = items
    for layer in range(config.n_layers):
        h = transformer_block(h, params, f"blocks.{layer}", ctx, MaskVariant.CAUSAL)
    h = norm(h, params, "ln_f")
    pooled = action_pooling(h, actions, params, ctx)
    return ModelOutput(_head(pooled, batch, config, params), per_position_flops(config, batch.seq_len))


def forward_attnmvp(batch: SequenceBatch, config: ModelConfig, params: Params,
                    isolate: bool = False, kernel=None) -> ModelOutput:
    items, actions = _inputs(batch, config, params)
    ctx = ForwardContext(config, batch.seq_len, batch.context_len, isolate, kernel)
    mixed = mul(actions, config.lam)
    h = items
    for layer in range(config.n_layers):
        h = transformer_block(h, params, f"blocks.{layer}", ctx, MaskVariant.STRICT_CAUSAL,
                              value_extra=mixed)
    h = norm(h, params, "ln_f")
    if config.architecture is A.ATTN_MVP:
        h = _fuse(h, action_pooling(h, actions, params, ctx), params)
    return ModelOutput(_head(h, batch, config, params), per_position_flops(config, batch.seq_len))


def forward_attndhn(batch: SequenceBatch, config: ModelConfig, params: Params,
                    isolate: bool = False, kernel=None) -> ModelOutput:
    items, actions = _inputs(batch, config, params)
    ctx = ForwardContext(config, batch.seq_len, batch.context_len, isolate, kernel)
    strict = MaskVariant.STRICT_CAUSAL
    hi, ha = items, actions
    for layer in range(config.n_layers):
        p = f"blocks.{layer}"

        def item_update(hi, ha):
            extra = mul(norm(ha, params, f"{p}.lna"), config.lam)
            return transformer_block(hi, params, p, ctx, strict, value_extra=extra)

        def action_update(hi, ha):
            xa = norm(ha, params, f"{p}.act.ln1")
            v = norm(hi, params, f"{p}.act.lni") + mul(xa, config.lam)
            ha = ha + _attend(xa, v, params, f"{p}.act.attn", ctx, strict)
            return _ffn(ha, params, f"{p}.act")

        if config.dhn_action_first:
            ha = action_update(hi, ha)
            hi = item_update(hi, ha)
        else:
            hi = item_update(hi, ha)
            ha = action_update(hi, ha)
    hi = norm(hi, params, "ln_f")
    ha = norm(ha, params, "ln_fa")
    h = _fuse(hi, action_pooling(hi, ha, params, ctx), params)
    return ModelOutput(_head(h, batch, config, params), per_position_flops(config, batch.seq_len))


_FORWARD = {
    A.INTERLEAVED_BASELINE: forward_interleaved_baseline,
    A.ATTN_LFA: forward_attnlfa,
    A.ATTN_MVP: forward_attnmvp,
    A.ATTN_MVP_NO_LFA: forward_attnmvp,
    A.ATTN_DHN: forward_attndhn,
}


def forward(batch: SequenceBatch, config: ModelConfig, params: Params, isolate: bool = False,
            kernel=None) -> ModelOutput:
    return _FORWARD[config.architecture](batch, config, params, isolate=isolate, kernel=kernel)


# ---------------------------------------------------------------------------
# cost accounting

def attention_calls(config: ModelConfig) -> int:
    """Attention invocations per forward pass (stack plus final stage)."""
    arch = config.architecture
    calls = config.n_layers * (2 if arch is A.ATTN_DHN else 1)
    return calls + (1 if arch.pools_actions else 0)


def attended_length(config: ModelConfig, seq_len: int) -> int:
    return 2 * seq_len if config.architecture is A.INTERLEAVED_BASELINE else seq_len


def model_attention_flops(config: ModelConfig, seq_len: int) -> int:
    """``QK^T`` + ``weights @ V`` MACs over every attention call of the model."""
    length = attended_length(config, seq_len)
    return attention_calls(config) * 2 * length * length * config.d_model


def per_position_flops(config: ModelConfig, seq_len: int) -> int:
    return model_attention_flops(config, seq_len) // max(seq_len, 1)
