"""Interleaved baseline, AttnLFA, AttnMVP (+ no-pooling ablation), AttnDHN and the MMoE head."""
from causalgr.models.architectures import (
    ForwardContext,
    action_pooling,
    attended_length,
    attention_calls,
    attention_param_count,
    count_params,
    forward,
    forward_attndhn,
    forward_attnlfa,
    forward_attnmvp,
    forward_interleaved_baseline,
    init_params,
    model_attention_flops,
    per_position_flops,
    transformer_block,
)
from causalgr.models.checkpoint import load_checkpoint, save_checkpoint
from causalgr.models.config import Architecture, ModelConfig, ModelOutput, SequenceBatch
from causalgr.models.layers import (
    Params,
    deinterleave,
    interleave,
    mmoe_gates,
    mmoe_head,
    project_actions,
    project_items,
)

__all__ = [
    "Architecture", "ForwardContext", "ModelConfig", "ModelOutput", "Params", "SequenceBatch",
    "action_pooling", "attended_length", "attention_calls", "attention_param_count",
    "count_params", "deinterleave", "forward", "forward_attndhn", "forward_attnlfa",
    "forward_attnmvp", "forward_interleaved_baseline", "init_params", "interleave",
    "load_checkpoint", "mmoe_gates", "mmoe_head", "model_attention_flops",
    "per_position_flops", "project_actions", "project_items", "save_checkpoint",
    "transformer_block",
]
