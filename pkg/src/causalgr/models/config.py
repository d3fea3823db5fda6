from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from causalgr.attention import RopeParams
from causalgr.errors import ConfigError
from causalgr.numeric import Tensor


class Architecture(str, enum.Enum):
    INTERLEAVED_BASELINE = "InterleavedBaseline"
    ATTN_LFA = "AttnLFA"
    ATTN_MVP = "AttnMVP"
    ATTN_MVP_NO_LFA = "AttnMVPNoLFA"
    ATTN_DHN = "AttnDHN"

    @classmethod
    def parse(cls, name: "str | Architecture") -> "Architecture":
        if isinstance(name, cls):
            return name
        for arch in cls:
            if arch.value.lower() == str(name).lower():
                return arch
        valid = ", ".join(a.value for a in cls)
        raise ConfigError(f"architecture: unknown name {name!r}; valid names are {valid}")

    @property
    def decoupled(self) -> bool:
        return self is not Architecture.INTERLEAVED_BASELINE

    @property
    def pools_actions(self) -> bool:
        return self in (Architecture.ATTN_LFA, Architecture.ATTN_MVP, Architecture.ATTN_DHN)


@dataclass
class ModelConfig:
    """Architecture selector plus hyperparameters.

    ``lam`` is the action weight in mixed values (``V = H + lam * a``); it is
    serialized under the key ``lambda``.
    """

    architecture: Architecture = Architecture.ATTN_LFA
    d_model: int = 32
    n_layers: int = 12
    n_heads: int = 4
    lam: float = 1.0
    n_tasks: int = 3
    mmoe_experts: int = 4
    d_item: int = 2
    d_action: int = 3
    late_fusion_dim: int = 4
    ffn_mult: int = 4
    expert_dim: int = 32
    tower_hidden: int = 16
    rope_base: float = 10000.0
    max_len: int = 2048
    dhn_action_first: bool = False

    def __post_init__(self):
        self.architecture = Architecture.parse(self.architecture)
        for name in ("d_model", "n_layers", "n_heads", "n_tasks", "mmoe_experts", "d_item",
                     "d_action", "ffn_mult", "expert_dim", "tower_hidden", "max_len"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name}: must be >= 1, got {getattr(self, name)}")
        if self.late_fusion_dim < 0:
            raise ConfigError(f"late_fusion_dim: must be >= 0, got {self.late_fusion_dim}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"n_heads: d_model={self.d_model} is not divisible by {self.n_heads}")
        if (self.d_model // self.n_heads) % 2:
            raise ConfigError("n_heads: head_dim must be even for RoPE")
        if self.lam < 0:
            raise ConfigError(f"lambda: must be >= 0, got {self.lam}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def rope(self) -> RopeParams:
        return RopeParams(self.head_dim, self.rope_base, self.max_len)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["architecture"] = self.architecture.value
        out["lambda"] = out.pop("lam")
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        raw = dict(raw)
        if "lambda" in raw:
            raw["lam"] = raw.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"model: unknown field(s) {', '.join(unknown)}")
        return cls(**raw)


@dataclass
class SequenceBatch:
    """Right-padded model inputs.

    ``labels`` at positions ``>= valid_len`` are meaningless and never enter a
    loss; ``loss_mask`` is the single place that decides which cells count.
    """

    item_features: np.ndarray | Tensor   # [B, S, d_item]
    action_features: np.ndarray | Tensor  # [B, S, d_action]
    labels: np.ndarray                    # [B, S, n_tasks] of {0, 1}
    context_len: np.ndarray               # [B]
    valid_len: np.ndarray                 # [B]
    late_fusion: np.ndarray               # [B, S, late_fusion_dim], raw counts
    user_ids: list = field(default_factory=list)

    @property
    def batch_size(self) -> int:
        return self.labels.shape[0]

    @property
    def seq_len(self) -> int:
        return self.labels.shape[1]

    def loss_mask(self, candidates_only: bool = False) -> np.ndarray:
        pos = np.arange(self.seq_len)[None, :]
        mask = pos < self.valid_len[:, None]
        if candidates_only:
            mask &= pos >= self.context_len[:, None]
        return mask


@dataclass
class ModelOutput:
    logits: Tensor  # [B, S, n_tasks]
    per_position_flops: int
