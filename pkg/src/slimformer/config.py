"""Transformer architecture configuration."""

from __future__ import annotations

from dataclasses import dataclass, asdict

from .errors import ConfigError

TASK_KINDS = ("classification", "language_model", "copy")


@dataclass(frozen=True)
class TransformerConfig:
    """Shapes and switches of the toy transformer.

    ``weight_group_width`` is the row width of prunable weight groups along
    the hidden dimension; ``kv_group_width`` is the analogous width of
    key/value position groups along the sequence dimension. The last vocab
    id is reserved as the right-padding token.
    """

    num_layers: int
    hidden_dim: int
    num_heads: int
    ffn_dim: int
    context_len: int
    vocab_size: int
    autoregressive: bool = False
    weight_group_width: int = 4
    kv_group_width: int = 4
    task_kind: str = "classification"
    num_classes: int = 0  # 0 means "use vocab_size"

    def __post_init__(self):
        if self.num_layers < 1:
            raise ConfigError("num_layers must be >= 1")
        if self.hidden_dim < 1 or self.ffn_dim < 1 or self.context_len < 1:
            raise ConfigError("hidden_dim, ffn_dim and context_len must be >= 1")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2")
        if self.hidden_dim % self.num_heads != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}")
        if self.hidden_dim % self.weight_group_width != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by weight_group_width "
                f"{self.weight_group_width}")
        if self.context_len % self.kv_group_width != 0:
            raise ConfigError(
                f"context_len {self.context_len} not divisible by kv_group_width "
                f"{self.kv_group_width}")
        if self.task_kind not in TASK_KINDS:
            raise ConfigError(f"task_kind must be one of {TASK_KINDS}")
        if self.num_classes < 0:
            raise ConfigError("num_classes must be >= 0")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    @property
    def num_weight_groups(self) -> int:
        return self.hidden_dim // self.weight_group_width

    @property
    def num_kv_groups(self) -> int:
        return self.context_len // self.kv_group_width

    @property
    def output_classes(self) -> int:
        if self.task_kind == "classification":
            return self.num_classes or self.vocab_size
        return self.vocab_size

    @property
    def pad_token(self) -> int:
        return self.vocab_size - 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TransformerConfig":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad transformer config: {exc}") from exc
