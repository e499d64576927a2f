"""Transformer layer shapes and their weight matrices."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from ..config import ConfigError, hardware_from, load_toml, HardwareConfig

ATTENTION_MATRICES = ("W_K", "W_Q", "W_V", "W_O")      # channel order across the mesh
FEED_FORWARD_MATRICES = ("W_gate", "W_up", "W_down")


@dataclass(frozen=True)
class MatrixShape:
    name: str
    in_dim: int
    out_dim: int
    layer: int = 0
    kind: str = "attention"

    @property
    def key(self) -> str:
        return f"L{self.layer}.{self.name}"


@dataclass(frozen=True)
class ModelSpec:
    name: str
    num_layers: int
    embed_dim: int
    kv_dim: int
    ffn_dim: int
    num_heads: int = 1

    def __post_init__(self) -> None:
        for attr in ("num_layers", "embed_dim", "kv_dim", "ffn_dim", "num_heads"):
            if getattr(self, attr) <= 0:
                raise ConfigError(f"model.{attr} must be positive")
        if self.embed_dim % self.num_heads:
            raise ConfigError("embed_dim must be a multiple of num_heads")
        if self.kv_dim % self.head_dim:
            raise ConfigError("kv_dim must be a whole number of heads")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def kv_heads(self) -> int:
        return self.kv_dim // self.head_dim

    @property
    def layer_kinds(self) -> list[str]:
        """Each decoder holds an attention layer and three feed-forward layers."""
        return ["attention", "feed_forward"] * self.num_layers

    def attention_matrices(self, layer: int = 0) -> list[MatrixShape]:
        d, kv = self.embed_dim, self.kv_dim
        dims = {"W_K": (d, kv), "W_Q": (d, d), "W_V": (d, kv), "W_O": (d, d)}
        return [MatrixShape(n, *dims[n], layer, "attention") for n in ATTENTION_MATRICES]

    def feed_forward_matrices(self, layer: int = 0) -> list[MatrixShape]:
        d, f = self.embed_dim, self.ffn_dim
        dims = {"W_gate": (d, f), "W_up": (d, f), "W_down": (f, d)}
        return [MatrixShape(n, *dims[n], layer, "feed_forward") for n in FEED_FORWARD_MATRICES]

    def decoder_matrices(self, layer: int = 0) -> list[MatrixShape]:
        return self.attention_matrices(layer) + self.feed_forward_matrices(layer)

    def weight_count(self) -> int:
        return self.num_layers * sum(m.in_dim * m.out_dim for m in self.decoder_matrices())


def model_from(mapping: Mapping[str, Any]) -> ModelSpec:
    m = mapping.get("model", mapping)
    try:
        return ModelSpec(name=str(m["name"]), num_layers=int(m["num_layers"]),
                         embed_dim=int(m["embed_dim"]), kv_dim=int(m["kv_dim"]),
                         ffn_dim=int(m["ffn_dim"]), num_heads=int(m.get("num_heads", 1)))
    except KeyError as exc:
        raise ConfigError(f"model config is missing {exc.args[0]!r}") from None


def load_model(path: str | Path) -> tuple[ModelSpec, HardwareConfig]:
    """Load a model file (or preset name); an optional [hardware] table overrides defaults."""
    data = load_toml(path)
    return model_from(data), hardware_from(data.get("hardware", {}))
