"""Backbone producing per-frame features F (B x D) from synthetic frame vectors."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn


@dataclass(frozen=True)
class EncoderConfig:
    variant: str = "memoryless"  # or "recurrent"
    input_dim: int = 64
    output_dim: int = 128
    recurrent_state_dim: int = 64

    def __post_init__(self) -> None:
        if self.variant not in ("memoryless", "recurrent"):
            raise ValueError(f"unknown encoder variant {self.variant!r}")
        if min(self.input_dim, self.output_dim, self.recurrent_state_dim) < 1:
            raise ValueError("encoder dimensions must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> EncoderConfig:
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


class Encoder(nn.Module):
    """Memoryless (per-row affine + tanh) or recurrent (GRU + affine + tanh) backbone.

    The recurrent variant treats the batch rows as consecutive frames of one
    sequence and threads its hidden state across calls.
    """

    def __init__(self, cfg: EncoderConfig) -> None:
        super().__init__()
        self.cfg = cfg
        if cfg.variant == "recurrent":
            self.rnn = nn.GRU(cfg.input_dim, cfg.recurrent_state_dim, batch_first=True)
            self.proj = nn.Linear(cfg.input_dim + cfg.recurrent_state_dim, cfg.output_dim)
        else:
            self.rnn = None
            self.proj = nn.Linear(cfg.input_dim, cfg.output_dim)

    @property
    def recurrent(self) -> bool:
        return self.rnn is not None

    def forward(
        self, x: torch.Tensor, state: torch.Tensor | None = None
    ) -> tuple[torch.Tensor, torch.Tensor | None]:
        if x.ndim != 2 or x.shape[1] != self.cfg.input_dim:
            raise ValueError(
                f"expected inputs of shape (B, {self.cfg.input_dim}), got {tuple(x.shape)}"
            )
        if not torch.isfinite(x).all():
            raise ValueError("encoder inputs contain non-finite values")
        if self.rnn is None:
            return torch.tanh(self.proj(x)), None
        out, new_state = self.rnn(x.unsqueeze(0), state)
        feats = torch.tanh(self.proj(torch.cat([x, out.squeeze(0)], dim=1)))
        return feats, new_state


def encode_batch(
    encoder: Encoder, inputs: torch.Tensor, state: torch.Tensor | None = None
) -> tuple[torch.Tensor, torch.Tensor | None]:
    return encoder(inputs, state)
