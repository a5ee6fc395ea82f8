"""Six affine classifiers and the weighted multi-task cross-entropy."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping

import torch
from torch import nn
from torch.nn import functional as nnf

from .schema import TYPES


@dataclass(frozen=True)
class LossWeights:
    S: float = 1.0
    T: float = 1.0
    IAO: float = 1.0
    I: float = 1.0
    A: float = 1.0
    O: float = 1.0

    def __post_init__(self) -> None:
        if any(w < 0 for w in asdict(self).values()):
            raise ValueError("loss weights must be non-negative")

    def __getitem__(self, ann_type: str) -> float:
        return getattr(self, ann_type)

    @classmethod
    def from_dict(cls, d: dict) -> LossWeights:
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


class ClassifierHeads(nn.Module):
    """Step/task heads read the fused feature, the activity head reads f_IAO and
    each component head reads its own embedding."""

    def __init__(self, fused_dim: int, component_dim: int, class_counts: Mapping[str, int]) -> None:
        super().__init__()
        in_dims = {
            "S": fused_dim,
            "T": fused_dim,
            "IAO": 3 * component_dim,
            "I": component_dim,
            "A": component_dim,
            "O": component_dim,
        }
        self.in_dims = in_dims
        self.heads = nn.ModuleDict({t: nn.Linear(in_dims[t], class_counts[t]) for t in TYPES})

    def forward(
        self, fused: torch.Tensor, components: Mapping[str, torch.Tensor]
    ) -> dict[str, torch.Tensor]:
        inputs = {"S": fused, "T": fused, **{c: components[c] for c in ("IAO", "I", "A", "O")}}
        out = {}
        for t in TYPES:
            x = inputs[t]
            if x.ndim != 2 or x.shape[1] != self.in_dims[t]:
                raise ValueError(f"head {t} expects input width {self.in_dims[t]}")
            out[t] = self.heads[t](x).unsqueeze(1)
        return out


def classify_all(
    fused: torch.Tensor, components: Mapping[str, torch.Tensor], heads: ClassifierHeads
) -> dict[str, torch.Tensor]:
    return heads(fused, components)


def per_type_losses(
    logits: Mapping[str, torch.Tensor], targets: Mapping[str, torch.Tensor]
) -> dict[str, torch.Tensor]:
    out = {}
    for t in TYPES:
        lg = logits[t]
        if lg.ndim == 3:
            lg = lg.squeeze(1)
        y = targets[t]
        if y.numel() and (y.min() < 0 or y.max() >= lg.shape[1]):
            raise ValueError(f"target out of range for type {t}")
        out[t] = nnf.cross_entropy(lg, y)
    return out


def total_loss(
    logits: Mapping[str, torch.Tensor],
    targets: Mapping[str, torch.Tensor],
    weights: LossWeights | None = None,
) -> torch.Tensor:
    """Sum over types of weight * batch-mean cross-entropy."""
    weights = weights or LossWeights()
    losses = per_type_losses(logits, targets)
    return sum(weights[t] * losses[t] for t in TYPES)
