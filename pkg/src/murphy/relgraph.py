"""Dynamic per-batch adjacency and multi-relation graph convolution.

One relation per annotation type. During training each relation's graph is
the feature-similarity matrix masked by label agreement; at inference only
the similarity matrix is available and every relation shares it.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import torch
from torch import nn

from .schema import TYPES


@dataclass(frozen=True)
class RgcnConfig:
    enabled: bool = True
    num_layers: int = 2
    hidden_dim: int = 64
    layer_norm: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> RgcnConfig:
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def feature_correlation(feats: torch.Tensor) -> torch.Tensor:
    """Row-softmax of pairwise cosine similarity, shape (B, B).

    A zero-norm row has cosine 0 against every other row and 1 against itself.
    """
    if feats.ndim != 2 or feats.shape[0] < 1:
        raise ValueError("feature_correlation expects a (B, D) tensor with B >= 1")
    sq = (feats * feats).sum(dim=1, keepdim=True)
    norm = torch.sqrt(torch.where(sq > 0, sq, torch.ones_like(sq)))
    unit = feats / norm
    cos = unit @ unit.T
    eye = torch.eye(feats.shape[0], dtype=torch.bool, device=feats.device)
    cos = torch.where(eye, torch.ones_like(cos), cos)
    return torch.softmax(cos, dim=1)


def label_consistency(labels: torch.Tensor, num_classes: int | None = None) -> torch.Tensor:
    """A[i, j] = 1 iff labels[i] == labels[j]."""
    labels = torch.as_tensor(labels)
    if labels.ndim != 1:
        raise ValueError("labels must be a 1-D tensor")
    if num_classes is not None and labels.numel() and (
        labels.min() < 0 or labels.max() >= num_classes
    ):
        raise ValueError(f"label out of range for {num_classes} classes")
    return (labels[:, None] == labels[None, :]).to(torch.get_default_dtype())


@dataclass
class AdjacencySet:
    """Per-relation (B, B) adjacency matrices."""

    matrices: dict[str, torch.Tensor]
    mode: str

    def stacked(self, relations: Sequence[str] = TYPES) -> torch.Tensor:
        return torch.stack([self.matrices[r] for r in relations])


def dynamic_adjacency(
    corr: torch.Tensor,
    consistency: Mapping[str, torch.Tensor] | None = None,
    mode: str = "training",
    relations: Sequence[str] = TYPES,
) -> AdjacencySet:
    if mode == "training":
        if consistency is None or any(r not in consistency for r in relations):
            raise ValueError("training-mode adjacency needs label consistency for every relation")
        mats = {r: corr * consistency[r].to(corr.dtype) for r in relations}
    elif mode == "inference":
        if consistency is not None:
            raise ValueError("inference-mode adjacency must not use labels")
        mats = {r: corr for r in relations}
    else:
        raise ValueError(f"unknown adjacency mode {mode!r}")
    return AdjacencySet(mats, mode)


class RelationalGraphConv(nn.Module):
    """Layer norm on the backbone feature followed by ``num_layers`` relational layers.

    h_{l+1} = relu(sum_r S^r h_l W^l_r + h_l W^l_0); the output is h_L and the
    fused feature E = [F, h_L].
    """

    def __init__(self, in_dim: int, cfg: RgcnConfig, relations: Sequence[str] = TYPES) -> None:
        super().__init__()
        if cfg.num_layers < 1:
            raise ValueError("the relational block needs at least one layer")
        self.cfg = cfg
        self.relations = tuple(relations)
        self.in_dim = in_dim
        self.norm = nn.LayerNorm(in_dim, eps=1e-5) if cfg.layer_norm else None
        dims = [in_dim] + [cfg.hidden_dim] * cfg.num_layers
        self.rel_weights = nn.ParameterList()
        self.self_weights = nn.ParameterList()
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            # R relation terms plus the self term all feed one sum: fan-in is (R + 1) * d_in
            bound = 1.0 / (d_in * (len(self.relations) + 1)) ** 0.5
            w_r = torch.empty(len(self.relations), d_in, d_out).uniform_(-bound, bound)
            self.rel_weights.append(nn.Parameter(w_r))
            self.self_weights.append(nn.Parameter(torch.empty(d_in, d_out).uniform_(-bound, bound)))

    @property
    def out_dim(self) -> int:
        return self.cfg.hidden_dim

    def forward(
        self, feats: torch.Tensor, adj: AdjacencySet
    ) -> tuple[torch.Tensor, torch.Tensor]:
        if feats.ndim != 2 or feats.shape[1] != self.in_dim:
            raise ValueError(f"expected features of shape (B, {self.in_dim})")
        s = adj.stacked(self.relations)
        if s.shape[1:] != (feats.shape[0], feats.shape[0]):
            raise ValueError("adjacency does not match the batch size")
        h = self.norm(feats) if self.norm is not None else feats
        for w_r, w_0 in zip(self.rel_weights, self.self_weights):
            msg = torch.bmm(s @ h, w_r).sum(0)  # sum_r S_r h W_r
            h = torch.relu(msg + h @ w_0)
        if not torch.isfinite(h).all():
            raise FloatingPointError("non-finite values in relational features")
        return h, torch.cat([feats, h], dim=1)


def rgcn_forward(
    feats: torch.Tensor, adj: AdjacencySet, block: RelationalGraphConv
) -> tuple[torch.Tensor, torch.Tensor]:
    return block(feats, adj)

