"""Full network: encoder -> relational block -> component embedding -> heads -> HRCA."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import torch
from torch import nn

from .encoder import Encoder, EncoderConfig
from .heads import ClassifierHeads
from .hrca import ComponentEmbedding, HierarchicalCrossAttention, HrcaConfig, knowledge_priors
from .relgraph import (
    RelationalGraphConv,
    RgcnConfig,
    dynamic_adjacency,
    feature_correlation,
    label_consistency,
)
from .schema import TYPES, LabelSchema


@dataclass
class PredictionBundle:
    logits: dict[str, torch.Tensor]  # raw classifier outputs, (B, 1, T_i)
    adjusted: dict[str, torch.Tensor]  # after HRCA (identical to logits when disabled)
    state: torch.Tensor | None = None

    def probabilities(self) -> dict[str, torch.Tensor]:
        return {t: torch.softmax(v.squeeze(1), dim=1) for t, v in self.adjusted.items()}

    def predictions(self) -> dict[str, torch.Tensor]:
        return {t: v.squeeze(1).argmax(dim=1) for t, v in self.adjusted.items()}


class MurphyModel(nn.Module):
    def __init__(
        self,
        schema: LabelSchema,
        encoder_cfg: EncoderConfig,
        rgcn_cfg: RgcnConfig,
        hrca_cfg: HrcaConfig,
    ) -> None:
        super().__init__()
        self.class_counts = {t: schema.num_classes(t) for t in TYPES}
        self.encoder = Encoder(encoder_cfg)
        d = encoder_cfg.output_dim
        self.rgcn = RelationalGraphConv(d, rgcn_cfg) if rgcn_cfg.enabled else None
        fused_dim = d + (rgcn_cfg.hidden_dim if self.rgcn is not None else 0)
        self.components = ComponentEmbedding(fused_dim, hrca_cfg.component_dim)
        self.heads = ClassifierHeads(fused_dim, hrca_cfg.component_dim, self.class_counts)
        self.hrca = (
            HierarchicalCrossAttention(self.class_counts, knowledge_priors(schema), hrca_cfg)
            if hrca_cfg.enabled
            else None
        )

    def forward(
        self,
        x: torch.Tensor,
        labels: Mapping[str, torch.Tensor] | None = None,
        state: torch.Tensor | None = None,
    ) -> PredictionBundle:
        """Labels are used only by the relational block, and only in training mode."""
        feats, new_state = self.encoder(x, state)
        if self.rgcn is not None:
            corr = feature_correlation(feats)
            if self.training and labels is not None:
                consistency = {
                    t: label_consistency(labels[t], self.class_counts[t]).to(feats.dtype)
                    for t in TYPES
                }
                adj = dynamic_adjacency(corr, consistency, mode="training")
            else:
                adj = dynamic_adjacency(corr, mode="inference")
            _, fused = self.rgcn(feats, adj)
        else:
            fused = feats
        comps = self.components(fused)
        logits = self.heads(fused, comps)
        adjusted = self.hrca(logits) if self.hrca is not None else dict(logits)
        return PredictionBundle(logits, adjusted, new_state)
