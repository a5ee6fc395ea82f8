"""Component embedding and hierarchy-masked cross attention between classifier outputs.

Attention maps are oriented (batch, source categories, target categories).
``A[i <- j]`` is the masked, scaled softmax of Q_j^T Q_i taken over the
source axis, so each target category receives a convex combination of
source influences before the containment mask zeroes forbidden pairs.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping

import torch
import torch.nn.functional as F
from torch import nn

from .schema import COMPONENT_TYPES, PRIMARY_TYPES, LabelSchema, build_knowledge_matrix

FULL_PAIRS = (
    ("S", "T"),
    ("S", "IAO"),
    ("T", "S"),
    ("T", "IAO"),
    ("IAO", "S"),
    ("IAO", "T"),
)
COARSE_TO_FINE_PAIRS = (("T", "S"), ("IAO", "T"), ("IAO", "S"))
MODES = ("full", "coarse_to_fine")


@dataclass(frozen=True)
class HrcaConfig:
    enabled: bool = True
    mode: str = "coarse_to_fine"
    hidden: int = 8  # K, also the attention scaling constant
    kernel_size: int = 1
    component_dim: int = 32  # P

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown HRCA mode {self.mode!r}")
        if self.hidden < 1 or self.component_dim < 1:
            raise ValueError("HRCA widths must be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be a positive odd integer")

    @classmethod
    def from_dict(cls, d: dict) -> HrcaConfig:
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


class ComponentEmbedding(nn.Module):
    """f_c = relu(E Gamma_c + b_c) for c in I, A, O; f_IAO = [f_I f_A f_O]."""

    def __init__(self, in_dim: int, component_dim: int) -> None:
        super().__init__()
        self.in_dim = in_dim
        self.component_dim = component_dim
        self.proj = nn.ModuleDict({c: nn.Linear(in_dim, component_dim) for c in COMPONENT_TYPES})

    def forward(self, fused: torch.Tensor) -> dict[str, torch.Tensor]:
        if fused.ndim != 2 or fused.shape[1] != self.in_dim:
            raise ValueError(f"expected fused features of shape (B, {self.in_dim})")
        out = {c: torch.relu(self.proj[c](fused)) for c in COMPONENT_TYPES}
        out["IAO"] = torch.cat([out["I"], out["A"], out["O"]], dim=1)
        return out


def embed_components(fused: torch.Tensor, block: ComponentEmbedding) -> dict[str, torch.Tensor]:
    return block(fused)


def attention_scores(q_target: torch.Tensor, q_source: torch.Tensor, scale: float) -> torch.Tensor:
    """Unmasked softmax weights (B, T_source, T_target), normalised over sources."""
    logits = torch.einsum("bks,bkt->bst", q_source, q_target) / math.sqrt(scale)
    return torch.softmax(logits, dim=1)


def cross_attention(
    q_target: torch.Tensor, q_source: torch.Tensor, prior: torch.Tensor, scale: float
) -> torch.Tensor:
    """A[target <- source] = softmax_source(Q_s^T Q_t / sqrt(scale)) * prior.

    ``prior`` has shape (T_source, T_target) and broadcasts over the batch.
    """
    if q_target.ndim != 3 or q_source.ndim != 3:
        raise ValueError("Q tensors must have shape (B, K, T)")
    if tuple(prior.shape) != (q_source.shape[2], q_target.shape[2]):
        raise ValueError(
            f"knowledge matrix shape {tuple(prior.shape)} does not match "
            f"(source={q_source.shape[2]}, target={q_target.shape[2]})"
        )
    return attention_scores(q_target, q_source, scale) * prior.to(q_target.dtype)


def route(attn: torch.Tensor, source_logits: torch.Tensor) -> torch.Tensor:
    """(B, 1, T_source) x (B, T_source, T_target) -> (B, 1, T_target)."""
    return torch.bmm(source_logits, attn)


def gate(attn: torch.Tensor) -> torch.Tensor:
    """Average over the source axis -> (B, 1, T_target)."""
    return attn.mean(dim=1, keepdim=True)


def assemble(
    mode: str,
    logits: Mapping[str, torch.Tensor],
    attentions: Mapping[tuple[str, str], torch.Tensor],
) -> dict[str, torch.Tensor]:
    """Adjust S/T/IAO logits with cross-attention terms.

    Attention keys are (target, source) pairs. ``full`` adds routed logits of
    the two other types; ``coarse_to_fine`` gates each finer type's own logits
    by its attention from every coarser type and leaves S untouched.
    """
    if mode not in MODES:
        raise ValueError(f"unknown HRCA mode {mode!r}")
    needed = FULL_PAIRS if mode == "full" else COARSE_TO_FINE_PAIRS
    missing = [p for p in needed if p not in attentions]
    if missing:
        raise KeyError(f"attention pairs {missing} required for mode {mode!r}")

    out = dict(logits)
    if mode == "full":
        for i in PRIMARY_TYPES:
            j, k = (x for x in PRIMARY_TYPES if x != i)
            out[i] = (
                logits[i]
                + route(attentions[(i, j)], logits[j])
                + route(attentions[(i, k)], logits[k])
            )
    else:
        c_t, c_a = logits["T"], logits["IAO"]
        out["S"] = logits["S"]
        out["T"] = c_t + gate(attentions[("T", "S")]) * c_t
        out["IAO"] = (
            c_a
            + gate(attentions[("IAO", "T")]) * c_a
            + gate(attentions[("IAO", "S")]) * c_a
        )
    return out


def knowledge_priors(schema: LabelSchema) -> dict[tuple[str, str], torch.Tensor]:
    """Containment masks for every (target, source) pair, shaped (T_source, T_target)."""
    priors = {}
    for coarse, fine in (("S", "T"), ("T", "IAO"), ("S", "IAO")):
        m = torch.as_tensor(build_knowledge_matrix(schema, coarse, fine).matrix.astype("float32"))
        priors[(fine, coarse)] = m  # coarse rows are the source
        priors[(coarse, fine)] = m.T.contiguous()  # fine rows are the source
    return priors


class HierarchicalCrossAttention(nn.Module):
    """Per-type 1-D convolution embedding of the logits plus the masked attention."""

    def __init__(
        self,
        class_counts: Mapping[str, int],
        priors: Mapping[tuple[str, str], torch.Tensor],
        cfg: HrcaConfig,
    ) -> None:
        super().__init__()
        self.cfg = cfg
        self.embed = nn.ModuleDict(
            {
                t: nn.Conv1d(1, cfg.hidden, cfg.kernel_size, padding=cfg.kernel_size // 2)
                for t in PRIMARY_TYPES
            }
        )
        for (i, j), m in priors.items():
            if tuple(m.shape) != (class_counts[j], class_counts[i]):
                raise ValueError(f"prior for {i}<-{j} has shape {tuple(m.shape)}")
            self.register_buffer(f"prior_{i}_{j}", m.clone())

    def prior(self, target: str, source: str) -> torch.Tensor:
        return getattr(self, f"prior_{target}_{source}")

    def query(self, t: str, logits: torch.Tensor) -> torch.Tensor:
        """Conv1d(1 -> K) over the category axis, (B, 1, T) -> (B, K, T).

        Written as an unfold + contraction: same parameters and result as the
        module's own forward, but far cheaper for one input channel.
        """
        conv = self.embed[t]
        k = conv.kernel_size[0]
        windows = F.pad(logits, (k // 2, k // 2)).unfold(2, k, 1)  # (B, 1, T, k)
        return torch.einsum("bctj,hcj->bht", windows, conv.weight) + conv.bias[:, None]

    def attentions(self, logits: Mapping[str, torch.Tensor]) -> dict[tuple[str, str], torch.Tensor]:
        q = {t: self.query(t, logits[t]) for t in PRIMARY_TYPES}
        pairs = FULL_PAIRS if self.cfg.mode == "full" else COARSE_TO_FINE_PAIRS
        return {
            (i, j): cross_attention(q[i], q[j], self.prior(i, j), self.cfg.hidden)
            for i, j in pairs
        }

    def forward(self, logits: Mapping[str, torch.Tensor]) -> dict[str, torch.Tensor]:
        return assemble(self.cfg.mode, logits, self.attentions(logits))
