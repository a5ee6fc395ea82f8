"""Central-difference gradient checks on small double-precision instances."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
from torch import nn

from ..encoder import EncoderConfig
from ..heads import ClassifierHeads, LossWeights, total_loss
from ..hrca import MODES, ComponentEmbedding, HierarchicalCrossAttention, HrcaConfig, knowledge_priors
from ..model import MurphyModel
from ..relgraph import (
    RelationalGraphConv,
    RgcnConfig,
    dynamic_adjacency,
    feature_correlation,
    label_consistency,
)
from ..schema import PRIMARY_TYPES, TYPES, random_schema

MODULES = ("relgraph", "hrca", "heads", "end_to_end")

BATCH = 5
SCHEMA_SIZES = (2, 3, 4, 3, 2, 3)


@dataclass(frozen=True)
class GradCheckResult:
    module: str
    max_rel_error: float
    worst: str  # tensor holding the largest error
    num_checked: int


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor, floor: float = 1e-6) -> torch.Tensor:
    """|a - n| / max(|a|, |n|, floor), elementwise."""
    scale = torch.maximum(torch.maximum(analytic.abs(), numeric.abs()), torch.full_like(analytic, floor))
    return (analytic - numeric).abs() / scale


def _labels(gen: torch.Generator, schema) -> dict[str, torch.Tensor]:
    return {t: torch.randint(0, schema.num_classes(t), (BATCH,), generator=gen) for t in TYPES}


def _functional(gen: torch.Generator, like: torch.Tensor) -> torch.Tensor:
    return torch.randn(like.shape, generator=gen, dtype=torch.float64)


def _relgraph_case(gen, schema):
    d, cfg = 6, RgcnConfig(num_layers=2, hidden_dim=4)
    block = RelationalGraphConv(d, cfg)
    x = torch.randn(BATCH, d, generator=gen, dtype=torch.float64)
    labels = _labels(gen, schema)
    consistency = {t: label_consistency(labels[t], schema.num_classes(t)).double() for t in TYPES}
    g_train = _functional(gen, torch.empty(BATCH, d + cfg.hidden_dim))
    g_infer = _functional(gen, g_train)

    def loss(inp):
        corr = feature_correlation(inp)
        _, e_train = block(inp, dynamic_adjacency(corr, consistency, mode="training"))
        _, e_infer = block(inp, dynamic_adjacency(corr, mode="inference"))
        return (g_train * e_train).sum() + (g_infer * e_infer).sum()

    return block, {"input": x}, loss


def _hrca_case(gen, schema):
    counts = {t: schema.num_classes(t) for t in TYPES}
    fused_dim, comp_dim = 6, 3
    comps = ComponentEmbedding(fused_dim, comp_dim)
    blocks = nn.ModuleDict(
        {
            m: HierarchicalCrossAttention(counts, knowledge_priors(schema), HrcaConfig(mode=m, hidden=4, kernel_size=3))
            for m in MODES
        }
    )
    holder = nn.ModuleDict({"components": comps, "attention": blocks})
    logits = {
        t: torch.randn(BATCH, 1, counts[t], generator=gen, dtype=torch.float64) for t in PRIMARY_TYPES
    }
    fused = torch.randn(BATCH, fused_dim, generator=gen, dtype=torch.float64)
    g_out = {(m, t): _functional(gen, logits[t]) for m in MODES for t in PRIMARY_TYPES}
    g_comp = {c: _functional(gen, torch.empty(BATCH, comp_dim)) for c in ("I", "A", "O")}

    def loss(fused, logit_s, logit_t, logit_iao):
        c = {"S": logit_s, "T": logit_t, "IAO": logit_iao}
        total = sum((g_comp[k] * v).sum() for k, v in comps(fused).items() if k in g_comp)
        for m in MODES:
            out = blocks[m](c)
            total = total + sum((g_out[(m, t)] * out[t]).sum() for t in PRIMARY_TYPES)
        return total

    inputs = {"fused": fused, "logit_s": logits["S"], "logit_t": logits["T"], "logit_iao": logits["IAO"]}
    return holder, inputs, loss


def _heads_case(gen, schema):
    counts = {t: schema.num_classes(t) for t in TYPES}
    fused_dim, comp_dim = 7, 3
    heads = ClassifierHeads(fused_dim, comp_dim, counts)
    fused = torch.randn(BATCH, fused_dim, generator=gen, dtype=torch.float64)
    comps = {c: torch.randn(BATCH, comp_dim, generator=gen, dtype=torch.float64) for c in ("I", "A", "O")}
    targets = _labels(gen, schema)
    weights = LossWeights(*(float(w) for w in torch.rand(6, generator=gen, dtype=torch.float64) + 0.5))
    g = {t: _functional(gen, torch.empty(BATCH, 1, counts[t])) for t in TYPES}

    def loss(fused, comp_i, comp_a, comp_o):
        c = {"I": comp_i, "A": comp_a, "O": comp_o, "IAO": torch.cat([comp_i, comp_a, comp_o], dim=1)}
        out = heads(fused, c)
        return total_loss(out, targets, weights) + sum((g[t] * out[t]).sum() for t in TYPES)

    return heads, {"fused": fused, "comp_i": comps["I"], "comp_a": comps["A"], "comp_o": comps["O"]}, loss


def _end_to_end_case(gen, schema):
    model = MurphyModel(
        schema,
        EncoderConfig(input_dim=5, output_dim=6),
        RgcnConfig(num_layers=2, hidden_dim=4),
        HrcaConfig(mode="full", hidden=4, component_dim=3),
    )
    model.train()
    x = torch.randn(BATCH, 5, generator=gen, dtype=torch.float64)
    targets = _labels(gen, schema)

    def loss(inp):
        out = model(inp, labels=targets)
        return total_loss(out.adjusted, targets) + total_loss(out.logits, targets, LossWeights(0.5, 0.5, 0.5, 0, 0, 0))

    return model, {"input": x}, loss


_CASES: dict[str, Callable] = {
    "relgraph": _relgraph_case,
    "hrca": _hrca_case,
    "heads": _heads_case,
    "end_to_end": _end_to_end_case,
}


def compare_gradients(
    loss_fn: Callable[[], torch.Tensor],
    tensors: dict[str, torch.Tensor],
    eps: float,
    label: str = "function",
) -> tuple[float, str, int]:
    """Largest relative error between autograd and central differences.

    ``loss_fn`` reads the tensors in place; each entry is nudged by +-eps in
    turn. Returns (max error, name of the worst tensor, entries checked).
    """
    for t in tensors.values():
        t.requires_grad_(True)
    value = loss_fn()
    if not torch.isfinite(value):
        raise FloatingPointError(f"{label}: loss is not finite")
    grads = torch.autograd.grad(value, list(tensors.values()), allow_unused=True)

    worst, worst_name, count = 0.0, "", 0
    with torch.no_grad():
        for (name, t), g in zip(tensors.items(), grads):
            g = torch.zeros_like(t) if g is None else g
            if not torch.isfinite(g).all():
                raise FloatingPointError(f"{label}: non-finite gradient for {name}")
            numeric = torch.empty_like(t)
            flat, num_flat = t.view(-1), numeric.view(-1)
            for k in range(flat.numel()):
                orig = flat[k].item()
                flat[k] = orig + eps
                up = loss_fn().item()
                flat[k] = orig - eps
                down = loss_fn().item()
                flat[k] = orig
                num_flat[k] = (up - down) / (2 * eps)
            if not torch.isfinite(numeric).all():
                raise FloatingPointError(f"{label}: non-finite numeric gradient for {name}")
            err = relative_error(g, numeric).max().item() if t.numel() else 0.0
            count += t.numel()
            if err > worst or not worst_name:
                worst, worst_name = err, name
    return worst, worst_name, count


def grad_check(module: str, eps: float = 1e-5, seed: int = 0, zero_params: bool = False) -> GradCheckResult:
    """Compare autograd against central differences for every input and parameter entry.

    Raises FloatingPointError naming the tensor when an analytic gradient is
    not finite. With ``zero_params`` every parameter starts at zero; the
    result is still finite but may sit on rectifier kinks.
    """
    if module not in _CASES:
        raise ValueError(f"unknown module {module!r}; expected one of {MODULES}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    gen = torch.Generator().manual_seed(seed)
    schema = random_schema(np.random.default_rng(seed), SCHEMA_SIZES)
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    try:
        torch.manual_seed(seed)
        net, inputs, loss_fn = _CASES[module](gen, schema)
        net.double()
        if zero_params:
            with torch.no_grad():
                for p in net.parameters():
                    p.zero_()
        tensors = {f"input:{k}": v for k, v in inputs.items()}
        tensors.update(dict(net.named_parameters()))
        worst, worst_name, count = compare_gradients(
            lambda: loss_fn(*inputs.values()), tensors, eps, label=module
        )
        return GradCheckResult(module, worst, worst_name, count)
    finally:
        torch.set_default_dtype(prev)
