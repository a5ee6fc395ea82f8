"""Training loop, checkpointing and evaluation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..heads import total_loss
from ..metrics import EvalRecord, evaluation_report
from ..model import MurphyModel
from ..schema import TYPES
from ..synthgen import Dataset, generate_dataset, load_dataset
from .config import ExperimentConfig

log = logging.getLogger(__name__)


class CheckpointError(RuntimeError):
    pass


def build_model(cfg: ExperimentConfig, schema=None) -> MurphyModel:
    schema = schema if schema is not None else cfg.load_schema()
    torch.manual_seed(cfg.seed)
    return MurphyModel(schema, cfg.encoder, cfg.rgcn, cfg.hrca)


def prepare_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.data.data_dir is not None:
        ds = load_dataset(cfg.data.data_dir)
        if ds.schema.fingerprint() != cfg.load_schema().fingerprint():
            raise CheckpointError("dataset schema does not match the configured schema")
        return ds
    return generate_dataset(
        cfg.load_schema(),
        cfg.data.gen,
        cfg.data.features,
        cfg.data.num_train,
        cfg.data.num_test,
        cfg.data.train_styles,
        cfg.data.test_styles,
    )


def split_indices(cfg: ExperimentConfig, ds: Dataset) -> dict[str, list[int]]:
    train = list(ds.split.train)
    n_val = min(cfg.data.val_sequences, max(len(train) - 1, 0))
    val = train[len(train) - n_val :] if n_val else []
    train = train[: len(train) - n_val]
    return {"train": train, "val": val, "test": list(ds.split.test)}


def _tensors(ds: Dataset, k: int) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    x = torch.from_numpy(ds.features[k])
    lab = torch.from_numpy(ds.sequences[k].labels())
    return x, {t: lab[:, c] for c, t in enumerate(TYPES)}


def _windows(n: int, size: int) -> list[tuple[int, int]]:
    return [(s, min(s + size, n)) for s in range(0, n, size)]


def train_epoch(
    model: MurphyModel,
    optimizer: torch.optim.Optimizer,
    ds: Dataset,
    seqs: list[int],
    cfg: ExperimentConfig,
    epoch: int,
) -> float:
    """One pass over contiguous frame windows; returns the mean batch loss."""
    model.train()
    rng = np.random.default_rng([cfg.seed, epoch])
    recurrent = model.encoder.recurrent
    data = {k: _tensors(ds, k) for k in seqs}
    if recurrent:
        # windows must stay in temporal order within a sequence
        order = [(k, w) for k in rng.permutation(seqs) for w in _windows(len(data[k][0]), cfg.batch_size)]
    else:
        items = [(k, w) for k in seqs for w in _windows(len(data[k][0]), cfg.batch_size)]
        order = [items[i] for i in rng.permutation(len(items))]

    losses = []
    state = None
    prev_seq = None
    for b, (k, (lo, hi)) in enumerate(order):
        x, labels = data[k]
        if recurrent:
            state = None if k != prev_seq else (state.detach() if state is not None else None)
            prev_seq = k
        targets = {t: labels[t][lo:hi] for t in TYPES}
        out = model(x[lo:hi], labels=targets, state=state)
        state = out.state
        loss = total_loss(out.adjusted, targets, cfg.loss_weights)
        if not torch.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch {b} (sequence {k}, frames {lo}:{hi})")
        optimizer.zero_grad()
        loss.backward()
        if cfg.optimizer.clip_grad_norm is not None:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.optimizer.clip_grad_norm)
        optimizer.step()
        losses.append(loss.item())
    return float(np.mean(losses))


@torch.no_grad()
def predict(
    model: MurphyModel, ds: Dataset, seqs: list[int], batch_size: int
) -> EvalRecord:
    model.eval()
    scores = {t: [] for t in TYPES}
    labels = {t: [] for t in TYPES}
    frames, seq_ids, surgeons = [], [], []
    for k in seqs:
        x, lab = _tensors(ds, k)
        state = None
        for lo, hi in _windows(len(x), batch_size):
            out = model(x[lo:hi], state=state)
            state = out.state
            for t, p in out.probabilities().items():
                scores[t].append(p.double().numpy())
        for t in TYPES:
            labels[t].append(lab[t].numpy())
        n = len(x)
        frames.append(np.arange(n))
        seq_ids.append(np.full(n, k))
        surgeons.append(np.full(n, ds.sequences[k].surgeon_id))
    return EvalRecord(
        {t: np.concatenate(v) for t, v in scores.items()},
        {t: np.concatenate(v) for t, v in labels.items()},
        np.concatenate(frames),
        np.concatenate(seq_ids),
        np.concatenate(surgeons),
    )


def _save_checkpoint(path: Path, model, optimizer, scheduler, cfg, epoch, history, best, schema) -> None:
    torch.save(
        {
            "model": model.state_dict(),
            "parameter_names": [n for n, _ in model.named_parameters()],
            "optimizer": optimizer.state_dict(),
            "scheduler": scheduler.state_dict(),
            "epoch": epoch,
            "history": history,
            "best": best,
            "config": cfg.to_dict(),
            "config_hash": cfg.config_hash(),
            "schema": schema.to_dict(),
        },
        path,
    )


def load_checkpoint(path: str | Path) -> dict:
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    cfg = ExperimentConfig.from_dict(ckpt["config"])
    if cfg.config_hash() != ckpt["config_hash"]:
        raise CheckpointError(f"{path}: config hash mismatch")
    ckpt["config_obj"] = cfg
    return ckpt


@dataclass
class TrainResult:
    run_dir: Path
    history: list[dict]
    report: dict


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def train(cfg: ExperimentConfig, resume_from: str | Path | None = None, dataset: Dataset | None = None) -> TrainResult:
    """Train, keep the best-validation-SAP3 checkpoint and report on the test split.

    Writes config.json, history.json, report.json and per-epoch checkpoints
    into ``cfg.output_dir``.
    """
    torch.use_deterministic_algorithms(True)
    run_dir = Path(cfg.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    _dump(run_dir / "config.json", cfg.to_dict())

    ds = dataset if dataset is not None else prepare_dataset(cfg)
    schema = ds.schema
    parts = split_indices(cfg, ds)
    model = build_model(cfg, schema)
    optimizer = torch.optim.SGD(model.parameters(), lr=cfg.optimizer.lr, momentum=cfg.optimizer.momentum)
    scheduler = torch.optim.lr_scheduler.ExponentialLR(optimizer, gamma=cfg.optimizer.decay)
    history: list[dict] = []
    best = {"epoch": None, "val_sap3": -math.inf}
    start = 1

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if ckpt["config_hash"] != cfg.config_hash():
            raise CheckpointError("checkpoint was written with a different configuration")
        model.load_state_dict(ckpt["model"])
        optimizer.load_state_dict(ckpt["optimizer"])
        scheduler.load_state_dict(ckpt["scheduler"])
        history = list(ckpt["history"])
        best = dict(ckpt["best"])
        start = ckpt["epoch"] + 1

    for epoch in range(start, cfg.epochs + 1):
        lr = optimizer.param_groups[0]["lr"]
        loss = train_epoch(model, optimizer, ds, parts["train"], cfg, epoch)
        scheduler.step()
        entry = {"epoch": epoch, "loss": loss, "lr": lr}
        if parts["val"]:
            val = evaluation_report(predict(model, ds, parts["val"], cfg.eval_batch_size), tolerances=())
            entry["val_sap3"] = val["sap3"]
        else:
            entry["val_sap3"] = -loss
        history.append(entry)
        log.info("epoch %d loss %.6f val_sap3 %.4f", epoch, loss, entry["val_sap3"])
        if entry["val_sap3"] > best["val_sap3"]:
            best = {"epoch": epoch, "val_sap3": entry["val_sap3"]}
            _save_checkpoint(run_dir / "checkpoint_best.pt", model, optimizer, scheduler, cfg, epoch, history, best, schema)
        _save_checkpoint(run_dir / f"checkpoint_epoch{epoch}.pt", model, optimizer, scheduler, cfg, epoch, history, best, schema)
    _dump(run_dir / "history.json", history)

    report = evaluate(run_dir / "checkpoint_best.pt", "test", dataset=ds)
    _dump(run_dir / "report.json", report)
    return TrainResult(run_dir, history, report)


def evaluate(
    checkpoint: str | Path,
    split: str = "test",
    dataset: Dataset | None = None,
    data_dir: str | Path | None = None,
) -> dict:
    """Evaluation report for one split ("train", "val" or "test") of the checkpoint's data."""
    ckpt = load_checkpoint(checkpoint)
    cfg: ExperimentConfig = ckpt["config_obj"]
    if dataset is None:
        dataset = load_dataset(data_dir) if data_dir is not None else prepare_dataset(cfg)
    if dataset.schema.to_dict() != ckpt["schema"]:
        raise CheckpointError("schema mismatch between checkpoint and dataset")
    model = build_model(cfg, dataset.schema)
    model.load_state_dict(ckpt["model"])
    parts = split_indices(cfg, dataset)
    if split not in parts:
        raise ValueError(f"unknown split {split!r}")
    record = predict(model, dataset, parts[split], cfg.eval_batch_size)
    return evaluation_report(record)
