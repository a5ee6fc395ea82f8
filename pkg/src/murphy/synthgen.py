"""Synthetic hierarchical workflows sampled from a schema's containment grammar.

Procedures are generated top-down (steps, then tasks inside a step, then
activities inside a task) and rendered into class-conditioned Gaussian
feature vectors that stand in for backbone inputs.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .schema import (
    FrameAnnotation,
    LabelSchema,
    load_schema,
    min_under_effective_frames,
    read_annotations,
    save_schema,
    write_annotations,
)

log = logging.getLogger(__name__)

SURGEON_NAMES = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"


@dataclass(frozen=True)
class SurgeonStyle:
    """Sampling preferences of one synthetic surgeon.

    ``preference_concentration`` controls how strongly the surgeon favours some
    activities inside a task (Dirichlet concentration; smaller is more skewed).
    ``task_skip_prob`` is the chance an optional task is left out of a step visit.
    """

    preference_concentration: float = 1.0
    task_skip_prob: float = 0.1
    revisit_prob: float = 0.1


@dataclass(frozen=True)
class GenConfig:
    num_sequences: int = 60
    frames_per_sequence: tuple[int, int] = (250, 600)
    # mean segment durations in frames for (step, task, activity)
    mean_durations: tuple[float, float, float] = (60.0, 30.0, 15.0)
    under_effective_rate: float = 0.3
    mean_under_effective: float = 35.0
    frame_rate: float = 5.0
    min_segment_seconds: float = 2.0
    min_gap_seconds: float = 5.0
    surgeon_styles: tuple[SurgeonStyle, ...] = (
        SurgeonStyle(0.8, 0.15, 0.15),
        SurgeonStyle(1.5, 0.05, 0.10),
        SurgeonStyle(1.0, 0.10, 0.05),
        SurgeonStyle(0.5, 0.20, 0.20),
        SurgeonStyle(0.7, 0.25, 0.10),
    )
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.under_effective_rate <= 1.0:
            raise ValueError("under_effective_rate must lie in [0, 1]")
        if any(d < 1 for d in self.mean_durations) or self.mean_under_effective < 1:
            raise ValueError("mean durations must be >= 1 frame")
        if not self.surgeon_styles:
            raise ValueError("at least one surgeon style is required")
        lo, hi = self.frames_per_sequence
        if lo < 1 or hi < lo:
            raise ValueError("frames_per_sequence must be a (min, max) pair with 1 <= min <= max")
        for st in self.surgeon_styles:
            for p in (st.task_skip_prob, st.revisit_prob):
                if not 0.0 <= p <= 1.0:
                    raise ValueError("style probabilities must lie in [0, 1]")
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")

    @property
    def min_segment(self) -> int:
        return math.ceil(self.min_segment_seconds * self.frame_rate)

    @property
    def min_under_effective(self) -> int:
        return min_under_effective_frames(self.frame_rate, self.min_gap_seconds)

    @classmethod
    def from_dict(cls, d: dict) -> GenConfig:
        d = dict(d)
        if "surgeon_styles" in d:
            d["surgeon_styles"] = tuple(SurgeonStyle(**s) for s in d["surgeon_styles"])
        for key in ("frames_per_sequence", "mean_durations"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FeatureConfig:
    feature_dim: int = 64
    class_centroid_scale: float = 1.0
    noise_scale: float = 0.2
    style_offset_scale: float = 0.3
    centroid_seed: int = 12345

    def __post_init__(self) -> None:
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.class_centroid_scale <= 0 or self.noise_scale < 0 or self.style_offset_scale < 0:
            raise ValueError("invalid feature scales")

    @classmethod
    def from_dict(cls, d: dict) -> FeatureConfig:
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AnnotatedSequence:
    surgeon_id: int
    frames: list[FrameAnnotation]
    frame_rate: float

    def __len__(self) -> int:
        return len(self.frames)

    def labels(self) -> np.ndarray:
        """(N, 6) integer label matrix in S, T, IAO, I, A, O order."""
        return np.array([fr.labels for fr in self.frames], dtype=np.int64).reshape(-1, 6)


def _geometric(rng: np.random.Generator, minimum: int, mean: float) -> int:
    extra = max(mean - minimum, 0.0)
    if extra <= 0:
        return minimum
    return minimum + int(rng.geometric(1.0 / (extra + 1.0))) - 1


def _style_preferences(schema: LabelSchema, style: SurgeonStyle, style_index: int, seed: int):
    # per-style activity preferences inside each task, fixed per (seed, style)
    rng = np.random.default_rng([seed, 7919, style_index])
    prefs = {}
    for t in sorted(schema.task_activities):
        acts = sorted(schema.task_activities[t])
        w = rng.dirichlet(np.full(len(acts), style.preference_concentration))
        prefs[t] = (acts, w)
    return prefs


def sample_workflow(
    schema: LabelSchema, cfg: GenConfig, seq_index: int, surgeon_id: int | None = None
) -> AnnotatedSequence:
    """Generate one annotated procedure, deterministic in (cfg.rng_seed, seq_index).

    Steps are visited in schema order, with occasional revisits of an earlier
    step. Each step walks its tasks in order and each task draws activities
    with the surgeon's preferences. Durations are geometric with a floor of
    ``cfg.min_segment`` frames; under-effective interludes follow an activity
    with probability ``cfg.under_effective_rate``.
    """
    n_steps = schema.num_categories("S")
    for s in range(n_steps):
        if not schema.step_tasks.get(s):
            raise ValueError(f"step {s} has no tasks")
    for t in range(schema.num_categories("T")):
        if not schema.task_activities.get(t):
            raise ValueError(f"task {t} has no activities")

    if surgeon_id is None:
        surgeon_id = seq_index % len(cfg.surgeon_styles)
    style = cfg.surgeon_styles[surgeon_id]
    prefs = _style_preferences(schema, style, surgeon_id, cfg.rng_seed)
    rng = np.random.default_rng([cfg.rng_seed, seq_index])

    lo, hi = cfg.frames_per_sequence
    target = int(rng.integers(lo, hi + 1))
    mean_step, mean_task, mean_act = cfg.mean_durations
    reserved = schema.reserved_labels()

    labels: list[tuple[int, ...]] = []
    effective: list[bool] = []

    def emit(lab: tuple[int, ...], n: int, eff: bool) -> None:
        labels.extend([lab] * n)
        effective.extend([eff] * n)

    def run_step(s: int) -> None:
        tasks = sorted(schema.step_tasks[s])
        step_target = _geometric(rng, cfg.min_segment, mean_step)
        step_len = 0
        while True:
            kept = [t for t in tasks if rng.random() >= style.task_skip_prob] or [
                tasks[int(rng.integers(len(tasks)))]
            ]
            for t in kept:
                step_len += run_task(s, t)
                if step_len >= step_target or len(labels) >= hi:
                    return

    def run_task(s: int, t: int) -> int:
        acts, w = prefs[t]
        task_target = _geometric(rng, cfg.min_segment, mean_task)
        task_len = 0
        prev = None
        while task_len < task_target and len(labels) < hi:
            choices = [a for a in acts if a != prev] or acts
            p = np.array([w[acts.index(a)] for a in choices])
            a = choices[int(rng.choice(len(choices), p=p / p.sum()))]
            prev = a
            d = _geometric(rng, cfg.min_segment, mean_act)
            emit(schema.effective_labels(s, t, a), d, True)
            task_len += d
            if cfg.under_effective_rate > 0 and rng.random() < cfg.under_effective_rate:
                u = _geometric(rng, cfg.min_under_effective, cfg.mean_under_effective)
                emit(reserved, u, False)
                prev = None
        return task_len

    visited: list[int] = []
    s = 0
    while len(labels) < target:
        run_step(s)
        visited.append(s)
        if len(visited) > 1 and rng.random() < style.revisit_prob:
            s = int(rng.integers(0, s + 1))
        elif s + 1 < n_steps:
            s += 1
        else:
            # finished the procedure but below the minimum length: revisit a step
            s = int(rng.integers(0, n_steps))

    # drop a trailing under-effective span so interludes always sit between activities
    while effective and not effective[-1]:
        labels.pop()
        effective.pop()

    frames = [
        FrameAnnotation(k, *lab, eff) for k, (lab, eff) in enumerate(zip(labels, effective))
    ]
    return AnnotatedSequence(surgeon_id, frames, cfg.frame_rate)


def _unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def activity_centroids(schema: LabelSchema, fcfg: FeatureConfig) -> np.ndarray:
    """Unit centroid per activity class (reserved class included)."""
    rng = np.random.default_rng([fcfg.centroid_seed, 1])
    return _unit_rows(rng, schema.num_classes("IAO"), fcfg.feature_dim)


def style_offsets(num_styles: int, fcfg: FeatureConfig) -> np.ndarray:
    rng = np.random.default_rng([fcfg.centroid_seed, 2])
    return _unit_rows(rng, num_styles, fcfg.feature_dim)


def render_features(
    seq: AnnotatedSequence,
    schema: LabelSchema,
    fcfg: FeatureConfig,
    seed: int,
    num_styles: int | None = None,
) -> np.ndarray:
    """Per-frame feature vectors (N, feature_dim), float32.

    feature = centroid(activity) * class_centroid_scale
              + offset(surgeon) * style_offset_scale + noise * noise_scale
    """
    n_styles = num_styles if num_styles is not None else max(seq.surgeon_id + 1, 1)
    centroids = activity_centroids(schema, fcfg)
    offsets = style_offsets(max(n_styles, seq.surgeon_id + 1), fcfg)
    acts = np.array([fr.iao for fr in seq.frames], dtype=np.int64)
    rng = np.random.default_rng([seed, 3])
    noise = rng.standard_normal((len(acts), fcfg.feature_dim))
    feats = (
        centroids[acts] * fcfg.class_centroid_scale
        + offsets[seq.surgeon_id] * fcfg.style_offset_scale
        + noise * fcfg.noise_scale
    )
    return feats.astype(np.float32)


@dataclass
class DatasetSplit:
    train: list[int]
    test: list[int]
    train_styles: frozenset[int]
    test_styles: frozenset[int]
    warnings: list[str] = field(default_factory=list)


def split_dataset(
    sequences: Sequence[AnnotatedSequence], train_styles: set[int], test_styles: set[int]
) -> DatasetSplit:
    """Assign sequence indices to train/test purely by surgeon style."""
    train_styles, test_styles = frozenset(train_styles), frozenset(test_styles)
    if not train_styles or not test_styles:
        raise ValueError("train and test style sets must both be non-empty")
    if train_styles & test_styles:
        raise ValueError(f"styles {sorted(train_styles & test_styles)} appear on both sides")
    train = [k for k, s in enumerate(sequences) if s.surgeon_id in train_styles]
    test = [k for k, s in enumerate(sequences) if s.surgeon_id in test_styles]
    warnings = []
    if not train:
        warnings.append("train side is empty")
    if not test:
        warnings.append("test side is empty")
    for w in warnings:
        log.warning(w)
    return DatasetSplit(train, test, train_styles, test_styles, warnings)


# ---------------------------------------------------------------------------
# on-disk dataset: schema.json, seq_<k>.jsonl, seq_<k>.feat, split.json

_FEAT_HEADER = struct.Struct("<II")


def write_features(path: str | Path, feats: np.ndarray) -> None:
    feats = np.ascontiguousarray(feats, dtype="<f4")
    n, d = feats.shape
    with open(path, "wb") as f:
        f.write(_FEAT_HEADER.pack(n, d))
        f.write(feats.tobytes(order="C"))


def read_features(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    n, d = _FEAT_HEADER.unpack_from(raw, 0)
    body = np.frombuffer(raw, dtype="<f4", offset=_FEAT_HEADER.size)
    if body.size != n * d:
        raise ValueError(f"{path}: expected {n}x{d} floats, found {body.size}")
    return body.reshape(n, d).astype(np.float32)


@dataclass
class Dataset:
    schema: LabelSchema
    sequences: list[AnnotatedSequence]
    features: list[np.ndarray]
    split: DatasetSplit
    frame_rate: float

    def subset(self, side: str) -> list[int]:
        return self.split.train if side == "train" else self.split.test


def generate_dataset(
    schema: LabelSchema,
    gen: GenConfig,
    fcfg: FeatureConfig,
    num_train: int,
    num_test: int,
    train_styles: Sequence[int] = (1, 2),
    test_styles: Sequence[int] = (0, 3, 4),
) -> Dataset:
    """Sample ``num_train`` sequences from the train styles then ``num_test`` from the test styles.

    Styles are assigned round-robin within each side.
    """
    surgeons = [train_styles[k % len(train_styles)] for k in range(num_train)]
    surgeons += [test_styles[k % len(test_styles)] for k in range(num_test)]
    n_styles = len(gen.surgeon_styles)
    sequences, feats = [], []
    for k, sid in enumerate(surgeons):
        seq = sample_workflow(schema, gen, k, surgeon_id=sid)
        sequences.append(seq)
        feats.append(render_features(seq, schema, fcfg, seed=gen.rng_seed * 100003 + k,
                                     num_styles=n_styles))
    split = split_dataset(sequences, set(train_styles), set(test_styles))
    return Dataset(schema, sequences, feats, split, gen.frame_rate)


def save_dataset(ds: Dataset, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_schema(ds.schema, out / "schema.json")
    for k, (seq, feats) in enumerate(zip(ds.sequences, ds.features)):
        write_annotations(out / f"seq_{k}.jsonl", seq.frames)
        write_features(out / f"seq_{k}.feat", feats)
    split = {
        "frame_rate": ds.frame_rate,
        "surgeons": [s.surgeon_id for s in ds.sequences],
        "train_styles": sorted(ds.split.train_styles),
        "test_styles": sorted(ds.split.test_styles),
        "train": ds.split.train,
        "test": ds.split.test,
    }
    (out / "split.json").write_text(json.dumps(split, indent=2) + "\n")


def load_dataset(data_dir: str | Path) -> Dataset:
    root = Path(data_dir)
    schema = load_schema(root / "schema.json")
    meta = json.loads((root / "split.json").read_text())
    fps = float(meta["frame_rate"])
    sequences, feats = [], []
    for k, sid in enumerate(meta["surgeons"]):
        frames = read_annotations(root / f"seq_{k}.jsonl")
        sequences.append(AnnotatedSequence(int(sid), frames, fps))
        f = read_features(root / f"seq_{k}.feat")
        if f.shape[0] != len(frames):
            raise ValueError(f"seq_{k}: {f.shape[0]} feature rows for {len(frames)} frames")
        feats.append(f)
    split = split_dataset(sequences, set(meta["train_styles"]), set(meta["test_styles"]))
    return Dataset(schema, sequences, feats, split, fps)
