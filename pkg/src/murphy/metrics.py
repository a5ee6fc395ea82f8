"""Average precision, SAP summaries and tolerance-filtered segment edit distance."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .schema import PRIMARY_TYPES, TYPES

ED_TOLERANCES = (10, 25)


@dataclass
class EvalRecord:
    """Per-frame softmax scores and ground truth for every annotation type."""

    scores: dict[str, np.ndarray]
    labels: dict[str, np.ndarray]
    frames: np.ndarray
    sequence_ids: np.ndarray
    surgeon_ids: np.ndarray | None = None
    check_normalised: bool = field(default=True, repr=False)

    def __post_init__(self) -> None:
        n = len(self.frames)
        for t, s in self.scores.items():
            if s.ndim != 2 or s.shape[0] != n:
                raise ValueError(f"scores for {t} must have shape (N, T_{t})")
            if self.check_normalised and n and np.abs(s.sum(axis=1) - 1.0).max() > 1e-5:
                raise ValueError(f"scores for {t} do not sum to 1 per frame")
            if len(self.labels[t]) != n:
                raise ValueError(f"labels for {t} have the wrong length")

    def subset(self, mask: np.ndarray) -> EvalRecord:
        return EvalRecord(
            {t: s[mask] for t, s in self.scores.items()},
            {t: y[mask] for t, y in self.labels.items()},
            self.frames[mask],
            self.sequence_ids[mask],
            None if self.surgeon_ids is None else self.surgeon_ids[mask],
            check_normalised=False,
        )


def average_precision(scores: np.ndarray, positives: np.ndarray) -> float:
    """Area under the step-wise precision-recall curve from a threshold sweep.

    Tied scores enter the curve together. Returns nan when there are no positives.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    if n_pos == 0:
        return float("nan")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    hits = positives[order]
    tp = np.cumsum(hits)
    # last index of each block of equal scores is where a threshold cut lands
    cut = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp_at = tp[cut]
    precision = tp_at / (cut + 1)
    recall = tp_at / n_pos
    prev_recall = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev_recall) * precision))


def mean_average_precision(record: EvalRecord, ann_type: str) -> float:
    """mAP in [0, 100] over the categories that occur in the ground truth."""
    scores = record.scores[ann_type]
    labels = record.labels[ann_type]
    if len(labels) == 0:
        raise ValueError("mAP needs at least one frame")
    aps = [
        average_precision(scores[:, c], labels == c)
        for c in range(scores.shape[1])
        if np.any(labels == c)
    ]
    return 100.0 * float(np.mean(aps))


def compute_sap(maps: Mapping[str, float], which: str = "SAP3") -> float:
    if which == "SAP3":
        keys = PRIMARY_TYPES
    elif which == "SAP6":
        keys = TYPES
    else:
        raise ValueError(f"unknown summary {which!r}")
    missing = [k for k in keys if k not in maps]
    if missing:
        raise KeyError(f"{which} needs mAP for {missing}")
    return float(sum(maps[k] for k in keys) / len(keys))


class Segment(NamedTuple):
    category: int
    start: int
    end: int  # inclusive


def _run_lengths(labels: Sequence[int]) -> list[list[int]]:
    runs: list[list[int]] = []
    for y in labels:
        y = int(y)
        if runs and runs[-1][0] == y:
            runs[-1][1] += 1
        else:
            runs.append([y, 1])
    return runs


def frames_to_segments(labels: Sequence[int], tolerance: int = 0) -> list[Segment]:
    """Run-length encode ``labels`` and absorb runs shorter than ``tolerance``.

    The shortest offending run (earliest on ties) is removed first. Its frames
    go to the neighbouring run(s): when both neighbours share a category the
    three runs merge, otherwise the span is split between them. Repeats until
    every run is at least ``tolerance`` long or only one run is left.
    """
    if tolerance < 0:
        raise ValueError("tolerance must be >= 0")
    runs = _run_lengths(labels)
    if not runs:
        raise ValueError("cannot segment an empty label stream")
    while len(runs) > 1:
        short = [k for k, (_, n) in enumerate(runs) if n < tolerance]
        if not short:
            break
        k = min(short, key=lambda j: (runs[j][1], j))
        n = runs[k][1]
        if k == 0:
            runs[1][1] += n
            del runs[0]
        elif k == len(runs) - 1:
            runs[k - 1][1] += n
            del runs[k]
        elif runs[k - 1][0] == runs[k + 1][0]:
            runs[k - 1][1] += n + runs[k + 1][1]
            del runs[k : k + 2]
        else:
            runs[k - 1][1] += (n + 1) // 2
            runs[k + 1][1] += n // 2
            del runs[k]
    segments = []
    start = 0
    for cat, n in runs:
        segments.append(Segment(cat, start, start + n - 1))
        start += n
    return segments


def segments_to_frames(segments: Sequence[Segment]) -> list[int]:
    out: list[int] = []
    for seg in segments:
        out.extend([seg.category] * (seg.end - seg.start + 1))
    return out


def edit_distance(gt: Sequence, pred: Sequence) -> int:
    """Levenshtein distance between two category strings; timing is ignored.

    Accepts segment sequences or plain category-id sequences.
    """
    a = [s.category if isinstance(s, Segment) else int(s) for s in gt]
    b = [s.category if isinstance(s, Segment) else int(s) for s in pred]
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def segment_edit_distance(gt_frames: Sequence[int], pred_frames: Sequence[int], tolerance: int) -> int:
    return edit_distance(
        frames_to_segments(gt_frames, tolerance), frames_to_segments(pred_frames, tolerance)
    )


def _summary(record: EvalRecord, tolerances: Sequence[int]) -> dict:
    out: dict = {}
    maps = {t: mean_average_precision(record, t) for t in TYPES}
    for t in TYPES:
        out[t] = {"map": maps[t]}
    out["sap3"] = compute_sap(maps, "SAP3")
    out["sap6"] = compute_sap(maps, "SAP6")
    seq_ids = np.unique(record.sequence_ids)
    for tol in tolerances:
        eds = {}
        for t in PRIMARY_TYPES:
            pred = record.scores[t].argmax(axis=1)
            vals = []
            for sid in seq_ids:
                m = record.sequence_ids == sid
                order = np.argsort(record.frames[m], kind="mergesort")
                vals.append(
                    segment_edit_distance(record.labels[t][m][order], pred[m][order], tol)
                )
            eds[t] = float(np.mean(vals))
        out[f"ed{tol}"] = eds
    return out


def evaluation_report(record: EvalRecord, tolerances: Sequence[int] = ED_TOLERANCES) -> dict:
    """Per-type mAP, SAP3/SAP6 and ED@k for S/T/IAO (mean over sequences).

    When surgeon ids are present the same summary is repeated per surgeon
    under ``by_surgeon``.
    """
    report = _summary(record, tolerances)
    if record.surgeon_ids is not None:
        report["by_surgeon"] = {
            str(int(s)): _summary(record.subset(record.surgeon_ids == s), tolerances)
            for s in np.unique(record.surgeon_ids)
        }
    return report
