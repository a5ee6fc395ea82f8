"""Hierarchical label universe: steps, tasks, triplet activities and their components.

Every annotation type carries one extra reserved category, appended after the
named ones, that encodes under-effective (idle or ineffective) frames.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

TYPES = ("S", "T", "IAO", "I", "A", "O")
PRIMARY_TYPES = ("S", "T", "IAO")
COMPONENT_TYPES = ("I", "A", "O")

# schema-file key holding the category names of each type
_NAME_KEYS = {
    "S": "steps",
    "T": "tasks",
    "IAO": "activities",
    "I": "instruments",
    "A": "actions",
    "O": "objects",
}
# annotation-file key of each type
RECORD_KEYS = {"S": "s", "T": "t", "IAO": "iao", "I": "i", "A": "a", "O": "o"}

SUPPORTED_PAIRS = (("S", "T"), ("T", "IAO"), ("S", "IAO"))


class SchemaError(ValueError):
    """Raised when a schema document violates the hierarchy invariants."""


@dataclass(frozen=True, eq=False)
class LabelSchema:
    categories: dict[str, tuple[str, ...]]
    step_tasks: dict[int, frozenset[int]]
    task_activities: dict[int, frozenset[int]]
    activity_components: dict[int, tuple[int, int, int]]
    task_parent: dict[int, int] = field(init=False)

    def __post_init__(self) -> None:
        _check_schema(self)
        parent = {t: s for s, ts in self.step_tasks.items() for t in ts}
        object.__setattr__(self, "task_parent", parent)

    def num_categories(self, ann_type: str) -> int:
        """Number of named categories (excluding the reserved one)."""
        return len(self.categories[ann_type])

    def num_classes(self, ann_type: str) -> int:
        """Classifier width: named categories plus the reserved index."""
        return len(self.categories[ann_type]) + 1

    def under_effective_id(self, ann_type: str) -> int:
        return len(self.categories[ann_type])

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(self.num_categories(t) for t in TYPES)

    @property
    def class_counts(self) -> tuple[int, ...]:
        return tuple(self.num_classes(t) for t in TYPES)

    def reserved_labels(self) -> tuple[int, ...]:
        return tuple(self.under_effective_id(t) for t in TYPES)

    def effective_labels(self, step: int, task: int, activity: int) -> tuple[int, ...]:
        i, a, o = self.activity_components[activity]
        return (step, task, activity, i, a, o)

    def to_dict(self) -> dict:
        doc: dict = {_NAME_KEYS[t]: list(self.categories[t]) for t in TYPES}
        doc["step_tasks"] = {str(k): sorted(v) for k, v in sorted(self.step_tasks.items())}
        doc["task_activities"] = {
            str(k): sorted(v) for k, v in sorted(self.task_activities.items())
        }
        doc["activity_components"] = {
            str(k): list(v) for k, v in sorted(self.activity_components.items())
        }
        return doc

    def fingerprint(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _check_schema(schema: LabelSchema) -> None:
    for t in TYPES:
        names = schema.categories.get(t)
        if not names:
            raise SchemaError(f"annotation type {t!r} has no categories")
        seen: set[str] = set()
        for name in names:
            if name in seen:
                raise SchemaError(f"duplicate name {name!r} in type {t!r}")
            seen.add(name)

    n_steps = schema.num_categories("S")
    n_tasks = schema.num_categories("T")
    n_acts = schema.num_categories("IAO")

    parents: dict[int, int] = {}
    for s, ts in schema.step_tasks.items():
        if not 0 <= s < n_steps:
            raise SchemaError(f"step {s} out of range")
        for t in ts:
            if not 0 <= t < n_tasks:
                raise SchemaError(f"task {t} under step {s} out of range")
            if t in parents:
                raise SchemaError(f"task {t} has multiple parents (steps {parents[t]} and {s})")
            parents[t] = s
    for t in range(n_tasks):
        if t not in parents:
            raise SchemaError(f"orphan task {t} ({schema.categories['T'][t]!r}) has no step")

    covered: set[int] = set()
    for t, acts in schema.task_activities.items():
        if not 0 <= t < n_tasks:
            raise SchemaError(f"task {t} out of range in task_activities")
        for a in acts:
            if not 0 <= a < n_acts:
                raise SchemaError(f"activity {a} under task {t} out of range")
            covered.add(a)
    for a in range(n_acts):
        if a not in covered:
            raise SchemaError(
                f"orphan activity {a} ({schema.categories['IAO'][a]!r}) belongs to no task"
            )

    limits = [schema.num_categories(c) for c in COMPONENT_TYPES]
    for a in range(n_acts):
        triple = schema.activity_components.get(a)
        if triple is None:
            raise SchemaError(f"activity {a} is missing its component triple")
        if len(triple) != 3:
            raise SchemaError(f"activity {a} component triple must have 3 entries")
        for c, (v, lim) in enumerate(zip(triple, limits)):
            if not 0 <= v < lim:
                raise SchemaError(
                    f"activity {a} component {COMPONENT_TYPES[c]}={v} out of range"
                )
    extra = set(schema.activity_components) - set(range(n_acts))
    if extra:
        raise SchemaError(f"component triple given for unknown activity {min(extra)}")


def _id_map(raw: object, key: str) -> dict[int, list[int]]:
    if not isinstance(raw, dict):
        raise SchemaError(f"{key!r} must be an object mapping ids to id lists")
    out: dict[int, list[int]] = {}
    for k, v in raw.items():
        try:
            ident = int(k)
        except (TypeError, ValueError):
            raise SchemaError(f"{key!r}: non-integer id {k!r}") from None
        if not isinstance(v, list) or not all(isinstance(x, int) for x in v):
            raise SchemaError(f"{key!r}: entry {k!r} must be a list of integer ids")
        out[ident] = v
    return out


def schema_from_dict(doc: dict) -> LabelSchema:
    if not isinstance(doc, dict):
        raise SchemaError("schema document must be a JSON object")
    categories = {}
    for t in TYPES:
        key = _NAME_KEYS[t]
        names = doc.get(key)
        if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
            raise SchemaError(f"{key!r} must be a list of category names")
        categories[t] = tuple(names)

    step_tasks = {k: frozenset(v) for k, v in _id_map(doc.get("step_tasks"), "step_tasks").items()}
    task_acts = {
        k: frozenset(v) for k, v in _id_map(doc.get("task_activities"), "task_activities").items()
    }
    for k, v in _id_map(doc.get("step_tasks"), "step_tasks").items():
        if len(set(v)) != len(v):
            raise SchemaError(f"step {k} lists a task twice")
    components = {}
    for k, v in _id_map(doc.get("activity_components"), "activity_components").items():
        if len(v) != 3:
            raise SchemaError(f"activity {k} component triple must have 3 entries")
        components[k] = (v[0], v[1], v[2])
    return LabelSchema(categories, step_tasks, task_acts, components)


def load_schema(path: str | Path) -> LabelSchema:
    """Read a schema JSON file and validate it.

    Raises SchemaError naming the offending identifier for parse failures,
    orphan tasks or activities, duplicate names and missing component triples.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"cannot parse schema {path}: {exc}") from exc
    return schema_from_dict(doc)


def save_schema(schema: LabelSchema, path: str | Path) -> None:
    Path(path).write_text(json.dumps(schema.to_dict(), indent=2) + "\n")


def random_schema(
    rng: np.random.Generator | int, sizes: Sequence[int] = (2, 3, 5, 3, 3, 3)
) -> LabelSchema:
    """A valid schema with the given category counts (S, T, IAO, I, A, O).

    Every step gets at least one task and every task at least one activity;
    extra activities are attached to one or two random tasks.
    """
    rng = np.random.default_rng(rng)
    n_s, n_t, n_a, n_i, n_v, n_o = (int(x) for x in sizes)
    if min(sizes) < 1 or n_t < n_s:
        raise SchemaError("random_schema needs positive sizes and at least one task per step")
    parent = np.concatenate([np.arange(n_s), rng.integers(0, n_s, n_t - n_s)])
    rng.shuffle(parent)
    step_tasks = {s: frozenset(int(t) for t in np.flatnonzero(parent == s)) for s in range(n_s)}
    owners: dict[int, set[int]] = {t: set() for t in range(n_t)}
    acts = rng.permutation(n_a)
    for t in range(n_t):
        owners[t].add(int(acts[t % n_a]))
    for a in range(n_a):
        if not any(a in v for v in owners.values()):
            for t in rng.choice(n_t, size=min(n_t, int(rng.integers(1, 3))), replace=False):
                owners[int(t)].add(a)
    categories = {
        t: tuple(f"{t.lower()}{k}" for k in range(n))
        for t, n in zip(TYPES, (n_s, n_t, n_a, n_i, n_v, n_o))
    }
    components = {
        a: (int(rng.integers(n_i)), int(rng.integers(n_v)), int(rng.integers(n_o))) for a in range(n_a)
    }
    return LabelSchema(
        categories, step_tasks, {t: frozenset(v) for t, v in owners.items()}, components
    )


def rlls_schema() -> LabelSchema:
    """The bundled RLLS-shaped hierarchy (6 steps, 15 tasks, 38 activities)."""
    text = resources.files("murphy").joinpath("data/rlls_schema.json").read_text()
    return schema_from_dict(json.loads(text))


def rlls_schema_path() -> Path:
    return Path(str(resources.files("murphy").joinpath("data/rlls_schema.json")))


@dataclass(frozen=True)
class KnowledgeMatrix:
    coarse_type: str
    fine_type: str
    matrix: np.ndarray


def build_knowledge_matrix(
    schema: LabelSchema, coarse: str, fine: str, include_reserved: bool = True
) -> KnowledgeMatrix:
    """Binary containment mask of shape (classes of ``coarse``, classes of ``fine``).

    With ``include_reserved`` the under-effective index is appended on both
    axes and links only to itself.
    """
    if (coarse, fine) not in SUPPORTED_PAIRS:
        raise ValueError(f"unsupported annotation type pair ({coarse}, {fine})")
    extra = 1 if include_reserved else 0
    n_s, n_t, n_a = (schema.num_categories(t) for t in PRIMARY_TYPES)

    st = np.zeros((n_s + extra, n_t + extra), dtype=np.int64)
    for s, ts in schema.step_tasks.items():
        st[s, list(ts)] = 1
    ta = np.zeros((n_t + extra, n_a + extra), dtype=np.int64)
    for t, acts in schema.task_activities.items():
        ta[t, list(acts)] = 1
    if include_reserved:
        st[-1, -1] = 1
        ta[-1, -1] = 1

    if (coarse, fine) == ("S", "T"):
        m = st
    elif (coarse, fine) == ("T", "IAO"):
        m = ta
    else:
        m = np.minimum(st @ ta, 1)
    m = m.astype(np.int8)
    m.setflags(write=False)
    return KnowledgeMatrix(coarse, fine, m)


@dataclass(frozen=True)
class FrameAnnotation:
    frame: int
    s: int
    t: int
    iao: int
    i: int
    a: int
    o: int
    effective: bool

    @property
    def labels(self) -> tuple[int, int, int, int, int, int]:
        return (self.s, self.t, self.iao, self.i, self.a, self.o)

    def label(self, ann_type: str) -> int:
        return getattr(self, RECORD_KEYS[ann_type])

    def to_record(self) -> dict:
        return {
            "frame": self.frame,
            "s": self.s,
            "t": self.t,
            "iao": self.iao,
            "i": self.i,
            "a": self.a,
            "o": self.o,
            "effective": self.effective,
        }

    @classmethod
    def from_record(cls, rec: dict) -> FrameAnnotation:
        return cls(
            int(rec["frame"]),
            int(rec["s"]),
            int(rec["t"]),
            int(rec["iao"]),
            int(rec["i"]),
            int(rec["a"]),
            int(rec["o"]),
            bool(rec["effective"]),
        )


def write_annotations(path: str | Path, frames: Iterable[FrameAnnotation]) -> None:
    with open(path, "w") as f:
        for fr in frames:
            f.write(json.dumps(fr.to_record(), separators=(", ", ": ")) + "\n")


def read_annotations(path: str | Path) -> list[FrameAnnotation]:
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(FrameAnnotation.from_record(json.loads(line)))
    return out


@dataclass(frozen=True)
class Violation:
    kind: str  # range | containment | component | boundary | under_effective
    frame: int
    detail: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def count(self, kind: str | None = None) -> int:
        if kind is None:
            return len(self.violations)
        return sum(v.kind == kind for v in self.violations)

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}


def validate_annotations(
    schema: LabelSchema,
    frames: Sequence[FrameAnnotation],
    frame_rate: float = 5.0,
    min_gap_seconds: float = 5.0,
) -> ValidationReport:
    """Check a frame-ordered annotation stream against the labeling protocol.

    Frames must be sorted and contiguous. Problems with the data itself are
    returned as violations rather than raised:

    * ``range``: a label outside its type's class count;
    * ``containment``: (step, task) or (task, activity) not linked by the schema;
    * ``component``: (I, A, O) differs from the activity's triple;
    * ``boundary``: a frame where a parent level carries a category while a
      child level is under-effective (or the reverse), i.e. a step or task
      span that does not start and end with its children;
    * ``under_effective``: an idle run longer than ``min_gap_seconds`` that is
      not labeled under-effective, or an under-effective run between two
      effective frames that does not exceed it.
    """
    report = ValidationReport()
    for k, fr in enumerate(frames):
        expected = frames[0].frame + k
        if fr.frame != expected:
            raise ValueError(f"frames must be sorted and contiguous; got {fr.frame} at {expected}")

    reserved = schema.reserved_labels()
    limits = schema.class_counts
    max_gap = min_gap_seconds * frame_rate
    flags = []  # per frame: True if all labels reserved

    for fr in frames:
        labels = fr.labels
        bad = [TYPES[k] for k, (v, lim) in enumerate(zip(labels, limits)) if not 0 <= v < lim]
        if bad:
            report.violations.append(Violation("range", fr.frame, f"labels out of range: {bad}"))
            flags.append(False)
            continue
        is_res = [v == r for v, r in zip(labels, reserved)]
        all_res = all(is_res)
        flags.append(all_res)
        if any(is_res) and not all_res:
            levels = [TYPES[k] for k, r in enumerate(is_res) if r]
            report.violations.append(
                Violation("boundary", fr.frame, f"partially under-effective labels at {levels}")
            )
            continue
        if all_res:
            if fr.effective:
                report.violations.append(
                    Violation("boundary", fr.frame, "effective frame outside any annotated span")
                )
            continue
        if fr.t not in schema.step_tasks.get(fr.s, ()):
            report.violations.append(
                Violation("containment", fr.frame, f"task {fr.t} not contained in step {fr.s}")
            )
        elif fr.iao not in schema.task_activities.get(fr.t, ()):
            report.violations.append(
                Violation(
                    "containment", fr.frame, f"activity {fr.iao} not contained in task {fr.t}"
                )
            )
        triple = schema.activity_components[fr.iao]
        if (fr.i, fr.a, fr.o) != triple:
            report.violations.append(
                Violation(
                    "component",
                    fr.frame,
                    f"components {(fr.i, fr.a, fr.o)} differ from activity {fr.iao} triple {triple}",
                )
            )

    # idle runs (effective flag off) longer than the threshold must be under-effective
    for start, stop in _runs([not fr.effective for fr in frames]):
        if stop - start > max_gap and not all(flags[start:stop]):
            report.violations.append(
                Violation(
                    "under_effective",
                    frames[start].frame,
                    f"idle gap of {stop - start} frames exceeds {max_gap:g} without under-effective labels",
                )
            )
    # under-effective spans between two effective frames must exceed the threshold
    for start, stop in _runs(flags):
        interior = start > 0 and stop < len(frames)
        if interior and stop - start <= max_gap:
            report.violations.append(
                Violation(
                    "under_effective",
                    frames[start].frame,
                    f"under-effective span of {stop - start} frames does not exceed {max_gap:g}",
                )
            )
    return report


def _runs(mask: Sequence[bool]) -> list[tuple[int, int]]:
    """Half-open index ranges of maximal True runs."""
    runs = []
    start = None
    for k, v in enumerate(mask):
        if v and start is None:
            start = k
        elif not v and start is not None:
            runs.append((start, k))
            start = None
    if start is not None:
        runs.append((start, len(mask)))
    return runs


def min_under_effective_frames(frame_rate: float, min_gap_seconds: float = 5.0) -> int:
    """Shortest under-effective span that exceeds the idle-gap threshold."""
    return math.floor(min_gap_seconds * frame_rate) + 1
