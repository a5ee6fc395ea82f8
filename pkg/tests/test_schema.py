import json

import numpy as np
import pytest
from conftest import effective_frame, idle_frame, minimal_schema_doc
from hypothesis import given
from hypothesis import strategies as st

from murphy.schema import (
    FrameAnnotation,
    SchemaError,
    build_knowledge_matrix,
    load_schema,
    random_schema,
    read_annotations,
    rlls_schema_path,
    save_schema,
    schema_from_dict,
    validate_annotations,
    write_annotations,
)


def write_doc(tmp_path, doc):
    p = tmp_path / "schema.json"
    p.write_text(json.dumps(doc))
    return p


def test_rlls_counts(rlls):
    assert rlls.counts == (6, 15, 38, 11, 8, 16)
    assert rlls.class_counts == (7, 16, 39, 12, 9, 17)
    assert load_schema(rlls_schema_path()).fingerprint() == rlls.fingerprint()


def test_minimal_schema_loads(tmp_path):
    schema = load_schema(write_doc(tmp_path, minimal_schema_doc()))
    assert schema.counts == (1,) * 6
    assert build_knowledge_matrix(schema, "S", "T", include_reserved=False).matrix.tolist() == [[1]]


def test_task_with_two_parents(tmp_path):
    doc = minimal_schema_doc()
    doc["steps"] = ["s0", "s1"]
    doc["step_tasks"] = {"0": [0], "1": [0]}
    with pytest.raises(SchemaError, match="task 0 has multiple parents"):
        load_schema(write_doc(tmp_path, doc))


@pytest.mark.parametrize(
    "edit, message",
    [
        (lambda d: d.update(tasks=["t", "u"]), "orphan task 1"),
        (lambda d: d.update(activities=["a", "b"], activity_components={"0": [0, 0, 0], "1": [0, 0, 0]}), "orphan activity 1"),
        (lambda d: d.update(objects=["o", "o"]), "duplicate name 'o'"),
        (lambda d: d.update(activity_components={}), "activity 0 is missing its component triple"),
        (lambda d: d.update(step_tasks={"x": [0]}), "non-integer id 'x'"),
    ],
)
def test_load_errors_name_the_culprit(tmp_path, edit, message):
    doc = minimal_schema_doc()
    edit(doc)
    with pytest.raises(SchemaError, match=message):
        load_schema(write_doc(tmp_path, doc))


def test_unparseable_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(SchemaError):
        load_schema(p)


def test_schema_round_trip(tmp_path, rlls):
    save_schema(rlls, tmp_path / "s.json")
    assert load_schema(tmp_path / "s.json").to_dict() == rlls.to_dict()


def test_parenchymal_transection_has_three_tasks(rlls):
    m = build_knowledge_matrix(rlls, "S", "T").matrix
    row = rlls.categories["S"].index("parenchymal transection")
    assert m[row].sum() == 3


def test_step_task_columns_have_one_parent(rlls):
    m = build_knowledge_matrix(rlls, "S", "T").matrix
    assert (m.sum(axis=0) == 1).all()


def test_reserved_links_only_to_itself(rlls):
    for coarse, fine in (("S", "T"), ("T", "IAO"), ("S", "IAO")):
        m = build_knowledge_matrix(rlls, coarse, fine).matrix
        assert m[-1, -1] == 1 and m[-1, :-1].sum() == 0 and m[:-1, -1].sum() == 0
        assert (m[:, :-1].sum(axis=0) >= 1).all()


def test_unsupported_pair(rlls):
    with pytest.raises(ValueError, match="unsupported"):
        build_knowledge_matrix(rlls, "T", "S")


def test_knowledge_matrix_is_read_only(rlls):
    m = build_knowledge_matrix(rlls, "S", "T").matrix
    with pytest.raises(ValueError):
        m[0, 0] = 0


def brute_force_s_iao(schema):
    n_s, n_a = schema.num_categories("S"), schema.num_categories("IAO")
    out = [[0] * (n_a + 1) for _ in range(n_s + 1)]
    for s in range(n_s):
        for a in range(n_a):
            out[s][a] = int(any(a in schema.task_activities[t] for t in schema.step_tasks[s]))
    out[n_s][n_a] = 1
    return out


@given(st.integers(0, 10_000), st.lists(st.integers(1, 6), min_size=6, max_size=6))
def test_s_iao_is_transitive_composition(seed, sizes):
    sizes[1] = max(sizes[1], sizes[0])
    schema = random_schema(seed, sizes)
    m = build_knowledge_matrix(schema, "S", "IAO").matrix
    assert m.tolist() == brute_force_s_iao(schema)
    again = build_knowledge_matrix(schema, "S", "IAO").matrix
    assert np.array_equal(m, again)


def test_annotation_round_trip(tmp_path, rlls):
    frames = [effective_frame(rlls, 0, 0, 0, sorted(rlls.task_activities[0])[0]), idle_frame(rlls, 1)]
    write_annotations(tmp_path / "a.jsonl", frames)
    assert read_annotations(tmp_path / "a.jsonl") == frames
    rec = json.loads((tmp_path / "a.jsonl").read_text().splitlines()[1])
    assert set(rec) == {"frame", "s", "t", "iao", "i", "a", "o", "effective"}
    assert FrameAnnotation.from_record(rec) == frames[1]


# -- validator ---------------------------------------------------------------


def one_task_stream(schema, n, start=0, step=0):
    task = sorted(schema.step_tasks[step])[0]
    act = sorted(schema.task_activities[task])[0]
    return [effective_frame(schema, start + k, step, task, act) for k in range(n)]


def test_clean_stream_passes(rlls):
    assert validate_annotations(rlls, one_task_stream(rlls, 40)).ok


def test_task_outside_its_step_is_one_containment_violation(rlls):
    frames = one_task_stream(rlls, 10)
    foreign = sorted(rlls.step_tasks[1])[0]
    act = sorted(rlls.task_activities[foreign])[0]
    frames[4] = effective_frame(rlls, 4, 0, foreign, act)
    report = validate_annotations(rlls, frames)
    assert report.count() == 1 and report.count("containment") == 1


def test_component_mismatch(rlls):
    frames = one_task_stream(rlls, 5)
    f = frames[2]
    frames[2] = FrameAnnotation(f.frame, f.s, f.t, f.iao, (f.i + 1) % rlls.num_categories("I"), f.a, f.o, True)
    assert validate_annotations(rlls, frames).kinds() == {"component"}


def test_step_span_equal_to_task_union_has_no_boundary_violation(rlls):
    # step 0 covers exactly its two tasks' frames; idle padding on both sides
    t0, t1 = sorted(rlls.step_tasks[0])[:2]
    frames = [idle_frame(rlls, k) for k in range(30)]
    frames += [effective_frame(rlls, 30 + k, 0, t0, sorted(rlls.task_activities[t0])[0]) for k in range(10)]
    frames += [effective_frame(rlls, 40 + k, 0, t1, sorted(rlls.task_activities[t1])[0]) for k in range(10)]
    frames += [idle_frame(rlls, 50 + k) for k in range(30)]
    assert validate_annotations(rlls, frames).ok


def test_step_label_outliving_its_tasks_is_a_boundary_violation(rlls):
    frames = one_task_stream(rlls, 10)
    r = rlls.reserved_labels()
    frames.append(FrameAnnotation(10, 0, r[1], r[2], r[3], r[4], r[5], True))
    assert validate_annotations(rlls, frames).kinds() == {"boundary"}


def test_six_second_idle_gap_with_effective_labels(rlls):
    frames = one_task_stream(rlls, 3)
    gap = [FrameAnnotation(3 + k, *one_task_stream(rlls, 1)[0].labels, False) for k in range(6)]
    frames += gap + one_task_stream(rlls, 3, start=9)
    report = validate_annotations(rlls, frames, frame_rate=1.0, min_gap_seconds=5.0)
    assert report.kinds() == {"under_effective"}
    five = one_task_stream(rlls, 3) + gap[:5] + one_task_stream(rlls, 3, start=8)
    assert validate_annotations(rlls, five, frame_rate=1.0).ok


def test_short_interior_under_effective_span(rlls):
    frames = one_task_stream(rlls, 3) + [idle_frame(rlls, 3 + k) for k in range(5)] + one_task_stream(rlls, 3, start=8)
    report = validate_annotations(rlls, frames, frame_rate=1.0)
    assert report.kinds() == {"under_effective"}
    frames = one_task_stream(rlls, 3) + [idle_frame(rlls, 3 + k) for k in range(6)] + one_task_stream(rlls, 3, start=9)
    assert validate_annotations(rlls, frames, frame_rate=1.0).ok


def test_out_of_range_label(rlls):
    frames = one_task_stream(rlls, 3)
    f = frames[1]
    frames[1] = FrameAnnotation(1, 99, f.t, f.iao, f.i, f.a, f.o, True)
    assert validate_annotations(rlls, frames).kinds() == {"range"}


def test_non_contiguous_frames_raise(rlls):
    frames = one_task_stream(rlls, 3)
    del frames[1]
    with pytest.raises(ValueError, match="contiguous"):
        validate_annotations(rlls, frames)


def test_schema_from_dict_rejects_non_object():
    with pytest.raises(SchemaError):
        schema_from_dict([])
