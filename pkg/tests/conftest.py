import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from murphy.schema import FrameAnnotation, random_schema, rlls_schema

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def rlls():
    return rlls_schema()


@pytest.fixture
def small_schema():
    return random_schema(np.random.default_rng(7), (2, 4, 6, 3, 3, 4))


@pytest.fixture(autouse=True)
def _float32_default():
    torch.set_default_dtype(torch.float32)
    yield
    torch.set_default_dtype(torch.float32)


def minimal_schema_doc():
    return {
        "steps": ["s"],
        "tasks": ["t"],
        "activities": ["a"],
        "instruments": ["i"],
        "actions": ["v"],
        "objects": ["o"],
        "step_tasks": {"0": [0]},
        "task_activities": {"0": [0]},
        "activity_components": {"0": [0, 0, 0]},
    }


def effective_frame(schema, frame, step, task, activity):
    i, a, o = schema.activity_components[activity]
    return FrameAnnotation(frame, step, task, activity, i, a, o, True)


def idle_frame(schema, frame):
    return FrameAnnotation(frame, *schema.reserved_labels(), False)
