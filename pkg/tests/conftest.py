import numpy as np
import pytest

from activepc.data import VideoSet
from activepc.model import ModelConfig
from activepc.synthdata import DEFAULT_CLASSES, SceneSpec, render_clip


def tiny_model_config(**kw):
    base = dict(num_classes=6, points_per_frame=64, widths=(8, 8, 8), depth=1, heads=2, tube_hidden=8, k_max=8)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture(scope="session")
def tiny_videos():
    """Twelve short rendered videos, two per class; subjects 0-1 train, 2 test."""
    videos, labels, subjects = [], [], []
    for i in range(12):
        cls = i % 6
        spec = SceneSpec(class_name=DEFAULT_CLASSES[cls], distance=8.0 + i, duration=6, rng_seed=i)
        videos.append(render_clip(spec, 96))
        labels.append(cls)
        subjects.append(i // 4)
    return VideoSet(videos, np.array(labels), np.array(subjects), [f"v{i}" for i in range(12)])


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, title: str, ok: bool, detail: str) -> bool:
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
