from __future__ import annotations

import pytest

from modelassert.records import DetectionBox, PredictionRecord


def box(x, y=0.0, w=10.0, h=10.0, cls="car", conf=0.9, **attrs):
    return DetectionBox(float(x), float(y), float(w), float(h), cls, conf, attrs)


def video(frames, fps=10.0):
    """Stream from a list of per-frame box lists."""
    return [PredictionRecord.from_frame(f"f{i}", i, fps, boxes) for i, boxes in enumerate(frames)]


@pytest.fixture
def make_box():
    return box


@pytest.fixture
def make_video():
    return video


# -- one summary line per acceptance criterion -----------------------------

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    if report.when == "call" or report.outcome != "passed":
        no = int(name.split("_")[2])
        label = " ".join(name.split("_")[3:])
        prev = _CRITERIA.get(no, (None, "PASS"))[1]
        outcome = "PASS" if report.passed and prev == "PASS" else "FAIL"
        if report.skipped:
            outcome = "SKIP"
        _CRITERIA[no] = (label, outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for no in sorted(_CRITERIA):
        label, outcome = _CRITERIA[no]
        terminalreporter.write_line(f"criterion {no:2d}  {outcome}  {label}")
