import time

import numpy as np
import pytest

from pinnagen.mesh import TriMesh
from pinnagen.pipeline import PipelineConfig, resume_pipeline, run_pipeline
from pinnagen.sphgrid import icosphere_mesh


def sphere_mesh(radius_mm: float, nu: int) -> TriMesh:
    v, f = icosphere_mesh(nu)
    return TriMesh(v * radius_mm, f)


class Interrupt(Exception):
    pass


@pytest.fixture(scope="session")
def toy_config():
    return PipelineConfig.load("toy")


@pytest.fixture(scope="session")
def toy_run(tmp_path_factory, toy_config):
    """Full deterministic toy run; returns (RunResult, wall seconds)."""
    out = tmp_path_factory.mktemp("toy") / "archive"
    t0 = time.perf_counter()
    result = run_pipeline(toy_config, out, deterministic=True)
    return result, time.perf_counter() - t0


@pytest.fixture(scope="session")
def toy_run_repeat(tmp_path_factory, toy_config):
    out = tmp_path_factory.mktemp("toy_repeat") / "archive"
    return run_pipeline(toy_config, out, deterministic=True)


@pytest.fixture(scope="session")
def toy_run_interrupted(tmp_path_factory, toy_config):
    """Toy run killed right after its second subject, then resumed.

    Returns (archive root, {relative path: bytes} snapshot taken at the kill,
    RunResult of the resume).
    """
    out = tmp_path_factory.mktemp("toy_kill") / "archive"
    finished = []

    def kill_after_two(sid):
        finished.append(sid)
        if len(finished) == 2:
            raise Interrupt(sid)

    with pytest.raises(Interrupt):
        run_pipeline(toy_config, out, deterministic=True, on_subject=kill_after_two)
    snapshot = {
        str(p.relative_to(out)): p.read_bytes()
        for p in sorted((out / "subjects").rglob("*"))
        if p.is_file()
    }
    resumed = resume_pipeline(toy_config, out, deterministic=True)
    return out, snapshot, resumed


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ----------------------------------------------------------------------------
# acceptance summary: one line per criterion at the end of the run

_CRITERIA: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    measured = "; ".join(str(v) for k, v in item.user_properties if k == "measured")
    if report.when == "call" or (report.when == "setup" and report.failed):
        verdict = "PASS" if report.passed else "FAIL"
        _CRITERIA[number] = (verdict, title, measured)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        verdict, title, measured = _CRITERIA[number]
        line = f"criterion {number:2d}: {verdict}  {title}"
        terminalreporter.write_line(line + (f"  [{measured}]" if measured else ""))
