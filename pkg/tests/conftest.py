import time

import numpy as np
import pytest

from eegrefine.montage import standard_montage
from eegrefine.signals import EegWindow, SynthSpec


@pytest.fixture
def montage():
    return standard_montage()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_window(data, montage=None, rate=250.0, index=0):
    return EegWindow(np.asarray(data, dtype=float), rate, index, montage or standard_montage())


def small_spec(**kw):
    """A 20-window spec with one short frontal->temporal event."""
    base = dict(n_windows=20, seizure_schedule=[(4, 8, ("Frontal", "Temporal"))])
    base.update(kw)
    return SynthSpec.from_dict(base)


SMALL_CONFIG = {
    "synth": {"n_windows": 20, "seizure_schedule": [[4, 8, ["Frontal", "Temporal"]]]},
    "encoder": {"d_model": 8, "n_heads": 2, "feedforward_dim": 16, "hidden_dim": 8, "n_epochs": 2},
}


@pytest.fixture
def small_config():
    import copy

    return copy.deepcopy(SMALL_CONFIG)


@pytest.fixture(scope="session")
def default_bench(tmp_path_factory):
    """One full benchmark on the default configuration (cold verdict cache)."""
    from eegrefine.pipeline import PipelineConfig, cmd_bench

    root = tmp_path_factory.mktemp("bench")
    cache = root / "cache"
    cfg = PipelineConfig.from_dict({"judges": [{"kind": "mock", "judge_id": "mock", "cache_dir": str(cache)}]})
    t0 = time.perf_counter()
    result = cmd_bench(cfg, root / "run_a")
    return cfg, result, root, time.perf_counter() - t0


# acceptance reporting: one line per criterion at the end of the run ---------

CRITERIA: dict[int, dict] = {}


@pytest.fixture
def detail(request):
    """Tests call ``detail("...")`` to attach measured values to their line."""
    marker = request.node.get_closest_marker("criterion")
    entry = CRITERIA.setdefault(marker.args[0], {"title": marker.args[1], "detail": "", "outcome": None})

    def note(text):
        entry["detail"] = text
        print(f"criterion {marker.args[0]}: {text}")

    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    entry = CRITERIA.setdefault(marker.args[0], {"title": marker.args[1], "detail": "", "outcome": None})
    if rep.when == "call" or rep.failed:
        entry["outcome"] = "PASS" if rep.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        e = CRITERIA[number]
        line = f"[{e['outcome'] or 'NOT RUN'}] {number}. {e['title']}"
        if e["detail"]:
            line += f" -- {e['detail']}"
        terminalreporter.write_line(line)
