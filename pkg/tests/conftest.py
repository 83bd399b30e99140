import time

import numpy as np
import pytest
from hypothesis import settings

from mvgrpo.scene import DEFAULT_ANCHOR_EDIT, EditVector, default_rig, default_scene, render_candidate

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def scene():
    return default_scene()


@pytest.fixture(scope="session")
def rig():
    return default_rig()


@pytest.fixture(scope="session")
def anchor_edit():
    return DEFAULT_ANCHOR_EDIT


@pytest.fixture(scope="session")
def consistent_views(scene, rig, anchor_edit):
    return render_candidate(scene, rig, EditVector.consistent(anchor_edit, rig.m_views))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {
    1: "advantage contract",
    2: "pose reward closed form",
    3: "gradient checks",
    4: "renderer consistency oracle",
    5: "confidence decay over 20 seeds",
    6: "full-reward learning",
    7: "reward hacking reproduction",
    8: "ablation directions",
    9: "determinism across thread counts",
}

_RESULTS = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance(request):
    """Records ``{criterion: (passed, detail)}`` for the terminal summary."""
    results = request.config.stash.setdefault(_RESULTS, {})
    return results


@pytest.fixture(scope="session")
def trained(tmp_path_factory):
    """``trained(mode)`` runs the default 300-iteration training once per session."""
    from mvgrpo import config as C
    from mvgrpo import experiments as X

    cache = {}

    def get(mode: str) -> dict:
        if mode not in cache:
            out = tmp_path_factory.mktemp(f"run_{mode}")
            cfg = C.resolve({}, {"trainer.verifier_mode": mode, "output_dir": str(out)})
            t0 = time.perf_counter()
            summary = X.cmd_train(cfg)
            summary["seconds"] = time.perf_counter() - t0
            summary["dir"] = out
            cache[mode] = summary
        return cache[mode]

    return get


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, None)
    if results is None:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in ACCEPTANCE.items():
        if n in results:
            ok, detail = results[n]
            terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n}. {name}: {detail}")
        else:
            terminalreporter.write_line(f"[----] {n}. {name}: not run")
