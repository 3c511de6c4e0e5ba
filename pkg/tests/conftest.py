"""Shared fixtures: one set of backbone weights and one feature cache per session."""
import numpy as np
import pytest

from styleaudit.extractor import Backbone, FeatureCache, StyleExtractor, init_weights
from styleaudit.simulator import build_benchmark


@pytest.fixture(scope="session")
def weights_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("weights") / "vgg16-w8.pt"
    init_weights(path, width_divisor=8, seed=0)
    return path


@pytest.fixture(scope="session")
def backbone(weights_path):
    return Backbone.from_file(weights_path)


@pytest.fixture(scope="session")
def extractor(backbone):
    return StyleExtractor(backbone, cache=FeatureCache())


@pytest.fixture(scope="session")
def small_bench():
    """Four artists, two pirated: enough for wiring tests, cheap to audit."""
    return build_benchmark(n_artists=4, n_pirated=2, per_artist=10, seed=3, n_public=2, public_per_artist=10)


@pytest.fixture(scope="session")
def default_bench():
    return build_benchmark()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- acceptance summary -----------------------------------------------------------

ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash.setdefault(ACCEPTANCE, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(results, key=lambda c: int(c[1:])):
        ok, detail = results[cid]
        terminalreporter.write_line(f"{cid} {'PASS' if ok else 'FAIL'}  {detail}")
