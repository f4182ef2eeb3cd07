import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from spikeband import generate_banded

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def rand_matrix(n, kl, ku=None, dd=1.5, seed=0):
    return generate_banded(n, kl, kl if ku is None else ku, dd, seed)


def rand_rhs(n, m=1, seed=1):
    return np.random.default_rng(seed).standard_normal((n, m))


def rel_err(X, ref):
    """Per-column ``max|x - o| / max|o|``, worst column."""
    X = np.atleast_2d(np.asarray(X).T).T
    ref = np.atleast_2d(np.asarray(ref).T).T
    scale = np.abs(ref).max(axis=0)
    scale[scale == 0] = 1.0
    return float((np.abs(X - ref).max(axis=0) / scale).max())


@pytest.fixture
def k_cache(tmp_path, monkeypatch):
    path = tmp_path / "k.cfg"
    monkeypatch.setenv("SPIKE_K_CACHE", str(path))
    return path


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results):
            terminalreporter.write_line(results[key])
