import numpy as np
import pytest
from hypothesis import settings

from rganctr.model import ModelConfig
from rganctr.synthetic import SyntheticConfig, generate_synthetic, split_by_time

settings.register_profile("default", max_examples=100, deadline=None)
settings.load_profile("default")

TOY = dict(d=16, h=8, v=8, L=4)


@pytest.fixture(scope="session")
def tiny_ds():
    """Small synthetic dataset with a healthy click rate for fast tests."""
    cfg = SyntheticConfig(n_users=40, n_items=120, n_categories=6, n_samples=600,
                          ctr=0.1, L=4, seed=5)
    return generate_synthetic(cfg)


@pytest.fixture(scope="session")
def tiny_split(tiny_ds):
    return split_by_time(tiny_ds, tiny_ds.extras["split_time"])


@pytest.fixture(scope="session")
def toy_cfg(tiny_ds):
    return ModelConfig(n_categories=tiny_ds.n_categories, aux_dim=tiny_ds.aux_dim, **TOY)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance reporting: one PASS/FAIL line per criterion in the terminal summary
_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    n = marker.args[0]
    failed = call.excinfo is not None
    detail = dict(item.user_properties).get("detail", "")
    prev = _CRITERIA.get(n, (True, []))
    _CRITERIA[n] = (prev[0] and not failed, prev[1] + ([detail] if detail else []))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, details = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  " + "; ".join(details))
