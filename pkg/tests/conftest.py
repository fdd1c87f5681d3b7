import numpy as np
import pytest

from cfrec.data import FeatureTable, Interaction, InteractionLog

STRATEGIES = ("mul-sigmoid", "mul-tanh", "sum-linear", "sum-sigmoid", "sum-tanh")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_features(n_items, d_e=3, d_t=2, seed=0):
    r = np.random.default_rng(seed)
    return FeatureTable(r.normal(size=(n_items, d_e)), r.normal(size=(n_items, d_t)))


def make_log(rows, n_users, n_items):
    """rows: (user, item, clicked, liked-or-None)."""
    return InteractionLog.from_interactions([Interaction(*r) for r in rows], n_users, n_items)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
