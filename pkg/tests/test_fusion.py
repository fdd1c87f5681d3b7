import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfrec import fusion
from cfrec.fusion import FusionStrategy

from .conftest import STRATEGIES

finite = st.floats(-20, 20, allow_nan=False)


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def naive_fuse(strategy, a, b):
    act = {"sigmoid": sig, "tanh": math.tanh, "linear": lambda x: x}[strategy.split("-")[1]]
    return a + act(b) if strategy.startswith("sum") else a * act(b)


def test_fuse_examples():
    assert fusion.fuse("mul-sigmoid", 2.0, 0.0) == pytest.approx(1.0, abs=1e-15)
    assert fusion.fuse("sum-linear", 1.5, -0.5) == pytest.approx(1.0, abs=1e-15)
    assert fusion.fuse("mul-tanh", 3.0, 0.0) == 0.0


def test_tie_examples():
    for s in STRATEGIES:
        assert fusion.tie(s, 2.0, 5.0, 2.0) == 0.0
    assert fusion.tie("sum-tanh", 3.0, -7.3, 1.0) == pytest.approx(2.0, abs=1e-15)
    assert fusion.tie("mul-sigmoid", 2.0, 0.0, 1.0) == pytest.approx(0.5, abs=1e-15)


def test_nie_examples():
    assert fusion.nie("mul-sigmoid", 2.0, 1.0, 0.0) == pytest.approx(0.5, abs=1e-15)
    for s in STRATEGIES:
        assert fusion.nie(s, 1.3, 1.3, 0.4) == 0.0
    assert fusion.nie("sum-linear", 3.0, 1.0, 7.0) == pytest.approx(2.0, abs=1e-15)


@pytest.mark.parametrize("strategy", STRATEGIES)
@settings(max_examples=100, deadline=None)
@given(a=finite, b=finite, c=finite, e=finite)
def test_closed_forms_match_definitions(strategy, a, b, c, e):
    assert fusion.fuse(strategy, a, b) == pytest.approx(naive_fuse(strategy, a, b), abs=1e-12)
    assert fusion.tie(strategy, a, b, c) == pytest.approx(naive_fuse(strategy, a, b) - naive_fuse(strategy, c, b), abs=1e-12)
    assert fusion.nie(strategy, a, c, e) == pytest.approx(naive_fuse(strategy, a, e) - naive_fuse(strategy, c, e), abs=1e-12)


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_vectorised_matches_definition_helpers(strategy, rng):
    y_ui, y_ue, c_ui, c_e = rng.normal(scale=3, size=(4, 500))
    np.testing.assert_allclose(fusion.tie(strategy, y_ui, y_ue, c_ui), fusion.tie_by_definition(strategy, y_ui, y_ue, c_ui), atol=1e-12, rtol=0)
    np.testing.assert_allclose(fusion.nie(strategy, y_ui, c_ui, c_e), fusion.nie_by_definition(strategy, y_ui, c_ui, c_e), atol=1e-12, rtol=0)


@pytest.mark.parametrize("strategy", ["mul-sigmoid", "sum-linear", "sum-sigmoid", "sum-tanh"])
def test_fuse_increasing_in_item_score_when_activation_positive(strategy):
    y = np.linspace(-5, 5, 101)
    assert np.all(np.diff(fusion.fuse(strategy, y, 0.7)) > 0)


def test_mul_tanh_monotonicity_follows_exposure_sign():
    y = np.linspace(-5, 5, 101)
    assert np.all(np.diff(fusion.fuse("mul-tanh", y, 0.7)) > 0)
    assert np.all(np.diff(fusion.fuse("mul-tanh", y, -0.7)) < 0)


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_non_finite_inputs_rejected(bad):
    with pytest.raises(ValueError):
        fusion.fuse("mul-sigmoid", bad, 0.0)
    with pytest.raises(ValueError):
        fusion.tie("sum-tanh", 1.0, bad, 0.0)
    with pytest.raises(ValueError):
        fusion.nie("mul-tanh", 1.0, 0.0, bad)


def test_unknown_strategy():
    with pytest.raises(ValueError, match="unknown fusion strategy"):
        FusionStrategy.parse("mul-relu")
    assert FusionStrategy.parse(" SUM-Tanh ") is FusionStrategy.SUM_TANH


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_fuse_grad_matches_finite_differences(strategy, rng):
    a, b = rng.normal(size=(2, 50))
    h = 1e-6
    ga, gb = fusion.fuse_grad(strategy, a, b)
    na = (fusion.fuse(strategy, a + h, b) - fusion.fuse(strategy, a - h, b)) / (2 * h)
    nb = (fusion.fuse(strategy, a, b + h) - fusion.fuse(strategy, a, b - h)) / (2 * h)
    np.testing.assert_allclose(ga, na, atol=1e-8)
    np.testing.assert_allclose(gb, nb, atol=1e-8)


def test_scalars_in_floats_out():
    assert isinstance(fusion.fuse("sum-linear", 1, 2), float)
    assert fusion.fuse("sum-linear", np.ones(3), 0.0).shape == (3,)
