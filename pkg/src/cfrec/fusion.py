"""Late-fusion strategies combining the item-branch and exposure-branch scores.

Every strategy is a function ``f(y_ui, y_ue)`` where ``y_ui`` is the score
computed from the full item representation and ``y_ue`` the score computed
from exposure features only.  Each strategy also ships closed forms for the
indirect effects used at inference time.
"""

from __future__ import annotations

from enum import Enum

import numpy as np
from scipy.special import expit


class FusionStrategy(str, Enum):
    MUL_SIGMOID = "mul-sigmoid"
    MUL_TANH = "mul-tanh"
    SUM_LINEAR = "sum-linear"
    SUM_SIGMOID = "sum-sigmoid"
    SUM_TANH = "sum-tanh"

    @classmethod
    def parse(cls, value: "str | FusionStrategy") -> "FusionStrategy":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            names = ", ".join(s.value for s in cls)
            raise ValueError(f"unknown fusion strategy {value!r}; expected one of {names}") from None

    @property
    def is_sum(self) -> bool:
        return self.value.startswith("sum-")


def _check_finite(*arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("fusion inputs must be finite")


def _unwrap(x):
    # scalars in, Python floats out
    return float(x) if np.ndim(x) == 0 else x


def activation(strategy: FusionStrategy, y_ue):
    """The squashing applied to the exposure score (identity for SUM-linear)."""
    strategy = FusionStrategy.parse(strategy)
    y_ue = np.asarray(y_ue, dtype=np.float64)
    if strategy in (FusionStrategy.MUL_SIGMOID, FusionStrategy.SUM_SIGMOID):
        return expit(y_ue)
    if strategy in (FusionStrategy.MUL_TANH, FusionStrategy.SUM_TANH):
        return np.tanh(y_ue)
    return y_ue


def activation_grad(strategy: FusionStrategy, y_ue):
    strategy = FusionStrategy.parse(strategy)
    y_ue = np.asarray(y_ue, dtype=np.float64)
    if strategy in (FusionStrategy.MUL_SIGMOID, FusionStrategy.SUM_SIGMOID):
        s = expit(y_ue)
        return s * (1.0 - s)
    if strategy in (FusionStrategy.MUL_TANH, FusionStrategy.SUM_TANH):
        return 1.0 - np.tanh(y_ue) ** 2
    return np.ones_like(y_ue)


def _fuse_unchecked(strategy: FusionStrategy, y_ui, y_ue):
    g = activation(strategy, y_ue)
    if strategy.is_sum:
        return y_ui + g
    return y_ui * g


def fuse(strategy, y_ui, y_ue):
    """Factual prediction ``f(y_ui, y_ue)``.

    Works elementwise on scalars or arrays.

    >>> fuse("mul-sigmoid", 2.0, 0.0)
    1.0
    """
    strategy = FusionStrategy.parse(strategy)
    y_ui = np.asarray(y_ui, dtype=np.float64)
    y_ue = np.asarray(y_ue, dtype=np.float64)
    _check_finite(y_ui, y_ue)
    return _unwrap(_fuse_unchecked(strategy, y_ui, y_ue))


def fuse_grad(strategy, y_ui, y_ue):
    """Partial derivatives ``(df/dy_ui, df/dy_ue)``, elementwise."""
    strategy = FusionStrategy.parse(strategy)
    y_ui = np.asarray(y_ui, dtype=np.float64)
    y_ue = np.asarray(y_ue, dtype=np.float64)
    dg = activation_grad(strategy, y_ue)
    if strategy.is_sum:
        return np.ones_like(y_ui + y_ue), dg + np.zeros_like(y_ui)
    return activation(strategy, y_ue) + np.zeros_like(y_ui), y_ui * dg


def tie(strategy, y_ui, y_ue, c_ui):
    """Total indirect effect, closed form.

    MUL strategies scale the centred item score by the exposure activation;
    every SUM strategy reduces to ``y_ui - c_ui``.
    """
    strategy = FusionStrategy.parse(strategy)
    y_ui, y_ue, c_ui = (np.asarray(v, dtype=np.float64) for v in (y_ui, y_ue, c_ui))
    _check_finite(y_ui, y_ue, c_ui)
    if strategy.is_sum:
        out = y_ui - c_ui + np.zeros_like(y_ue)
    else:
        out = (y_ui - c_ui) * activation(strategy, y_ue)
    return _unwrap(out)


def nie(strategy, y_ui, c_ui, c_e):
    """Natural indirect effect, closed form.

    The exposure input is held at its reference ``c_e``, so for every
    strategy the result is an increasing affine map of ``y_ui`` (MUL-tanh
    excepted when ``tanh(c_e) <= 0``).
    """
    strategy = FusionStrategy.parse(strategy)
    y_ui, c_ui, c_e = (np.asarray(v, dtype=np.float64) for v in (y_ui, c_ui, c_e))
    _check_finite(y_ui, c_ui, c_e)
    if strategy.is_sum:
        out = y_ui - c_ui + np.zeros_like(c_e)
    else:
        out = (y_ui - c_ui) * activation(strategy, c_e)
    return _unwrap(out)


def tie_by_definition(strategy, y_ui, y_ue, c_ui):
    """``f(y_ui, y_ue) - f(c_ui, y_ue)`` evaluated literally."""
    return _unwrap(np.asarray(fuse(strategy, y_ui, y_ue)) - np.asarray(fuse(strategy, c_ui, y_ue)))


def nie_by_definition(strategy, y_ui, c_ui, c_e):
    """``f(y_ui, c_e) - f(c_ui, c_e)`` evaluated literally."""
    return _unwrap(np.asarray(fuse(strategy, y_ui, c_e)) - np.asarray(fuse(strategy, c_ui, c_e)))
