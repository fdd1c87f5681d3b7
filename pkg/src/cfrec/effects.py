"""Reference constants, causal effects per (user, item), and deterministic ranking.

The counterfactual references are realised at score level: the item branch
at its reference is the per-user mean item score ``c_ui`` and the exposure
branch at its reference is the per-user mean exposure score ``c_e``.

With ``f`` the fusion function, per item::

    FUSED = f(y_ui, y_ue)
    TE    = f(y_ui, y_ue) - f(c_ui, c_e)
    NDE   = f(c_ui, y_ue) - f(c_ui, c_e)
    TIE   = f(y_ui, y_ue) - f(c_ui, y_ue)      (= TE - NDE)
    NIE   = f(y_ui, c_e)  - f(c_ui, c_e)
    TDE   = TE - NIE
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

import numpy as np

from . import fusion
from .data import FeatureTable
from .fusion import FusionStrategy
from .scorer import BranchScores, TwoBranchScorer


class EffectKind(str, Enum):
    FUSED = "fused"
    TE = "te"
    NDE = "nde"
    TIE = "tie"
    NIE = "nie"
    TDE = "tde"

    @classmethod
    def parse(cls, value: "str | EffectKind") -> "EffectKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown inference kind {value!r}; expected one of {names}") from None


@dataclass(frozen=True)
class ReferenceConstants:
    c_ui: float
    c_e: float


def _means(y_ui: np.ndarray, y_ue: np.ndarray, mask: Optional[np.ndarray]):
    if y_ui.shape[-1] == 0:
        raise ValueError("reference constants need at least one item")
    if mask is None:
        return y_ui.mean(axis=-1), y_ue.mean(axis=-1)
    n = mask.sum(axis=-1)
    if np.any(n == 0):
        raise ValueError("reference constants need at least one candidate item")
    return (y_ui * mask).sum(axis=-1) / n, (y_ue * mask).sum(axis=-1) / n


def reference_constants(
    scorer: TwoBranchScorer,
    features: FeatureTable,
    user: int,
    candidates: Optional[np.ndarray] = None,
) -> ReferenceConstants:
    """Per-user catalog means of both branch scores.

    ``candidates`` (boolean mask over items) restricts the mean, for ablations.
    """
    if features.n_items == 0:
        raise ValueError("reference constants need at least one item")
    bs = BranchScores.build(scorer, features)
    c_ui, c_e = _means(bs.item(user), bs.exposure(user), candidates)
    return ReferenceConstants(float(c_ui), float(c_e))


def _plain_fuse(a, b):
    return np.asarray(a, dtype=np.float64) + 0.0 * np.asarray(b, dtype=np.float64)


def effects_from_scores(
    strategy: FusionStrategy,
    kind: EffectKind,
    y_ui: np.ndarray,
    y_ue: np.ndarray,
    c_ui=None,
    c_e=None,
    plain: bool = False,
) -> np.ndarray:
    """Effect values from branch scores; last axis is items.

    ``c_ui``/``c_e`` default to the means over the last axis.  ``plain``
    models ignore the exposure score (``f(a, b) = a``).
    """
    kind = EffectKind.parse(kind)
    y_ui = np.asarray(y_ui, dtype=np.float64)
    y_ue = np.asarray(y_ue, dtype=np.float64)
    if c_ui is None or c_e is None:
        m_ui, m_e = _means(y_ui, y_ue, None)
        c_ui = m_ui if c_ui is None else c_ui
        c_e = m_e if c_e is None else c_e
    c_ui = np.asarray(c_ui, dtype=np.float64)[..., None] if np.ndim(c_ui) else np.float64(c_ui)
    c_e = np.asarray(c_e, dtype=np.float64)[..., None] if np.ndim(c_e) else np.float64(c_e)

    if plain:
        f = _plain_fuse
    else:
        strategy = FusionStrategy.parse(strategy)

        def f(a, b):
            return fusion.fuse(strategy, a, b)

    if kind is EffectKind.FUSED:
        return np.asarray(f(y_ui, y_ue))
    if kind is EffectKind.TIE:
        if plain:
            return y_ui - c_ui
        return np.asarray(fusion.tie(strategy, y_ui, y_ue, c_ui))
    if kind is EffectKind.NIE:
        if plain:
            return y_ui - c_ui + 0.0 * c_e
        return np.asarray(fusion.nie(strategy, y_ui, c_ui, c_e)) + np.zeros_like(y_ue)
    ref = f(c_ui, c_e)
    te = np.asarray(f(y_ui, y_ue)) - ref
    if kind is EffectKind.TE:
        return te
    if kind is EffectKind.NDE:
        return np.asarray(f(c_ui, y_ue)) - ref + np.zeros_like(y_ui)
    # TDE
    nie = np.asarray(f(y_ui, c_e)) - ref
    return te - nie


def effect_scores(
    scorer: TwoBranchScorer,
    features: FeatureTable,
    strategy,
    kind,
    user: int,
    candidates: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Effect value for every item in ``features`` for one user."""
    if not 0 <= user < scorer.n_users:
        raise IndexError(f"user index {user} out of range")
    bs = BranchScores.build(scorer, features)
    return EffectScorer(bs, strategy, kind, candidates_fn=None if candidates is None else (lambda u: candidates))(user)


class EffectScorer:
    """Callable ``user -> effect vector`` over a fixed parameter snapshot.

    Representations are computed once at construction; each call costs one
    pass over the item table.
    """

    def __init__(self, branch_scores: BranchScores, strategy, kind, candidates_fn=None):
        self.bs = branch_scores
        self.strategy = FusionStrategy.parse(strategy)
        self.kind = EffectKind.parse(kind)
        self.candidates_fn = candidates_fn

    @classmethod
    def build(cls, scorer, features, strategy, kind, candidates_fn=None) -> "EffectScorer":
        return cls(BranchScores.build(scorer, features), strategy, kind, candidates_fn)

    def branches(self, user):
        return self.bs.item(user), self.bs.exposure(user)

    def __call__(self, user) -> np.ndarray:
        y_ui, y_ue = self.branches(user)
        mask = None if self.candidates_fn is None else self.candidates_fn(user)
        c_ui, c_e = _means(y_ui, y_ue, mask)
        return effects_from_scores(self.strategy, self.kind, y_ui, y_ue, c_ui, c_e, plain=self.bs.scorer.plain)


def rank_items(effect: np.ndarray, exclude: Iterable[int] = ()) -> np.ndarray:
    """Non-excluded items by descending effect; ties go to the lower index."""
    effect = np.asarray(effect, dtype=np.float64)
    order = np.lexsort((np.arange(len(effect)), -effect))
    exclude = np.asarray(list(exclude) if not isinstance(exclude, np.ndarray) else exclude, dtype=np.int64)
    if len(exclude):
        order = order[~np.isin(order, exclude)]
    return order


def top_k(effect: np.ndarray, k: int, exclude: Optional[np.ndarray] = None) -> np.ndarray:
    """First ``k`` entries of :func:`rank_items`, without a full sort."""
    effect = np.array(effect, dtype=np.float64)
    if exclude is not None and len(exclude):
        effect[exclude] = -np.inf
        n_avail = len(effect) - len(np.unique(exclude))
    else:
        n_avail = len(effect)
    k = min(k, n_avail)
    if k <= 0:
        return np.zeros(0, dtype=np.int64)
    if k < len(effect):
        kth = np.partition(-effect, k - 1)[k - 1]
        cand = np.flatnonzero(-effect <= kth)
    else:
        cand = np.arange(len(effect))
    order = cand[np.lexsort((cand, -effect[cand]))]
    return order[:k]
