"""Two-branch feature-aware factorization scorer.

The item branch scores a user against an aggregated representation of the
full item features, the exposure branch against exposure features only::

    y_ui = <p_u, agg([e_i; t_i])> + b_i
    y_ue = <q_u, e_i W_e> + b^e_i

``agg`` is a bias-free linear projection, optionally preceded by one tanh
hidden layer.

Scores for evaluation go through a broadcast-multiply-and-reduce path rather
than BLAS so that a single (user, item) score is bitwise equal to the same
entry of a batched score vector.  Training uses BLAS matmuls.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .data import FeatureTable

ITEM = "item"
EXPOSURE = "exposure"

CHECKPOINT_FORMAT = "cfrec-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TwoBranchScorer:
    """Parameters plus the structural switches that shape the forward pass.

    ``shared_user``: both branches read ``user_item_emb``.
    ``plain``: single item-branch model; the fused prediction is ``y_ui``.
    ``mask_exposure``: the item branch sees zeros in place of exposure features.
    """

    params: dict
    dim: int
    d_e: int
    d_t: int
    n_users: int
    n_items: int
    seed: int = 0
    hidden_dim: int = 0
    shared_user: bool = False
    plain: bool = False
    mask_exposure: bool = False
    meta: dict = field(default_factory=dict)

    # parameter views ------------------------------------------------------
    @property
    def user_item_emb(self) -> np.ndarray:
        return self.params["user_item_emb"]

    @property
    def user_exp_emb(self) -> np.ndarray:
        return self.params["user_item_emb"] if self.shared_user else self.params["user_exp_emb"]

    @property
    def item_proj(self) -> np.ndarray:
        return self.params["item_proj"]

    @property
    def exp_proj(self) -> np.ndarray:
        return self.params["exp_proj"]

    @property
    def item_bias(self) -> np.ndarray:
        return self.params["item_bias"]

    @property
    def exp_bias(self) -> np.ndarray:
        return self.params["exp_bias"]

    def copy(self) -> "TwoBranchScorer":
        clone = TwoBranchScorer(**{**self.__dict__, "params": {k: v.copy() for k, v in self.params.items()}})
        clone.meta = dict(self.meta)
        return clone

    def check_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.params.values())

    def item_input(self, features: FeatureTable) -> np.ndarray:
        return features.combined(mask_exposure=self.mask_exposure)

    # ------------------------------------------------------------ training
    def forward(self, features: FeatureTable, users: np.ndarray, items: np.ndarray, x_all=None):
        """Batched branch scores for paired ``users[k], items[k]``.

        Returns ``(y_ui, y_ue, cache)``; ``cache`` feeds :meth:`backward`.
        """
        x = (self.item_input(features) if x_all is None else x_all)[items]
        e = features.exposure[items]
        P = self.user_item_emb[users]
        if self.hidden_dim:
            h = np.tanh(x @ self.params["hidden"])
            r = h @ self.item_proj
        else:
            h = None
            r = x @ self.item_proj
        y_ui = np.einsum("bd,bd->b", P, r) + self.item_bias[items]
        if self.plain:
            return y_ui, np.zeros_like(y_ui), (users, items, x, e, P, h, r, None, None)
        Q = self.user_exp_emb[users]
        s = e @ self.exp_proj
        y_ue = np.einsum("bd,bd->b", Q, s) + self.exp_bias[items]
        return y_ui, y_ue, (users, items, x, e, P, h, r, Q, s)

    def backward(self, cache, g_ui: np.ndarray, g_ue: np.ndarray) -> dict:
        """Gradients of a loss w.r.t. every parameter, given dL/dy per sample."""
        users, items, x, e, P, h, r, Q, s = cache
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        gu = g_ui[:, None] * r
        dr = g_ui[:, None] * P
        grads["user_item_emb"] += _scatter_rows(self.n_users, users, gu)
        grads["item_bias"] += np.bincount(items, weights=g_ui, minlength=len(self.item_bias))
        if self.hidden_dim:
            grads["item_proj"] += h.T @ dr
            dpre = (dr @ self.item_proj.T) * (1.0 - h * h)
            grads["hidden"] += x.T @ dpre
        else:
            grads["item_proj"] += x.T @ dr
        if not self.plain:
            gq = g_ue[:, None] * s
            key = "user_item_emb" if self.shared_user else "user_exp_emb"
            grads[key] += _scatter_rows(self.n_users, users, gq)
            grads["exp_proj"] += e.T @ (g_ue[:, None] * Q)
            grads["exp_bias"] += np.bincount(items, weights=g_ue, minlength=len(self.exp_bias))
        return grads


def _scatter_rows(n_rows: int, index: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Sum ``values[k]`` into row ``index[k]`` of an ``(n_rows, d)`` zero matrix."""
    m = sp.csr_matrix((np.ones(len(index)), (index, np.arange(len(index)))), shape=(n_rows, len(index)))
    return np.asarray(m @ values)


def init_scorer(
    dim: int = 64,
    d_e: int = 1,
    d_t: int = 1,
    n_users: int = 1,
    n_items: int = 1,
    seed: int = 0,
    hidden_dim: int = 0,
    shared_user: bool = False,
    plain: bool = False,
    mask_exposure: bool = False,
) -> TwoBranchScorer:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    for name, v in (("dim", dim), ("d_e", d_e), ("d_t", d_t), ("n_users", n_users), ("n_items", n_items)):
        if int(v) < 1:
            raise ValueError(f"{name} must be >= 1, got {v}")
    if hidden_dim < 0:
        raise ValueError("hidden_dim must be >= 0")
    rng = np.random.default_rng(seed)

    def uni(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    d_in = d_e + d_t
    params = {"user_item_emb": uni((n_users, dim), dim)}
    if not shared_user:
        params["user_exp_emb"] = uni((n_users, dim), dim)
    if hidden_dim:
        params["hidden"] = uni((d_in, hidden_dim), d_in)
        params["item_proj"] = uni((hidden_dim, dim), hidden_dim)
    else:
        params["item_proj"] = uni((d_in, dim), d_in)
    params["exp_proj"] = uni((d_e, dim), d_e)
    params["item_bias"] = np.zeros(n_items)
    params["exp_bias"] = np.zeros(n_items)
    return TwoBranchScorer(
        params=params,
        dim=dim,
        d_e=d_e,
        d_t=d_t,
        n_users=n_users,
        n_items=n_items,
        seed=seed,
        hidden_dim=hidden_dim,
        shared_user=shared_user,
        plain=plain,
        mask_exposure=mask_exposure,
    )


# ----------------------------------------------------------------- scoring


def _rowwise_matvec(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # (..., k) x (k, d) -> (..., d) with a fixed per-element reduction order
    return (x[..., :, None] * w).sum(axis=-2)


def _check_index(value: int, bound: int, what: str) -> None:
    if not 0 <= value < bound:
        raise IndexError(f"{what} index {value} out of range [0, {bound})")


def aggregate_item(scorer: TwoBranchScorer, features: FeatureTable, item: int) -> np.ndarray:
    _check_index(item, features.n_items, "item")
    x = scorer.item_input(features)[item]
    if scorer.hidden_dim:
        x = np.tanh(_rowwise_matvec(x, scorer.params["hidden"]))
    return _rowwise_matvec(x, scorer.item_proj)


def item_representations(scorer: TwoBranchScorer, features: FeatureTable) -> np.ndarray:
    x = scorer.item_input(features)
    if scorer.hidden_dim:
        x = np.tanh(_rowwise_matvec(x, scorer.params["hidden"]))
    return _rowwise_matvec(x, scorer.item_proj)


def exposure_representations(scorer: TwoBranchScorer, features: FeatureTable) -> np.ndarray:
    return _rowwise_matvec(features.exposure, scorer.exp_proj)


def score_item_branch(scorer: TwoBranchScorer, features: FeatureTable, user: int, item: int) -> float:
    _check_index(user, scorer.n_users, "user")
    r = aggregate_item(scorer, features, item)
    return float((scorer.user_item_emb[user] * r).sum(axis=-1) + scorer.item_bias[item])


def score_exposure_branch(scorer: TwoBranchScorer, features: FeatureTable, user: int, item: int) -> float:
    _check_index(user, scorer.n_users, "user")
    _check_index(item, features.n_items, "item")
    if scorer.plain:
        return 0.0
    s = _rowwise_matvec(features.exposure[item], scorer.exp_proj)
    return float((scorer.user_exp_emb[user] * s).sum(axis=-1) + scorer.exp_bias[item])


@dataclass
class BranchScores:
    """Item/exposure representations computed once, scored per user on demand.

    Used wherever many users are scored against one fixed parameter snapshot.
    """

    scorer: TwoBranchScorer
    item_reps: np.ndarray
    exp_reps: np.ndarray
    item_bias: np.ndarray
    exp_bias: np.ndarray

    @classmethod
    def build(cls, scorer: TwoBranchScorer, features: FeatureTable) -> "BranchScores":
        n = features.n_items
        ib = _pad(scorer.item_bias, n)
        eb = _pad(scorer.exp_bias, n)
        if scorer.plain:
            exp_reps = np.zeros((n, scorer.dim))
        else:
            exp_reps = exposure_representations(scorer, features)
        return cls(scorer, item_representations(scorer, features), exp_reps, ib, eb)

    @property
    def n_items(self) -> int:
        return self.item_reps.shape[0]

    def item(self, users) -> np.ndarray:
        p = self.scorer.user_item_emb[users]
        return (p[..., None, :] * self.item_reps).sum(axis=-1) + self.item_bias

    def exposure(self, users) -> np.ndarray:
        if self.scorer.plain:
            return np.zeros(np.shape(users) + (self.n_items,))
        q = self.scorer.user_exp_emb[users]
        return (q[..., None, :] * self.exp_reps).sum(axis=-1) + self.exp_bias


def _pad(bias: np.ndarray, n: int) -> np.ndarray:
    # items appended after training (e.g. poisoned fakes) carry zero bias
    if len(bias) >= n:
        return bias[:n]
    return np.concatenate([bias, np.zeros(n - len(bias))])


def score_all(scorer: TwoBranchScorer, features: FeatureTable, user: int, branch: str = ITEM) -> np.ndarray:
    """Scores of one user against every item in ``features``."""
    _check_index(user, scorer.n_users, "user")
    bs = BranchScores.build(scorer, features)
    if branch == ITEM:
        return bs.item(user)
    if branch == EXPOSURE:
        return bs.exposure(user)
    raise ValueError(f"branch must be {ITEM!r} or {EXPOSURE!r}, got {branch!r}")


# -------------------------------------------------------------- checkpoints

_STRUCT_FIELDS = ("dim", "d_e", "d_t", "n_users", "n_items", "seed", "hidden_dim", "shared_user", "plain", "mask_exposure")


def checkpoint_dict(scorer: TwoBranchScorer, config: Optional[dict] = None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "structure": {k: getattr(scorer, k) for k in _STRUCT_FIELDS},
        "config": config if config is not None else scorer.meta.get("config", {}),
        "params": {
            name: {"shape": list(arr.shape), "data": [float(v) for v in arr.ravel(order="C")]}
            for name, arr in sorted(scorer.params.items())
        },
    }


def save_checkpoint(scorer: TwoBranchScorer, path, config: Optional[dict] = None) -> None:
    """Write a self-describing JSON checkpoint; floats use shortest round-trip repr."""
    payload = checkpoint_dict(scorer, config)
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def load_checkpoint(path) -> TwoBranchScorer:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    params = {
        name: np.array(block["data"], dtype=np.float64).reshape(block["shape"])
        for name, block in payload["params"].items()
    }
    scorer = TwoBranchScorer(params=params, **payload["structure"])
    scorer.meta["config"] = payload.get("config", {})
    return scorer
