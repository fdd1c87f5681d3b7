"""Synthetic clickbait worlds, fake-item poisoning and the rank_diff experiment.

With ``s = logit_scale``, a user clicks an exposed item with probability::

    sigmoid(s * <u, attract_i> + click_bias) * sigmoid(s * w * <u, quality_i> + gate_bias)

where ``w = interest_gate_weight``.  The first factor is the pull of the
exposure features; the second is the user's interest in the content, which
is how content features reach the click.  ``w = 0`` switches the interest
gate off and leaves the plain ``sigmoid(<u, attract_i>)`` click model.
Likes, given a click, follow ``sigmoid(s * <u, quality_i> + like_bias)``.

Observed exposure features are noisy ``attract`` vectors; observed content
features are noisy ``quality`` vectors.  Clickbait items get an attract
vector pushed towards the population's mean taste and scaled up, and a
quality vector pushed away from it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .data import DataSplit, FeatureTable, InteractionLog, RatioStats, UNOBSERVED


@dataclass(frozen=True)
class WorldConfig:
    n_users: int = 500
    n_items: int = 2000
    latent_dim: int = 16
    clickbait_fraction: float = 0.5
    feature_noise: float = 0.1
    interactions_per_user: int = 500
    seed: int = 0
    clickbait_factor: float = 6.0
    pref_mean_strength: float = 1.0
    honest_alignment: float = 0.0
    click_bias: float = -4.0
    like_bias: float = -1.0
    logit_scale: float = 1.5
    interest_gate_weight: float = 1.0
    interest_gate_bias: float = 1.0
    feature_offset: float = 1.0

    def __post_init__(self):
        if self.n_users < 1 or self.n_items < 2 or self.latent_dim < 1:
            raise ValueError("n_users >= 1, n_items >= 2 and latent_dim >= 1 are required")
        if not 0.0 <= self.clickbait_fraction <= 1.0:
            raise ValueError("clickbait_fraction must lie in [0, 1]")
        if self.feature_noise < 0:
            raise ValueError("feature_noise must be >= 0")
        if not 1 <= self.interactions_per_user < self.n_items:
            raise ValueError("interactions_per_user must lie in [1, n_items)")
        if self.clickbait_factor <= 0:
            raise ValueError("clickbait_factor must be > 0")
        if not -1.0 <= self.honest_alignment <= 1.0:
            raise ValueError("honest_alignment must lie in [-1, 1]")

    @classmethod
    def from_dict(cls, values: dict) -> "WorldConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise KeyError(f"unknown world config key(s): {', '.join(unknown)}")
        return cls(**values)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    user_pref: np.ndarray
    item_attract: np.ndarray
    item_quality: np.ndarray
    clickbait_flag: np.ndarray
    mean_pref: np.ndarray

    def save(self, path) -> None:
        payload = {k: np.asarray(getattr(self, k)).tolist() for k in ("user_pref", "item_attract", "item_quality", "mean_pref")}
        payload["clickbait_flag"] = [bool(x) for x in self.clickbait_flag]
        Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "GroundTruth":
        p = json.loads(Path(path).read_text())
        return cls(
            user_pref=np.array(p["user_pref"]),
            item_attract=np.array(p["item_attract"]),
            item_quality=np.array(p["item_quality"]),
            clickbait_flag=np.array(p["clickbait_flag"], dtype=bool),
            mean_pref=np.array(p["mean_pref"]),
        )


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def generate_world(config: WorldConfig):
    """Sample a world; returns ``(log, features, truth)``.

    The log holds every exposure: clicked rows carry an observed like flag,
    unclicked rows carry ``click=0`` and no like observation.
    """
    c = config
    rng = np.random.default_rng(c.seed)
    k = c.latent_dim
    direction = rng.normal(size=k)
    direction /= np.linalg.norm(direction)
    mean_pref = direction * c.pref_mean_strength * np.sqrt(k)
    user_pref = mean_pref + rng.normal(size=(c.n_users, k))

    attract = rng.normal(scale=1.0 / np.sqrt(k), size=(c.n_items, k))
    independent = rng.normal(scale=1.0 / np.sqrt(k), size=(c.n_items, k))
    rho = c.honest_alignment
    quality = rho * attract + np.sqrt(1.0 - rho * rho) * independent

    n_bait = int(round(c.clickbait_fraction * c.n_items))
    bait = np.zeros(c.n_items, dtype=bool)
    bait[rng.permutation(c.n_items)[:n_bait]] = True
    # clickbait: attractive to the typical user, disappointing to the typical user
    a_sign = np.sign(attract[bait] @ direction)
    a_sign[a_sign == 0] = 1.0
    attract[bait] = c.clickbait_factor * attract[bait] * a_sign[:, None]
    q_sign = np.sign(independent[bait] @ direction)
    q_sign[q_sign == 0] = 1.0
    quality[bait] = -independent[bait] * q_sign[:, None]

    shift = c.feature_offset / np.sqrt(k)
    exposure = attract + shift + rng.normal(scale=c.feature_noise / np.sqrt(k), size=attract.shape)
    content = quality + shift + rng.normal(scale=c.feature_noise / np.sqrt(k), size=quality.shape)

    m = c.interactions_per_user
    keys = rng.random((c.n_users, c.n_items))
    exposed = np.sort(np.argpartition(keys, m - 1, axis=1)[:, :m], axis=1)
    users = np.repeat(np.arange(c.n_users), m)
    items = exposed.ravel()
    click_logit = c.logit_scale * np.einsum("bk,bk->b", user_pref[users], attract[items]) + c.click_bias
    like_logit = c.logit_scale * np.einsum("bk,bk->b", user_pref[users], quality[items]) + c.like_bias
    u_click = rng.random(len(users))
    u_like = rng.random(len(users))
    p_click = _sigmoid(click_logit)
    if c.interest_gate_weight:
        gate = c.logit_scale * c.interest_gate_weight * np.einsum("bk,bk->b", user_pref[users], quality[items])
        p_click = p_click * _sigmoid(gate + c.interest_gate_bias)
    clicked = u_click < p_click
    liked = np.where(clicked, (u_like < _sigmoid(like_logit)).astype(np.int8), np.int8(UNOBSERVED))

    log = InteractionLog(
        users=users,
        items=items,
        clicked=clicked,
        liked=liked,
        n_users=c.n_users,
        n_items=c.n_items,
        user_keys=tuple(f"u{u}" for u in range(c.n_users)),
        item_keys=tuple(f"i{i}" for i in range(c.n_items)),
    )
    truth = GroundTruth(user_pref, attract, quality, bait, mean_pref)
    return log, FeatureTable(exposure, content), truth


# ---------------------------------------------------------------- poisoning


@dataclass(frozen=True)
class PoisonedTriple:
    user: int
    real_item: int
    fake_item: int
    donor_item: int


def poison_test(
    split: DataSplit,
    features: FeatureTable,
    stats: RatioStats,
    seed: int = 0,
    ratio_threshold: float = 0.5,
):
    """Build one fake item per liked test pair: real content, donor exposure.

    Donors are drawn from items whose like/click ratio is below
    ``ratio_threshold``, never the real item itself.  Fakes are appended after
    the real catalog in triple order.  Returns ``(triples, extended_features)``.
    """
    test = split.test
    mask = test.clicked & (test.liked == 1)
    users, items = test.users[mask], test.items[mask]
    order = np.lexsort((items, users))
    users, items = users[order], items[order]
    if len(users) == 0:
        raise ValueError("no liked test pairs to poison")
    r = stats.ratio
    pool = np.flatnonzero(stats.defined & (np.nan_to_num(r, nan=1.0) < ratio_threshold))
    if len(pool) == 0 or (len(pool) == 1 and np.all(items == pool[0])):
        raise ValueError(f"no eligible donor item with like/click ratio < {ratio_threshold}")
    rng = np.random.default_rng(seed)
    n = features.n_items
    triples, donors = [], []
    for k, (u, i) in enumerate(zip(users, items)):
        d = pool[rng.integers(0, len(pool))]
        while d == i:
            d = pool[rng.integers(0, len(pool))]
        triples.append(PoisonedTriple(int(u), int(i), n + k, int(d)))
        donors.append(d)
    donors = np.array(donors, dtype=np.int64)
    extended = features.append(features.exposure[donors], features.content[items])
    return triples, extended


def rank_diff(
    score_fn: Callable[[int], np.ndarray],
    triples: Sequence[PoisonedTriple],
    n_real_items: int,
    exclude_by_user: Optional[dict] = None,
) -> np.ndarray:
    """``rank_fake - rank_real`` per triple (1-based ranks, ties to lower index).

    Each user's list holds the real catalog minus their excluded items plus
    that user's own fakes; ``score_fn(user)`` returns scores over the whole
    extended catalog.
    """
    exclude_by_user = exclude_by_user or {}
    by_user: dict[int, list[int]] = {}
    for k, t in enumerate(triples):
        by_user.setdefault(t.user, []).append(k)
    out = np.zeros(len(triples), dtype=np.int64)
    for u in sorted(by_user):
        scores = np.asarray(score_fn(u), dtype=np.float64)
        cand = np.ones(n_real_items, dtype=bool)
        ex = exclude_by_user.get(u)
        if ex is not None and len(ex):
            cand[np.asarray(ex)] = False
        idx = np.concatenate([np.flatnonzero(cand), np.array([triples[k].fake_item for k in by_user[u]], dtype=np.int64)])
        s = scores[idx]
        for k in by_user[u]:
            t = triples[k]
            out[k] = _rank_of(t.fake_item, idx, s, scores) - _rank_of(t.real_item, idx, s, scores)
    return out


def _rank_of(item: int, idx: np.ndarray, s: np.ndarray, scores: np.ndarray) -> int:
    v = scores[item]
    return int(np.count_nonzero((s > v) | ((s == v) & (idx < item)))) + 1


def candidate_mask_for_poison(triples: Sequence[PoisonedTriple], n_real_items: int, n_total: int, exclude_by_user: Optional[dict] = None):
    """Per-user boolean candidate mask: real catalog minus exclusions plus own fakes."""
    fakes: dict[int, list[int]] = {}
    for t in triples:
        fakes.setdefault(t.user, []).append(t.fake_item)
    exclude_by_user = exclude_by_user or {}

    def mask(user: int) -> np.ndarray:
        m = np.zeros(n_total, dtype=bool)
        m[:n_real_items] = True
        ex = exclude_by_user.get(user)
        if ex is not None and len(ex):
            m[np.asarray(ex)] = False
        m[fakes.get(user, [])] = True
        return m

    return mask


@dataclass
class RankDiffSummary:
    mean: float
    edges: np.ndarray
    counts: np.ndarray
    pairs: Optional[np.ndarray] = None  # (n, 2) sampled (method A, method B) values


def rank_diff_summary(values, other=None, bin_width: int = 100, n_pairs: int = 5000, seed: int = 0) -> RankDiffSummary:
    """Mean and fixed-width histogram; with ``other``, a paired sample for scatter plots."""
    v = np.asarray(values, dtype=np.int64)
    if len(v) == 0:
        raise ValueError("rank_diff summary needs at least one value")
    lo = int(np.floor(v.min() / bin_width) * bin_width)
    hi = int(np.floor(v.max() / bin_width) * bin_width + bin_width)
    edges = np.arange(lo, hi + bin_width, bin_width)
    counts, _ = np.histogram(v, bins=edges)
    pairs = None
    if other is not None:
        w = np.asarray(other, dtype=np.int64)
        if len(w) != len(v):
            raise ValueError("paired rank_diff arrays differ in length")
        rng = np.random.default_rng(seed)
        sel = np.sort(rng.choice(len(v), size=min(n_pairs, len(v)), replace=False))
        pairs = np.stack([v[sel], w[sel]], axis=1)
    return RankDiffSummary(float(v.mean()), edges, counts.astype(np.int64), pairs)
