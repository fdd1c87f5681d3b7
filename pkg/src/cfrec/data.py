"""Interaction logs, item feature tables, dataset splits and like/click statistics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

UNOBSERVED = -1


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class Interaction:
    user: int
    item: int
    clicked: bool
    liked: Optional[bool] = None

    def __post_init__(self):
        if self.liked and not self.clicked:
            raise DataError(f"interaction ({self.user}, {self.item}) is liked but not clicked")


@dataclass(frozen=True, eq=False)
class InteractionLog:
    """Columnar, immutable log of (user, item) events.

    ``liked`` holds 1/0 for observed post-click feedback and ``UNOBSERVED``
    (-1) otherwise.  ``user_keys``/``item_keys`` map dense indices back to the
    original string ids when the log was read from disk.
    """

    users: np.ndarray
    items: np.ndarray
    clicked: np.ndarray
    liked: np.ndarray
    n_users: int
    n_items: int
    user_keys: tuple = ()
    item_keys: tuple = ()

    def __post_init__(self):
        users = np.ascontiguousarray(self.users, dtype=np.int64)
        items = np.ascontiguousarray(self.items, dtype=np.int64)
        clicked = np.ascontiguousarray(self.clicked, dtype=bool)
        liked = np.ascontiguousarray(self.liked, dtype=np.int8)
        n = len(users)
        if not (len(items) == len(clicked) == len(liked) == n):
            raise DataError("interaction columns have different lengths")
        if n:
            if users.min() < 0 or users.max() >= self.n_users:
                raise DataError("user index out of range")
            if items.min() < 0 or items.max() >= self.n_items:
                raise DataError("item index out of range")
            if np.any((liked == 1) & ~clicked):
                raise DataError("liked interaction without a click")
        for name, arr in (("users", users), ("items", items), ("clicked", clicked), ("liked", liked)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_interactions(
        cls, interactions: Sequence[Interaction], n_users: int, n_items: int
    ) -> "InteractionLog":
        liked = [UNOBSERVED if x.liked is None else int(x.liked) for x in interactions]
        return cls(
            users=np.array([x.user for x in interactions], dtype=np.int64),
            items=np.array([x.item for x in interactions], dtype=np.int64),
            clicked=np.array([x.clicked for x in interactions], dtype=bool),
            liked=np.array(liked, dtype=np.int8),
            n_users=n_users,
            n_items=n_items,
        )

    @classmethod
    def empty(cls, n_users: int = 0, n_items: int = 0) -> "InteractionLog":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z.astype(bool), z.astype(np.int8), n_users, n_items)

    def __len__(self) -> int:
        return len(self.users)

    def __iter__(self) -> Iterator[Interaction]:
        for u, i, c, l in zip(self.users, self.items, self.clicked, self.liked):
            yield Interaction(int(u), int(i), bool(c), None if l == UNOBSERVED else bool(l))

    def __eq__(self, other) -> bool:
        if not isinstance(other, InteractionLog):
            return NotImplemented
        return (
            self.n_users == other.n_users
            and self.n_items == other.n_items
            and np.array_equal(self.users, other.users)
            and np.array_equal(self.items, other.items)
            and np.array_equal(self.clicked, other.clicked)
            and np.array_equal(self.liked, other.liked)
        )

    @property
    def is_liked(self) -> np.ndarray:
        return self.liked == 1

    def subset(self, mask_or_index) -> "InteractionLog":
        """Rows selected by a boolean mask or integer index; bounds unchanged."""
        sel = np.asarray(mask_or_index)
        return InteractionLog(
            self.users[sel],
            self.items[sel],
            self.clicked[sel],
            self.liked[sel],
            self.n_users,
            self.n_items,
            self.user_keys,
            self.item_keys,
        )

    def clicks(self) -> "InteractionLog":
        return self.subset(self.clicked)

    def pair_keys(self) -> np.ndarray:
        return self.users * max(self.n_items, 1) + self.items

    def clicked_items_by_user(self) -> list[np.ndarray]:
        """Sorted unique clicked item indices for every user."""
        c = self.clicked
        return _group_items(self.users[c], self.items[c], self.n_users)


def _group_items(users: np.ndarray, items: np.ndarray, n_users: int) -> list[np.ndarray]:
    order = np.lexsort((items, users))
    u, it = users[order], items[order]
    bounds = np.searchsorted(u, np.arange(n_users + 1))
    return [np.unique(it[bounds[k] : bounds[k + 1]]) for k in range(n_users)]


@dataclass(frozen=True, eq=False)
class FeatureTable:
    """Per-item exposure and content feature matrices (row = item)."""

    exposure: np.ndarray
    content: np.ndarray

    def __post_init__(self):
        e = np.ascontiguousarray(self.exposure, dtype=np.float64)
        t = np.ascontiguousarray(self.content, dtype=np.float64)
        if e.ndim != 2 or t.ndim != 2:
            raise DataError("feature tables must be 2-d (items x dims)")
        if e.shape[0] != t.shape[0]:
            raise DataError("exposure and content tables cover different item counts")
        if e.shape[1] < 1 or t.shape[1] < 1:
            raise DataError("feature dimensions must be >= 1")
        if not (np.all(np.isfinite(e)) and np.all(np.isfinite(t))):
            raise DataError("features must be finite")
        e.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "exposure", e)
        object.__setattr__(self, "content", t)

    @property
    def n_items(self) -> int:
        return self.exposure.shape[0]

    @property
    def d_e(self) -> int:
        return self.exposure.shape[1]

    @property
    def d_t(self) -> int:
        return self.content.shape[1]

    def combined(self, mask_exposure: bool = False) -> np.ndarray:
        """``[exposure ; content]`` rows, exposure block zeroed on request."""
        e = np.zeros_like(self.exposure) if mask_exposure else self.exposure
        return np.concatenate([e, self.content], axis=1)

    def append(self, exposure: np.ndarray, content: np.ndarray) -> "FeatureTable":
        return FeatureTable(
            np.vstack([self.exposure, np.atleast_2d(exposure)]),
            np.vstack([self.content, np.atleast_2d(content)]),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureTable):
            return NotImplemented
        return np.array_equal(self.exposure, other.exposure) and np.array_equal(self.content, other.content)


@dataclass(frozen=True)
class DataSplit:
    train: InteractionLog
    validation: InteractionLog
    test: InteractionLog
    seed: int


@dataclass(frozen=True, eq=False)
class RatioStats:
    """Per-item like and click counts; ``ratio`` is NaN where undefined."""

    like_count: np.ndarray
    click_count: np.ndarray

    @property
    def defined(self) -> np.ndarray:
        return self.click_count > 0

    @property
    def ratio(self) -> np.ndarray:
        out = np.full(len(self.click_count), np.nan)
        d = self.defined
        out[d] = self.like_count[d] / self.click_count[d]
        return out

    @property
    def n_items(self) -> int:
        return len(self.click_count)


@dataclass(frozen=True)
class RatioHistogram:
    edges: np.ndarray
    counts: np.ndarray
    undefined: int


# --------------------------------------------------------------------- I/O


def _parse_flag(value: str, column: str, line: int, allow_empty: bool = False) -> Optional[int]:
    v = value.strip()
    if v == "" and allow_empty:
        return None
    if v not in ("0", "1"):
        raise DataError(f"line {line}: column {column!r} must be 0 or 1, got {value!r}")
    return int(v)


def load_interactions(path, item_keys: Sequence[str] = ()) -> InteractionLog:
    """Read an interaction CSV with header ``user,item,click,like``.

    String keys become dense indices in order of first appearance.  Repeated
    (user, item) rows collapse into one, OR-ing the click and like flags.
    ``item_keys`` fixes the item catalog (e.g. from the feature file); an
    item outside it is an error.
    """
    path = Path(path)
    user_ix: dict[str, int] = {}
    item_ix: dict[str, int] = {k: n for n, k in enumerate(item_keys)}
    closed = bool(item_keys)
    merged: dict[tuple[int, int], list] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return InteractionLog.empty(0, len(item_ix))
        if [h.strip() for h in header] != ["user", "item", "click", "like"]:
            raise DataError(f"line 1: expected header user,item,click,like, got {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"line {lineno}: expected 4 fields, got {len(row)}")
            u_key, i_key = row[0].strip(), row[1].strip()
            if not u_key or not i_key:
                raise DataError(f"line {lineno}: empty user or item key")
            click = _parse_flag(row[2], "click", lineno)
            like = _parse_flag(row[3], "like", lineno, allow_empty=True)
            if like == 1 and click == 0:
                raise DataError(f"line {lineno}: like=1 without click")
            if closed and i_key not in item_ix:
                raise DataError(f"line {lineno}: item {i_key!r} has no feature rows")
            u = user_ix.setdefault(u_key, len(user_ix))
            i = item_ix.setdefault(i_key, len(item_ix))
            prev = merged.get((u, i))
            if prev is None:
                merged[(u, i)] = [click, like]
            else:
                prev[0] = prev[0] | click
                if like is not None:
                    prev[1] = like if prev[1] is None else (prev[1] | like)
    rows = list(merged.items())
    return InteractionLog(
        users=np.array([k[0] for k, _ in rows], dtype=np.int64),
        items=np.array([k[1] for k, _ in rows], dtype=np.int64),
        clicked=np.array([v[0] for _, v in rows], dtype=bool),
        liked=np.array([UNOBSERVED if v[1] is None else v[1] for _, v in rows], dtype=np.int8),
        n_users=len(user_ix),
        n_items=len(item_ix),
        user_keys=tuple(user_ix),
        item_keys=tuple(item_ix),
    )


def _key(keys: tuple, index: int, prefix: str) -> str:
    return keys[index] if index < len(keys) else f"{prefix}{index}"


def save_interactions(log: InteractionLog, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", "item", "click", "like"])
        for u, i, c, l in zip(log.users, log.items, log.clicked, log.liked):
            w.writerow(
                [
                    _key(log.user_keys, int(u), "u"),
                    _key(log.item_keys, int(i), "i"),
                    int(c),
                    "" if l == UNOBSERVED else int(l),
                ]
            )


def save_features(features: FeatureTable, path, item_keys: tuple = ()) -> None:
    """Write the ``item,kind,v0..vD`` feature CSV (repr floats, exact round trip)."""
    width = max(features.d_e, features.d_t)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item", "kind"] + [f"v{k}" for k in range(width)])
        for i in range(features.n_items):
            key = _key(item_keys, i, "i")
            for kind, table in (("exposure", features.exposure), ("content", features.content)):
                vals = [repr(float(v)) for v in table[i]]
                w.writerow([key, kind] + vals + [""] * (width - len(vals)))


def load_features(path, item_keys: Sequence[str] = ()) -> FeatureTable:
    """Read a feature CSV, ordering rows by ``item_keys`` when given."""
    exposure: dict[str, list[float]] = {}
    content: dict[str, list[float]] = {}
    order: list[str] = []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["item", "kind"]:
            raise DataError("line 1: expected header item,kind,v0,...")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            key, kind = row[0].strip(), row[1].strip()
            try:
                vec = [float(v) for v in row[2:] if v.strip() != ""]
            except ValueError as exc:
                raise DataError(f"line {lineno}: {exc}") from None
            if kind == "exposure":
                target = exposure
            elif kind == "content":
                target = content
            else:
                raise DataError(f"line {lineno}: kind must be exposure or content, got {kind!r}")
            if key in target:
                raise DataError(f"line {lineno}: duplicate {kind} row for item {key!r}")
            if key not in exposure and key not in content:
                order.append(key)
            target[key] = vec
    keys = list(item_keys) if item_keys else order
    missing = [k for k in keys if k not in exposure or k not in content]
    if missing:
        raise DataError(f"items without both feature kinds: {missing[:5]}")
    e = [exposure[k] for k in keys]
    t = [content[k] for k in keys]
    if len({len(v) for v in e}) > 1 or len({len(v) for v in t}) > 1:
        raise DataError("feature vectors of one kind must share a dimension")
    return FeatureTable(np.array(e, dtype=np.float64).reshape(len(keys), -1),
                        np.array(t, dtype=np.float64).reshape(len(keys), -1))


# ------------------------------------------------------------------ splits


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_dataset(
    log: InteractionLog,
    seed: int,
    test_fraction: float = 0.1,
    validation_fraction: float = 0.1,
    min_liked_for_sampling: int = 10,
    validation_liked_only: bool = False,
) -> DataSplit:
    """Per-user split: a share of liked clicks to test, a share of the rest to validation.

    Users with fewer than ``min_liked_for_sampling`` liked clicks send all of
    them to test.  Non-click rows stay in ``train`` untouched.
    """
    if len(log) == 0:
        raise DataError("cannot split an empty log")
    rng = np.random.default_rng(seed)
    role = np.zeros(len(log), dtype=np.int8)  # 0 train, 1 validation, 2 test
    click_rows = np.flatnonzero(log.clicked)
    order = np.lexsort((click_rows, log.users[click_rows]))
    click_rows = click_rows[order]
    bounds = np.searchsorted(log.users[click_rows], np.arange(log.n_users + 1))
    for u in range(log.n_users):
        rows = click_rows[bounds[u] : bounds[u + 1]]
        if len(rows) == 0:
            continue
        liked_rows = rows[log.liked[rows] == 1]
        if len(liked_rows) < min_liked_for_sampling:
            n_test = len(liked_rows)
        else:
            n_test = _round_half_up(test_fraction * len(liked_rows))
        test_rows = rng.permutation(liked_rows)[:n_test]
        role[test_rows] = 2
        rest = rows[role[rows] == 0]
        if validation_liked_only:
            rest = rest[log.liked[rest] == 1]
        n_val = _round_half_up(validation_fraction * len(rest))
        role[rng.permutation(rest)[:n_val]] = 1
    return DataSplit(
        train=log.subset(role == 0),
        validation=log.subset(role == 1),
        test=log.subset(role == 2),
        seed=seed,
    )


# --------------------------------------------------------------- negatives


class NegativeSamplingError(DataError):
    pass


def sample_negatives(
    log: InteractionLog,
    seed: int,
    epoch: int = 0,
    positives: Optional[InteractionLog] = None,
    max_rounds: int = 32,
) -> np.ndarray:
    """One uniformly drawn non-clicked item per positive click.

    ``log`` defines what counts as interacted (its clicks); ``positives``
    defaults to the same clicks.  Returns an ``(n, 3)`` int array of
    (user, positive item, negative item) rows, deterministic in
    ``(seed, epoch)``.
    """
    pos = log.clicks() if positives is None else positives.clicks()
    n_items = log.n_items
    by_user = log.clicked_items_by_user()
    counts = np.array([len(x) for x in by_user], dtype=np.int64)
    pos_users = np.unique(pos.users)
    full = [int(u) for u in pos_users if counts[u] >= n_items]
    if full:
        raise NegativeSamplingError(f"user {full[0]} has interacted with every item; no negative available")
    interacted = np.unique(log.clicks().pair_keys())
    rng = np.random.default_rng([seed, epoch])
    users = pos.users
    neg = rng.integers(0, n_items, size=len(users))
    todo = np.flatnonzero(np.isin(users * n_items + neg, interacted))
    rounds = 0
    while len(todo) and rounds < max_rounds:
        neg[todo] = rng.integers(0, n_items, size=len(todo))
        todo = todo[np.isin(users[todo] * n_items + neg[todo], interacted)]
        rounds += 1
    for k in todo:
        u = users[k]
        allowed = np.setdiff1d(np.arange(n_items), by_user[u], assume_unique=True)
        neg[k] = allowed[rng.integers(0, len(allowed))]
    return np.stack([users, pos.items, neg], axis=1)


# ------------------------------------------------------------------ ratios


def like_click_ratio(log: InteractionLog, n_items: Optional[int] = None) -> RatioStats:
    n = log.n_items if n_items is None else n_items
    c = log.clicked
    clicks = np.bincount(log.items[c], minlength=n).astype(np.int64)
    likes = np.bincount(log.items[log.liked == 1], minlength=n).astype(np.int64)
    return RatioStats(like_count=likes, click_count=clicks)


def ratio_groups(stats: RatioStats, n_groups: int) -> RatioHistogram:
    """Equal-width buckets over [0, 1]; the last bucket is closed."""
    if n_groups < 1:
        raise ValueError("n_groups must be >= 1")
    edges = np.linspace(0.0, 1.0, n_groups + 1)
    r = stats.ratio[stats.defined]
    idx = np.minimum((r * n_groups).astype(np.int64), n_groups - 1)
    counts = np.bincount(idx, minlength=n_groups).astype(np.int64)
    return RatioHistogram(edges=edges, counts=counts, undefined=int((~stats.defined).sum()))


def filter_by_ratio(log: InteractionLog, proportion: float, stats: Optional[RatioStats] = None) -> InteractionLog:
    """Drop the top ``proportion`` of items by like/click ratio and all their rows.

    Items whose ratio is undefined rank last.  Ties go to the lower item index.
    Item indices are preserved so features stay aligned.
    """
    if not 0.0 <= proportion < 1.0:
        raise ValueError("proportion must lie in [0, 1)")
    if proportion == 0.0:
        return log
    stats = like_click_ratio(log) if stats is None else stats
    ratio = np.where(stats.defined, stats.ratio, -np.inf)
    order = np.lexsort((np.arange(len(ratio)), -ratio))
    n_drop = int(math.floor(proportion * len(ratio) + 1e-9))
    dropped = order[:n_drop]
    return log.subset(~np.isin(log.items, dropped))


def rickrolled_fraction(log: InteractionLog) -> float:
    """Share of clicks with observed negative post-click feedback."""
    c = log.clicked
    n = int(c.sum())
    return float(((log.liked == 0) & c).sum() / n) if n else float("nan")
