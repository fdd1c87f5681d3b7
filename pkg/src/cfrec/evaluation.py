"""All-ranking top-K evaluation on like-labelled test data."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import DataSplit, InteractionLog, RatioStats
from .effects import top_k


@dataclass(frozen=True)
class MetricsAtK:
    K: int
    precision: float
    recall: float
    ndcg: float


def _hits(ranked, relevant, K: int) -> np.ndarray:
    top = np.asarray(ranked)[:K]
    return np.isin(top, np.fromiter(relevant, dtype=np.int64) if not isinstance(relevant, np.ndarray) else relevant)


def ndcg_at_k(ranked, relevant, K: int) -> float:
    """Binary-relevance NDCG with the ideal DCG truncated at ``min(|relevant|, K)``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    relevant = set(int(x) for x in relevant)
    if not relevant:
        return 0.0
    hit = _hits(ranked, np.array(sorted(relevant), dtype=np.int64), K)
    discounts = 1.0 / np.log2(np.arange(2, len(hit) + 2))
    dcg = float((hit * discounts).sum())
    n_ideal = min(len(relevant), K)
    idcg = float((1.0 / np.log2(np.arange(2, n_ideal + 2))).sum())
    return dcg / idcg


def precision_recall_at_k(ranked, relevant, K: int) -> tuple[float, float]:
    if K < 1:
        raise ValueError("K must be >= 1")
    relevant = set(int(x) for x in relevant)
    hits = int(_hits(ranked, np.array(sorted(relevant), dtype=np.int64), K).sum()) if relevant else 0
    return hits / K, (hits / len(relevant) if relevant else 0.0)


def metrics_at_k(ranked, relevant, K: int) -> MetricsAtK:
    p, r = precision_recall_at_k(ranked, relevant, K)
    return MetricsAtK(K, p, r, ndcg_at_k(ranked, relevant, K))


def _items_by_user(log: InteractionLog, clicked_only: bool = True, liked_only: bool = False) -> dict[int, np.ndarray]:
    mask = np.ones(len(log), dtype=bool)
    if clicked_only:
        mask &= log.clicked
    if liked_only:
        mask &= log.liked == 1
    users, items = log.users[mask], log.items[mask]
    order = np.lexsort((items, users))
    users, items = users[order], items[order]
    out = {}
    if len(users):
        cuts = np.flatnonzero(np.diff(users)) + 1
        for chunk_u, chunk_i in zip(np.split(users, cuts), np.split(items, cuts)):
            out[int(chunk_u[0])] = np.unique(chunk_i)
    return out


def user_top_items(ranker, user: int, exclude: np.ndarray, k: int) -> np.ndarray:
    """Top-``k`` items for ``user`` from either a score closure or a ranking object.

    A ranking object exposes ``top(user, exclude, k)``; anything else is
    called as ``ranker(user)`` and must return one score per item.
    """
    if hasattr(ranker, "top"):
        return np.asarray(ranker.top(user, exclude, k))
    return top_k(ranker(user), k, exclude)


def evaluate_sets(
    ranker,
    relevant_by_user: dict[int, np.ndarray],
    exclude_by_user: dict[int, np.ndarray],
    Ks: Sequence[int] = (10, 20),
) -> list[MetricsAtK]:
    """Macro-average of P/R/NDCG@K over users with a non-empty relevant set."""
    Ks = sorted(set(int(k) for k in Ks))
    users = sorted(u for u, rel in relevant_by_user.items() if len(rel))
    if not users:
        raise ValueError("no user has a non-empty relevant set")
    empty = np.zeros(0, dtype=np.int64)
    kmax = max(Ks)
    sums = np.zeros((len(Ks), 3))
    for u in users:
        ranked = user_top_items(ranker, u, exclude_by_user.get(u, empty), kmax)
        rel = relevant_by_user[u]
        for j, K in enumerate(Ks):
            m = metrics_at_k(ranked, rel, K)
            sums[j] += (m.precision, m.recall, m.ndcg)
    means = sums / len(users)
    return [MetricsAtK(K, *map(float, means[j])) for j, K in enumerate(Ks)]


def evaluate(
    ranker,
    split: DataSplit,
    Ks: Sequence[int] = (10, 20),
    on: str = "test",
) -> list[MetricsAtK]:
    """Rank the full catalog minus each user's training clicks; score against liked test items.

    ``on="validation"`` evaluates against validation clicks instead.
    """
    if on == "test":
        relevant = _items_by_user(split.test, liked_only=True)
        if not relevant:
            raise ValueError("test set is empty")
    elif on == "validation":
        relevant = _items_by_user(split.validation)
        if not relevant:
            raise ValueError("validation set is empty")
    else:
        raise ValueError(f"on must be 'test' or 'validation', got {on!r}")
    exclude = _items_by_user(split.train)
    return evaluate_sets(ranker, relevant, exclude, Ks)


# ------------------------------------------------------------------- RR


def rerank_rr(base_ranking, ratios: RatioStats, window: int = 20, global_ratio_rank: bool = False) -> np.ndarray:
    """Re-order the top ``window`` items by base rank + like/click-ratio rank.

    Ratio ranks are 1-based, by descending ratio (undefined counts as 0),
    computed inside the window unless ``global_ratio_rank``.  Ties on either
    rank resolve by base rank.  Items below the window keep their places.
    """
    base = np.asarray(base_ranking, dtype=np.int64)
    w = min(int(window), len(base))
    if w <= 1:
        return base.copy()
    head = base[:w]
    r = np.nan_to_num(ratios.ratio, nan=0.0)
    base_rank = np.arange(1, w + 1)
    if global_ratio_rank:
        order = np.lexsort((np.arange(len(r)), -r))
        grank = np.empty(len(r), dtype=np.int64)
        grank[order] = np.arange(1, len(r) + 1)
        ratio_rank = grank[head]
    else:
        order = np.lexsort((base_rank, -r[head]))
        ratio_rank = np.empty(w, dtype=np.int64)
        ratio_rank[order] = np.arange(1, w + 1)
    key = base_rank + ratio_rank
    new_head = head[np.lexsort((base_rank, key))]
    return np.concatenate([new_head, base[w:]])


class RerankedRanker:
    """Wrap a score closure with RR re-ranking of its top ``window`` items."""

    def __init__(self, base: Callable[[int], np.ndarray], ratios: RatioStats, window: int = 20, global_ratio_rank: bool = False):
        self.base = base
        self.ratios = ratios
        self.window = window
        self.global_ratio_rank = global_ratio_rank

    def top(self, user: int, exclude: np.ndarray, k: int) -> np.ndarray:
        head = top_k(self.base(user), max(k, self.window), exclude)
        return rerank_rr(head, self.ratios, self.window, self.global_ratio_rank)[:k]


# --------------------------------------------------------------- reports


@dataclass
class ComparisonReport:
    baseline: str
    methods: list[str]
    metrics: dict  # method -> list[MetricsAtK]
    improvements: dict  # method -> {"P@10": rel, ...}

    def rows(self) -> list[dict]:
        out = []
        for name in self.methods:
            row = {"method": name}
            for m in self.metrics[name]:
                row[f"P@{m.K}"] = m.precision
                row[f"R@{m.K}"] = m.recall
                row[f"N@{m.K}"] = m.ndcg
            for col, val in self.improvements[name].items():
                row[f"improve_{col}"] = val
            out.append(row)
        return out

    def to_csv(self, path) -> None:
        rows = self.rows()
        with Path(path).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            for row in rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})

    def to_json(self, path) -> None:
        payload = {
            "baseline": self.baseline,
            "methods": self.methods,
            "metrics": {k: [asdict(m) for m in v] for k, v in self.metrics.items()},
            "improvements": self.improvements,
        }
        Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def relative_improvement(method: float, baseline: float) -> float:
    if baseline == 0:
        return 0.0 if method == 0 else math.copysign(math.inf, method)
    return (method - baseline) / baseline


def build_report(metrics: dict, baseline_name: str) -> ComparisonReport:
    if baseline_name not in metrics:
        raise KeyError(f"unknown baseline {baseline_name!r}; methods: {', '.join(metrics)}")
    base = {(m.K, k): getattr(m, attr) for m in metrics[baseline_name] for k, attr in (("P", "precision"), ("R", "recall"), ("N", "ndcg"))}
    improvements = {}
    for name, ms in metrics.items():
        imp = {}
        for m in ms:
            for k, attr in (("P", "precision"), ("R", "recall"), ("N", "ndcg")):
                imp[f"{k}@{m.K}"] = relative_improvement(getattr(m, attr), base[(m.K, k)])
        improvements[name] = imp
    return ComparisonReport(baseline_name, list(metrics), metrics, improvements)


def compare(methods: Sequence[tuple], split: DataSplit, Ks: Sequence[int] = (10, 20), baseline_name: str = "nt") -> ComparisonReport:
    """Evaluate each ``(name, ranker)`` and report gains relative to ``baseline_name``."""
    names = [n for n, _ in methods]
    if baseline_name not in names:
        raise KeyError(f"unknown baseline {baseline_name!r}; methods: {', '.join(names)}")
    metrics = {name: evaluate(r, split, Ks) for name, r in methods}
    return build_report(metrics, baseline_name)
