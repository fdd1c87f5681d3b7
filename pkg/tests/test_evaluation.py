import math

import numpy as np
import pytest

from cfrec.data import DataSplit, InteractionLog, RatioStats
from cfrec.evaluation import (
    RerankedRanker,
    compare,
    evaluate,
    ndcg_at_k,
    precision_recall_at_k,
    relative_improvement,
    rerank_rr,
)

from .conftest import make_log


def brute_metrics(scores, relevant, excluded, K):
    """Sort by (-score, index), drop exclusions, compute metrics from scratch."""
    ranked = [i for i in sorted(range(len(scores)), key=lambda i: (-scores[i], i)) if i not in excluded][:K]
    hits = [1 if i in relevant else 0 for i in ranked]
    dcg = sum(h / math.log2(p + 2) for p, h in enumerate(hits))
    idcg = sum(1 / math.log2(p + 2) for p in range(min(len(relevant), K)))
    return sum(hits) / K, sum(hits) / len(relevant), dcg / idcg


def test_ndcg_examples():
    assert ndcg_at_k([5, 1, 2], {5}, 10) == 1.0
    assert ndcg_at_k([1, 5, 2], {5}, 10) == pytest.approx(1 / math.log2(3), abs=1e-15)
    assert ndcg_at_k(list(range(10)), {42}, 10) == 0.0
    with pytest.raises(ValueError):
        ndcg_at_k([1], {1}, 0)


def test_ndcg_is_one_iff_relevant_on_top():
    assert ndcg_at_k([3, 4, 0, 1], {4, 3}, 3) == 1.0
    assert ndcg_at_k([3, 0, 4, 1], {4, 3}, 3) < 1.0


def test_precision_recall_examples():
    ranked = list(range(10))
    p, r = precision_recall_at_k(ranked, {0, 4, 9, 20, 21}, 10)
    assert (p, r) == (pytest.approx(0.3), pytest.approx(0.6))
    assert precision_recall_at_k(ranked, set(range(12)), 10)[0] == 1.0


def one_user_split(n_items=20):
    train = make_log([(0, 0, True, True)], 1, n_items)
    test = make_log([(0, 5, True, True)], 1, n_items)
    return DataSplit(train=train, validation=InteractionLog.empty(1, n_items), test=test, seed=0)


def test_evaluate_single_user_example():
    split = one_user_split()

    def ranker(u):
        s = np.zeros(20)
        s[0], s[5] = 2.0, 1.0  # item 0 is a train click and must be skipped
        return s

    m = evaluate(ranker, split, (10,))[0]
    assert (m.precision, m.recall, m.ndcg) == (0.1, 1.0, 1.0)


def random_instance(r):
    n_users, n_items = int(r.integers(1, 11)), int(r.integers(12, 21))
    rows, test_rows = [], []
    for u in range(n_users):
        items = r.permutation(n_items)
        n_train, n_test = int(r.integers(0, 5)), int(r.integers(1, 4))
        rows += [(u, int(i), True, bool(r.random() < 0.5)) for i in items[:n_train]]
        test_rows += [(u, int(i), True, True) for i in items[n_train : n_train + n_test]]
    split = DataSplit(make_log(rows, n_users, n_items), InteractionLog.empty(n_users, n_items), make_log(test_rows, n_users, n_items), 0)
    scores = np.round(r.normal(size=(n_users, n_items)), 1)  # ties on purpose
    return split, scores


def test_evaluate_matches_brute_force():
    r = np.random.default_rng(11)
    for _ in range(30):
        split, scores = random_instance(r)
        Ks = (3, 10)
        got = evaluate(lambda u: scores[u], split, Ks)
        for m in got:
            per_user = []
            for u in range(split.train.n_users):
                rel = set(split.test.items[split.test.users == u].tolist())
                ex = set(split.train.items[(split.train.users == u) & split.train.clicked].tolist())
                per_user.append(brute_metrics(scores[u], rel, ex, m.K))
            want = np.mean(per_user, axis=0)
            assert m.precision == pytest.approx(want[0], abs=1e-12)
            assert m.recall == pytest.approx(want[1], abs=1e-12)
            assert m.ndcg == pytest.approx(want[2], abs=1e-12)


def test_evaluate_errors():
    split = one_user_split()
    empty = DataSplit(split.train, split.validation, InteractionLog.empty(1, 20), 0)
    with pytest.raises(ValueError, match="test set is empty"):
        evaluate(lambda u: np.zeros(20), empty)
    with pytest.raises(ValueError):
        evaluate(lambda u: np.zeros(20), split, on="train")


def stats_from(ratios):
    ratios = np.asarray(ratios, dtype=float)
    return RatioStats(like_count=np.round(ratios * 100).astype(np.int64), click_count=np.full(len(ratios), 100))


def test_rerank_combined_key():
    # base order 0..4; item 0 has the lowest ratio (ratio rank 5): key 1 + 5 = 6
    st = stats_from([0.1, 0.9, 0.8, 0.7, 0.6])
    out = rerank_rr(np.arange(5), st, window=5)
    # keys: item0 6, item1 3, item2 5, item3 7, item4 9
    assert out.tolist() == [1, 2, 0, 3, 4]


def test_rerank_equal_ratios_and_singleton_window():
    st = stats_from([0.5] * 30)
    base = np.random.default_rng(0).permutation(30)
    assert np.array_equal(rerank_rr(base, st, 20), base)
    st2 = stats_from(np.linspace(0, 1, 30))
    assert np.array_equal(rerank_rr(base, st2, 1), base)


def test_rerank_keeps_tail_and_wrapper_uses_window():
    st = stats_from(np.linspace(1, 0, 30))
    base = np.arange(30)[::-1]
    out = rerank_rr(base, st, 20)
    assert np.array_equal(out[20:], base[20:])
    assert sorted(out[:20].tolist()) == sorted(base[:20].tolist())
    rr = RerankedRanker(lambda u: -np.arange(30.0), st, window=20)
    assert rr.top(0, np.array([], dtype=np.int64), 5).tolist() == rerank_rr(np.arange(30), st, 20)[:5].tolist()


def test_compare_examples():
    split = one_user_split()
    good = lambda u: (np.arange(20) == 5) * 1.0
    report = compare([("nt", good), ("same", good)], split, (10,))
    assert all(v == 0.0 for v in report.improvements["same"].values())
    assert relative_improvement(0.11, 0.10) == pytest.approx(0.10)
    with pytest.raises(KeyError, match="unknown baseline"):
        compare([("cr", good)], split, (10,), baseline_name="nt")


def test_report_files(tmp_path):
    split = one_user_split()
    report = compare([("nt", lambda u: np.zeros(20)), ("cr", lambda u: (np.arange(20) == 5) * 1.0)], split, (10, 20))
    report.to_csv(tmp_path / "c.csv")
    report.to_json(tmp_path / "c.json")
    header = (tmp_path / "c.csv").read_text().splitlines()[0]
    assert header.startswith("method,P@10,R@10,N@10,P@20")
    assert "improve_N@10" in header
