import numpy as np
import pytest

from cfrec.data import DataSplit, FeatureTable, InteractionLog, like_click_ratio, split_dataset
from cfrec.synthetic import (
    GroundTruth,
    PoisonedTriple,
    WorldConfig,
    generate_world,
    poison_test,
    rank_diff,
    rank_diff_summary,
)

from .conftest import make_features, make_log

SMALL = WorldConfig(n_users=60, n_items=200, interactions_per_user=100, seed=4)


def test_generation_is_deterministic():
    a, fa, ta = generate_world(SMALL)
    b, fb, tb = generate_world(SMALL)
    assert a == b and fa == fb
    assert np.array_equal(ta.clickbait_flag, tb.clickbait_flag)
    c, _, _ = generate_world(WorldConfig(**{**SMALL.to_dict(), "seed": 5}))
    assert not a == c


def test_shapes_and_likes_imply_clicks():
    log, feats, truth = generate_world(SMALL)
    assert len(log) == 60 * 100
    assert feats.n_items == 200 and log.n_users == 60
    assert np.all(log.clicked[log.liked == 1])
    assert np.all(log.liked[~log.clicked] == -1)
    pairs = log.users * 200 + log.items
    assert len(np.unique(pairs)) == len(pairs)
    assert truth.clickbait_flag.sum() == 100


def test_clickbait_items_are_attractive_and_disappointing():
    _, _, t = generate_world(SMALL)
    a = t.item_attract @ t.mean_pref
    q = t.item_quality @ t.mean_pref
    bait = t.clickbait_flag
    assert np.all(a[bait] >= 0) and np.all(q[bait] <= 0)
    assert a[bait].mean() > a[~bait].mean()
    assert q[bait].mean() < q[~bait].mean()


def test_like_given_click_ignores_attract():
    cfg = WorldConfig(n_users=400, n_items=1000, interactions_per_user=600, clickbait_fraction=0.0, feature_noise=0.0, seed=1)
    log, feats, t = generate_world(cfg)
    c = log.clicked
    u, i = log.users[c], log.items[c]
    liked = (log.liked[c] == 1).astype(float)
    p_like = 1 / (1 + np.exp(-(cfg.logit_scale * np.einsum("bk,bk->b", t.user_pref[u], t.item_quality[i]) + cfg.like_bias)))
    resid = liked - p_like
    attract = np.einsum("bk,bk->b", t.user_pref[u], t.item_attract[i])
    n = len(resid)
    assert n >= 10_000
    corr = np.corrcoef(resid, attract)[0, 1]
    assert abs(corr) < 4 / np.sqrt(n)
    # noise 0: observed exposure is the attract vector up to the constant shift
    shift = cfg.feature_offset / np.sqrt(cfg.latent_dim)
    np.testing.assert_allclose(feats.exposure - shift, t.item_attract, atol=1e-12)


def test_invalid_config():
    for bad in ({"clickbait_fraction": 1.5}, {"feature_noise": -1}, {"interactions_per_user": 0}, {"n_items": 1}):
        with pytest.raises(ValueError):
            WorldConfig(**bad)
    with pytest.raises(KeyError, match="colour"):
        WorldConfig.from_dict({"colour": 1})


def test_ground_truth_round_trip(tmp_path):
    _, _, t = generate_world(SMALL)
    t.save(tmp_path / "t.json")
    back = GroundTruth.load(tmp_path / "t.json")
    assert np.array_equal(back.item_attract, t.item_attract)
    assert np.array_equal(back.clickbait_flag, t.clickbait_flag)


def poison_fixture(n_test=100, n_items=30):
    r = np.random.default_rng(0)
    train_rows = [(u, i, True, bool(i % 3 == 0)) for u in range(10) for i in range(n_items)]
    train = make_log(train_rows, 10, n_items)
    test = make_log([(k % 10, k // 10, True, True) for k in range(n_test)], 10, n_items)
    split = DataSplit(train, InteractionLog.empty(10, n_items), test, 0)
    feats = FeatureTable(r.normal(size=(n_items, 3)), r.normal(size=(n_items, 2)))
    return split, feats, like_click_ratio(train)


def test_poison_counts_and_construction():
    split, feats, stats = poison_fixture()
    before = (split.train.users.copy(), split.train.items.copy())
    triples, ext = poison_test(split, feats, stats, seed=1)
    assert len(triples) == 100 and ext.n_items == feats.n_items + 100
    assert np.array_equal(split.train.users, before[0]) and np.array_equal(split.train.items, before[1])
    for t in triples:
        assert t.donor_item != t.real_item
        assert stats.ratio[t.donor_item] < 0.5
        assert t.fake_item >= feats.n_items
        assert np.array_equal(ext.content[t.fake_item], feats.content[t.real_item])
        assert np.array_equal(ext.exposure[t.fake_item], feats.exposure[t.donor_item])
    again, ext2 = poison_test(split, feats, stats, seed=1)
    assert again == triples and ext2 == ext


def test_poison_errors():
    split, feats, stats = poison_fixture()
    honest = like_click_ratio(make_log([(0, i, True, True) for i in range(30)], 1, 30))
    with pytest.raises(ValueError, match="donor"):
        poison_test(split, feats, honest)
    no_likes = DataSplit(split.train, split.validation, InteractionLog.empty(10, 30), 0)
    with pytest.raises(ValueError, match="no liked test pairs"):
        poison_test(no_likes, feats, stats)


def test_rank_diff_examples():
    # catalog of 12 real items, fake at index 12
    scores = 12.0 - np.arange(13)  # real item 2 sits at rank 3
    scores[12] = 3.5  # fake below real items 0..8: rank 10
    t = PoisonedTriple(user=0, real_item=2, fake_item=12, donor_item=0)
    assert rank_diff(lambda u: scores, [t], 12).tolist() == [7]
    scores[12] = scores[2]  # fake ties its real item and loses on index
    assert rank_diff(lambda u: scores, [t], 12).tolist() == [1]


def test_content_only_ranker_gives_plus_one():
    split, feats, stats = poison_fixture()
    feats = FeatureTable(feats.exposure, feats.content)
    triples, ext = poison_test(split, feats, stats, seed=0)
    w = np.array([0.3, -1.2])
    diffs = rank_diff(lambda u: ext.content @ w, triples, feats.n_items)
    assert np.all(diffs == 1)


def test_rank_diff_bounds():
    split, feats, stats = poison_fixture()
    triples, ext = poison_test(split, feats, stats, seed=0)
    r = np.random.default_rng(2)
    diffs = rank_diff(lambda u: r.normal(size=ext.n_items), triples, feats.n_items)
    assert np.all(np.abs(diffs) <= feats.n_items + 9)


def test_rank_diff_summary_examples():
    s = rank_diff_summary([1, 1, 1])
    assert s.mean == 1.0 and s.counts.sum() == 3 and s.pairs is None
    v = np.arange(-300, 700)
    paired = rank_diff_summary(v, v, n_pairs=5000)
    assert np.array_equal(paired.pairs[:, 0], paired.pairs[:, 1])
    big = np.random.default_rng(0).integers(-2000, 2000, 8000)
    assert len(rank_diff_summary(big, big[::-1]).pairs) == 5000
    with pytest.raises(ValueError):
        rank_diff_summary([])


def test_small_world_has_ratio_structure():
    log, _, truth = generate_world(SMALL)
    split = split_dataset(log, 0)
    st = like_click_ratio(split.train)
    r = st.ratio
    bait, d = truth.clickbait_flag, st.defined
    assert np.nanmean(r[bait & d]) < np.nanmean(r[~bait & d])
