import numpy as np
import pytest

from cfrec.data import (
    DataError,
    Interaction,
    InteractionLog,
    NegativeSamplingError,
    filter_by_ratio,
    like_click_ratio,
    load_features,
    load_interactions,
    ratio_groups,
    rickrolled_fraction,
    sample_negatives,
    save_features,
    save_interactions,
    split_dataset,
)

from .conftest import make_features, make_log


def write(path, text):
    path.write_text(text)
    return path


def test_load_example(tmp_path):
    log = load_interactions(write(tmp_path / "a.csv", "user,item,click,like\nu0,i0,1,1\nu0,i1,1,0\n"))
    assert (len(log), log.n_users, log.n_items) == (2, 1, 2)
    assert log.item_keys == ("i0", "i1")
    assert log.liked.tolist() == [1, 0]


def test_load_empty_file(tmp_path):
    log = load_interactions(write(tmp_path / "e.csv", ""))
    assert (len(log), log.n_users, log.n_items) == (0, 0, 0)


def test_like_without_click_is_an_error(tmp_path):
    with pytest.raises(DataError, match="line 3"):
        load_interactions(write(tmp_path / "b.csv", "user,item,click,like\nu0,i0,1,1\nu0,i1,0,1\n"))
    with pytest.raises(DataError):
        Interaction(0, 0, False, True)


def test_bad_flag_names_line(tmp_path):
    with pytest.raises(DataError, match="line 2"):
        load_interactions(write(tmp_path / "c.csv", "user,item,click,like\nu0,i0,yes,\n"))


def test_duplicates_or_together(tmp_path):
    log = load_interactions(write(tmp_path / "d.csv", "user,item,click,like\nu0,i0,1,0\nu0,i0,1,1\nu0,i1,0,\n"))
    assert len(log) == 2
    rows = list(log)
    assert rows[0] == Interaction(0, 0, True, True)
    assert rows[1] == Interaction(0, 1, False, None)


def test_unknown_item_against_catalog(tmp_path):
    with pytest.raises(DataError, match="no feature rows"):
        load_interactions(write(tmp_path / "f.csv", "user,item,click,like\nu0,zz,1,1\n"), item_keys=["a", "b"])


def test_interaction_round_trip(tmp_path):
    log = make_log([(0, 1, True, True), (1, 0, True, False), (1, 2, False, None)], 2, 3)
    save_interactions(log, tmp_path / "x.csv")
    assert load_interactions(tmp_path / "x.csv", item_keys=["i0", "i1", "i2"]) == log


def test_feature_round_trip(tmp_path):
    feats = make_features(5, d_e=3, d_t=4)
    save_features(feats, tmp_path / "f.csv")
    assert load_features(tmp_path / "f.csv") == feats


def liked_log(n_liked, n_other=0):
    rows = [(0, i, True, True) for i in range(n_liked)] + [(0, n_liked + i, True, False) for i in range(n_other)]
    return make_log(rows, 1, n_liked + n_other)


def test_split_ten_percent_of_likes():
    s = split_dataset(liked_log(100, 20), seed=3)
    assert len(s.test) == 10
    assert np.all(s.test.liked == 1)
    assert len(s.validation) == 11  # 10% of the remaining 110 clicks


def test_split_few_likes_all_to_test():
    s = split_dataset(liked_log(3, 5), seed=0)
    assert sorted(s.test.items.tolist()) == [0, 1, 2]


def test_split_deterministic_and_disjoint():
    r = np.random.default_rng(0)
    rows = []
    for u in range(20):
        for i in r.choice(50, 30, replace=False):
            c = bool(r.random() < 0.7)
            rows.append((u, int(i), c, bool(r.random() < 0.5) if c else None))
    log = make_log(rows, 20, 50)
    a, b = split_dataset(log, 7), split_dataset(log, 7)
    assert a.train == b.train and a.test == b.test and a.validation == b.validation
    train_pairs = set(zip(a.train.users.tolist(), a.train.items.tolist()))
    test_pairs = set(zip(a.test.users.tolist(), a.test.items.tolist()))
    assert not train_pairs & test_pairs
    assert len(a.train) + len(a.validation) + len(a.test) == len(log)


def test_split_empty_log_is_an_error():
    with pytest.raises(DataError):
        split_dataset(InteractionLog.empty(1, 1), 0)


def test_negatives_forced_choice():
    log = make_log([(0, i, True, None) for i in range(4)], 1, 5)
    for epoch in range(5):
        assert np.all(sample_negatives(log, 0, epoch)[:, 2] == 4)


def test_negatives_one_per_click_and_vary_by_epoch():
    r = np.random.default_rng(1)
    rows = [(int(u), int(i), True, None) for u in range(10) for i in r.choice(500, 100, replace=False)]
    log = make_log(rows, 10, 500)
    trip = sample_negatives(log, 0, 0)
    assert trip.shape == (1000, 3)
    clicked = set(zip(log.users.tolist(), log.items.tolist()))
    assert not any((u, n) in clicked for u, _, n in trip.tolist())
    for epoch in range(1, 10):
        other = sample_negatives(log, 0, epoch)
        assert np.array_equal(other[:, :2], trip[:, :2])
        assert not np.array_equal(other[:, 2], trip[:, 2])
    assert np.array_equal(sample_negatives(log, 0, 3), sample_negatives(log, 0, 3))


def test_negatives_impossible_when_everything_clicked():
    log = make_log([(0, 0, True, None), (0, 1, True, None)], 1, 2)
    with pytest.raises(NegativeSamplingError):
        sample_negatives(log, 0)


def ratio_log():
    rows = [(u, 0, True, u == 0) for u in range(4)]  # 4 clicks, 1 like
    rows += [(u, 2, True, True) for u in range(5)]  # 5 clicks, 5 likes
    return make_log(rows, 5, 3)


def test_ratio_examples():
    st = like_click_ratio(ratio_log())
    assert st.ratio[0] == 0.25
    assert np.isnan(st.ratio[1])
    assert st.ratio[2] == 1.0


def test_ratio_groups_examples():
    st = like_click_ratio(make_log([(u, 0, True, u == 0) for u in range(10)] + [(u, 1, True, u != 0) for u in range(10)], 10, 3))
    h = ratio_groups(st, 5)
    assert h.counts.tolist() == [1, 0, 0, 0, 1]
    assert h.undefined == 1
    all_one = like_click_ratio(make_log([(0, i, True, True) for i in range(4)], 1, 4))
    assert ratio_groups(all_one, 5).counts.tolist() == [0, 0, 0, 0, 4]
    with pytest.raises(ValueError):
        ratio_groups(all_one, 0)


def test_filter_by_ratio():
    log = ratio_log()
    assert filter_by_ratio(log, 0.0) is log
    rows = []
    for i in range(10):  # item i liked by i of its 10 clickers
        rows += [(u, i, True, u < i) for u in range(10)]
    log = make_log(rows, 10, 10)
    kept = filter_by_ratio(log, 0.2)
    assert sorted(set(kept.items.tolist())) == list(range(8))
    assert rickrolled_fraction(kept) > rickrolled_fraction(log)
    with pytest.raises(ValueError):
        filter_by_ratio(log, 1.0)
