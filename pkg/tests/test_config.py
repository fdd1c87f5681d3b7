import pytest

from cfrec import config as cfgfile
from cfrec.synthetic import WorldConfig
from cfrec.training import TrainConfig


def test_parse_and_build():
    raw = cfgfile.parse_lines(["# world", "n_users = 30", "", "clickbait_fraction=0.25  # comment"])
    w = cfgfile.build(WorldConfig, raw)
    assert w.n_users == 30 and w.clickbait_fraction == 0.25 and isinstance(w.n_users, int)


def test_bool_coercion():
    assert cfgfile.build(TrainConfig, {"shared_user": "yes"}).shared_user is True
    assert cfgfile.build(TrainConfig, {"shared_user": "off"}).shared_user is False
    with pytest.raises(cfgfile.ConfigError, match="shared_user"):
        cfgfile.build(TrainConfig, {"shared_user": "maybe"})


def test_errors_name_the_problem():
    with pytest.raises(cfgfile.ConfigError, match="n_userz"):
        cfgfile.build(WorldConfig, {"n_userz": "3"})
    with pytest.raises(cfgfile.ConfigError, match="x.cfg:2"):
        cfgfile.parse_lines(["a = 1", "nonsense"], "x.cfg")
    with pytest.raises(cfgfile.ConfigError, match="duplicate"):
        cfgfile.parse_lines(["a = 1", "a = 2"])
    with pytest.raises(cfgfile.ConfigError, match="n_users"):
        cfgfile.build(WorldConfig, {"n_users": "many"})
    with pytest.raises(cfgfile.ConfigError, match="invalid WorldConfig"):
        cfgfile.build(WorldConfig, {"clickbait_fraction": "2"})


def test_dump_round_trip(tmp_path):
    cfg = TrainConfig(alpha=0.1 + 0.2, strategy="sum-tanh", shared_user=True)
    p = tmp_path / "t.cfg"
    p.write_text(cfgfile.dump(cfg))
    assert cfgfile.build(TrainConfig, cfgfile.read_config(p)) == cfg


def test_overrides_and_missing_file(tmp_path):
    assert cfgfile.parse_overrides(["a=1", "b = x"]) == {"a": "1", "b": "x"}
    with pytest.raises(cfgfile.ConfigError, match="cannot read"):
        cfgfile.read_config(tmp_path / "nope.cfg")
