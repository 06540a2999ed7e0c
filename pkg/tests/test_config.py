import pytest

from peelsim.config import ConfigError, config_from_dict, dump_config, load_config


def test_defaults():
    cfg = config_from_dict({})
    assert cfg.mpc.num_seeds == 60 and cfg.mpc.horizon == 10
    assert (cfg.loss.gamma, cfg.loss.alpha, cfg.loss.beta) == (1.0, 0.1, 0.01)
    assert cfg.loss.sigma == cfg.scene.sdf_margin_sigma


def test_units_and_sections(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("scene:\n  skin_extent: [7 in, 7 in]\n  sdf_margin_sigma: 4 mm\nmpc:\n  step_size: 3 mm\n  num_seeds: 8\n")
    cfg = load_config(p)
    assert cfg.scene.skin_extent[0] == pytest.approx(0.1778)
    assert cfg.loss.sigma == pytest.approx(0.004)
    assert cfg.mpc.step_size == pytest.approx(0.003)
    assert cfg.mpc.num_seeds == 8


@pytest.mark.parametrize(
    "data, field",
    [
        ({"scene": {"dressing_extent": [1.0, 1.0]}}, "dressing_extent"),
        ({"mpc": {"horizon": 0}}, "mpc"),
        ({"mpc": {"seeds": 3}}, "mpc.seeds"),
        ({"loss": {"sigma": 0.01}}, "loss.sigma"),
        ({"loss": {"sigma": "wide"}}, "loss.sigma"),
        ({"physics": {}}, "physics"),
        ({"mpc": {"num_seeds": "many"}}, "mpc.num_seeds"),
    ],
)
def test_errors_name_the_field(data, field):
    with pytest.raises(ConfigError) as err:
        config_from_dict(data)
    assert err.value.field == field
    assert f"`{field}`" in str(err.value)


def test_unreadable(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("scene: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_dump_round_trip(tmp_path):
    cfg = config_from_dict({"scene": {"dressing_grid": [5, 5]}, "mpc": {"num_seeds": 7}}).with_seed(11)
    p = tmp_path / "echo.yaml"
    p.write_text(dump_config(cfg))
    back = load_config(p)
    assert dump_config(back) == dump_config(cfg)
    assert back.mpc.rng_seed == 11
    assert back.scene_hash() == cfg.scene_hash()


def test_initial_direction_override():
    cfg = config_from_dict({"mpc": {"initial_direction": [0, 0, 2]}})
    assert cfg.mpc.initial_direction == (0.0, 0.0, 2.0)
    with pytest.raises(ConfigError):
        config_from_dict({"mpc": {"initial_direction": [0, 0, 0]}})
