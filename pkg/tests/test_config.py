import pytest

from heatlab.config import SCHEMA, ConfigError, ExperimentConfig, describe, parse_config, parse_config_text


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "empty.ini"
    p.write_text("")
    cfg = parse_config(p)
    assert cfg.values == ExperimentConfig().values
    assert cfg.experiment["seeds"] == tuple(range(8))
    assert cfg.grid == [(32, 2.0)]


def test_two_cell_grid():
    cfg = parse_config_text("nodes = 128,256\ndelta = 2\n")
    assert cfg.grid == [(128, 2.0), (256, 2.0)]


def test_sections_and_ranges():
    cfg = parse_config_text("[experiment]\nseeds = 0-3, 9\nalgorithms = heat, random\n[heat]\nrho = 0.8\n")
    assert cfg.experiment["seeds"] == (0, 1, 2, 3, 9)
    assert cfg.experiment["algorithms"] == ("heat", "random")
    assert cfg.agent_params()["rho"] == 0.8


def test_sf_out_of_domain_names_line_and_key():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("# header\n[actions]\nusf_set = 13\n", "x.ini")
    msg = str(exc.value)
    assert "line 3" in msg and "usf_set" in msg and "7..12" in msg


@pytest.mark.parametrize("text, fragment", [
    ("[experiment]\nbogus = 1\n", "unknown key 'bogus'"),
    ("[nowhere]\nx = 1\n", "unknown section"),
    ("[experiment]\nnodes = -4\n", "must be positive"),
    ("[experiment]\nnodes = many\n", "cannot parse"),
    ("[heat]\nrho = 1.0\n", "(0.5, 1)"),
    ("[experiment]\nalgorithms = qmix\n", "unknown algorithm"),
    ("[experiment]\nthis line is broken\n", "line 2"),
    ("[experiment]\nnodes = 4\nnodes = 5\n", "duplicate"),
    ("[heat]\nmodel_dim = 30\nheads = 4\n", "divisible"),
    ("[actions]\npower_set = 5, 2\n", "sorted"),
])
def test_parse_errors(text, fragment):
    with pytest.raises(ConfigError, match=None) as exc:
        parse_config_text(text)
    assert fragment in str(exc.value)


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "absent.ini")


def test_set_rejects_unknown_key():
    cfg = ExperimentConfig()
    cfg.set("experiment", "seeds", (4,))
    assert cfg.experiment["seeds"] == (4,)
    with pytest.raises(ConfigError):
        cfg.set("experiment", "nope", 1)


def test_describe_documents_every_key():
    text = describe()
    for section, keys in SCHEMA.items():
        assert f"[{section}]" in text
        for k in keys:
            assert f"\n{k} = " in text


def test_typed_views_reflect_overrides():
    cfg = parse_config_text("[phy]\ncapture_threshold_db = 3\n[gateway]\nn_demodulators = 4\n[adr]\nmargin_max_db = 20\n")
    assert cfg.link().capture_threshold_db == 3.0
    assert cfg.sim_kwargs()["n_demodulators"] == 4
    assert cfg.adr_params()["margin_bounds"] == (0.0, 20.0)


def test_shipped_configs_parse():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "configs"
    files = sorted(root.glob("*.ini"))
    assert files
    for f in files:
        parse_config(f)
