import pytest
from pydantic import ValidationError

from metamarl.backend import ConfigError
from metamarl.utils.config import ExperimentConfig, config_hash, load_config, presets, read_config_file


def test_load_tiny_config(tiny_config_file):
    config = load_config(tiny_config_file, env={})
    assert config.game == "ipd"
    assert (config.K, config.H, config.L) == (2, 2, 1)
    assert config.seeds == [0]
    assert config.outer_lr == 0.1


def test_comments_and_overrides(tmp_path):
    path = tmp_path / "a.cfg"
    path.write_text("# header\nK = 8  # batch\n\nseeds = 1, 2,3\n")
    config = load_config(path, overrides={"L": 5}, env={})
    assert config.K == 8 and config.L == 5
    assert config.seeds == [1, 2, 3]


def test_seed_environment_override(tiny_config_file):
    assert load_config(tiny_config_file, env={"METAMARL_SEED": "7"}).seeds == [7]


def test_include_resolution_and_override(tmp_path):
    (tmp_path / "base.cfg").write_text("K = 4\nH = 9\n")
    child = tmp_path / "child.cfg"
    child.write_text("include = base.cfg\nH = 3\n")
    raw = read_config_file(child)
    assert raw == {"K": "4", "H": "3"}


def test_include_cycle(tmp_path):
    (tmp_path / "a.cfg").write_text("include = b.cfg\n")
    (tmp_path / "b.cfg").write_text("include = a.cfg\n")
    with pytest.raises(ConfigError):
        read_config_file(tmp_path / "a.cfg")


def test_malformed_files(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("just words\n")
    with pytest.raises(ConfigError):
        read_config_file(path)
    with pytest.raises(ConfigError):
        read_config_file(tmp_path / "missing.cfg")
    (tmp_path / "inc.cfg").write_text("include = nowhere.cfg\n")
    with pytest.raises(ConfigError):
        read_config_file(tmp_path / "inc.cfg")


@pytest.mark.parametrize(
    "values",
    [
        {"K": 0},
        {"gamma": 1.0},
        {"method": "lola"},
        {"unknown_key": 1},
        {"game": "ipd", "n_agents": 3},
        {"game": "zero_sum", "method": "reinforce"},
        {"seeds": "-1"},
    ],
)
def test_invalid_values_rejected(values):
    with pytest.raises(ValidationError):
        ExperimentConfig(**values)


def test_config_is_frozen():
    config = ExperimentConfig()
    with pytest.raises(ValidationError):
        config.K = 3


def test_hash_ignores_placement():
    base = ExperimentConfig()
    assert config_hash(base) == config_hash(base.model_copy(update={"workers": 4, "seeds": [3, 4]}))
    assert config_hash(base) != config_hash(base.model_copy(update={"K": 64}))


@pytest.mark.parametrize("name", ["ipd_desk", "ipd_desk_om", "ipd_published", "reinforce_ipd", "rps_desk", "rps3_desk", "rps4_desk", "rps_published", "zero_sum"])
def test_shipped_presets_validate(name):
    config = load_config(presets.preset_path(name), env={})
    assert config.seeds


def test_preset_lookup_by_name():
    config = load_config("reinforce_ipd.cfg", env={})
    assert config.method == "reinforce"
    assert config.outer_lr == 1e-4
    assert config.workers == 5


def test_preset_tables():
    assert presets.get_population("ipd")["split"] == (400, 40, 40)
    assert presets.get_population("rps")["split"] == (600, 60, 60)
    assert presets.get_hyperparameters("rps")["gamma"] == 0.90
    assert "ipd_desk" in presets.list_presets()
    with pytest.raises(ConfigError):
        presets.get_population("chess")
    with pytest.raises(ConfigError):
        presets.preset_path("nothing")


@pytest.mark.parametrize("name,table", [("ipd_published", "ipd"), ("rps_published", "rps")])
def test_published_presets_follow_tables(name, table):
    config = load_config(presets.preset_path(name), env={})
    hp = presets.get_hyperparameters(table)
    assert config.K in hp["batch_sizes"]
    assert config.H == hp["horizon"]
    assert config.L == hp["chain_length"]
    assert config.gamma == hp["gamma"]
    assert config.gae_lambda == hp["gae_lambda"]
    assert config.inner_lr in hp["inner_lrs"]
    assert config.outer_lr == hp["outer_lr"]
    assert config.workers == hp["threads"]
