import pytest

from config import DATA_DIR, PRESETS, CampaignConfig, Hyperparameters, load_config, read_config_file
from utils.errors import ConfigError


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for name in ("SEED", "BACKEND", "PROFILE", "OUT", "CORE"):
        monkeypatch.delenv(f"SPECSWARM_{name}", raising=False)


def test_defaults():
    cfg = CampaignConfig()
    assert cfg.extensions == ["AVX", "SSE2"]
    assert cfg.hp.alpha == 1.0 and cfg.hp.N == 50 and cfg.hp.n == 10
    assert cfg.hp.cognitive_iters == 200 and cfg.hp.mixed_iters == 800
    assert cfg.backend == "sim" and cfg.reps == 100
    assert cfg.environment.denormal_registers == frozenset(range(8))


def test_default_extensions_match_explicit_selection():
    default = CampaignConfig()
    explicit = CampaignConfig(extensions=["SSE2", "AVX"])
    assert default.extensions == explicit.extensions
    assert default.echo()["extensions"] == explicit.echo()["extensions"] == ["AVX", "SSE2"]


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_set_mixed_phase_beta_and_gamma(name):
    beta, gamma = PRESETS[name]
    cfg = CampaignConfig(variant_preset=name)
    assert (cfg.hp.beta, cfg.hp.gamma) == (beta, gamma)
    assert cfg.hp.cognitive_beta == 0.4


def test_presets_keep_a_custom_cognitive_beta():
    hp = Hyperparameters(cognitive_beta=0.25).with_preset("b1g0")
    assert (hp.beta, hp.cognitive_beta, hp.gamma) == (1.0, 0.25, 0.0)


def test_unknown_preset():
    with pytest.raises(ConfigError) as excinfo:
        Hyperparameters().with_preset("b9g9")
    assert excinfo.value.field == "variant_preset"


def test_empty_extensions_rejected():
    with pytest.raises(ConfigError, match="no extensions selected"):
        load_config(overrides={"extensions": []}, use_environment=False)


def test_unknown_profile_names_field():
    with pytest.raises(ConfigError) as excinfo:
        load_config(overrides={"profile": "skylake"}, use_environment=False)
    assert excinfo.value.field == "profile"


def test_initial_length_below_floor():
    with pytest.raises(ConfigError, match="n_min"):
        load_config(overrides={"hp": {"n": 1, "n_min": 2}}, use_environment=False)


def test_denormal_register_out_of_range():
    with pytest.raises(ConfigError) as excinfo:
        load_config(overrides={"data_env": {"denormal_registers": [3, 16]}}, use_environment=False)
    assert excinfo.value.field == "data_env.denormal_registers"


def test_precedence_file_env_overrides(tmp_path, monkeypatch):
    path = tmp_path / "campaign.yaml"
    path.write_text("seed: 1\nreps: 50\nhp:\n  N: 12\n", encoding="utf-8")
    assert load_config(path).seed == 1

    monkeypatch.setenv("SPECSWARM_SEED", "2")
    cfg = load_config(path)
    assert (cfg.seed, cfg.reps, cfg.hp.N) == (2, 50, 12)

    cfg = load_config(path, overrides={"seed": 3, "hp": {"n": 4}})
    assert (cfg.seed, cfg.hp.N, cfg.hp.n) == (3, 12, 4)


def test_environment_core_and_output(monkeypatch, tmp_path):
    monkeypatch.setenv("SPECSWARM_CORE", "3")
    monkeypatch.setenv("SPECSWARM_OUT", str(tmp_path / "runs"))
    cfg = load_config()
    assert cfg.hardware.core == 3
    assert cfg.output_dir == tmp_path / "runs"


def test_bad_environment_value(monkeypatch):
    monkeypatch.setenv("SPECSWARM_SEED", "many")
    with pytest.raises(ConfigError) as excinfo:
        load_config()
    assert excinfo.value.field.startswith("SPECSWARM_")


def test_json_config(tmp_path):
    path = tmp_path / "campaign.json"
    path.write_text('{"extensions": ["SSE"], "variant_preset": "b0g1"}', encoding="utf-8")
    cfg = load_config(path, use_environment=False)
    assert cfg.extensions == ["SSE"]
    assert cfg.hp.gamma == 1.0


def test_example_config_loads():
    cfg = load_config(DATA_DIR / "campaign.example.yaml", use_environment=False)
    assert cfg.backend == "sim"


@pytest.mark.parametrize("content", ["seed: [1, 2\n", "- just\n- a list\n"])
def test_malformed_file(tmp_path, content):
    path = tmp_path / "bad.yaml"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(ConfigError) as excinfo:
        read_config_file(path)
    assert excinfo.value.field == "config"


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.yaml", use_environment=False)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError) as excinfo:
        load_config(overrides={"swarm_size": 10}, use_environment=False)
    assert excinfo.value.field == "swarm_size"


def test_echo_is_json_ready(tmp_path):
    cfg = CampaignConfig(output_dir=tmp_path)
    echo = cfg.echo()
    assert echo["output_dir"] == str(tmp_path)
    assert CampaignConfig.model_validate(echo) == cfg
