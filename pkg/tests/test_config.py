import pytest

from polyrec.config import (
    CONFIG_KEYS,
    INVOCATION_KEYS,
    PROFILER_TOKEN_ENV_VAR,
    PROFILER_URL_ENV_VAR,
    AblationFlags,
    EncoderConfig,
    ProfilerSettings,
    TextConfig,
    build_settings,
    coerce_values,
    default_values,
    dump_config_text,
    load_profiler_settings,
    load_settings,
    parse_config_text,
    session_token_need,
)
from polyrec.exceptions import ConfigError


def _unset(monkeypatch, *names):
    # setenv first so monkeypatch also removes values loaded during the test.
    for name in names:
        monkeypatch.setenv(name, "placeholder")
        monkeypatch.delenv(name)


def test_defaults_derive_dependent_widths():
    settings = load_settings()
    assert settings.model.code_dim == 32
    assert settings.model.uhs_codes == 30
    assert settings.model.rep_dim == 64
    assert not settings.model.projects_output
    assert settings.seed == 1


def test_summary_only_collapses_uhs_to_one_code():
    assert load_settings(overrides={"summary_only": "true"}).model.uhs_codes == 1


def test_layers_apply_in_order(tmp_path):
    base = tmp_path / "run_config.txt"
    base.write_text("epochs=2\nwindow=16\nnegatives=3\n", encoding="utf-8")
    config = tmp_path / "config.txt"
    config.write_text("# local tweaks\nepochs=3\n\nwindow = 32\n", encoding="utf-8")

    settings = load_settings(config, {"epochs": "5"}, base_path=base)
    assert settings.train.epochs == 5
    assert settings.model.window == 32
    assert settings.train.negatives == 3


def test_unknown_keys_and_bad_values_are_rejected():
    with pytest.raises(ConfigError, match="undocumented config key"):
        coerce_values({"learning_rate": "0.1"})
    with pytest.raises(ConfigError, match="invalid value"):
        coerce_values({"epochs": "many"})
    with pytest.raises(ConfigError, match="invalid value"):
        coerce_values({"no_uhs": "maybe"})


def test_config_lines_need_an_equals_sign():
    with pytest.raises(ConfigError, match="expected key=value"):
        parse_config_text("epochs 3\n", source="config.txt")


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_settings(tmp_path / "absent.txt")


def test_dumped_config_reads_back():
    values = default_values()
    values.update(coerce_values({"no_summary": "yes", "base_lr": "2e-5", "schema": "book", "out": "elsewhere"}))
    snapshot = {key: value for key, value in values.items() if key not in INVOCATION_KEYS}
    assert coerce_values(parse_config_text(dump_config_text(values))) == snapshot
    assert len(dump_config_text(values).splitlines()) == len(CONFIG_KEYS) - len(INVOCATION_KEYS)
    assert not any(line.startswith("out=") for line in dump_config_text(values).splitlines())


def test_invalid_shapes_are_config_errors():
    with pytest.raises(ConfigError):
        EncoderConfig(model_dim=30, heads=4)
    with pytest.raises(ConfigError):
        build_settings({**default_values(), "random_ratio": 1.5})
    with pytest.raises(ConfigError):
        build_settings({**default_values(), "schema": "video"})


def test_stub_backend_needs_no_credentials(monkeypatch):
    _unset(monkeypatch, PROFILER_URL_ENV_VAR, PROFILER_TOKEN_ENV_VAR)
    base = ProfilerSettings()
    assert load_profiler_settings(base, env_file=None) is base


def test_http_backend_reads_credentials_from_the_environment(monkeypatch):
    monkeypatch.setenv(PROFILER_URL_ENV_VAR, " https://summaries.example/v1 ")
    monkeypatch.setenv(PROFILER_TOKEN_ENV_VAR, "demo-token")
    settings = load_profiler_settings(ProfilerSettings(backend="http", retries=1), env_file=None)
    assert settings.endpoint == "https://summaries.example/v1"
    assert settings.token == "demo-token"
    assert settings.retries == 1


def test_http_backend_without_credentials_fails(monkeypatch):
    _unset(monkeypatch, PROFILER_URL_ENV_VAR, PROFILER_TOKEN_ENV_VAR)
    with pytest.raises(ConfigError, match=PROFILER_TOKEN_ENV_VAR):
        load_profiler_settings(ProfilerSettings(backend="http"), env_file=None)
    with pytest.raises(ConfigError, match="unknown profiler_backend"):
        load_profiler_settings(ProfilerSettings(backend="carrier-pigeon"), env_file=None)


def test_env_file_fills_missing_variables(monkeypatch, tmp_path):
    _unset(monkeypatch, PROFILER_URL_ENV_VAR, PROFILER_TOKEN_ENV_VAR)
    env_file = tmp_path / ".env"
    env_file.write_text(
        f"{PROFILER_URL_ENV_VAR}=https://summaries.example/v1\n{PROFILER_TOKEN_ENV_VAR}=from-file\n",
        encoding="utf-8",
    )
    settings = load_profiler_settings(ProfilerSettings(backend="http"), env_file=env_file)
    assert settings.token == "from-file"


@pytest.mark.parametrize(
    "key, value",
    [
        ("dev_fraction", "1"),
        ("dev_fraction", "-0.1"),
        ("eval_every_steps", "-1"),
        ("history_cap", "0"),
        ("session_size", "0"),
        ("vocab_size", "4"),
        ("synth_users", "0"),
        ("synth_candidates", "0"),
        ("synth_items", "3"),
        ("synth_label_noise", "0.5"),
        ("profiler_retries", "-1"),
        ("profiler_timeout", "0"),
        ("profiler_max_in_flight", "0"),
    ],
)
def test_out_of_range_values_are_config_errors(key, value):
    with pytest.raises(ConfigError):
        load_settings(overrides={key: value})


def test_sessions_must_fit_the_positional_capacity():
    # 10 contents x (32 + 72 title/abstract + 6 label words + 1 category + SOS/EOS)
    with pytest.raises(ConfigError, match="max_session_tokens=512"):
        load_settings(overrides={"title_max_tokens": "32", "abstract_max_tokens": "72"})

    settings = load_settings(
        overrides={"title_max_tokens": "32", "abstract_max_tokens": "72", "max_session_tokens": "1130"}
    )
    assert session_token_need(settings.text, settings.model.ablation) == 1130


def test_session_need_follows_the_ablations():
    text = TextConfig(title_max_tokens=12, abstract_max_tokens=20, summary_max_tokens=48, session_size=10)
    assert session_token_need(text, AblationFlags()) == 10 * 41
    assert session_token_need(text, AblationFlags(no_sessions=True)) == 50
    assert session_token_need(text, AblationFlags(summary_only=True)) == 50
    assert session_token_need(TextConfig(history_cap=3, session_size=10), AblationFlags(no_summary=True)) == 3 * 41
