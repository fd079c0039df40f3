from pathlib import Path

import pytest

from ccmpc.config import OUTPUT_ENV, ConfigError, RunConfig, dump_config, from_dict, load_config

ROOT = Path(__file__).resolve().parents[1]


def test_default_yaml_matches_defaults():
    assert load_config(ROOT / "configs" / "default.yaml") == RunConfig()


def test_dump_load_roundtrip(tmp_path):
    cfg = RunConfig().with_section("scp", eps_tol=2e-3).with_section("bench", m_values=(1, 3))
    path = tmp_path / "c.yaml"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


def test_partial_config_uses_defaults():
    cfg = from_dict({"conformal": {"alpha": 0.1}, "horizon": 8})
    assert cfg.conformal.alpha == 0.1 and cfg.horizon == 8
    assert cfg.scp == RunConfig().scp


@pytest.mark.parametrize("d", [
    {"bogus": 1},
    {"scp": {"eps": 1}},
    {"scp": [1, 2]},
    {"conformal": {"alpha": 2.0}},
    {"horizon": 1},
])
def test_invalid_configs_rejected(d):
    with pytest.raises(ConfigError):
        from_dict(d)


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("scp: [unclosed")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_output_env_override(monkeypatch, tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("output_dir: a\n")
    assert load_config(path).resolved_output() == Path("a")
    monkeypatch.setenv(OUTPUT_ENV, "/tmp/elsewhere")
    assert load_config(path).resolved_output() == Path("/tmp/elsewhere")
    assert load_config(None).output_dir == "/tmp/elsewhere"
    # the environment does not leak into configs built in code
    assert RunConfig(output_dir="a").resolved_output() == Path("a")
