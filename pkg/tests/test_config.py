from pathlib import Path

import pytest

from forescene.config import ConfigError, KEY_SECTION, SECTIONS, Settings, load_config, parse_value, render

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_parse_value():
    assert parse_value("3") == 3 and parse_value("2e-3") == 0.002
    assert parse_value("true") is True and parse_value("off") is False
    assert parse_value("(1, 5, 10)") == (1, 5, 10)
    assert parse_value("per_kind") == "per_kind"


def test_every_key_maps_to_one_section():
    assert set(KEY_SECTION.values()) == set(SECTIONS)
    assert KEY_SECTION["T"] == "diffusion" and KEY_SECTION["gae_epochs"] == "gae_train"


def test_include_and_override(tmp_path):
    (tmp_path / "base.cfg").write_text("T = 200\nS = 10  # window\ngae_epochs = 3\n")
    (tmp_path / "top.cfg").write_text("include base.cfg\nS = 0\nbest_of = (1, 5)\n")
    s = load_config(tmp_path / "top.cfg", [("gae_epochs", 7), ("tau_obj", 0.3)])
    assert s.thresholds.tau_obj == 0.3
    assert (s.diffusion.T, s.diffusion.S, s.gae_train.gae_epochs) == (200, 0, 7)
    assert s.eval.best_of == (1, 5)


@pytest.mark.parametrize("text, message", [
    ("bogus_key = 1\n", "unknown config key"),
    ("T = fast\n", "expects an integer"),
    ("T = 2.5\n", "expects an integer"),
    ("adaln = 1\n", "true/false"),
    ("ldm_lr = yes\n", "expects a number"),
    ("just words\n", "expected 'key = value'"),
    ("S = 1\n", "S must be"),
    ("selection = best\n", "selection must be"),
])
def test_bad_configs_raise(tmp_path, text, message):
    p = tmp_path / "bad.cfg"
    p.write_text(text)
    with pytest.raises(ConfigError, match=message):
        load_config(p)


def test_include_cycle_and_missing(tmp_path):
    (tmp_path / "a.cfg").write_text("include b.cfg\n")
    (tmp_path / "b.cfg").write_text("include a.cfg\n")
    with pytest.raises(ConfigError, match="cycle"):
        load_config(tmp_path / "a.cfg")
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.cfg")


def test_render_roundtrip(tmp_path):
    s = load_config(CONFIGS / "desk.cfg")
    p = tmp_path / "r.cfg"
    p.write_text(render(s))
    assert load_config(p) == s


@pytest.mark.parametrize("name", ["full.cfg", "desk.cfg", "toy.cfg"])
def test_shipped_configs_load(name):
    s = load_config(CONFIGS / name)
    assert isinstance(s, Settings)


def test_full_config_values():
    s = load_config(CONFIGS / "full.cfg")
    assert (s.diffusion.T, s.diffusion.S) == (500, 20)
    assert (s.denoiser.dit_depth, s.denoiser.dit_heads) == (12, 6)
    assert (s.ldm_train.ldm_iters, s.ldm_train.ldm_batch, s.ldm_train.ldm_lr) == (80000, 32, 5e-4)


def test_fingerprint_tracks_section_changes():
    a, b = Settings(), Settings()
    b.diffusion.T = 200
    assert a.fingerprint("features") == b.fingerprint("features")
    assert a.fingerprint("diffusion") != b.fingerprint("diffusion")
