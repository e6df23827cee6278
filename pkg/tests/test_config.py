from pathlib import Path

import numpy as np
import pytest

from spatialdiar.config import (CONFIG_ENV, ConfigError, PipelineConfig, format_geometry,
                                load_config, load_geometry, load_scene_config, parse_config,
                                parse_geometry, parse_kv)
from spatialdiar.spatial import DEFAULT_PAIRS, ArrayGeometry, MicPair

GOLDEN = Path(__file__).parent / "golden"


class TestPipelineConfig:
    def test_empty_file_gives_defaults(self, tmp_path):
        p = tmp_path / "empty.cfg"
        p.write_text("")
        assert load_config(p) == PipelineConfig()

    def test_documented_defaults(self):
        c = PipelineConfig()
        assert (c.collar, c.alpha, c.beta) == (0.25, 0.25, 0.25)
        assert (c.gamma_min, c.gamma_max, c.theta_n_max) == (0.8, 1.0, 45.0)
        assert (c.n_slots, c.chunk_seconds) == (4, 4.0)

    def test_defaults_echo_golden(self):
        assert PipelineConfig().echo() == (GOLDEN / "defaults.cfg").read_text()

    def test_echo_reloads(self):
        assert parse_config(PipelineConfig().echo()) == PipelineConfig()

    def test_range_error_names_key(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("# tuned\nalpha = -1\n")
        with pytest.raises(ConfigError, match="alpha") as exc:
            load_config(p)
        assert exc.value.key == "alpha" and exc.value.lineno == 2

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown key 'alpha2'"):
            parse_config("alpha2 = 1")

    def test_parse_error_location(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("collar = 0.1\nthis is not valid\n")
        with pytest.raises(ConfigError, match=r"bad.cfg:2"):
            load_config(p)

    def test_type_error(self):
        with pytest.raises(ConfigError, match="epochs"):
            parse_config("epochs = many")

    def test_duplicate(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config("lr = 0.1\nlr = 0.2")

    @pytest.mark.parametrize("line", ["gamma_min = 1.5", "threshold = 1", "grid_step = 7",
                                      "hop = 500", "n_slots = 0", "lr = nan"])
    def test_other_ranges(self, line):
        with pytest.raises(ConfigError):
            parse_config(line)

    def test_overrides_and_comments(self):
        c = parse_config("collar = 0.5   # wider\n\n  epochs=3\n")
        assert c.collar == 0.5 and c.epochs == 3

    def test_env_var(self, tmp_path, monkeypatch):
        p = tmp_path / "env.cfg"
        p.write_text("collar = 0\n")
        monkeypatch.setenv(CONFIG_ENV, str(p))
        assert load_config().collar == 0.0
        monkeypatch.delenv(CONFIG_ENV)
        assert load_config() == PipelineConfig()

    def test_derived_configs(self):
        c = parse_config("lr = 0.01\nhop = 80")
        assert c.train_config().lr == 0.01
        assert c.stft().hop == 80
        assert c.feature_settings().stft.hop == 80


class TestGeometryFile:
    def test_round_trip(self):
        g = ArrayGeometry.circular()
        g2, pairs = parse_geometry(format_geometry(g, DEFAULT_PAIRS))
        assert g2 == g and pairs == DEFAULT_PAIRS

    def test_one_based_pairs(self):
        g, pairs = parse_geometry("mic1 = 0 0\nmic2 = 0.1 0\npair = 2 1\n")
        assert pairs == (MicPair(1, 0),)
        assert g.sound_speed == 343.0

    def test_default_pairs(self):
        g, pairs = parse_geometry(format_geometry(ArrayGeometry.circular(), []))
        assert pairs == DEFAULT_PAIRS

    @pytest.mark.parametrize("text,msg", [
        ("mic1 = 0 0\n", "at least two"),
        ("mic1 = 0 0\nmic3 = 1 0\n", "without gaps"),
        ("mic1 = 0 0\nmic2 = 1 0\npair = 1 3\n", "beyond"),
        ("mic1 = 0 0\nmic2 = 0 0\npair = 1 2\n", "distinct"),
        ("mic1 = 0 0\nmic2 = 1\n", "x y"),
        ("mic1 = 0 0\nmic2 = 1 0\nspeed = 3\n", "unknown"),
        ("mic1 = 0 0\nmic2 = 1 0\nmic3 = 2 0\n", "odd"),
    ])
    def test_errors(self, text, msg):
        with pytest.raises(ConfigError, match=msg):
            parse_geometry(text)


class TestSceneConfigFile:
    def test_load(self, tmp_path):
        (tmp_path / "g.geo").write_text(format_geometry(ArrayGeometry.circular(radius=0.05), DEFAULT_PAIRS))
        p = tmp_path / "s.cfg"
        p.write_text("n_speakers = 2\ndoas = 10 200\nsnr_db = none\nduration = 3\ngeometry = g.geo\n")
        c = load_scene_config(p)
        assert c.n_speakers == 2 and list(c.doas) == [10.0, 200.0] and c.snr_db is None
        np.testing.assert_allclose(np.linalg.norm(c.geometry.mic_positions, axis=1), 0.05)

    def test_invalid(self, tmp_path):
        p = tmp_path / "s.cfg"
        p.write_text("n_speakers = 7\n")
        with pytest.raises(ConfigError):
            load_scene_config(p)
        p.write_text("speakers = 2\n")
        with pytest.raises(ConfigError, match="unknown"):
            load_scene_config(p)


def test_parse_kv_rejects_bad_key():
    with pytest.raises(ConfigError):
        parse_kv("bad key = 1")
