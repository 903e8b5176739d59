import pytest

from src.config import (THREADS_ENV, RunConfig, apply_settings, as_dict, load_run_config,
                        read_config_file)
from src.errors import ConfigError


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "affina.cfg"
    path.write_text(
        "# matcher\n"
        "ratio = 0.7   # tighter than default\n"
        "mutual = yes\n"
        "\n"
        "octaves=3\n"
        "channels = 1,2@90\n"
        "threads = 5\n"
    )
    return path


class TestConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert cfg.detector.channels == "default"
        assert cfg.detector.edge_ratio == 10.0
        assert cfg.matcher.ratio == 0.8 and cfg.matcher.mutual is False
        assert (cfg.verify.bins, cfg.verify.ldr_range, cfg.verify.alpha) == (25, 2.5, 0.01)
        assert cfg.eval.overlap == 0.4
        assert len(cfg.detector.channel_list()) == 9

    def test_file(self, cfg_file):
        cfg = load_run_config(cfg_file)
        assert cfg.matcher.ratio == 0.7
        assert cfg.matcher.mutual is True
        assert cfg.detector.n_octaves == 3
        assert len(cfg.detector.channel_list()) == 2

    def test_precedence(self, cfg_file, monkeypatch):
        monkeypatch.setenv(THREADS_ENV, "3")
        assert load_run_config().threads == 3
        assert load_run_config(cfg_file).threads == 5
        assert load_run_config(cfg_file, {"threads": 7, "ratio": None}).threads == 7
        assert load_run_config(cfg_file, {"ratio": None}).matcher.ratio == 0.7

    def test_bad_environment(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV, "many")
        with pytest.raises(ConfigError):
            load_run_config()

    @pytest.mark.parametrize("text", ["speed = 3\n", "ratio 0.7\n", "mutual = maybe\n", "octaves = two\n"])
    def test_bad_file(self, tmp_path, text):
        path = tmp_path / "bad.cfg"
        path.write_text(text)
        with pytest.raises(ConfigError):
            load_run_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            read_config_file(tmp_path / "absent.cfg")

    @pytest.mark.parametrize("key,value", [("ratio", "1.5"), ("octaves", "0"), ("alpha", "1"), ("threads", "0"),
                                       ("harris_window", "0"), ("contrast", "-0.1")])
    def test_validation(self, key, value):
        with pytest.raises(ConfigError):
            load_run_config(overrides={key: value})

    def test_unknown_override(self):
        with pytest.raises(ConfigError):
            apply_settings(RunConfig(), {"colour": "red"})

    def test_debug_dir_is_optional_text(self):
        cfg = apply_settings(RunConfig(), {"debug_dir": "/tmp/affina"})
        assert cfg.debug_dir == "/tmp/affina"
        assert as_dict(cfg)['debug_dir'] == "/tmp/affina"
