"""Tests for the YAML configuration store."""

import pytest
import yaml

from hijackvet.utils.config import Config


def test_defaults_written_on_first_use(hijackvet_home):
    config = Config()
    assert config.config_dir == hijackvet_home
    assert config.config_file.exists()
    assert config.get("irr.max_depth") == 4
    assert config.get_report_format() == "table"


def test_set_parses_scalars():
    config = Config()
    config.set("tls.miss_rate", "0.25")
    config.set("assess.seed", "11")
    assert config.get("tls.miss_rate") == 0.25
    assert Config().get_seed() == 11


def test_report_format_validated():
    with pytest.raises(ValueError):
        Config().set("report.format", "html")


def test_user_values_survive_default_merge(hijackvet_home):
    hijackvet_home.mkdir(parents=True, exist_ok=True)
    (hijackvet_home / "config.yaml").write_text(yaml.safe_dump({"irr": {"max_depth": 2}}), encoding="utf-8")
    config = Config()
    assert config.get_max_depth() == 2
    assert config.get("tls.event_budget") == 900


def test_corrupt_file_falls_back_to_defaults(hijackvet_home):
    hijackvet_home.mkdir(parents=True, exist_ok=True)
    (hijackvet_home / "config.yaml").write_text("irr: [oops\n", encoding="utf-8")
    assert Config().get("irr.max_depth") == 4


def test_missing_key_default():
    config = Config()
    assert config.get("irr.max_depth.deeper", "x") == "x"
    assert config.get("nothing.here") is None


def test_reset(tmp_path):
    config = Config(tmp_path / "explicit")
    config.set("irr.max_depth", "9")
    config.reset()
    assert Config(tmp_path / "explicit").get("irr.max_depth") == 4
    assert "max_depth: 4" in config.show()
