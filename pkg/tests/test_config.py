"""Strict config parsing, overrides, hashing, and the resolved echo."""

import pytest
import yaml

from trackcast.config import (
    RunConfig,
    config_from_dict,
    config_hash,
    load_config,
    save_resolved,
    with_overrides,
)
from trackcast.errors import ConfigError


class TestParsing:
    def test_empty_config_is_all_defaults(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("")
        assert load_config(path) == RunConfig()

    def test_partial_group(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("seed: 5\nepisodes:\n  n_agents: 2\n")
        cfg = load_config(path)
        assert cfg.seed == 5
        assert cfg.episodes.n_agents == 2
        assert cfg.episodes.episode_len == 240  # untouched default

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown top-level"):
            config_from_dict({"trainlng": {}})

    def test_unknown_group_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown keys"):
            config_from_dict({"train": {"learning_rte": 1e-3}})

    def test_non_mapping_group_rejected(self):
        with pytest.raises(ConfigError, match="expected a mapping"):
            config_from_dict({"train": [1, 2]})

    def test_bad_seed_rejected(self):
        with pytest.raises(ConfigError, match="seed"):
            config_from_dict({"seed": "five"})

    def test_invalid_yaml_rejected(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("train: [unclosed")
        with pytest.raises(ConfigError, match="invalid YAML"):
            load_config(path)

    def test_int_coerced_to_float_fields(self):
        cfg = config_from_dict({"map": {"size": 1024}})
        assert cfg.map.size == 1024.0 and isinstance(cfg.map.size, float)

    def test_horizons_become_tuple(self):
        cfg = config_from_dict({"eval": {"horizons": [10, 20]}})
        assert cfg.eval.horizons == (10, 20)


class TestOverrides:
    def test_dotted_override(self):
        cfg = with_overrides(RunConfig(), {"episodes.n_agents": 1, "sample.guided": False})
        assert cfg.episodes.n_agents == 1
        assert cfg.sample.guided is False

    def test_none_values_skipped(self):
        cfg = with_overrides(RunConfig(), {"episodes.n_agents": None})
        assert cfg == RunConfig()

    def test_unknown_override_rejected(self):
        with pytest.raises(ConfigError, match="no such field"):
            with_overrides(RunConfig(), {"episodes.agents": 3})
        with pytest.raises(ConfigError, match="no group"):
            with_overrides(RunConfig(), {"sampling.n_samples": 3})


class TestHashAndEcho:
    def test_hash_stable_and_sensitive(self):
        a = config_hash(RunConfig())
        assert a == config_hash(RunConfig())
        assert len(a) == 16
        b = config_hash(with_overrides(RunConfig(), {"seed": 1}))
        assert a != b

    def test_resolved_echo_round_trips(self, tmp_path):
        cfg = with_overrides(RunConfig(), {"train.epochs": 3, "eval.horizons": [5, 10]})
        path = save_resolved(cfg, tmp_path / "run")
        assert path.name == "config.yaml"
        assert load_config(path) == cfg
        # every field is written explicitly
        data = yaml.safe_load(path.read_text())
        assert data["train"]["learning_rate"] == pytest.approx(2e-4)
