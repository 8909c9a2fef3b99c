# elasticdb/tests/test_config.py
"""
Tests for settings loading, profiles, config files and validation.
"""

import pytest

from elasticdb.config import BenchConfig, ClusterConfig, cluster_config, load_config_file, settings, validate_config
from elasticdb.core.errors import ConfigError


class TestSettings:
    def test_desk_profile_loaded(self):
        assert isinstance(settings.cluster, ClusterConfig)
        assert isinstance(settings.bench, BenchConfig)
        assert settings.cluster.page_size == 4096
        assert settings.cluster.cc_engine in ("mvcc", "mgl")

    def test_segment_size(self):
        cfg = cluster_config(page_size=1024, pages_per_segment=8)
        assert cfg.segment_size == 8192

    def test_full_profile_overlays_desk(self):
        cfg = cluster_config("full")
        assert cfg.page_size == 8192
        assert cfg.record_size == settings.cluster.record_size

    def test_unknown_profile(self):
        with pytest.raises(ConfigError):
            cluster_config("nope")

    def test_overrides_win(self):
        assert cluster_config("full", page_size=2048).page_size == 2048


class TestValidation:
    def test_defaults_are_valid(self):
        assert validate_config(settings.cluster) is settings.cluster

    def test_every_problem_reported(self):
        cfg = cluster_config(page_size=-1, cc_engine="occ")
        with pytest.raises(ConfigError) as exc:
            validate_config(cfg)
        problems = " ".join(exc.value.problems)
        assert "page_size" in problems
        assert "cc_engine" in problems

    def test_threshold_order(self):
        with pytest.raises(ConfigError) as exc:
            validate_config(cluster_config(cpu_lower_threshold=0.9, cpu_upper_threshold=0.5))
        assert any("threshold" in p for p in exc.value.problems)

    def test_power_curve(self):
        with pytest.raises(ConfigError):
            validate_config(cluster_config(p_standby=30.0))

    def test_type_errors_become_config_errors(self):
        with pytest.raises(ConfigError):
            cluster_config(page_size="lots")


class TestConfigFile:
    def test_overlay(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# desk tweaks\npage_size = 8192\n\nrecord_size=64\n")
        cfg = load_config_file(path)
        assert cfg.page_size == 8192
        assert cfg.record_size == 64
        assert cfg.node_count == settings.cluster.node_count

    def test_unknown_field_and_bad_line(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("colour=blue\njust words\n")
        with pytest.raises(ConfigError) as exc:
            load_config_file(path)
        assert len(exc.value.problems) == 2
