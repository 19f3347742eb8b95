from __future__ import annotations

import pytest

from vesselnav.config import ConfigError, ExperimentConfig, load_config, parse_config_text


def test_defaults_match_training_protocol():
    cfg = ExperimentConfig()
    assert cfg.train_batch_size == 3_000
    assert cfg.train_learn_every == 100
    assert cfg.train_sync_every == 200
    assert cfg.train_buffer_capacity == 100_000
    assert cfg.train_epsilon_start == 0.9
    assert cfg.train_epsilon_end == 0.1
    assert cfg.train_epsilon_anneal_steps == 25_000
    assert cfg.eval_buckets == (0.01, 0.02, 0.04, 0.08, 0.16, 0.32)
    assert cfg.eval_tests == 100
    assert cfg.run_episodes_per_round == 1_000
    assert cfg.localview_margin == 3
    assert cfg.planner_epsilon == 0.001
    assert cfg.env_step_length == 0.001


def test_parse_overrides_and_comments():
    cfg = parse_config_text(
        """
        # fixture profile
        agent = vvn
        train.batch_size = 64
        eval.buckets = 0.01, 0.02
        localview.size = 15
        net.vvn_hidden = 32,32
        """
    )
    assert cfg.agent == "vvn"
    assert cfg.train_batch_size == 64
    assert cfg.eval_buckets == (0.01, 0.02)
    assert cfg.localview_size == 15
    assert cfg.net_vvn_hidden == (32, 32)


def test_unknown_key_is_error():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config_text("mystery.knob = 3")


def test_bad_value_reports_line():
    with pytest.raises(ConfigError, match=":2"):
        parse_config_text("agent = vvn\ntrain.batch_size = many")


def test_missing_equals_is_error():
    with pytest.raises(ConfigError, match="key = value"):
        parse_config_text("agent vvn")


def test_bucket_validation():
    with pytest.raises(ConfigError, match="strictly increasing"):
        parse_config_text("eval.buckets = 0.02, 0.01")
    with pytest.raises(ConfigError, match="positive"):
        parse_config_text("eval.buckets = -0.01, 0.02")


def test_agent_validation():
    with pytest.raises(ConfigError, match="agent"):
        parse_config_text("agent = teleporter")


def test_load_config_round_trip(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("run.master_seed = 99\nrun.rounds = 2\n", encoding="utf-8")
    cfg = load_config(path)
    assert cfg.run_master_seed == 99
    assert cfg.run_rounds == 2
