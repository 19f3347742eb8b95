"""Experiment configuration: a flat ``key = value`` text format.

Every key has a default; unknown keys are errors. Values are plain scalars,
strings, or comma-separated float lists. Blank lines and '#' comments are
allowed.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .grid_env import EnvConfig


class ConfigError(ValueError):
    pass


def _parse_bucket_list(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"bad float list: {text!r}") from None
    return values


def _parse_int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"bad int list: {text!r}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    # map source: load from path when set, otherwise generate procedurally
    map_path: str = ""
    map_seed: int = 7
    map_ncols: int = 100
    map_nrows: int = 75
    map_water_fraction: float = 0.85
    map_x_min: float = -63.69
    map_y_min: float = 44.58
    map_cell_size: float = 0.001
    map_feature_cells: int = 16
    map_downsample: int = 4
    map_plan_cache: str = ""  # optional cache file: loaded if present, else written

    obstacle_density: float = 50.0  # vessels per square degree of water
    obstacle_speed: float = 0.001

    agent: str = "vnplv"

    reward_delta_d_mode: str = "progress"
    reward_delta_od_mode: str = "approach"
    env_step_length: float = 0.001
    env_arrival_radius: float = 0.001
    env_collision_radius: float = 0.001
    env_vanish_margin: float = 0.02
    env_max_steps_factor: float = 4.0

    localview_size: int = 33
    localview_margin: int = 3
    planner_epsilon: float = 0.001

    net_vvn_hidden: tuple[int, ...] = (64, 64)
    net_conv_channels: tuple[int, ...] = (16, 32)
    net_conv_kernels: tuple[int, ...] = (3, 3)
    net_conv_strides: tuple[int, ...] = (2, 2)
    net_dense_hidden: int = 128

    train_gamma: float = 0.99
    train_learning_rate: float = 1e-3
    train_batch_size: int = 3_000
    train_learn_every: int = 100
    train_sync_every: int = 200
    train_buffer_capacity: int = 100_000
    train_huber_delta: float = 1.0
    train_optimizer: str = "adam"
    train_epsilon_start: float = 0.9
    train_epsilon_end: float = 0.1
    train_epsilon_anneal_steps: int = 25_000

    eval_buckets: tuple[float, ...] = (0.01, 0.02, 0.04, 0.08, 0.16, 0.32)
    eval_tests: int = 100
    eval_compare_seeds: int = 5

    run_rounds: int = 10
    run_episodes_per_round: int = 1_000
    run_output_dir: str = "runs"
    run_master_seed: int = 0

    def __post_init__(self) -> None:
        if self.agent not in ("vvn", "vnplv"):
            raise ConfigError(f"agent must be 'vvn' or 'vnplv', got {self.agent!r}")
        if not self.eval_buckets:
            raise ConfigError("eval.buckets must be non-empty")
        if any(b <= 0 for b in self.eval_buckets):
            raise ConfigError("eval.buckets must be positive")
        if any(a >= b for a, b in zip(self.eval_buckets, self.eval_buckets[1:])):
            raise ConfigError("eval.buckets must be strictly increasing")
        if self.eval_tests < 1:
            raise ConfigError("eval.tests must be >= 1")
        if self.run_rounds < 0:
            raise ConfigError("run.rounds must be >= 0")
        if self.run_episodes_per_round < 1:
            raise ConfigError("run.episodes_per_round must be >= 1")
        if self.eval_compare_seeds < 2:
            raise ConfigError("eval.compare_seeds must be >= 2")

    def env_config(self) -> EnvConfig:
        return EnvConfig(
            step_length=self.env_step_length,
            arrival_radius=self.env_arrival_radius,
            collision_radius=self.env_collision_radius,
            vanish_margin=self.env_vanish_margin,
            max_steps_factor=self.env_max_steps_factor,
            delta_d_mode=self.reward_delta_d_mode,
            delta_od_mode=self.reward_delta_od_mode,
        )


# config-file key -> (dataclass field, caster)
_KEYMAP: dict[str, tuple[str, object]] = {
    "map.path": ("map_path", str),
    "map.seed": ("map_seed", int),
    "map.ncols": ("map_ncols", int),
    "map.nrows": ("map_nrows", int),
    "map.water_fraction": ("map_water_fraction", float),
    "map.x_min": ("map_x_min", float),
    "map.y_min": ("map_y_min", float),
    "map.cell_size": ("map_cell_size", float),
    "map.feature_cells": ("map_feature_cells", int),
    "map.downsample": ("map_downsample", int),
    "map.plan_cache": ("map_plan_cache", str),
    "obstacles.density": ("obstacle_density", float),
    "obstacles.speed": ("obstacle_speed", float),
    "agent": ("agent", str),
    "reward.delta_d_mode": ("reward_delta_d_mode", str),
    "reward.delta_od_mode": ("reward_delta_od_mode", str),
    "env.step_length": ("env_step_length", float),
    "env.arrival_radius": ("env_arrival_radius", float),
    "env.collision_radius": ("env_collision_radius", float),
    "env.vanish_margin": ("env_vanish_margin", float),
    "env.max_steps_factor": ("env_max_steps_factor", float),
    "localview.size": ("localview_size", int),
    "localview.margin": ("localview_margin", int),
    "planner.epsilon": ("planner_epsilon", float),
    "net.vvn_hidden": ("net_vvn_hidden", _parse_int_list),
    "net.conv_channels": ("net_conv_channels", _parse_int_list),
    "net.conv_kernels": ("net_conv_kernels", _parse_int_list),
    "net.conv_strides": ("net_conv_strides", _parse_int_list),
    "net.dense_hidden": ("net_dense_hidden", int),
    "train.gamma": ("train_gamma", float),
    "train.learning_rate": ("train_learning_rate", float),
    "train.batch_size": ("train_batch_size", int),
    "train.learn_every": ("train_learn_every", int),
    "train.sync_every": ("train_sync_every", int),
    "train.buffer_capacity": ("train_buffer_capacity", int),
    "train.huber_delta": ("train_huber_delta", float),
    "train.optimizer": ("train_optimizer", str),
    "train.epsilon_start": ("train_epsilon_start", float),
    "train.epsilon_end": ("train_epsilon_end", float),
    "train.epsilon_anneal_steps": ("train_epsilon_anneal_steps", int),
    "eval.buckets": ("eval_buckets", _parse_bucket_list),
    "eval.tests": ("eval_tests", int),
    "eval.compare_seeds": ("eval_compare_seeds", int),
    "run.rounds": ("run_rounds", int),
    "run.episodes_per_round": ("run_episodes_per_round", int),
    "run.output_dir": ("run_output_dir", str),
    "run.master_seed": ("run_master_seed", int),
}


def parse_config_text(text: str, *, source: str = "<config>") -> ExperimentConfig:
    overrides: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEYMAP:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        field_name, caster = _KEYMAP[key]
        try:
            overrides[field_name] = caster(value)
        except ConfigError:
            raise
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {value!r}") from None
    try:
        return ExperimentConfig(**overrides)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), source=str(path))


def default_config() -> ExperimentConfig:
    return ExperimentConfig()
