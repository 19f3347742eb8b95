"""Experiment orchestration: seeding, training loops, the distance-bucket
arrival-rate evaluation, Welch's t-test, and CSV metrics.

Every run is reproducible from its master seed: all randomness flows through
seeds derived with numpy SeedSequence from (master seed, stream tags), and
results are merged in deterministic order, so reruns produce byte-identical
CSV files and checkpoints.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dqn, tinynn
from .agents import RolloutResult, run_vnplv_plan, run_vvn_episode
from .config import ExperimentConfig
from .grid_env import (
    GridMap,
    NavEnv,
    ObstacleField,
    distance,
    generate_map,
    load_map,
    make_episode_spec,
)
from .planner import (
    NextHopMatrix,
    build_planning_graph,
    floyd_all_pairs,
    load_plan_cache,
    make_plan,
    save_plan_cache,
)

METRICS_COLUMNS = ["round", "bucket_deg", "trials", "successes", "ratd", "seed", "agent"]
COMPARE_COLUMNS = METRICS_COLUMNS + ["t_stat", "p_value"]

# stream tags for seed derivation
_SEED_NET = 0
_SEED_TRAIN = 1
_SEED_EVAL = 2
_SEED_OBSTACLE = 3
_SEED_COMPARE = 4


class NoValidPairError(RuntimeError):
    """Rejection sampling could not find an origin-destination pair."""


def derive_seed(*parts: int) -> int:
    """Deterministic child seed from integer parts (SeedSequence hashing)."""
    return int(np.random.SeedSequence(tuple(parts)).generate_state(1, np.uint64)[0])


def ratd(successes: int, trials: int) -> float:
    """Rate of arrival to destination, in percent."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not 0 <= successes <= trials:
        raise ValueError("successes must be in [0, trials]")
    return 100.0 * successes / trials


@dataclass(frozen=True)
class EvaluationRecord:
    round_index: int
    bucket: float
    trials: int
    successes: int
    ratd: float
    seed: int
    agent: str


def sample_od_pair(
    grid: GridMap,
    matrix: NextHopMatrix,
    bucket: float,
    rng: np.random.Generator,
    *,
    tolerance: float = 0.1,
    max_tries: int = 10_000,
    water_cells: np.ndarray | None = None,
) -> tuple[tuple[float, float], tuple[float, float]]:
    """Random water pair, mutually reachable on the planning graph, with
    separation within bucket +- tolerance. Cell-center positions."""
    if bucket <= 0:
        raise ValueError("bucket must be > 0")
    if water_cells is None:
        water_cells = grid.water_cell_indices()
    graph = matrix.graph
    lo, hi = bucket * (1.0 - tolerance), bucket * (1.0 + tolerance)
    for _ in range(max_tries):
        r, c = water_cells[int(rng.integers(len(water_cells)))]
        origin = grid.transform.cell_center(int(r), int(c))
        i = graph.node_at(origin, grid)
        if i is None:
            continue
        angle = rng.uniform(0.0, 2.0 * math.pi)
        radius = rng.uniform(lo, hi)
        probe = (origin[0] + radius * math.cos(angle), origin[1] + radius * math.sin(angle))
        idx = grid.transform.cell_index(probe)
        if idx is None or grid.land[idx]:
            continue
        dest = grid.transform.cell_center(*idx)
        d = distance(origin, dest)
        if not lo <= d <= hi:
            continue
        j = graph.node_at(dest, grid)
        if j is None or not matrix.reachable(i, j):
            continue
        return origin, dest
    raise NoValidPairError(
        f"no valid origin-destination pair for bucket {bucket:g} after {max_tries} tries"
    )


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (Lentz's method)."""
    max_iter = 300
    eps = 3e-16
    fpmin = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf(t: float, df: float) -> float:
    """P(T > t) for Student's t with df degrees of freedom."""
    if df <= 0:
        raise ValueError("df must be > 0")
    x = df / (df + t * t)
    tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, x)
    return tail if t >= 0 else 1.0 - tail


def welch_t_test(a: list[float], b: list[float]) -> tuple[float, float]:
    """Welch's unequal-variance t statistic and two-sided p value."""
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least 2 values")
    xa = np.asarray(a, dtype=np.float64)
    xb = np.asarray(b, dtype=np.float64)
    va = float(xa.var(ddof=1))
    vb = float(xb.var(ddof=1))
    if va == 0.0 and vb == 0.0:
        raise ValueError("degenerate samples: both variances are zero")
    sa, sb = va / len(xa), vb / len(xb)
    t = (float(xa.mean()) - float(xb.mean())) / math.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (sa * sa / (len(xa) - 1) + sb * sb / (len(xb) - 1))
    p = 2.0 * student_t_sf(abs(t), df)
    return t, min(p, 1.0)


class Experiment:
    """A configured map + planner + evaluation context."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        if cfg.map_path:
            self.grid = load_map(cfg.map_path)
        else:
            self.grid = generate_map(
                cfg.map_seed,
                ncols=cfg.map_ncols,
                nrows=cfg.map_nrows,
                water_fraction=cfg.map_water_fraction,
                x_min=cfg.map_x_min,
                y_min=cfg.map_y_min,
                cell_size=cfg.map_cell_size,
                feature_cells=cfg.map_feature_cells,
            )
        self.env_cfg = cfg.env_config()
        self.graph = build_planning_graph(self.grid, cfg.map_downsample)
        map_hash = self.grid.content_hash()
        cache = cfg.map_plan_cache
        if cache and Path(cache).exists():
            self.matrix = load_plan_cache(cache, self.graph, map_hash)
        else:
            self.matrix = floyd_all_pairs(self.graph)
            if cache:
                save_plan_cache(cache, self.matrix, map_hash)
        self._water_cells = self.grid.water_cell_indices()

    # -- networks ---------------------------------------------------------

    def vvn_descriptor(self) -> str:
        dims = [4, *self.cfg.net_vvn_hidden, dqn.N_ACTIONS]
        tokens = []
        for i in range(len(dims) - 1):
            tokens.append(f"dense:{dims[i]}:{dims[i + 1]}")
            if i < len(dims) - 2:
                tokens.append("relu")
        return "|".join(tokens)

    def vnplv_descriptor(self) -> str:
        cfg = self.cfg
        h = cfg.localview_size
        in_ch = 3
        tokens = []
        for out_ch, k, s in zip(cfg.net_conv_channels, cfg.net_conv_kernels, cfg.net_conv_strides):
            tokens += [f"conv:{in_ch}:{out_ch}:{k}:{s}", "relu"]
            h = (h - k) // s + 1
            if h < 1:
                raise ValueError("conv stack reduces the local view below 1x1")
            in_ch = out_ch
        tokens.append("flatten")
        feat = in_ch * h * h
        tokens += [f"dense:{feat}:{cfg.net_dense_hidden}", "relu"]
        tokens.append(f"dense:{cfg.net_dense_hidden}:{dqn.N_ACTIONS}")
        return "|".join(tokens)

    def descriptor_for(self, kind: str) -> str:
        if kind == "vvn":
            return self.vvn_descriptor()
        if kind == "vnplv":
            return self.vnplv_descriptor()
        raise ValueError(f"unknown agent kind {kind!r}")

    def new_network(self, kind: str, seed: int) -> tinynn.Network:
        return tinynn.network_from_descriptor(self.descriptor_for(kind), seed=seed)

    # -- rollouts ----------------------------------------------------------

    def spawn_obstacles(self, seed: int) -> ObstacleField:
        return ObstacleField.spawn(
            self.grid, self.cfg.obstacle_density, seed, speed=self.cfg.obstacle_speed
        )

    def rollout(
        self,
        kind: str,
        net: tinynn.Network,
        origin,
        destination,
        obstacles: ObstacleField,
        *,
        explore_prob=0.0,
        rng: np.random.Generator,
        on_transition=None,
        env: NavEnv | None = None,
    ) -> RolloutResult:
        if env is None:
            env = NavEnv(self.grid, self.env_cfg)
        if kind == "vvn":
            spec = make_episode_spec(
                origin,
                destination,
                step_length=self.env_cfg.step_length,
                factor=self.env_cfg.max_steps_factor,
            )
            return run_vvn_episode(
                env, net, spec, obstacles, explore_prob=explore_prob, rng=rng, on_transition=on_transition
            )
        plan = make_plan(self.grid, self.matrix, origin, destination, epsilon=self.cfg.planner_epsilon)
        return run_vnplv_plan(
            env,
            net,
            plan,
            obstacles,
            view_size=self.cfg.localview_size,
            margin=self.cfg.localview_margin,
            explore_prob=explore_prob,
            rng=rng,
            on_transition=on_transition,
        )

    # -- evaluation --------------------------------------------------------

    def evaluate(
        self,
        kind: str,
        net: tinynn.Network,
        bucket: float,
        n_tests: int,
        seed: int,
        *,
        round_index: int = 0,
    ) -> EvaluationRecord:
        """n_tests greedy episodes/plans with fresh obstacle layouts."""
        rng = np.random.default_rng(seed)
        env = NavEnv(self.grid, self.env_cfg)
        successes = 0
        for _ in range(n_tests):
            obstacle_seed = int(rng.integers(0, 2**63))
            origin, dest = sample_od_pair(
                self.grid, self.matrix, bucket, rng, water_cells=self._water_cells
            )
            field = self.spawn_obstacles(obstacle_seed)
            result = self.rollout(kind, net, origin, dest, field, explore_prob=0.0, rng=rng, env=env)
            successes += int(result.success)
        return EvaluationRecord(
            round_index=round_index,
            bucket=bucket,
            trials=n_tests,
            successes=successes,
            ratd=ratd(successes, n_tests),
            seed=seed,
            agent=kind,
        )

    def _evaluate_all_buckets(self, kind, net, round_index: int) -> list[EvaluationRecord]:
        records = []
        for bi, bucket in enumerate(self.cfg.eval_buckets):
            seed = derive_seed(self.cfg.run_master_seed, _SEED_EVAL, round_index, bi)
            records.append(
                self.evaluate(kind, net, bucket, self.cfg.eval_tests, seed, round_index=round_index)
            )
        return records

    # -- training ----------------------------------------------------------

    def run_training(self) -> Path:
        """Alternate training rounds with full-bucket evaluations.

        Writes metrics.csv plus one checkpoint per round (and a final
        checkpoint.ckpt) into the output directory.
        """
        cfg = self.cfg
        out_dir = Path(cfg.run_output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        master = cfg.run_master_seed
        kind = cfg.agent

        net = self.new_network(kind, derive_seed(master, _SEED_NET, 0))
        trainer = dqn.Trainer(
            net,
            dqn.TrainerConfig(
                gamma=cfg.train_gamma,
                batch_size=cfg.train_batch_size,
                learn_every=cfg.train_learn_every,
                sync_every=cfg.train_sync_every,
                learning_rate=cfg.train_learning_rate,
                seed=derive_seed(master, _SEED_NET, 1),
                buffer_capacity=cfg.train_buffer_capacity,
                huber_delta=cfg.train_huber_delta,
                optimizer=cfg.train_optimizer,
            ),
            dqn.EpsilonSchedule(
                start_explore=cfg.train_epsilon_start,
                end_explore=cfg.train_epsilon_end,
                anneal_steps=cfg.train_epsilon_anneal_steps,
            ),
        )
        explore_rng = np.random.default_rng(derive_seed(master, _SEED_TRAIN, 0))
        sample_rng = np.random.default_rng(derive_seed(master, _SEED_TRAIN, 1))
        env = NavEnv(self.grid, self.env_cfg)

        driver = _TrainDriver(trainer)
        records = self._evaluate_all_buckets(kind, net, round_index=0)
        for round_index in range(1, cfg.run_rounds + 1):
            for episode in range(cfg.run_episodes_per_round):
                bucket = cfg.eval_buckets[int(sample_rng.integers(len(cfg.eval_buckets)))]
                origin, dest = sample_od_pair(
                    self.grid, self.matrix, bucket, sample_rng, water_cells=self._water_cells
                )
                field = self.spawn_obstacles(derive_seed(master, _SEED_OBSTACLE, round_index, episode))
                self.rollout(
                    kind,
                    net,
                    origin,
                    dest,
                    field,
                    explore_prob=driver.explore_prob,
                    rng=explore_rng,
                    on_transition=driver.on_transition,
                    env=env,
                )
            records.extend(self._evaluate_all_buckets(kind, net, round_index=round_index))
            tinynn.save_checkpoint(net, out_dir / f"checkpoint_round_{round_index:03d}.ckpt")

        tinynn.save_checkpoint(net, out_dir / "checkpoint.ckpt")
        csv_path = out_dir / "metrics.csv"
        write_metrics_csv(csv_path, records)
        return csv_path

    # -- comparison --------------------------------------------------------

    def run_comparison(
        self,
        side_a: tuple[str, tinynn.Network],
        side_b: tuple[str, tinynn.Network],
    ) -> tuple[list[EvaluationRecord], list[dict]]:
        """Evaluate two agents over all buckets x repeat seeds.

        Both sides share evaluation seeds per (repeat, bucket), so identical
        agents produce identical records. Footers carry per-bucket Welch
        results plus a pooled 'all' row; degenerate tests are reported
        without a p value.
        """
        cfg = self.cfg
        records: list[EvaluationRecord] = []
        by_bucket: dict[float, tuple[list[float], list[float]]] = {
            b: ([], []) for b in cfg.eval_buckets
        }
        for repeat in range(cfg.eval_compare_seeds):
            for bi, bucket in enumerate(cfg.eval_buckets):
                seed = derive_seed(cfg.run_master_seed, _SEED_COMPARE, repeat, bi)
                for side_index, (kind, net) in enumerate((side_a, side_b)):
                    rec = self.evaluate(kind, net, bucket, cfg.eval_tests, seed, round_index=repeat)
                    records.append(rec)
                    by_bucket[bucket][side_index].append(rec.ratd)

        footers: list[dict] = []
        pooled_a: list[float] = []
        pooled_b: list[float] = []
        for bucket in cfg.eval_buckets:
            a, b = by_bucket[bucket]
            pooled_a.extend(a)
            pooled_b.extend(b)
            footers.append(_welch_footer(f"{bucket:g}", a, b))
        footers.append(_welch_footer("all", pooled_a, pooled_b))
        return records, footers


class _TrainDriver:
    """Glues rollouts to the trainer: counts environment steps, feeds the
    buffer, and fires the learn/sync cadence."""

    def __init__(self, trainer: dqn.Trainer):
        self.trainer = trainer
        self.env_step = 0

    def on_transition(self, transition, result) -> None:
        self.trainer.observe(transition)
        self.env_step += 1
        self.trainer.train_tick(self.env_step)

    def explore_prob(self) -> float:
        return self.trainer.epsilon(self.env_step)


def _welch_footer(label: str, a: list[float], b: list[float]) -> dict:
    try:
        t, p = welch_t_test(a, b)
        return {"bucket": label, "t_stat": t, "p_value": p, "note": ""}
    except ValueError as exc:
        return {"bucket": label, "t_stat": None, "p_value": None, "note": str(exc)}


def write_metrics_csv(path: str | Path, records: list[EvaluationRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for r in records:
            writer.writerow(
                [r.round_index, f"{r.bucket:g}", r.trials, r.successes, f"{r.ratd:.4f}", r.seed, r.agent]
            )


def write_compare_csv(path: str | Path, records: list[EvaluationRecord], footers: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARE_COLUMNS)
        for r in records:
            writer.writerow(
                [r.round_index, f"{r.bucket:g}", r.trials, r.successes, f"{r.ratd:.4f}", r.seed, r.agent, "", ""]
            )
        for f in footers:
            t = "" if f["t_stat"] is None else f"{f['t_stat']:.6g}"
            p = f["note"] or "" if f["p_value"] is None else f"{f['p_value']:.6g}"
            if f["p_value"] is None and f["note"]:
                p = "degenerate"
            writer.writerow(["", f["bucket"], "", "", "", "", "welch", t, p])


def run_training(cfg: ExperimentConfig) -> Path:
    return Experiment(cfg).run_training()
