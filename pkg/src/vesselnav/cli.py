"""Command-line interface.

Subcommands: gen-map, plan-cache, train, eval, compare, rollout.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import harness, tinynn
from .config import ExperimentConfig, load_config
from .grid_env import generate_map, load_map, save_map
from .planner import build_planning_graph, floyd_all_pairs, make_plan, save_plan_cache


def _parse_point(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected 'lon,lat', got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'lon,lat', got {text!r}") from None


def _load_experiment(config_path: str) -> harness.Experiment:
    cfg = load_config(config_path) if config_path else ExperimentConfig()
    return harness.Experiment(cfg)


def cmd_gen_map(args) -> int:
    grid = generate_map(
        args.seed,
        ncols=args.ncols,
        nrows=args.nrows,
        water_fraction=args.water_fraction,
        x_min=args.xll,
        y_min=args.yll,
        cell_size=args.cellsize,
        feature_cells=args.feature_cells,
    )
    save_map(grid, args.out)
    water = int(np.count_nonzero(~grid.land))
    print(f"wrote {args.out}: {grid.transform.ncols}x{grid.transform.nrows} cells, {water} water")
    return 0


def cmd_plan_cache(args) -> int:
    grid = load_map(args.map)
    graph = build_planning_graph(grid, args.downsample)
    matrix = floyd_all_pairs(graph)
    save_plan_cache(args.out, matrix, grid.content_hash())
    print(f"wrote {args.out}: {graph.n_nodes} nodes (downsample {args.downsample})")
    return 0


def cmd_train(args) -> int:
    exp = _load_experiment(args.config)
    csv_path = exp.run_training()
    print(f"wrote {csv_path}")
    return 0


def cmd_eval(args) -> int:
    exp = _load_experiment(args.config)
    cfg = exp.cfg
    net = tinynn.load_checkpoint(args.checkpoint, expected_descriptor=exp.descriptor_for(cfg.agent))
    records = []
    for bi, bucket in enumerate(cfg.eval_buckets):
        seed = harness.derive_seed(cfg.run_master_seed, 2, 0, bi)
        rec = exp.evaluate(cfg.agent, net, bucket, cfg.eval_tests, seed)
        records.append(rec)
        print(f"bucket={bucket:g} trials={rec.trials} successes={rec.successes} ratd={rec.ratd:.2f}")
    out_dir = Path(cfg.run_output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "eval.csv"
    harness.write_metrics_csv(out_path, records)
    print(f"wrote {out_path}")
    return 0


def cmd_compare(args) -> int:
    exp = _load_experiment(args.config)
    cfg = exp.cfg
    vvn_net = tinynn.load_checkpoint(args.vvn_ckpt, expected_descriptor=exp.vvn_descriptor())
    vnplv_net = tinynn.load_checkpoint(args.vnplv_ckpt, expected_descriptor=exp.vnplv_descriptor())
    records, footers = exp.run_comparison(("vvn", vvn_net), ("vnplv", vnplv_net))
    out_dir = Path(cfg.run_output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "compare.csv"
    harness.write_compare_csv(out_path, records, footers)
    for f in footers:
        if f["p_value"] is None:
            print(f"bucket={f['bucket']} welch: degenerate ({f['note']})")
        else:
            print(f"bucket={f['bucket']} t={f['t_stat']:.4f} p={f['p_value']:.3g}")
    print(f"wrote {out_path}")
    return 0


def cmd_rollout(args) -> int:
    exp = _load_experiment(args.config)
    cfg = exp.cfg
    net = tinynn.load_checkpoint(args.checkpoint, expected_descriptor=exp.descriptor_for(cfg.agent))
    field = exp.spawn_obstacles(args.obstacle_seed)
    if cfg.agent == "vnplv":
        plan = make_plan(exp.grid, exp.matrix, args.origin, args.dest, epsilon=cfg.planner_epsilon)
        waypoints = " -> ".join(f"({x:.5f},{y:.5f})" for x, y in plan.waypoints)
        print(f"plan: {len(plan.waypoints)} waypoints: {waypoints}")

    step_counter = [0]

    def on_transition(transition, result):
        step_counter[0] += 1
        x, y = result.next_state.position
        print(
            f"step={step_counter[0]:4d} action={_action_name(transition.action)} "
            f"outcome={result.outcome.value} reward={result.reward:+.4f} pos=({x:.5f},{y:.5f})"
        )

    result = exp.rollout(
        cfg.agent,
        net,
        args.origin,
        args.dest,
        field,
        explore_prob=0.0,
        rng=np.random.default_rng(0),
        on_transition=on_transition,
    )
    status = "SUCCESS" if result.success else "FAILED"
    print(f"{status}: {result.steps} steps, outcomes: {[o.value for o in result.episode_outcomes]}")
    return 0


def _action_name(index: int) -> str:
    from .grid_env import Action

    return Action(index).name


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="vesselnav", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-map", help="generate a procedural coastline map")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--water-fraction", type=float, default=0.85)
    p.add_argument("--out", required=True)
    p.add_argument("--ncols", type=int, default=100)
    p.add_argument("--nrows", type=int, default=75)
    p.add_argument("--xll", type=float, default=-63.69)
    p.add_argument("--yll", type=float, default=44.58)
    p.add_argument("--cellsize", type=float, default=0.001)
    p.add_argument("--feature-cells", type=int, default=16)
    p.set_defaults(func=cmd_gen_map)

    p = sub.add_parser("plan-cache", help="precompute all-pairs shortest paths for a map")
    p.add_argument("--map", required=True)
    p.add_argument("--downsample", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plan_cache)

    p = sub.add_parser("train", help="run the training loop from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint over all buckets")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="compare trained vvn and vnplv checkpoints")
    p.add_argument("--config", required=True)
    p.add_argument("--vvn-ckpt", required=True)
    p.add_argument("--vnplv-ckpt", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("rollout", help="print the step/outcome trace of one mission")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--origin", type=_parse_point, required=True)
    p.add_argument("--dest", type=_parse_point, required=True)
    p.add_argument("--obstacle-seed", type=int, default=0)
    p.set_defaults(func=cmd_rollout)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
