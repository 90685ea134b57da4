"""Command line entry point: ``bvlnav {build-graph,run,sweep,score,env-export}``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .baselines import FirmInfeasibleError
from .beliefs import GaussianBelief
from .controllers import SynthesisError
from .experiment import (ConfigError, build_environment, build_graph_for, compute_scores, load_config,
                         read_metrics, run_experiment, run_sweep, scores_csv, summarize)
from .firm import GraphFormatError, neighbors_of_belief, save_graph
from .world import InfeasibleEnvironmentError, InfeasibleSpecError

logger = logging.getLogger("bvlnav")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 1, 2


def _config(args):
    if not args.config:
        raise ConfigError("--config is required")
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "runs", None) is not None:
        cfg = replace(cfg, runs=args.runs)
    if getattr(args, "planner", None):
        cfg = replace(cfg, planners=tuple(args.planner))
    return cfg


def cmd_build_graph(args) -> int:
    cfg = _config(args)
    env = build_environment(cfg)
    graph = build_graph_for(cfg, env)
    out = Path(args.out or "graph.json")
    if out.suffix != ".json":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "graph.json"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    save_graph(graph, out)
    b0 = GaussianBelief.create(env.start, list(cfg.P0))
    near = neighbors_of_belief(graph, b0, cfg.planner.k_neighbors, env)
    j_start = min((float(graph.J[j]) for j in near), default=float(graph.J_fail))
    print(f"{env.name}: {graph.n_nodes} nodes, {len(graph.edges)} edges, "
          f"J at start-adjacent node {j_start:.4f} -> {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    out = Path(args.out or "results")
    rows, logs, _ = run_experiment(cfg, out, graph_path=args.graph, jobs=args.jobs)
    for p, s in summarize(rows).items():
        cost = "n/a" if s["mean_cost"] is None else f"{s['mean_cost']:.3f} +- {s['std_cost']:.3f}"
        print(f"{p:10s} goal {s['goal']}/{s['runs']}  collisions {s['collisions']}  caps {s['caps']}  "
              f"P(collision) {s['collision_probability']:.3f}  cost {cost}")
    print(f"metrics -> {out / 'metrics.csv'}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    axis = args.axis or cfg.sweep.get("axis")
    values = args.values or cfg.sweep.get("values")
    if not axis or not values:
        raise ConfigError("sweep needs --axis and --values (or a 'sweep' section in the config)")
    out = Path(args.out or "sweep")
    rows = run_sweep(cfg, axis, [float(v) for v in values], out, jobs=args.jobs)
    print(f"{len(rows)} rows -> {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_score(args) -> int:
    path = Path(args.metrics or (Path(args.out or "results") / "metrics.csv"))
    if not path.exists():
        raise ConfigError(f"metrics file {path} not found")
    scores = compute_scores(read_metrics(path))
    text = scores_csv(scores)
    if args.out and Path(args.out).suffix == ".csv":
        Path(args.out).write_text(text, newline="")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_env_export(args) -> int:
    cfg = _config(args)
    env = build_environment(cfg)
    text = env.to_json()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + ("" if text.endswith("\n") else "\n"))
    else:
        sys.stdout.write(text + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bvlnav", description="Belief-space rover navigation experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seeds=True):
        p.add_argument("--config", help="experiment JSON (path, or name of a shipped config)")
        p.add_argument("--out", help="output file or directory")
        if seeds:
            p.add_argument("--seed", type=int, help="base seed (overrides config)")
            p.add_argument("--runs", type=int, help="episodes per planner (overrides config)")
            p.add_argument("--planner", action="append", help="planner name; repeatable")
            p.add_argument("--graph", help="prebuilt graph JSON for graph-based planners")
            p.add_argument("--jobs", type=int, default=1, help="parallel episodes")
        return p

    common(sub.add_parser("build-graph", help="build, evaluate and solve the roadmap")).set_defaults(fn=cmd_build_graph)
    common(sub.add_parser("run", help="run seeded episode batches")).set_defaults(fn=cmd_run)
    sw = common(sub.add_parser("sweep", help="run a batch per axis value"))
    sw.add_argument("--axis", choices=("obstacle_o", "firm_nodes"))
    sw.add_argument("--values", nargs="+")
    sw.set_defaults(fn=cmd_sweep)
    sc = sub.add_parser("score", help="safety and optimality scores from a metrics CSV")
    sc.add_argument("metrics", nargs="?")
    sc.add_argument("--out")
    sc.set_defaults(fn=cmd_score)
    common(sub.add_parser("env-export", help="write the environment JSON"), seeds=False).set_defaults(fn=cmd_env_export)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (InfeasibleSpecError, InfeasibleEnvironmentError, FirmInfeasibleError, SynthesisError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, GraphFormatError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
