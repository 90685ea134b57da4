"""Seeded experiment batches: configs, planner dispatch, metrics, scores and sweeps."""
from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import build_uniform_roadmap, firm_execute, ogr_plan_and_execute, urm_pomcp_plan_and_execute
from .beliefs import GaussianBelief
from .bvl import PlannerConfig, plan_and_execute
from .episode import EpisodeLog
from .firm import FirmConfig, build_firm, load_graph, save_graph
from .simulation import Models, RoverSimulator
from .world import RnpSpec, generate_rnp

logger = logging.getLogger(__name__)

PLANNERS = ("BVL", "URM-POMCP", "OGR", "FIRM")
GRAPH_PLANNERS = ("BVL", "OGR", "FIRM")
METRIC_FIELDS = ("planner", "env", "seed", "outcome", "steps", "total_cost", "sum_trace")
SWEEP_AXES = ("obstacle_o", "firm_nodes")
DEFAULT_MAX_STEPS = 20_000

CONFIG_DIR = Path(__file__).with_name("configs")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    env: RnpSpec
    models: Models = field(default_factory=Models)
    planners: tuple = ("BVL",)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    firm: FirmConfig = field(default_factory=FirmConfig)
    P0: tuple = (0.25, 0.25, 0.05)
    runs: int = 20
    seed: int = 0
    graph_seed: int = 0
    max_steps: int = DEFAULT_MAX_STEPS
    urm_spacing: float = 0.5
    n_og: int = 20
    sweep: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        unknown = [p for p in self.planners if p not in PLANNERS]
        if unknown or not self.planners:
            raise ConfigError(f"unknown planners {unknown}; choose from {PLANNERS}")
        if len(self.P0) != 3 or min(self.P0) <= 0:
            raise ConfigError("P0 must be three positive variances")

    @property
    def seeds(self) -> list:
        return [self.seed + i for i in range(self.runs)]

    def to_dict(self) -> dict:
        return {"name": self.name, "env": asdict(self.env), "models": self.models.to_dict(),
                "planners": list(self.planners), "planner": asdict(self.planner), "firm": asdict(self.firm),
                "P0": list(self.P0), "runs": self.runs, "seed": self.seed, "graph_seed": self.graph_seed,
                "max_steps": self.max_steps, "urm_spacing": self.urm_spacing, "n_og": self.n_og,
                "sweep": self.sweep}

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {"name", "env", "models", "planners", "planner", "firm", "P0", "runs", "seed", "graph_seed",
                 "max_steps", "urm_spacing", "n_og", "sweep"}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        if "env" not in doc:
            raise ConfigError("config needs an 'env' section")
        try:
            env = doc["env"]
            return cls(
                env=RnpSpec(env["family"], float(env["e"]), float(env["o"]), int(env.get("seed", 0))),
                models=Models.from_dict(doc.get("models")),
                planners=tuple(doc.get("planners", ("BVL",))),
                planner=PlannerConfig(**doc.get("planner", {})),
                firm=FirmConfig(**doc.get("firm", {})),
                P0=tuple(float(v) for v in doc.get("P0", (0.25, 0.25, 0.05))),
                runs=int(doc.get("runs", 20)),
                seed=int(doc.get("seed", 0)),
                graph_seed=int(doc.get("graph_seed", 0)),
                max_steps=int(doc.get("max_steps", DEFAULT_MAX_STEPS)),
                urm_spacing=float(doc.get("urm_spacing", 0.5)),
                n_og=int(doc.get("n_og", 20)),
                sweep=dict(doc.get("sweep", {})),
                name=str(doc.get("name", "")),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed config: {exc}") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        for cand in (CONFIG_DIR / path.name, CONFIG_DIR / f"{path.name}.json"):
            if cand.exists():
                path = cand
                break
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return ExperimentConfig.from_dict(doc)


def shipped_config(name: str) -> ExperimentConfig:
    """One of the packaged benchmark configs (``infotrap``, ``obswall``, ``forest``)."""
    return load_config(CONFIG_DIR / f"{name}.json")


# batches


def build_environment(cfg: ExperimentConfig):
    return generate_rnp(cfg.env)


def build_graph_for(cfg: ExperimentConfig, env=None):
    env = env or build_environment(cfg)
    return build_firm(env, cfg.firm, cfg.models, cfg.graph_seed)


class BatchContext:
    """Everything an episode needs, built once per process."""

    def __init__(self, cfg: ExperimentConfig, graph=None, graph_path=None):
        self.cfg = cfg
        self.env = build_environment(cfg)
        if graph is None and graph_path is not None:
            graph = load_graph(graph_path, self.env)
        if graph is None and any(p in GRAPH_PLANNERS for p in cfg.planners):
            graph = build_graph_for(cfg, self.env)
        self.graph = graph
        self.sim = RoverSimulator(self.env, graph.models if graph is not None else cfg.models)
        self._roadmap = None

    @property
    def roadmap(self):
        if self._roadmap is None:
            self._roadmap = build_uniform_roadmap(self.env, self.sim, self.cfg.urm_spacing, self.cfg.firm.epsilon)
        return self._roadmap

    @property
    def b0(self) -> GaussianBelief:
        return GaussianBelief.create(self.env.start, list(self.cfg.P0))

    def run_one(self, planner: str, seed: int) -> EpisodeLog:
        cfg = self.cfg
        if planner == "BVL":
            return plan_and_execute(self.b0, self.graph, self.env, cfg.planner, seed, cfg.max_steps, self.sim)
        if planner == "URM-POMCP":
            return urm_pomcp_plan_and_execute(self.b0, self.roadmap, self.env, cfg.planner, seed, self.sim,
                                              J_fail=cfg.firm.J_fail, max_steps=cfg.max_steps)
        if planner == "OGR":
            return ogr_plan_and_execute(self.b0, self.graph, self.env, cfg.planner, seed, self.sim,
                                        n_og=cfg.n_og, max_steps=cfg.max_steps)
        if planner == "FIRM":
            return firm_execute(self.b0, self.graph, self.env, seed, self.sim, max_steps=cfg.max_steps)
        raise ConfigError(f"unknown planner {planner!r}")

    def run_safe(self, planner: str, seed: int):
        t0 = time.perf_counter()
        try:
            log = self.run_one(planner, seed)
        except Exception as exc:  # recorded, the batch continues
            logger.exception("episode %s/%d failed", planner, seed)
            log = EpisodeLog(planner, self.env.name, seed, outcome="error")
            log.flags["error"] = f"{type(exc).__name__}: {exc}"
        return log, time.perf_counter() - t0


_WORKER = {}


def _init_worker(cfg_doc, graph_path):
    _WORKER["ctx"] = BatchContext(ExperimentConfig.from_dict(cfg_doc), graph_path=graph_path)


def _work(job):
    return job, _WORKER["ctx"].run_safe(*job)


def run_batch(cfg: ExperimentConfig, graph=None, graph_path=None, jobs: int = 1):
    """All (planner, seed) episodes, ordered by planner then seed."""
    jobs_list = [(p, s) for p in cfg.planners for s in cfg.seeds]
    if jobs <= 1 or len(jobs_list) == 1:
        ctx = BatchContext(cfg, graph, graph_path)
        results = {job: ctx.run_safe(*job) for job in jobs_list}
        return [(results[j][0], results[j][1]) for j in jobs_list], ctx
    ctx = BatchContext(cfg, graph, graph_path)
    tmp = None
    if ctx.graph is not None and graph_path is None:
        import tempfile
        fd, tmp = tempfile.mkstemp(suffix=".json")
        os.close(fd)
        save_graph(ctx.graph, tmp)
        graph_path = tmp
    try:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                                 initargs=(cfg.to_dict(), graph_path)) as pool:
            results = dict(pool.map(_work, jobs_list))
    finally:
        if tmp:
            os.unlink(tmp)
    return [results[j] for j in jobs_list], ctx


# metrics


def metrics_row(log: EpisodeLog) -> dict:
    return {"planner": log.planner, "env": log.env, "seed": log.seed, "outcome": log.outcome,
            "steps": log.n_steps, "total_cost": repr(float(log.total_cost)), "sum_trace": repr(float(log.sum_trace))}


def metrics_csv(rows, extra_fields=()) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(extra_fields) + list(METRIC_FIELDS), lineterminator="\r\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def read_metrics(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["seed"] = int(r["seed"])
        r["steps"] = int(r["steps"])
        r["total_cost"] = float(r["total_cost"])
        r["sum_trace"] = float(r["sum_trace"])
    return rows


def summarize(rows) -> dict:
    """Per-planner statistics; cost statistics use goal-reaching episodes only."""
    out = {}
    for p in sorted({r["planner"] for r in rows}):
        mine = [r for r in rows if r["planner"] == p]
        ok = [r for r in mine if r["outcome"] == "goal"]
        costs = np.array([float(r["total_cost"]) for r in ok])
        steps = np.array([int(r["steps"]) for r in ok])
        traces = np.array([float(r["sum_trace"]) for r in ok])
        n = len(mine)
        out[p] = {
            "runs": n,
            "goal": len(ok),
            "collisions": sum(r["outcome"] == "collision" for r in mine),
            "caps": sum(r["outcome"] == "cap" for r in mine),
            "errors": sum(r["outcome"] == "error" for r in mine),
            "collision_probability": sum(r["outcome"] == "collision" for r in mine) / n,
            "mean_cost": float(costs.mean()) if len(ok) else None,
            "std_cost": float(costs.std()) if len(ok) else None,
            "mean_steps": float(steps.mean()) if len(ok) else None,
            "median_steps_all": float(np.median([int(r["steps"]) for r in mine])),
            "mean_sum_trace": float(traces.mean()) if len(ok) else None,
        }
    return out


def compute_scores(rows) -> dict:
    """Safety and optimality scores in [0, 1] per planner.

    Safety is one minus the failure probability, where collisions, cap-outs
    and errors all count as failures.  Optimality divides the lowest mean
    goal-reaching cost over all planners by the planner's own; a planner
    with no successful episode scores 0 and is flagged.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("no metrics rows to score")
    stats = summarize(rows)
    means = {p: s["mean_cost"] for p, s in stats.items() if s["mean_cost"] is not None}
    best = min(means.values()) if means else None
    scores = {}
    for p, s in stats.items():
        failures = s["collisions"] + s["caps"] + s["errors"]
        flagged = s["mean_cost"] is None
        opt = 0.0 if flagged else (1.0 if s["mean_cost"] <= 0 else best / s["mean_cost"])
        scores[p] = {"safety": 1.0 - failures / s["runs"], "optimality": float(min(max(opt, 0.0), 1.0)),
                     "collision_probability": s["collision_probability"], "flagged": flagged}
    return scores


def scores_csv(scores: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["planner", "safety", "optimality", "collision_probability", "flagged"])
    for p in sorted(scores):
        s = scores[p]
        w.writerow([p, repr(s["safety"]), repr(s["optimality"]), repr(s["collision_probability"]), int(s["flagged"])])
    return buf.getvalue()


def write_outputs(results, out_dir, cfg: ExperimentConfig) -> list:
    out = Path(out_dir)
    (out / "logs").mkdir(parents=True, exist_ok=True)
    rows = []
    wall = io.StringIO()
    ww = csv.writer(wall, lineterminator="\r\n")
    ww.writerow(["planner", "seed", "wall_time_s"])
    for log, dt in results:
        rows.append(metrics_row(log))
        ww.writerow([log.planner, log.seed, f"{dt:.3f}"])
        (out / "logs" / f"{log.planner}_{log.seed}.jsonl").write_text(log.to_jsonl())
    (out / "metrics.csv").write_text(metrics_csv(rows), newline="")
    (out / "walltime.csv").write_text(wall.getvalue(), newline="")
    (out / "summary.json").write_text(json.dumps(summarize(rows), indent=1, sort_keys=True) + "\n")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
    return rows


def run_experiment(cfg: ExperimentConfig, out_dir=None, graph=None, graph_path=None, jobs: int = 1):
    results, ctx = run_batch(cfg, graph, graph_path, jobs)
    if out_dir is not None:
        rows = write_outputs(results, out_dir, cfg)
    else:
        rows = [metrics_row(log) for log, _ in results]
    return rows, [log for log, _ in results], ctx


def sweep_configs(cfg: ExperimentConfig, axis: str, values) -> list:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}")
    out = []
    for v in values:
        if axis == "obstacle_o":
            c = replace(cfg, env=replace(cfg.env, o=float(v)))
        else:
            c = replace(cfg, firm=replace(cfg.firm, n_nodes=int(v)))
        out.append((v, c))
    return out


def run_sweep(cfg: ExperimentConfig, axis: str, values, out_dir=None, jobs: int = 1):
    """Long-format rows with ``axis`` and ``value`` columns prepended."""
    rows = []
    for v, c in sweep_configs(cfg, axis, values):
        sub = None if out_dir is None else Path(out_dir) / f"{axis}={v:g}"
        try:
            cell, _, _ = run_experiment(c, sub, jobs=jobs)
        except Exception as exc:  # a failed cell does not stop the sweep
            logger.error("sweep cell %s=%s failed: %s", axis, v, exc)
            cell = [{"planner": p, "env": c.env.label, "seed": s, "outcome": "error", "steps": 0,
                     "total_cost": repr(0.0), "sum_trace": repr(0.0)} for p in c.planners for s in c.seeds]
        rows.extend({"axis": axis, "value": f"{v:g}", **r} for r in cell)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "sweep.csv").write_text(metrics_csv(rows, ("axis", "value")), newline="")
    return rows
