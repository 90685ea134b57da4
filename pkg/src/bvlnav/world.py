"""Planar worlds: rectangles, landmarks, collision checks and RNP generators."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources

import numpy as np

from . import _kernels as K
from .models import LandmarkSet, make_state

SCHEMA_VERSION = 1
FAMILIES = ("InfoTrap", "ObsWall", "Forest")


class InfeasibleSpecError(ValueError):
    pass


class InfeasibleEnvironmentError(RuntimeError):
    pass


@dataclass(frozen=True)
class Obstacle:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ValueError(f"degenerate obstacle {self}")

    def inflated(self, r: float) -> np.ndarray:
        return np.array([self.xmin - r, self.ymin - r, self.xmax + r, self.ymax + r])

    @property
    def center(self):
        return (0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))

    @property
    def area(self):
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)


@dataclass(frozen=True, eq=False)
class Environment:
    bounds: tuple
    obstacles: tuple
    landmarks: LandmarkSet
    start: np.ndarray = field(repr=False)
    goal: np.ndarray = field(repr=False)
    robot_radius: float = 0.2
    name: str = ""
    plan_margin: float = 0.15

    def __post_init__(self):
        object.__setattr__(self, "bounds", tuple(float(v) for v in self.bounds))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "start", np.asarray(self.start, dtype=float))
        object.__setattr__(self, "goal", np.asarray(self.goal, dtype=float))
        xmin, ymin, xmax, ymax = self.bounds
        if not (xmin < xmax and ymin < ymax):
            raise InfeasibleSpecError("degenerate bounds")
        lm = self.landmarks.positions
        if len(lm) and (lm[:, 0].min() < xmin or lm[:, 0].max() > xmax
                        or lm[:, 1].min() < ymin or lm[:, 1].max() > ymax):
            raise InfeasibleSpecError("landmarks must lie inside the bounds")
        if self.collides(self.start):
            raise InfeasibleSpecError("start state is in collision")
        if self.collides(self.goal):
            raise InfeasibleSpecError("goal state is in collision")

    @cached_property
    def rects(self) -> np.ndarray:
        if not self.obstacles:
            return np.zeros((0, 4))
        return np.stack([o.inflated(self.robot_radius) for o in self.obstacles])

    @cached_property
    def free_bounds(self) -> np.ndarray:
        r = self.robot_radius
        xmin, ymin, xmax, ymax = self.bounds
        return np.array([xmin + r, ymin + r, xmax - r, ymax - r])

    @cached_property
    def plan_rects(self) -> np.ndarray:
        """Obstacles grown by the planning margin, used for nodes, edges and visibility."""
        if not self.obstacles:
            return np.zeros((0, 4))
        return np.stack([o.inflated(self.robot_radius + self.plan_margin) for o in self.obstacles])

    @cached_property
    def plan_bounds(self) -> np.ndarray:
        r = self.plan_margin
        return self.free_bounds + np.array([r, r, -r, -r])

    def blocked(self, a, b=None) -> bool:
        """Like :meth:`collides` but against the margin-grown obstacles."""
        a = np.asarray(a, dtype=float)
        b = a if b is None else np.asarray(b, dtype=float)
        return bool(K.segment_collides(a[0], a[1], b[0], b[1], self.plan_rects, self.plan_bounds))

    def collides(self, a, b=None) -> bool:
        """Point test when ``b`` is None, otherwise a swept-segment test."""
        a = np.asarray(a, dtype=float)
        b = a if b is None else np.asarray(b, dtype=float)
        return bool(K.segment_collides(a[0], a[1], b[0], b[1], self.rects, self.free_bounds))

    # serialization

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "bounds": list(self.bounds),
            "obstacles": [[o.xmin, o.ymin, o.xmax, o.ymax] for o in self.obstacles],
            "landmarks": [{"id": i, "x": float(p[0]), "y": float(p[1])}
                          for i, p in zip(self.landmarks.ids, self.landmarks.positions)],
            "start": [float(v) for v in self.start],
            "goal": [float(v) for v in self.goal],
            "robot_radius": self.robot_radius,
            "plan_margin": self.plan_margin,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Environment":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported environment schema {doc.get('schema_version')!r}")
        lms = doc["landmarks"]
        return cls(
            bounds=tuple(doc["bounds"]),
            obstacles=tuple(Obstacle(*o) for o in doc["obstacles"]),
            landmarks=LandmarkSet(tuple(l["id"] for l in lms), np.array([[l["x"], l["y"]] for l in lms]).reshape(-1, 2)),
            start=np.array(doc["start"]),
            goal=np.array(doc["goal"]),
            robot_radius=float(doc["robot_radius"]),
            name=doc.get("name", ""),
            plan_margin=float(doc.get("plan_margin", 0.15)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Environment":
        return cls.from_dict(json.loads(text))

    @cached_property
    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def collides(a, b, env: Environment) -> bool:
    return env.collides(a, b)


def sample_free_state(env: Environment, rng, max_rejections: int = 10_000) -> np.ndarray:
    """Uniform rejection sample over the free part of the bounds; uniform heading."""
    xmin, ymin, xmax, ymax = env.bounds
    for _ in range(max_rejections):
        x = rng.uniform(xmin, xmax)
        y = rng.uniform(ymin, ymax)
        if not env.collides((x, y)):
            return make_state(x, y, math.pi - rng.uniform(0.0, 2.0 * math.pi))
    raise InfeasibleEnvironmentError(f"{max_rejections} consecutive rejections while sampling free space")


@dataclass(frozen=True)
class RnpSpec:
    family: str
    e: float
    o: float
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InfeasibleSpecError(f"unknown RNP family {self.family!r}")
        if not self.e > 0 or self.o < 0:
            raise InfeasibleSpecError("RNP requires e > 0 and o >= 0")

    @property
    def label(self) -> str:
        return f"RNP_{self.family}({self.e:g},{self.o:g})"


def load_geometry(path=None) -> dict:
    if path is None:
        text = resources.files("bvlnav").joinpath("configs/rnp_geometry.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return json.loads(text)


def generate_rnp(spec: RnpSpec, geometry: dict | None = None) -> Environment:
    geo = load_geometry() if geometry is None else geometry
    builder = {"InfoTrap": _info_trap, "ObsWall": _obs_wall, "Forest": _forest}[spec.family]
    bounds, obstacles, landmarks, start, goal = builder(spec, geo[spec.family], geo["robot_radius"])
    try:
        return Environment(bounds, tuple(obstacles), LandmarkSet.from_points(landmarks), start, goal,
                           robot_radius=geo["robot_radius"], name=spec.label)
    except InfeasibleSpecError as exc:
        raise InfeasibleSpecError(f"{spec.label}: {exc}") from None


def _info_trap(spec, g, radius):
    e, o = float(spec.e), float(spec.o)
    half_gap = 0.5 * g["passage_width"]
    x0, x1 = 0.5 * e - 0.5 * o, 0.5 * e + 0.5 * o
    if o <= 0 or x0 - radius - g["min_clearance"] < g["start_inset"] or g["passage_width"] <= 2 * radius:
        raise InfeasibleSpecError(f"{spec.label}: no room for start/goal around the passage")
    obstacles = [Obstacle(x0, 0.0, x1, 0.5 * e - half_gap), Obstacle(x0, 0.5 * e + half_gap, x1, e)]
    n = g["n_landmarks"]
    landmarks = [((i + 0.5) * e / n, e - g["landmark_inset"]) for i in range(n)]
    start = make_state(g["start_inset"], 0.5 * e, 0.0)
    goal = make_state(e - g["goal_inset"], 0.5 * e, 0.0)
    return (0.0, 0.0, e, e), obstacles, landmarks, start, goal


def _obs_wall(spec, g, radius):
    e, o = float(spec.e), float(spec.o)
    t = g["wall_thickness"]
    if o > e - 2 * (radius + g["min_gap"]):
        raise InfeasibleSpecError(f"{spec.label}: wall leaves no corridor")
    obstacles = []
    if o > 0:
        obstacles.append(Obstacle(0.5 * e - 0.5 * t, 0.5 * e - 0.5 * o, 0.5 * e + 0.5 * t, 0.5 * e + 0.5 * o))
    s = g["landmark_spacing"]
    ticks = np.arange(0.5 * s, e, s)
    landmarks = [(x, y) for y in ticks for x in ticks]
    start = make_state(g["start_inset"], 0.5 * e, 0.0)
    goal = make_state(e - g["goal_inset"], 0.5 * e, 0.0)
    return (0.0, 0.0, e, e), obstacles, landmarks, start, goal


def _forest(spec, g, radius):
    e, o = float(spec.e), int(spec.o)
    rng = np.random.default_rng(spec.seed)
    n = math.ceil(math.sqrt(o)) if o > 0 else 0
    side, jit = g["obstacle_side"], g["jitter"]
    obstacles = []
    if n:
        spacing = e / (n + 1)
        if spacing - side - 2 * jit <= 2 * radius:
            raise InfeasibleSpecError(f"{spec.label}: obstacles too dense to leave corridors")
        offsets = rng.uniform(-jit, jit, size=(n * n, 2))
        for idx in range(o):
            i, j = divmod(idx, n)
            cx = (j + 1) * spacing + offsets[idx, 0]
            cy = (i + 1) * spacing + offsets[idx, 1]
            obstacles.append(Obstacle(cx - 0.5 * side, cy - 0.5 * side, cx + 0.5 * side, cy + 0.5 * side))
    m = g["n_landmarks_per_axis"]
    cell = e / m
    cells = np.array([(j, i) for i in range(m) for j in range(m)], dtype=float)
    start = make_state(g["start_inset"], g["start_inset"], math.pi / 4)
    goal = make_state(e - g["goal_inset"], e - g["goal_inset"], math.pi / 4)
    r = g["coverage_radius"]
    for _ in range(1000):
        landmarks = (cells + rng.uniform(0.0, 1.0, size=cells.shape)) * cell
        # both ends must be localizable from at least two landmarks
        if all(np.sum(np.hypot(*(landmarks - p[:2]).T) <= r) >= 2 for p in (start, goal)):
            break
    else:
        raise InfeasibleSpecError(f"{spec.label}: no landmark draw covers start and goal")
    return (0.0, 0.0, e, e), obstacles, [tuple(p) for p in landmarks], start, goal
