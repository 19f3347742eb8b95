"""Water/land grid world with dynamic vessel obstacles and 8-action kinematics.

Positions are (longitude, latitude) tuples in degrees. The map is a raster of
water/land cells with a geographic transform; anything outside the bounding
box counts as land. Every action displaces the agent by a fixed step length
along one of the eight compass directions, obstacles advance one motion tick,
and the step is classified into one of five outcomes that drive the reward.
"""
from __future__ import annotations

import hashlib
import math
from collections import deque
from dataclasses import dataclass, replace
from enum import Enum, IntEnum
from pathlib import Path

import numpy as np

Point = tuple[float, float]

STEP_LENGTH = 0.001  # degrees traveled per action

_SQRT_HALF = math.sqrt(0.5)


class Action(IntEnum):
    """Compass actions; index order is the network output order."""

    N = 0
    S = 1
    E = 2
    W = 3
    NE = 4
    NW = 5
    SE = 6
    SW = 7


# Unit direction vectors (dx, dy) per action; diagonals have Euclidean norm 1.
ACTION_UNIT: dict[Action, tuple[float, float]] = {
    Action.N: (0.0, 1.0),
    Action.S: (0.0, -1.0),
    Action.E: (1.0, 0.0),
    Action.W: (-1.0, 0.0),
    Action.NE: (_SQRT_HALF, _SQRT_HALF),
    Action.NW: (-_SQRT_HALF, _SQRT_HALF),
    Action.SE: (_SQRT_HALF, -_SQRT_HALF),
    Action.SW: (-_SQRT_HALF, -_SQRT_HALF),
}


class Outcome(Enum):
    HIT_OBSTACLE = "hit_obstacle"
    HIT_LAND = "hit_land"
    ARRIVE_TARGET = "arrive_target"
    VANISH_TARGET = "vanish_target"
    NORMAL_MOVEMENT = "normal_movement"


TERMINAL_FAIL_OUTCOMES = (Outcome.HIT_OBSTACLE, Outcome.HIT_LAND, Outcome.VANISH_TARGET)


def distance(a: Point, b: Point) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


class MapFormatError(ValueError):
    """Malformed map file; the message names the offending line."""


@dataclass(frozen=True)
class GeoTransform:
    """Geographic bounding box and cell size of a raster map.

    Column 0 is the western edge, row 0 the northern edge. Grid dimensions
    are round((extent)/cell_size) per axis.
    """

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    cell_size: float = 0.001

    def __post_init__(self) -> None:
        if not self.x_min < self.x_max:
            raise ValueError("x_min must be < x_max")
        if not self.y_min < self.y_max:
            raise ValueError("y_min must be < y_max")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be > 0")

    @property
    def ncols(self) -> int:
        return round((self.x_max - self.x_min) / self.cell_size)

    @property
    def nrows(self) -> int:
        return round((self.y_max - self.y_min) / self.cell_size)

    def cell_index_raw(self, point: Point) -> tuple[int, int]:
        """(row, col) of the cell containing point, without bounds checking."""
        col = math.floor((point[0] - self.x_min) / self.cell_size)
        row = math.floor((self.y_max - point[1]) / self.cell_size)
        return row, col

    def cell_index(self, point: Point) -> tuple[int, int] | None:
        row, col = self.cell_index_raw(point)
        if 0 <= row < self.nrows and 0 <= col < self.ncols:
            return row, col
        return None

    def cell_center(self, row: int, col: int) -> Point:
        x = self.x_min + (col + 0.5) * self.cell_size
        y = self.y_max - (row + 0.5) * self.cell_size
        return x, y


class GridMap:
    """Water/land occupancy raster. ``land`` is a (nrows, ncols) bool array."""

    def __init__(self, transform: GeoTransform, land: np.ndarray):
        land = np.asarray(land, dtype=bool)
        if land.shape != (transform.nrows, transform.ncols):
            raise ValueError(
                f"land array shape {land.shape} does not match transform "
                f"({transform.nrows}, {transform.ncols})"
            )
        self.transform = transform
        self.land = land

    def is_water(self, point: Point) -> bool:
        """Positions outside the bounding box are treated as land."""
        idx = self.transform.cell_index(point)
        return idx is not None and not self.land[idx]

    def water_cell_indices(self) -> np.ndarray:
        return np.argwhere(~self.land)

    def water_area_deg2(self) -> float:
        c = self.transform.cell_size
        return float(np.count_nonzero(~self.land)) * c * c

    def content_hash(self) -> int:
        """64-bit hash of cells plus transform, stable across runs."""
        h = hashlib.blake2b(digest_size=8)
        t = self.transform
        h.update(f"{t.x_min!r},{t.y_min!r},{t.x_max!r},{t.y_max!r},{t.cell_size!r}".encode())
        h.update(np.packbits(self.land).tobytes())
        return int.from_bytes(h.digest(), "little")


def load_map(path: str | Path) -> GridMap:
    """Parse the ASCII grid format: 5 header lines, then one row per line.

    Header keys in order: ncols, nrows, xll, yll, cellsize. Cells: '0' water,
    '1' land; row 0 is the northernmost.
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header_spec = [("ncols", int), ("nrows", int), ("xll", float), ("yll", float), ("cellsize", float)]
    values: dict[str, float] = {}
    for lineno, (key, caster) in enumerate(header_spec, start=1):
        if lineno > len(lines):
            raise MapFormatError(f"line {lineno}: missing header line '{key}'")
        parts = lines[lineno - 1].split()
        if len(parts) != 2 or parts[0] != key:
            raise MapFormatError(f"line {lineno}: expected '{key} <value>', got {lines[lineno - 1]!r}")
        try:
            values[key] = caster(parts[1])
        except ValueError:
            raise MapFormatError(f"line {lineno}: invalid value for '{key}': {parts[1]!r}") from None

    ncols, nrows = int(values["ncols"]), int(values["nrows"])
    cell = values["cellsize"]
    if ncols < 1 or nrows < 1:
        raise MapFormatError("line 1: ncols and nrows must be >= 1")
    if cell <= 0:
        raise MapFormatError("line 5: cellsize must be > 0")

    data_lines = lines[5:]
    if len(data_lines) < nrows:
        raise MapFormatError(f"line {5 + len(data_lines) + 1}: expected {nrows} data rows, got {len(data_lines)}")
    if len(data_lines) > nrows and any(s.strip() for s in data_lines[nrows:]):
        raise MapFormatError(f"line {5 + nrows + 1}: unexpected data beyond row {nrows}")

    land = np.zeros((nrows, ncols), dtype=bool)
    for r in range(nrows):
        lineno = 6 + r
        row = data_lines[r]
        if len(row) != ncols:
            raise MapFormatError(f"line {lineno}: expected {ncols} cells, got {len(row)}")
        for c, ch in enumerate(row):
            if ch == "1":
                land[r, c] = True
            elif ch != "0":
                raise MapFormatError(f"line {lineno}, column {c + 1}: invalid cell symbol {ch!r}")

    transform = GeoTransform(
        x_min=values["xll"],
        y_min=values["yll"],
        x_max=values["xll"] + ncols * cell,
        y_max=values["yll"] + nrows * cell,
        cell_size=cell,
    )
    return GridMap(transform, land)


def save_map(grid: GridMap, path: str | Path) -> None:
    t = grid.transform
    rows = ["".join("1" if v else "0" for v in row) for row in grid.land]
    text = (
        f"ncols {t.ncols}\nnrows {t.nrows}\nxll {t.x_min!r}\nyll {t.y_min!r}\n"
        f"cellsize {t.cell_size!r}\n" + "\n".join(rows) + "\n"
    )
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def _largest_water_component(water: np.ndarray) -> np.ndarray:
    """Keep only the largest 8-connected water component (BFS labelling)."""
    nrows, ncols = water.shape
    labels = np.full(water.shape, -1, dtype=np.int32)
    sizes: list[int] = []
    for r0 in range(nrows):
        for c0 in range(ncols):
            if not water[r0, c0] or labels[r0, c0] >= 0:
                continue
            label = len(sizes)
            size = 0
            queue = deque([(r0, c0)])
            labels[r0, c0] = label
            while queue:
                r, c = queue.popleft()
                size += 1
                for dr in (-1, 0, 1):
                    for dc in (-1, 0, 1):
                        rr, cc = r + dr, c + dc
                        if 0 <= rr < nrows and 0 <= cc < ncols and water[rr, cc] and labels[rr, cc] < 0:
                            labels[rr, cc] = label
                            queue.append((rr, cc))
            sizes.append(size)
    if not sizes:
        raise ValueError("generated map has no water cells")
    keep = int(np.argmax(sizes))  # ties resolve to the first-found component
    return labels == keep


def generate_map(
    seed: int,
    *,
    ncols: int = 100,
    nrows: int = 75,
    water_fraction: float = 0.85,
    x_min: float = -63.69,
    y_min: float = 44.58,
    cell_size: float = 0.001,
    feature_cells: int = 16,
) -> GridMap:
    """Procedural coastline map: smooth value noise thresholded at the
    requested water fraction, then flooded down to one 8-connected water body.
    Deterministic for a fixed seed.
    """
    if not 0.0 < water_fraction <= 1.0:
        raise ValueError("water_fraction must be in (0, 1]")
    if feature_cells < 1:
        raise ValueError("feature_cells must be >= 1")
    rng = np.random.default_rng(seed)

    gy = np.arange(nrows) / feature_cells
    gx = np.arange(ncols) / feature_cells
    lattice = rng.random((int(gy[-1]) + 2, int(gx[-1]) + 2))
    i0 = np.floor(gy).astype(int)
    j0 = np.floor(gx).astype(int)
    fy = (gy - i0)[:, None]
    fx = (gx - j0)[None, :]
    v00 = lattice[np.ix_(i0, j0)]
    v01 = lattice[np.ix_(i0, j0 + 1)]
    v10 = lattice[np.ix_(i0 + 1, j0)]
    v11 = lattice[np.ix_(i0 + 1, j0 + 1)]
    field = (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11)
    field = field + 0.08 * rng.random((nrows, ncols))  # fine-grain coastline texture

    threshold = np.quantile(field, 1.0 - water_fraction)
    water = field >= threshold
    water = _largest_water_component(water)

    transform = GeoTransform(
        x_min=x_min,
        y_min=y_min,
        x_max=x_min + ncols * cell_size,
        y_max=y_min + nrows * cell_size,
        cell_size=cell_size,
    )
    return GridMap(transform, ~water)


@dataclass(frozen=True)
class Obstacle:
    position: Point
    heading: Action
    speed: float  # degrees per environment step, >= 0


class ObstacleField:
    """Moving vessels on water cells. Reproducible from its seed: respawn()
    restores the initial layout and motion stream, so a reset episode replays
    obstacle trajectories exactly.
    """

    def __init__(
        self,
        positions: np.ndarray,
        headings: np.ndarray,
        speeds: np.ndarray,
        *,
        density: float = 0.0,
        seed: int = 0,
    ):
        self._init_positions = np.array(positions, dtype=np.float64).reshape(-1, 2)
        self._init_headings = np.array(headings, dtype=np.int64).reshape(-1)
        self._speeds = np.array(speeds, dtype=np.float64).reshape(-1)
        if not (len(self._init_positions) == len(self._init_headings) == len(self._speeds)):
            raise ValueError("positions, headings and speeds must have equal length")
        if np.any(self._speeds < 0):
            raise ValueError("obstacle speed must be >= 0")
        self.density = density
        self.seed = seed
        self.positions = self._init_positions.copy()
        self.headings = self._init_headings.copy()
        self._rng = self._motion_rng()

    def _motion_rng(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed).spawn(2)[1])

    @classmethod
    def spawn(
        cls,
        grid: GridMap,
        density: float,
        seed: int,
        *,
        speed: float = STEP_LENGTH,
    ) -> "ObstacleField":
        """Place round(density * water area) vessels on distinct water cells."""
        place_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[0])
        count = int(round(density * grid.water_area_deg2()))
        water = grid.water_cell_indices()
        count = min(count, len(water))
        if count > 0:
            chosen = water[place_rng.choice(len(water), size=count, replace=False)]
            positions = np.array([grid.transform.cell_center(r, c) for r, c in chosen])
            headings = place_rng.integers(0, 8, size=count)
        else:
            positions = np.zeros((0, 2))
            headings = np.zeros(0, dtype=np.int64)
        return cls(positions, headings, np.full(count, speed), density=density, seed=seed)

    @classmethod
    def from_obstacles(cls, obstacles: list[Obstacle], *, seed: int = 0) -> "ObstacleField":
        positions = np.array([o.position for o in obstacles], dtype=np.float64).reshape(-1, 2)
        headings = np.array([int(o.heading) for o in obstacles], dtype=np.int64)
        speeds = np.array([o.speed for o in obstacles], dtype=np.float64)
        return cls(positions, headings, speeds, seed=seed)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def obstacles(self) -> list[Obstacle]:
        return [
            Obstacle((float(p[0]), float(p[1])), Action(int(h)), float(s))
            for p, h, s in zip(self.positions, self.headings, self._speeds)
        ]

    def respawn(self) -> None:
        """Restore the seeded initial layout and motion stream."""
        self.positions = self._init_positions.copy()
        self.headings = self._init_headings.copy()
        self._rng = self._motion_rng()

    def advance(self, grid: GridMap) -> None:
        """One motion tick: move along the heading; on land or boundary
        contact re-sample a heading that stays on water (up to 8 tries,
        else stand still)."""
        for i in range(len(self.positions)):
            speed = self._speeds[i]
            if speed == 0.0:
                continue
            x, y = self.positions[i]
            ux, uy = ACTION_UNIT[Action(int(self.headings[i]))]
            target = (x + speed * ux, y + speed * uy)
            if grid.is_water(target):
                self.positions[i] = target
                continue
            for h in self._rng.permutation(8):
                ux, uy = ACTION_UNIT[Action(int(h))]
                target = (x + speed * ux, y + speed * uy)
                if grid.is_water(target):
                    self.positions[i] = target
                    self.headings[i] = int(h)
                    break
            # all 8 headings blocked: stand still

    def nearest_distance(self, point: Point) -> float:
        """Minimum Euclidean distance to any obstacle; +inf when empty."""
        if len(self.positions) == 0:
            return math.inf
        d = np.hypot(self.positions[:, 0] - point[0], self.positions[:, 1] - point[1])
        return float(d.min())


def advance_obstacles(field: ObstacleField, grid: GridMap) -> ObstacleField:
    field.advance(grid)
    return field


def nearest_obstacle_distance(point: Point, field: ObstacleField) -> float:
    return field.nearest_distance(point)


@dataclass(frozen=True)
class AgentState:
    position: Point
    goal: Point
    steps_taken: int
    initial_goal_distance: float


@dataclass(frozen=True)
class EpisodeSpec:
    origin: Point
    destination: Point
    max_steps: int

    def __post_init__(self) -> None:
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


def default_max_steps(goal_distance: float, *, step_length: float = STEP_LENGTH, factor: float = 4.0) -> int:
    """Generous step cap: a multiple of the straight-line step count."""
    return max(1, math.ceil(factor * goal_distance / step_length))


def make_episode_spec(
    origin: Point,
    destination: Point,
    *,
    max_steps: int | None = None,
    step_length: float = STEP_LENGTH,
    factor: float = 4.0,
) -> EpisodeSpec:
    if max_steps is None:
        max_steps = default_max_steps(distance(origin, destination), step_length=step_length, factor=factor)
    return EpisodeSpec(origin, destination, max_steps)


@dataclass(frozen=True)
class StepResult:
    outcome: Outcome
    reward: float
    next_state: AgentState
    terminal: bool


@dataclass(frozen=True)
class EnvConfig:
    step_length: float = STEP_LENGTH
    arrival_radius: float = 0.001
    collision_radius: float = 0.001
    vanish_margin: float = 0.02
    max_steps_factor: float = 4.0
    delta_d_mode: str = "progress"  # or "displacement"
    delta_od_mode: str = "approach"  # or "absolute"
    progress_gain: float = 1000.0
    obstacle_gain: float = 20.0
    step_cost: float = 0.01

    def __post_init__(self) -> None:
        if self.delta_d_mode not in ("progress", "displacement"):
            raise ValueError(f"unknown delta_d_mode {self.delta_d_mode!r}")
        if self.delta_od_mode not in ("approach", "absolute"):
            raise ValueError(f"unknown delta_od_mode {self.delta_od_mode!r}")


def reward(
    outcome: Outcome,
    delta_d: float,
    delta_od: float,
    *,
    progress_gain: float = 1000.0,
    obstacle_gain: float = 20.0,
    step_cost: float = 0.01,
) -> float:
    """Scalar step reward: fixed -5/+5 for terminal outcomes, shaped otherwise."""
    if outcome is Outcome.ARRIVE_TARGET:
        return 5.0
    if outcome in TERMINAL_FAIL_OUTCOMES:
        return -5.0
    return progress_gain * delta_d - obstacle_gain * delta_od - step_cost


def classify_outcome(
    grid: GridMap,
    new_position: Point,
    state: AgentState,
    field: ObstacleField,
    *,
    arrival_radius: float = 0.001,
    collision_radius: float = 0.001,
    vanish_margin: float = 0.02,
) -> Outcome:
    """Single outcome per step; precedence: land > obstacle > arrive > vanish.

    Land is a static fact of the position so it wins; remaining ties are
    unreachable under the default radii but stay deterministic.
    """
    if not grid.is_water(new_position):
        return Outcome.HIT_LAND
    if field.nearest_distance(new_position) < collision_radius:
        return Outcome.HIT_OBSTACLE
    goal_dist = distance(new_position, state.goal)
    if goal_dist <= arrival_radius:
        return Outcome.ARRIVE_TARGET
    if goal_dist > state.initial_goal_distance + vanish_margin:
        return Outcome.VANISH_TARGET
    return Outcome.NORMAL_MOVEMENT


class NavEnv:
    """Deterministic single-agent environment over a GridMap.

    One instance is single-threaded; run parallel rollouts on independent
    instances with distinct seeds.
    """

    def __init__(self, grid: GridMap, config: EnvConfig = EnvConfig()):
        self.grid = grid
        self.config = config
        self._state: AgentState | None = None
        self._field: ObstacleField | None = None
        self._max_steps = 0
        self._terminal = True

    @property
    def state(self) -> AgentState:
        if self._state is None:
            raise RuntimeError("environment not reset")
        return self._state

    @property
    def obstacles(self) -> ObstacleField:
        if self._field is None:
            raise RuntimeError("environment not reset")
        return self._field

    @property
    def max_steps(self) -> int:
        return self._max_steps

    @property
    def terminal(self) -> bool:
        return self._terminal

    def reset(self, spec: EpisodeSpec, obstacles: ObstacleField) -> AgentState:
        """Start an episode: agent at the origin, obstacles respawned from seed."""
        if not self.grid.is_water(spec.origin):
            raise ValueError(f"origin {spec.origin} is on land")
        if not self.grid.is_water(spec.destination):
            raise ValueError(f"destination {spec.destination} is on land")
        obstacles.respawn()
        self._field = obstacles
        self._max_steps = spec.max_steps
        self._state = AgentState(
            position=spec.origin,
            goal=spec.destination,
            steps_taken=0,
            initial_goal_distance=distance(spec.origin, spec.destination),
        )
        self._terminal = False
        return self._state

    def retarget(self, goal: Point, *, max_steps: int | None = None) -> AgentState:
        """Begin the next episode of a plan in place: new goal and step budget,
        obstacles keep moving (no respawn)."""
        if self._state is None:
            raise RuntimeError("environment not reset")
        if not self.grid.is_water(goal):
            raise ValueError(f"goal {goal} is on land")
        d = distance(self._state.position, goal)
        if max_steps is None:
            max_steps = default_max_steps(d, step_length=self.config.step_length, factor=self.config.max_steps_factor)
        self._max_steps = max_steps
        self._state = AgentState(self._state.position, goal, 0, d)
        self._terminal = False
        return self._state

    def step(self, action: Action) -> StepResult:
        if self._terminal or self._state is None or self._field is None:
            raise RuntimeError("step() called on a terminal episode; reset() first")
        cfg = self.config
        st = self._state

        prev_goal_dist = distance(st.position, st.goal)
        prev_obstacle_dist = self._field.nearest_distance(st.position)

        ux, uy = ACTION_UNIT[Action(action)]
        new_position = (st.position[0] + cfg.step_length * ux, st.position[1] + cfg.step_length * uy)
        self._field.advance(self.grid)

        outcome = classify_outcome(
            self.grid,
            new_position,
            st,
            self._field,
            arrival_radius=cfg.arrival_radius,
            collision_radius=cfg.collision_radius,
            vanish_margin=cfg.vanish_margin,
        )

        if cfg.delta_d_mode == "progress":
            delta_d = prev_goal_dist - distance(new_position, st.goal)
        else:
            delta_d = cfg.step_length

        new_obstacle_dist = self._field.nearest_distance(new_position)
        if cfg.delta_od_mode == "approach":
            if math.isfinite(prev_obstacle_dist) and math.isfinite(new_obstacle_dist):
                delta_od = prev_obstacle_dist - new_obstacle_dist
            else:
                delta_od = 0.0
        else:
            delta_od = new_obstacle_dist if math.isfinite(new_obstacle_dist) else 0.0

        step_reward = reward(
            outcome,
            delta_d,
            delta_od,
            progress_gain=cfg.progress_gain,
            obstacle_gain=cfg.obstacle_gain,
            step_cost=cfg.step_cost,
        )

        steps = st.steps_taken + 1
        next_state = AgentState(new_position, st.goal, steps, st.initial_goal_distance)
        terminal = outcome is not Outcome.NORMAL_MOVEMENT or steps >= self._max_steps
        self._state = next_state
        self._terminal = terminal
        return StepResult(outcome=outcome, reward=step_reward, next_state=next_state, terminal=terminal)
