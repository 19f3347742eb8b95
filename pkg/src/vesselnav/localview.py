"""Agent-centered observation window.

The agent sees a k x k crop of the map around itself as three binary
channels: land, obstacles, and a one-hot goal. Goals outside the window are
projected to a shadow cell on the window boundary shrunk by a margin, along
the agent->goal ray.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid_env import GeoTransform, GridMap, ObstacleField, Point

DEFAULT_VIEW_SIZE = 33
DEFAULT_MARGIN = 3


@dataclass
class LocalView:
    size: int
    land: np.ndarray  # (k, k) uint8
    obstacles: np.ndarray  # (k, k) uint8
    goal: np.ndarray  # (k, k) uint8, exactly one cell set
    center: int

    def tensor(self) -> np.ndarray:
        """(3, k, k) uint8 stack: land, obstacles, goal."""
        return np.stack([self.land, self.obstacles, self.goal])


def _check_window(size: int, margin: int) -> int:
    if size < 3 or size % 2 == 0:
        raise ValueError("view size must be odd and >= 3")
    if not 0 <= margin < size / 2:
        raise ValueError("margin must satisfy 0 <= margin < size/2")
    half = size // 2
    return half - margin


def shadow_goal(
    agent: Point,
    goal: Point,
    size: int = DEFAULT_VIEW_SIZE,
    margin: int = DEFAULT_MARGIN,
    *,
    transform: GeoTransform,
) -> tuple[int, int]:
    """View-cell (row, col) of the goal, or of its shadow on the shrunk window.

    In-view goals map to their own cell. Out-of-view goals are the
    intersection of the agent->goal ray with the boundary of the window
    shrunk by ``margin`` cells. A goal coincident with the agent maps to the
    center cell.
    """
    shrink = _check_window(size, margin)
    half = size // 2
    ar, ac = transform.cell_index_raw(agent)
    gr, gc = transform.cell_index_raw(goal)
    dr, dc = gr - ar, gc - ac
    if max(abs(dr), abs(dc)) <= shrink:
        return half + dr, half + dc

    # ray direction in view units (rows grow southward)
    vy = -(goal[1] - agent[1]) / transform.cell_size
    vx = (goal[0] - agent[0]) / transform.cell_size
    denom = max(abs(vy), abs(vx))
    if denom == 0.0:
        return half, half
    t = shrink / denom
    rr = min(shrink, max(-shrink, round(t * vy)))
    cc = min(shrink, max(-shrink, round(t * vx)))
    return half + rr, half + cc


def extract(
    grid: GridMap,
    field: ObstacleField,
    position: Point,
    goal: Point,
    *,
    size: int = DEFAULT_VIEW_SIZE,
    margin: int = DEFAULT_MARGIN,
) -> LocalView:
    """Rasterize the k x k neighborhood of the agent at map resolution.

    Cells outside the map render as land. The goal channel is one-hot at the
    shadow-goal cell.
    """
    _check_window(size, margin)
    half = size // 2
    idx = grid.transform.cell_index(position)
    if idx is None or grid.land[idx]:
        raise ValueError(f"agent position {position} is not on water")
    ar, ac = idx

    land = np.ones((size, size), dtype=np.uint8)
    nrows, ncols = grid.land.shape
    r0, r1 = ar - half, ar + half + 1
    c0, c1 = ac - half, ac + half + 1
    sr0, sr1 = max(r0, 0), min(r1, nrows)
    sc0, sc1 = max(c0, 0), min(c1, ncols)
    if sr0 < sr1 and sc0 < sc1:
        land[sr0 - r0 : sr1 - r0, sc0 - c0 : sc1 - c0] = grid.land[sr0:sr1, sc0:sc1]

    obstacles = np.zeros((size, size), dtype=np.uint8)
    for k in range(len(field.positions)):
        oidx = grid.transform.cell_index((float(field.positions[k, 0]), float(field.positions[k, 1])))
        if oidx is None:
            continue
        vr, vc = oidx[0] - ar + half, oidx[1] - ac + half
        if 0 <= vr < size and 0 <= vc < size:
            obstacles[vr, vc] = 1

    goal_mask = np.zeros((size, size), dtype=np.uint8)
    gr, gc = shadow_goal(position, goal, size, margin, transform=grid.transform)
    goal_mask[gr, gc] = 1

    return LocalView(size=size, land=land, obstacles=obstacles, goal=goal_mask, center=half)
