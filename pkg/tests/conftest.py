from __future__ import annotations

import numpy as np
import pytest

from vesselnav import grid_env as ge


def make_grid(rows: list[str], *, x_min: float = -63.69, y_min: float = 44.58, cell: float = 0.001) -> ge.GridMap:
    """Build a GridMap from '0'/'1' strings, row 0 northernmost."""
    land = np.array([[c == "1" for c in row] for row in rows], dtype=bool)
    nrows, ncols = land.shape
    transform = ge.GeoTransform(
        x_min=x_min,
        y_min=y_min,
        x_max=x_min + ncols * cell,
        y_max=y_min + nrows * cell,
        cell_size=cell,
    )
    return ge.GridMap(transform, land)


def open_water(ncols: int = 40, nrows: int = 30, **kw) -> ge.GridMap:
    return make_grid(["0" * ncols] * nrows, **kw)


def no_obstacles() -> ge.ObstacleField:
    return ge.ObstacleField.from_obstacles([])


@pytest.fixture
def water_grid() -> ge.GridMap:
    return open_water()
