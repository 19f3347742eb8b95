"""Long-horizon planning over the water graph.

The fine map is coarsened by an integer factor into a planning graph
(majority-water blocks, 8-connected), all-pairs shortest paths are computed
once per map with Floyd-Warshall plus first-hop reconstruction, and extracted
paths are thinned into waypoints with Ramer-Douglas-Peucker.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid_env import GridMap, Point, distance

RDP_EPSILON = 0.001  # degrees; waypoint-thinning tolerance

_CACHE_MAGIC = b"VNPC"
_CACHE_VERSION = 1


class UnreachableError(ValueError):
    """No path exists between the requested endpoints."""


class PlanCacheError(ValueError):
    """Plan-cache file is corrupt, incompatible, or stale."""


class PlanningGraph:
    """Coarse water graph: one node per majority-water f x f block.

    A node's center is the block's centroid cell when that cell is water,
    otherwise the nearest water cell inside the block, so every waypoint is
    a valid episode goal. Edges connect 8-neighboring blocks, weighted by
    the Euclidean distance between node centers.
    """

    def __init__(
        self,
        downsample: int,
        node_index: np.ndarray,
        node_cells: np.ndarray,
        centers: np.ndarray,
    ):
        self.downsample = downsample
        self.node_index = node_index  # (crows, ccols) int32, -1 where no node
        self.node_cells = node_cells  # (n, 2) coarse (row, col) per node
        self.centers = centers  # (n, 2) geographic (x, y) per node

    @property
    def n_nodes(self) -> int:
        return len(self.node_cells)

    def node_at(self, point: Point, grid: GridMap) -> int | None:
        """Node whose coarse block contains point, or None."""
        idx = grid.transform.cell_index(point)
        if idx is None:
            return None
        cr, cc = idx[0] // self.downsample, idx[1] // self.downsample
        node = int(self.node_index[cr, cc])
        return node if node >= 0 else None

    def center(self, node: int) -> Point:
        return float(self.centers[node, 0]), float(self.centers[node, 1])

    def neighbors(self, node: int) -> list[tuple[int, float]]:
        """(neighbor node, edge weight) pairs, in deterministic order."""
        crows, ccols = self.node_index.shape
        r, c = self.node_cells[node]
        out = []
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                rr, cc = r + dr, c + dc
                if 0 <= rr < crows and 0 <= cc < ccols:
                    other = int(self.node_index[rr, cc])
                    if other >= 0:
                        out.append((other, distance(self.center(node), self.center(other))))
        return out


def build_planning_graph(grid: GridMap, downsample: int = 4) -> PlanningGraph:
    if downsample < 1:
        raise ValueError("downsample must be >= 1")
    f = downsample
    nrows, ncols = grid.land.shape
    crows = math.ceil(nrows / f)
    ccols = math.ceil(ncols / f)

    node_index = np.full((crows, ccols), -1, dtype=np.int32)
    node_cells: list[tuple[int, int]] = []
    centers: list[Point] = []
    for cr in range(crows):
        r0, r1 = cr * f, min((cr + 1) * f, nrows)
        for cc in range(ccols):
            c0, c1 = cc * f, min((cc + 1) * f, ncols)
            block_land = grid.land[r0:r1, c0:c1]
            total = block_land.size
            water_count = total - int(np.count_nonzero(block_land))
            if water_count * 2 <= total:
                continue
            # centroid cell, snapped to the nearest water cell in the block
            mid_r = (r0 + r1 - 1) / 2.0
            mid_c = (c0 + c1 - 1) / 2.0
            best: tuple[float, int, int] | None = None
            for r in range(r0, r1):
                for c in range(c0, c1):
                    if block_land[r - r0, c - c0]:
                        continue
                    d = (r - mid_r) ** 2 + (c - mid_c) ** 2
                    if best is None or (d, r, c) < best:
                        best = (d, r, c)
            assert best is not None
            node_index[cr, cc] = len(node_cells)
            node_cells.append((cr, cc))
            centers.append(grid.transform.cell_center(best[1], best[2]))

    if not node_cells:
        raise ValueError("map has no water nodes at this downsample factor")
    return PlanningGraph(
        downsample=f,
        node_index=node_index,
        node_cells=np.array(node_cells, dtype=np.int64),
        centers=np.array(centers, dtype=np.float64),
    )


@dataclass
class NextHopMatrix:
    """All-pairs shortest distances plus first-hop successors.

    ``next_hop[i, j]`` is the node after i on a shortest i->j path, -1 when
    unreachable. Immutable after construction; safe to share across rollouts.
    """

    graph: PlanningGraph
    dist: np.ndarray  # (n, n) float64, inf when unreachable
    next_hop: np.ndarray  # (n, n) int32

    def reachable(self, i: int, j: int) -> bool:
        return i == j or self.next_hop[i, j] >= 0

    def path_nodes(self, i: int, j: int) -> list[int]:
        """Node sequence from i to j following first hops."""
        if not self.reachable(i, j):
            raise UnreachableError(f"no path between nodes {i} and {j}")
        nodes = [i]
        cur = i
        limit = self.graph.n_nodes + 1
        while cur != j:
            cur = int(self.next_hop[cur, j])
            nodes.append(cur)
            if len(nodes) > limit:
                raise RuntimeError("next-hop chain did not terminate")
        return nodes


def floyd_all_pairs(graph: PlanningGraph) -> NextHopMatrix:
    """Floyd-Warshall with first-hop reconstruction.

    Relaxation order is ascending intermediate-node index with strict
    improvement, so equal-length ties resolve deterministically.
    """
    n = graph.n_nodes
    dist = np.full((n, n), np.inf, dtype=np.float64)
    next_hop = np.full((n, n), -1, dtype=np.int32)
    np.fill_diagonal(dist, 0.0)
    np.fill_diagonal(next_hop, np.arange(n, dtype=np.int32))
    for i in range(n):
        for j, w in graph.neighbors(i):
            dist[i, j] = w
            next_hop[i, j] = j

    for k in range(n):
        alt = dist[:, k][:, None] + dist[k, :][None, :]
        better = alt < dist
        dist = np.where(better, alt, dist)
        next_hop = np.where(better, np.broadcast_to(next_hop[:, k][:, None], (n, n)), next_hop)
    return NextHopMatrix(graph=graph, dist=dist, next_hop=next_hop)


def shortest_path(matrix: NextHopMatrix, src: Point, dst: Point, grid: GridMap) -> list[Point]:
    """Polyline of node centers from src's node to dst's node, with the exact
    endpoints prepended/appended."""
    graph = matrix.graph
    i = graph.node_at(src, grid)
    j = graph.node_at(dst, grid)
    if i is None:
        raise UnreachableError(f"source {src} is not on a water node")
    if j is None:
        raise UnreachableError(f"destination {dst} is not on a water node")
    if i == j:
        return [src, dst]
    nodes = matrix.path_nodes(i, j)
    return [src] + [graph.center(nd) for nd in nodes] + [dst]


def _point_segment_distance(p: Point, a: Point, b: Point) -> float:
    """Perpendicular point-to-line distance; point-to-point for zero-length segments."""
    abx, aby = b[0] - a[0], b[1] - a[1]
    seg = math.hypot(abx, aby)
    if seg == 0.0:
        return distance(p, a)
    return abs(abx * (a[1] - p[1]) - (a[0] - p[0]) * aby) / seg


def rdp_simplify(points: list[Point], epsilon: float) -> list[Point]:
    """Classic recursive Ramer-Douglas-Peucker.

    Endpoints are kept; the farthest interior point splits the polyline when
    its perpendicular distance exceeds epsilon. Output is a subsequence of
    the input and every dropped point lies within epsilon of the result.
    """
    if len(points) < 2:
        raise ValueError("polyline must have at least 2 points")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if len(points) == 2:
        return list(points)

    dmax = 0.0
    index = 0
    first, last = points[0], points[-1]
    for i in range(1, len(points) - 1):
        d = _point_segment_distance(points[i], first, last)
        if d > dmax:
            dmax = d
            index = i
    if dmax > epsilon:
        left = rdp_simplify(points[: index + 1], epsilon)
        right = rdp_simplify(points[index:], epsilon)
        return left[:-1] + right
    return [first, last]


@dataclass(frozen=True)
class PlanSpec:
    """Ordered intermediary goals for one origin->destination mission.

    ``waypoints`` excludes the origin and ends with the destination.
    """

    origin: Point
    destination: Point
    waypoints: tuple[Point, ...]

    def __post_init__(self) -> None:
        if not self.waypoints:
            raise ValueError("waypoints must be non-empty")


def make_plan(
    grid: GridMap,
    matrix: NextHopMatrix,
    origin: Point,
    destination: Point,
    *,
    epsilon: float = RDP_EPSILON,
) -> PlanSpec:
    if not grid.is_water(origin):
        raise ValueError(f"origin {origin} is on land")
    if not grid.is_water(destination):
        raise ValueError(f"destination {destination} is on land")
    polyline = shortest_path(matrix, origin, destination, grid)
    simplified = rdp_simplify(polyline, epsilon)
    return PlanSpec(origin=origin, destination=destination, waypoints=tuple(simplified[1:]))


def map_content_hash(grid: GridMap) -> int:
    return grid.content_hash()


def save_plan_cache(path: str | Path, matrix: NextHopMatrix, map_hash: int) -> None:
    """Binary container: magic, version byte, node count, LE float64 dist,
    LE int32 next-hop, trailing 64-bit map-content hash."""
    n = matrix.graph.n_nodes
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<B", _CACHE_VERSION))
        fh.write(struct.pack("<I", n))
        fh.write(matrix.dist.astype("<f8").tobytes())
        fh.write(matrix.next_hop.astype("<i4").tobytes())
        fh.write(struct.pack("<Q", map_hash))


def load_plan_cache(path: str | Path, graph: PlanningGraph, expected_map_hash: int | None = None) -> NextHopMatrix:
    blob = Path(path).read_bytes()
    if len(blob) < 4 + 1 + 4 + 8 or blob[:4] != _CACHE_MAGIC:
        raise PlanCacheError(f"{path}: not a plan-cache file")
    version = blob[4]
    if version != _CACHE_VERSION:
        raise PlanCacheError(f"{path}: unsupported plan-cache version {version}")
    (n,) = struct.unpack_from("<I", blob, 5)
    if n != graph.n_nodes:
        raise PlanCacheError(f"{path}: cache has {n} nodes, graph has {graph.n_nodes}")
    offset = 9
    dist_bytes = n * n * 8
    next_bytes = n * n * 4
    if len(blob) != offset + dist_bytes + next_bytes + 8:
        raise PlanCacheError(f"{path}: truncated or oversized plan-cache file")
    dist = np.frombuffer(blob, dtype="<f8", count=n * n, offset=offset).reshape(n, n).copy()
    offset += dist_bytes
    next_hop = np.frombuffer(blob, dtype="<i4", count=n * n, offset=offset).reshape(n, n).copy()
    offset += next_bytes
    (stored_hash,) = struct.unpack_from("<Q", blob, offset)
    if expected_map_hash is not None and stored_hash != expected_map_hash:
        raise PlanCacheError(f"{path}: stale cache (map hash mismatch)")
    return NextHopMatrix(graph=graph, dist=dist, next_hop=next_hop)
