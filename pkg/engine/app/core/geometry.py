import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Hashable, Iterable, Iterator, List, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import CollisionError, EmptyIndexError, NoFreeSpaceError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Point2:
    """Planar point in meters"""
    x: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"Point coordinates must be finite, got ({self.x}, {self.y})")

    def distance_to(self, other: "Point2") -> float:
        return math.hypot(other.x - self.x, other.y - self.y)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass
class GridWorld:
    """
    Occupancy grid world.
    cells[iy, ix] is True for an obstacle; row 0 sits at origin.y and rows grow along +y.
    """
    cells: np.ndarray
    resolution: float
    origin: Point2 = field(default_factory=lambda: Point2(0.0, 0.0))

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=bool)
        if self.cells.ndim != 2 or self.cells.size == 0:
            raise ValueError("World needs a non-empty 2D cell array")
        if not self.resolution > 0:
            raise ValueError(f"Resolution must be positive, got {self.resolution}")

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.size

    def cell_of(self, point: Point2) -> Tuple[int, int]:
        return (
            math.floor((point.x - self.origin.x) / self.resolution),
            math.floor((point.y - self.origin.y) / self.resolution),
        )

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width and 0 <= iy < self.height

    def contains(self, point: Point2) -> bool:
        return self.in_bounds(*self.cell_of(point))

    def is_occupied(self, ix: int, iy: int) -> bool:
        # outside the grid counts as an obstacle
        if not self.in_bounds(ix, iy):
            return True
        return bool(self.cells[iy, ix])

    def is_free_point(self, point: Point2) -> bool:
        return not self.is_occupied(*self.cell_of(point))

    def flat_index(self, ix: int, iy: int) -> int:
        return iy * self.width + ix

    @cached_property
    def cell_centers(self) -> np.ndarray:
        """2 x n matrix of cell centers in flat-index order"""
        iy, ix = np.divmod(np.arange(self.n_cells), self.width)
        return np.vstack([
            self.origin.x + (ix + 0.5) * self.resolution,
            self.origin.y + (iy + 0.5) * self.resolution,
        ])

    @cached_property
    def center_index(self) -> "SpatialIndex":
        return SpatialIndex(Point2(x, y) for x, y in self.cell_centers.T)

    @cached_property
    def free_bounds(self) -> Optional[Tuple[float, float, float, float]]:
        iy, ix = np.nonzero(~self.cells)
        if ix.size == 0:
            return None
        return (
            self.origin.x + ix.min() * self.resolution,
            self.origin.x + (ix.max() + 1) * self.resolution,
            self.origin.y + iy.min() * self.resolution,
            self.origin.y + (iy.max() + 1) * self.resolution,
        )


class SeededRng:
    """Single-owner random stream; identical seeds give identical streams"""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.generator = np.random.default_rng(self.seed)

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        return float(self.generator.uniform(low, high))

    def normal(self, mean: float = 0.0, std: float = 1.0) -> float:
        return float(self.generator.normal(mean, std))

    def choice(self, n: int, p: np.ndarray) -> int:
        return int(self.generator.choice(n, p=p))

    def spawn(self) -> "SeededRng":
        return SeededRng(int(self.generator.integers(0, 2**63 - 1)))


class SpatialIndex:
    """
    Growing point set with nearest and radius queries.
    A kd-tree covers the bulk of the points and a short tail is scanned directly;
    the tree is rebuilt once the tail grows past REBUILD_THRESHOLD.
    Results match a brute-force scan: ties go to the lowest insertion index.
    """
    REBUILD_THRESHOLD = 128

    def __init__(self, points: Iterable[Point2] = ()):
        self._xy: List[Tuple[float, float]] = []
        self._keys: List[Hashable] = []
        self._tree: Optional[cKDTree] = None
        self._built = 0
        for point in points:
            self._xy.append((point.x, point.y))
            self._keys.append(len(self._keys))
        if self._xy:
            self._rebuild()

    def __len__(self) -> int:
        return len(self._xy)

    def add(self, point: Point2, key: Optional[Hashable] = None) -> int:
        index = len(self._xy)
        self._xy.append((point.x, point.y))
        self._keys.append(index if key is None else key)
        if len(self._xy) - self._built > self.REBUILD_THRESHOLD:
            self._rebuild()
        return index

    def point(self, index: int) -> Point2:
        return Point2(*self._xy[index])

    def key(self, index: int) -> Hashable:
        return self._keys[index]

    def _rebuild(self):
        self._tree = cKDTree(np.asarray(self._xy, dtype=float))
        self._built = len(self._xy)

    def _distance(self, index: int, qx: float, qy: float) -> float:
        x, y = self._xy[index]
        return math.hypot(x - qx, y - qy)

    def nearest_index(self, query: Point2) -> int:
        if not self._xy:
            raise EmptyIndexError("Nearest query on an empty point set")
        qx, qy = query.x, query.y
        best = (math.inf, -1)
        if self._built:
            d, _ = self._tree.query((qx, qy), k=1)
            for i in self._tree.query_ball_point((qx, qy), d + 1e-9 * (1.0 + d)):
                best = min(best, (self._distance(i, qx, qy), i))
        for i in range(self._built, len(self._xy)):
            best = min(best, (self._distance(i, qx, qy), i))
        return best[1]

    def near_indices(self, query: Point2, radius: float) -> List[int]:
        if not radius > 0:
            raise ValueError(f"Near radius must be positive, got {radius}")
        qx, qy = query.x, query.y
        hits: List[int] = []
        if self._built:
            candidates = self._tree.query_ball_point((qx, qy), radius * (1 + 1e-9) + 1e-12)
            hits.extend(i for i in candidates if self._distance(i, qx, qy) <= radius)
        hits.extend(
            i for i in range(self._built, len(self._xy)) if self._distance(i, qx, qy) <= radius
        )
        return sorted(hits)


def sample_uniform(world: GridWorld, rng: SeededRng) -> Point2:
    """Rejection-sample a point uniformly over the free-space bounding box"""
    bounds = world.free_bounds
    if bounds is None:
        raise NoFreeSpaceError("Every cell of the world is occupied")
    x_lo, x_hi, y_lo, y_hi = bounds
    while True:
        x = rng.uniform(x_lo, x_hi)
        y = rng.uniform(y_lo, y_hi)
        ix = math.floor((x - world.origin.x) / world.resolution)
        iy = math.floor((y - world.origin.y) / world.resolution)
        if not world.is_occupied(ix, iy):
            return Point2(x, y)


def nearest(index: SpatialIndex, query: Point2) -> Point2:
    return index.point(index.nearest_index(query))


def near(index: SpatialIndex, query: Point2, radius: float) -> List[Point2]:
    return [index.point(i) for i in index.near_indices(query, radius)]


def steer(origin: Point2, toward: Point2, delta: float) -> Point2:
    if not delta > 0:
        raise ValueError(f"Steer step must be positive, got {delta}")
    d = origin.distance_to(toward)
    if d <= delta:
        return toward
    s = delta / d
    return Point2(origin.x + s * (toward.x - origin.x), origin.y + s * (toward.y - origin.y))


def _traverse(world: GridWorld, x0: float, y0: float, ux: float, uy: float,
              length: float) -> Iterator[Tuple[int, int, float]]:
    """
    Voxel walk along x0 + t*u for 0 <= t <= length (u a unit vector).
    Yields (ix, iy, t_enter) per visited cell, in visit order.
    """
    res = world.resolution
    gx = (x0 - world.origin.x) / res
    gy = (y0 - world.origin.y) / res
    ix, iy = math.floor(gx), math.floor(gy)

    if ux > 0:
        step_x, t_max_x, t_delta_x = 1, (ix + 1 - gx) * res / ux, res / ux
    elif ux < 0:
        step_x, t_max_x, t_delta_x = -1, (ix - gx) * res / ux, -res / ux
    else:
        step_x, t_max_x, t_delta_x = 0, math.inf, math.inf
    if uy > 0:
        step_y, t_max_y, t_delta_y = 1, (iy + 1 - gy) * res / uy, res / uy
    elif uy < 0:
        step_y, t_max_y, t_delta_y = -1, (iy - gy) * res / uy, -res / uy
    else:
        step_y, t_max_y, t_delta_y = 0, math.inf, math.inf

    t = 0.0
    while True:
        yield ix, iy, t
        if t_max_x < t_max_y:
            t = t_max_x
            if t > length:
                return
            ix += step_x
            t_max_x += t_delta_x
        else:
            t = t_max_y
            if t > length:
                return
            iy += step_y
            t_max_y += t_delta_y


def traverse_segment(world: GridWorld, a: Point2, b: Point2) -> List[Tuple[int, int]]:
    """Cells crossed by segment a-b, endpoints included"""
    # walk from the lexicographically smaller endpoint so (a, b) and (b, a) agree
    if (b.x, b.y) < (a.x, a.y):
        a, b = b, a
    length = a.distance_to(b)
    if length == 0:
        return [world.cell_of(a)]
    ux, uy = (b.x - a.x) / length, (b.y - a.y) / length
    cells = [(ix, iy) for ix, iy, _ in _traverse(world, a.x, a.y, ux, uy, length)]
    end = world.cell_of(b)
    if end not in cells:
        cells.append(end)
    return cells


def no_collision(a: Point2, b: Point2, world: GridWorld) -> bool:
    if not (world.contains(a) and world.contains(b)):
        return False
    return not any(world.is_occupied(ix, iy) for ix, iy in traverse_segment(world, a, b))


@dataclass(frozen=True)
class RayCastResult:
    range: float
    cells: List[int]
    distances: List[float]
    hit_cell: Optional[int] = None

    @property
    def perception_cells(self) -> List[int]:
        return self.cells + ([self.hit_cell] if self.hit_cell is not None else [])

    @property
    def perception_distances(self) -> List[float]:
        return self.distances + ([self.range] if self.hit_cell is not None else [])


def ray_cast(world: GridWorld, origin: Point2, angle: float, r_max: float) -> RayCastResult:
    """
    Cast a ray until the first obstacle cell or r_max.
    cells holds the traversed free cells (flat indices) with their entry distances;
    leaving the grid ends the ray like an obstacle would.
    """
    if not r_max > 0:
        raise ValueError(f"Maximum range must be positive, got {r_max}")
    if not world.is_free_point(origin):
        raise CollisionError(f"Ray origin ({origin.x}, {origin.y}) is not in free space")

    cells: List[int] = []
    distances: List[float] = []
    for ix, iy, t in _traverse(world, origin.x, origin.y, math.cos(angle), math.sin(angle), r_max):
        if not world.in_bounds(ix, iy):
            return RayCastResult(t, cells, distances, None)
        if world.cells[iy, ix]:
            return RayCastResult(t, cells, distances, world.flat_index(ix, iy))
        cells.append(world.flat_index(ix, iy))
        distances.append(t)
    return RayCastResult(r_max, cells, distances, None)
