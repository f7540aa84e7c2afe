"""Scenario data model and derived quantities.

A scenario couples a grayscale birds-eye infrastructure image with the ego
trajectory driven through it.  The lane topology graph and the per-vertex
route labeling are side information used for mining and evaluation, never
as network input.

Pixel convention: the image covers a square world window centered on the
origin, ``extent = S * meters_per_pixel`` wide.  Pixel ``(row, col)`` has its
center at ``x = (col + 0.5) * mpp - extent / 2`` and likewise for ``y`` with
rows, so row index grows with y.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import as_float_array, check_finite

__all__ = [
    "CATEGORIES",
    "EDGE_KINDS",
    "InfrastructureImage",
    "Trajectory",
    "TopologyGraph",
    "RouteLabeling",
    "Scenario",
    "ActionSequence",
    "ReconstructionTarget",
    "GroupIndex",
    "Dataset",
    "derive_action_sequence",
    "map_point_to_vertex",
    "derive_route_labeling",
    "build_reconstruction_target",
]

CATEGORIES = (
    "single-lane",
    "multi-lane",
    "intersection",
    "intersection-entering",
    "roundabout",
    "roundabout-entering",
    "highway",
    "highway-entering",
)

EDGE_KINDS = ("successor", "neighbor")


def _freeze(arr):
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class InfrastructureImage:
    """Square grayscale birds-eye view, intensities in [0, 1], float32."""

    pixels: np.ndarray
    meters_per_pixel: float

    def __post_init__(self):
        pix = as_float_array(self.pixels, "pixels", dtype=np.float32, ndim=2)
        if pix.shape[0] != pix.shape[1]:
            raise ValueError(f"image must be square, got shape {pix.shape}")
        if pix.shape[0] < 8:
            raise ValueError(f"image size must be >= 8, got {pix.shape[0]}")
        check_finite(pix, "pixels")
        if pix.min() < 0.0 or pix.max() > 1.0:
            raise ValueError("pixel intensities must lie in [0, 1]")
        if not self.meters_per_pixel > 0:
            raise ValueError("meters_per_pixel must be positive")
        object.__setattr__(self, "pixels", _freeze(pix))

    @property
    def size(self) -> int:
        return self.pixels.shape[0]

    @property
    def extent(self) -> float:
        """World width covered by the image, in meters."""
        return self.size * self.meters_per_pixel

    def world_to_pixel(self, xy):
        """Map world coordinates to continuous (row, col) pixel coordinates.

        Integer values land on pixel centers.
        """
        xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
        half = self.size / 2.0
        col = xy[:, 0] / self.meters_per_pixel + half - 0.5
        row = xy[:, 1] / self.meters_per_pixel + half - 0.5
        return np.column_stack([row, col])

    def __eq__(self, other):
        if not isinstance(other, InfrastructureImage):
            return NotImplemented
        return (
            self.meters_per_pixel == other.meters_per_pixel
            and np.array_equal(self.pixels, other.pixels)
        )


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Ordered (x, y, t) samples of the ego, float32, strictly increasing t."""

    points: np.ndarray

    def __post_init__(self):
        pts = as_float_array(self.points, "points", dtype=np.float32, ndim=2)
        if pts.shape[1] != 3:
            raise ValueError(f"trajectory points must be (N, 3), got {pts.shape}")
        if pts.shape[0] < 2:
            raise ValueError("trajectory needs at least 2 points")
        check_finite(pts, "points")
        if np.any(np.diff(pts[:, 2].astype(np.float64)) <= 0):
            raise ValueError("non-monotonic time")
        object.__setattr__(self, "points", _freeze(pts))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def xy(self) -> np.ndarray:
        return self.points[:, :2]

    @property
    def times(self) -> np.ndarray:
        return self.points[:, 2]

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return np.array_equal(self.points, other.points)


@dataclass(frozen=True, eq=False)
class TopologyGraph:
    """Lane-piece graph: vertices carry a 2-D reference polyline, edges are
    directed (src, dst, kind) triples with kind in ``EDGE_KINDS``."""

    polylines: tuple
    edges: tuple

    def __post_init__(self):
        polys = []
        for i, poly in enumerate(self.polylines):
            arr = as_float_array(poly, f"polyline[{i}]", ndim=2)
            if arr.shape[1] != 2 or arr.shape[0] < 1:
                raise ValueError(f"polyline[{i}] must be (k>=1, 2), got {arr.shape}")
            check_finite(arr, f"polyline[{i}]")
            polys.append(_freeze(arr))
        if not polys:
            raise ValueError("graph needs at least one vertex")
        n = len(polys)
        edges = []
        for e in self.edges:
            src, dst, kind = int(e[0]), int(e[1]), str(e[2])
            if not (0 <= src < n and 0 <= dst < n):
                raise ValueError(f"edge ({src}, {dst}) references missing vertex")
            if src == dst:
                raise ValueError(f"self-loop on vertex {src}")
            if kind not in EDGE_KINDS:
                raise ValueError(f"unknown edge kind {kind!r}")
            edges.append((src, dst, kind))
        object.__setattr__(self, "polylines", tuple(polys))
        object.__setattr__(self, "edges", tuple(edges))

    @property
    def n_vertices(self) -> int:
        return len(self.polylines)

    def __eq__(self, other):
        if not isinstance(other, TopologyGraph):
            return NotImplemented
        if self.edges != other.edges or len(self.polylines) != len(other.polylines):
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.polylines, other.polylines))


@dataclass(frozen=True, eq=False)
class RouteLabeling:
    """Per-vertex route labels: 2 start lane, 1 traversed, 0 untouched."""

    labels: np.ndarray

    def __post_init__(self):
        lab = np.ascontiguousarray(self.labels, dtype=np.int64)
        if lab.ndim != 1 or lab.size < 1:
            raise ValueError("labels must be a nonempty 1-D array")
        if not np.all(np.isin(lab, (0, 1, 2))):
            raise ValueError("labels must be in {0, 1, 2}")
        if np.count_nonzero(lab == 2) < 1:
            raise ValueError("labels need at least one start vertex (label 2)")
        object.__setattr__(self, "labels", _freeze(lab))

    def __eq__(self, other):
        if not isinstance(other, RouteLabeling):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)


@dataclass(frozen=True, eq=False)
class Scenario:
    """One traffic situation: network input (image, trajectory) plus the
    mining side information (graph, route, category)."""

    image: InfrastructureImage
    trajectory: Trajectory
    graph: TopologyGraph
    route: RouteLabeling
    category: str

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if self.route.labels.size != self.graph.n_vertices:
            raise ValueError(
                f"route labels length {self.route.labels.size} does not match "
                f"graph vertex count {self.graph.n_vertices}"
            )
        start = map_point_to_vertex(
            self.graph,
            float(self.trajectory.points[0, 0]),
            float(self.trajectory.points[0, 1]),
        )
        if self.route.labels[start] != 2:
            raise ValueError("trajectory start vertex is not labeled 2")

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (
            self.category == other.category
            and self.image == other.image
            and self.trajectory == other.trajectory
            and self.graph == other.graph
            and self.route == other.route
        )


@dataclass(frozen=True, eq=False)
class ActionSequence:
    """Per-timestep (a_lat, a_lon, speed) rows plus headings, length N - 2."""

    rows: np.ndarray
    headings: np.ndarray

    def __post_init__(self):
        rows = as_float_array(self.rows, "rows", ndim=2)
        if rows.shape[1] != 3:
            raise ValueError(f"action rows must be (n, 3), got {rows.shape}")
        head = as_float_array(self.headings, "headings", ndim=1)
        if head.shape[0] != rows.shape[0]:
            raise ValueError("headings length must match action rows")
        if np.any(rows[:, 2] < 0):
            raise ValueError("speed must be nonnegative")
        object.__setattr__(self, "rows", _freeze(rows))
        object.__setattr__(self, "headings", _freeze(head))

    def __len__(self) -> int:
        return self.rows.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ActionSequence):
            return NotImplemented
        return np.array_equal(self.rows, other.rows) and np.array_equal(
            self.headings, other.headings
        )


@dataclass(frozen=True, eq=False)
class ReconstructionTarget:
    """Two-channel S x S target: 0 = graph-masked infrastructure, 1 = trajectory raster."""

    channels: np.ndarray

    def __post_init__(self):
        ch = as_float_array(self.channels, "channels", ndim=3)
        if ch.shape[0] != ch.shape[1] or ch.shape[2] != 2:
            raise ValueError(f"channels must be (S, S, 2), got {ch.shape}")
        if ch.min() < 0.0 or ch.max() > 1.0:
            raise ValueError("channel values must lie in [0, 1]")
        object.__setattr__(self, "channels", _freeze(ch))

    def __eq__(self, other):
        if not isinstance(other, ReconstructionTarget):
            return NotImplemented
        return np.array_equal(self.channels, other.channels)


def _check_dense(ids, name):
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ValueError(f"{name} must be 1-D")
    uniq = np.unique(ids)
    if uniq.size == 0 or uniq[0] != 0 or uniq[-1] != uniq.size - 1:
        raise ValueError(f"{name} must be dense in [0, #groups)")
    return _freeze(ids)


@dataclass(frozen=True, eq=False)
class GroupIndex:
    """Dense group ids per scenario at the three detail levels C, G, R."""

    category_ids: np.ndarray
    graph_ids: np.ndarray
    route_ids: np.ndarray

    def __post_init__(self):
        c = _check_dense(self.category_ids, "category_ids")
        g = _check_dense(self.graph_ids, "graph_ids")
        r = _check_dense(self.route_ids, "route_ids")
        if not (c.size == g.size == r.size):
            raise ValueError("group id arrays must have equal length")
        object.__setattr__(self, "category_ids", c)
        object.__setattr__(self, "graph_ids", g)
        object.__setattr__(self, "route_ids", r)

    def labels(self, level: str) -> np.ndarray:
        try:
            return {
                "C": self.category_ids,
                "G": self.graph_ids,
                "R": self.route_ids,
            }[level]
        except KeyError:
            raise ValueError(f"unknown group level {level!r}") from None

    def n_groups(self, level: str) -> int:
        return int(self.labels(level).max()) + 1

    def __eq__(self, other):
        if not isinstance(other, GroupIndex):
            return NotImplemented
        return (
            np.array_equal(self.category_ids, other.category_ids)
            and np.array_equal(self.graph_ids, other.graph_ids)
            and np.array_equal(self.route_ids, other.route_ids)
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    """An ordered collection of scenarios with precomputed group ids."""

    entries: tuple
    groups: GroupIndex

    def __post_init__(self):
        entries = tuple(self.entries)
        if not entries:
            raise ValueError("dataset must contain at least one scenario")
        for i, s in enumerate(entries):
            if not isinstance(s, Scenario):
                raise TypeError(f"entry {i} is not a Scenario")
        if self.groups.category_ids.size != len(entries):
            raise ValueError("group index length does not match entry count")
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.groups == other.groups and self.entries == other.entries


def derive_action_sequence(traj: Trajectory) -> ActionSequence:
    """Extract (a_lat, a_lon, speed) rows and headings by central differences.

    Velocity is the central difference of position over the interior
    timestamps, speed its norm and the heading its angle.  Longitudinal
    acceleration differentiates speed, lateral acceleration is
    speed * heading rate with heading increments wrapped to (-pi, pi].
    The result has N - 2 rows.
    """
    if len(traj) < 3:
        raise ValueError("trajectory too short: need at least 3 points")
    pts = traj.points.astype(np.float64)
    t = pts[:, 2]
    if np.any(np.diff(t) <= 0):
        raise ValueError("non-monotonic time")
    span = t[2:] - t[:-2]
    vx = (pts[2:, 0] - pts[:-2, 0]) / span
    vy = (pts[2:, 1] - pts[:-2, 1]) / span
    speed = np.hypot(vx, vy)
    psi = np.arctan2(vy, vx)
    ti = t[1:-1]
    if speed.size == 1:
        a_lon = np.zeros(1)
        psi_rate = np.zeros(1)
    else:
        a_lon = np.gradient(speed, ti)
        psi_rate = np.gradient(np.unwrap(psi), ti)
    a_lat = speed * psi_rate
    rows = np.column_stack([a_lat, a_lon, speed])
    return ActionSequence(rows=rows, headings=psi)


def _point_segment_distance(px, py, ax, ay, bx, by):
    """Distance from point (px, py) to segment (a, b), vectorized over points."""
    abx, aby = bx - ax, by - ay
    denom = abx * abx + aby * aby
    if denom == 0.0:
        return np.hypot(px - ax, py - ay)
    u = ((px - ax) * abx + (py - ay) * aby) / denom
    u = np.clip(u, 0.0, 1.0)
    return np.hypot(px - (ax + u * abx), py - (ay + u * aby))


def point_to_polyline_distance(poly: np.ndarray, x: float, y: float) -> float:
    """Minimal Euclidean distance from a point to a polyline."""
    if poly.shape[0] == 1:
        return float(np.hypot(x - poly[0, 0], y - poly[0, 1]))
    best = np.inf
    for k in range(poly.shape[0] - 1):
        d = _point_segment_distance(
            x, y, poly[k, 0], poly[k, 1], poly[k + 1, 0], poly[k + 1, 1]
        )
        if d < best:
            best = float(d)
    return best


def map_point_to_vertex(
    graph: TopologyGraph, x: float, y: float, max_distance: float = 5.0
) -> int:
    """Return the vertex whose reference polyline is nearest to (x, y).

    Ties break toward the lowest vertex id.  A nearest distance above
    ``max_distance`` raises "point off-road".
    """
    best_id, best_d = 0, np.inf
    for vid, poly in enumerate(graph.polylines):
        d = point_to_polyline_distance(poly, x, y)
        if d < best_d:
            best_id, best_d = vid, d
    if best_d > max_distance:
        raise ValueError(
            f"point off-road: ({x:.2f}, {y:.2f}) is {best_d:.2f} m from the "
            f"nearest lane (threshold {max_distance} m)"
        )
    return best_id


def derive_route_labeling(
    graph: TopologyGraph, traj: Trajectory, max_distance: float = 5.0
) -> RouteLabeling:
    """Label the start vertex 2, every other visited vertex 1, the rest 0."""
    xy = traj.xy.astype(np.float64)
    visited = [
        map_point_to_vertex(graph, float(px), float(py), max_distance)
        for px, py in xy
    ]
    labels = np.zeros(graph.n_vertices, dtype=np.int64)
    labels[list(set(visited))] = 1
    labels[visited[0]] = 2
    return RouteLabeling(labels=labels)


def _bresenham(r0, c0, r1, c1):
    """Integer line raster between two cells, inclusive."""
    cells = []
    dr, dc = abs(r1 - r0), abs(c1 - c0)
    sr = 1 if r1 >= r0 else -1
    sc = 1 if c1 >= c0 else -1
    err = dc - dr
    r, c = r0, c0
    while True:
        cells.append((r, c))
        if r == r1 and c == c1:
            break
        e2 = 2 * err
        if e2 > -dr:
            err -= dr
            c += sc
        if e2 < dc:
            err += dc
            r += sr
    return cells


def build_reconstruction_target(
    s: Scenario, half_width_px: float = 1.0
) -> ReconstructionTarget:
    """Build the two-channel target: infrastructure masked to graph lanes and
    the rasterized trajectory."""
    img = s.image
    size = img.size
    rows, cols = np.meshgrid(
        np.arange(size, dtype=np.float64),
        np.arange(size, dtype=np.float64),
        indexing="ij",
    )
    mask = np.zeros((size, size), dtype=bool)
    for poly in s.graph.polylines:
        pix = img.world_to_pixel(poly)
        if pix.shape[0] == 1:
            d = np.hypot(rows - pix[0, 0], cols - pix[0, 1])
            mask |= d <= half_width_px
            continue
        for k in range(pix.shape[0] - 1):
            d = _point_segment_distance(
                cols, rows, pix[k, 1], pix[k, 0], pix[k + 1, 1], pix[k + 1, 0]
            )
            mask |= d <= half_width_px
    infra = np.where(mask, img.pixels.astype(np.float64), 0.0)

    traj_pix = img.world_to_pixel(s.trajectory.xy)
    idx = np.floor(traj_pix + 0.5).astype(np.int64)
    if idx.min() < 0 or idx.max() > size - 1:
        raise ValueError("trajectory out of frame")
    raster = np.zeros((size, size), dtype=np.float64)
    for k in range(idx.shape[0] - 1):
        for r, c in _bresenham(idx[k, 0], idx[k, 1], idx[k + 1, 0], idx[k + 1, 1]):
            raster[r, c] = 1.0
    channels = np.stack([infra, raster], axis=-1)
    return ReconstructionTarget(channels=channels)
