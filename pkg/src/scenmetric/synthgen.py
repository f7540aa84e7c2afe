"""Procedural scenario generator.

Eight built-in road templates, one per scenario category, each with three
legal routes given as waypoint polylines.  A scenario instance applies a
small similarity transform (rotation, translation, near-unit scale) to the
whole template, renders the lane drawing into the image, and drives the
route with a randomized speed profile over a 6 s span at 10 Hz.

Because the transform is applied to lanes and trajectory jointly, relative
distances are preserved exactly: the trajectory stays on-road and maps to
the same lane pieces in every instance, so the route labeling is an
invariant of the (template, route) pair.  Category pairs such as the
intersection and its entering variant share the same drawn geometry and
differ only in how lanes are subdivided into graph pieces and in their
speed style, which keeps the pair apart for route supervision while their
images stay indistinguishable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .scenario import (
    CATEGORIES,
    Dataset,
    GroupIndex,
    InfrastructureImage,
    RouteLabeling,
    Scenario,
    TopologyGraph,
    Trajectory,
    _point_segment_distance,
)

__all__ = ["GeneratorConfig", "RouteSpec", "Template", "template_catalog", "generate"]

WORLD_EXTENT = 200.0
TIME_SPAN = 6.0
TIME_STEP = 0.1
N_SAMPLES = int(round(TIME_SPAN / TIME_STEP)) + 1


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs for procedural dataset generation."""

    seed: int = 0
    scenarios_per_template: int = 10
    templates: tuple = CATEGORIES
    image_size: int = 64
    speed_profiles: tuple = ((0.05, 0.15), (0.2, 0.3), (0.35, 0.45))
    jitter: float = 4.0

    def __post_init__(self):
        if self.scenarios_per_template < 1:
            raise ValueError("scenarios_per_template must be >= 1")
        if self.image_size < 8:
            raise ValueError("image_size must be >= 8")
        if self.jitter < 0:
            raise ValueError("jitter must be nonnegative")
        if len(self.templates) == 0:
            raise ValueError("template set empty")
        for name in self.templates:
            if name not in CATEGORIES:
                raise ValueError(f"unknown template {name!r}")
        if len(set(self.templates)) != len(self.templates):
            raise ValueError("duplicate template names")
        if len(self.speed_profiles) < 1:
            raise ValueError("need at least one speed profile")
        for lo, hi in self.speed_profiles:
            if not (0 <= lo <= hi):
                raise ValueError("speed profile amplitude range must be ordered")


@dataclass(frozen=True)
class RouteSpec:
    """A legal drive through a template: waypoints plus the route labels
    every instance of this route must reproduce."""

    name: str
    waypoints: np.ndarray
    labels: np.ndarray


@dataclass(frozen=True)
class Template:
    category: str
    graph: TopologyGraph
    routes: tuple
    speed_style: str = "cruise"


# ------------------------------------------------------------- geometry


def _seg(x0, y0, x1, y1):
    return np.array([[x0, y0], [x1, y1]], dtype=np.float64)


def _ring_points(a0_deg, a1_deg, radius=20.0, step_deg=15.0):
    """Clockwise arc over the shared 24-gon so subdivisions stay collinear."""
    n = int(round((a0_deg - a1_deg) / step_deg))
    angles = np.deg2rad(a0_deg - step_deg * np.arange(n + 1))
    return np.column_stack([radius * np.cos(angles), radius * np.sin(angles)])


def _map_points_to_vertices(graph, xs, ys, max_distance=5.0):
    """Vectorized nearest-piece lookup matching ``map_point_to_vertex``:
    same elementwise arithmetic, ties to the lowest vertex id."""
    dists = np.empty((xs.size, graph.n_vertices))
    for vid, poly in enumerate(graph.polylines):
        if poly.shape[0] == 1:
            dists[:, vid] = np.hypot(xs - poly[0, 0], ys - poly[0, 1])
            continue
        best = np.full(xs.size, np.inf)
        for k in range(poly.shape[0] - 1):
            d = _point_segment_distance(
                xs, ys, poly[k, 0], poly[k, 1], poly[k + 1, 0], poly[k + 1, 1]
            )
            np.minimum(best, d, out=best)
        dists[:, vid] = best
    nearest = dists.min(axis=1)
    if nearest.max() > max_distance:
        worst = int(nearest.argmax())
        raise ValueError(
            f"point off-road: ({xs[worst]:.2f}, {ys[worst]:.2f}) is "
            f"{nearest[worst]:.2f} m from the nearest lane "
            f"(threshold {max_distance} m)"
        )
    return dists.argmin(axis=1)


def _route_labels(graph, waypoints):
    """Dense-sample the path and collect visited pieces per the label rules."""
    deltas = np.diff(waypoints, axis=0)
    seg_len = np.hypot(deltas[:, 0], deltas[:, 1])
    total = float(seg_len.sum())
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    s = np.linspace(0.0, total, 2000)
    xs = np.interp(s, cum, waypoints[:, 0])
    ys = np.interp(s, cum, waypoints[:, 1])
    mapped = _map_points_to_vertices(graph, xs, ys)
    labels = np.zeros(graph.n_vertices, dtype=np.int64)
    labels[np.unique(mapped)] = 1
    labels[mapped[0]] = 2
    return labels


def _make_template(category, polylines, edges, route_points, style):
    graph = TopologyGraph(polylines=tuple(polylines), edges=tuple(edges))
    routes = []
    for name, pts in route_points:
        wp = np.asarray(pts, dtype=np.float64)
        routes.append(
            RouteSpec(name=name, waypoints=wp, labels=_route_labels(graph, wp))
        )
    return Template(
        category=category, graph=graph, routes=tuple(routes), speed_style=style
    )


@lru_cache(maxsize=1)
def template_catalog():
    """The 8 built-in template families, one per category.

    Graphs are deliberately asymmetric (uneven lane subdivision) so each
    route occupies its own route-isomorphism class, and paired categories
    reuse the same drawn strokes split at different collinear points.
    """
    catalog = []

    # single-lane: one road in three uneven pieces
    catalog.append(
        _make_template(
            "single-lane",
            [_seg(-80, 0, -30, 0), _seg(-30, 0, 10, 0), _seg(10, 0, 80, 0)],
            [(0, 1, "successor"), (1, 2, "successor")],
            [
                ("full", [(-80, 0), (80, 0)]),
                ("stop-early", [(-80, 0), (10, 0)]),
                ("start-mid", [(-10, 0), (80, 0)]),
            ],
            "cruise",
        )
    )

    # multi-lane: two parallel lanes, 2 + 3 pieces, neighbor-linked
    catalog.append(
        _make_template(
            "multi-lane",
            [
                _seg(-80, 2, 0, 2),
                _seg(0, 2, 80, 2),
                _seg(-80, -2, -20, -2),
                _seg(-20, -2, 30, -2),
                _seg(30, -2, 80, -2),
            ],
            [
                (0, 1, "successor"),
                (2, 3, "successor"),
                (3, 4, "successor"),
                (0, 2, "neighbor"),
                (2, 0, "neighbor"),
                (0, 3, "neighbor"),
                (3, 0, "neighbor"),
                (1, 3, "neighbor"),
                (3, 1, "neighbor"),
                (1, 4, "neighbor"),
                (4, 1, "neighbor"),
            ],
            [
                ("left-lane", [(-80, 2), (80, 2)]),
                ("right-lane", [(-80, -2), (80, -2)]),
                ("right-partial", [(-80, -2), (25, -2)]),
            ],
            "cruise",
        )
    )

    # shared 4-way strokes: arms plus one straight and two turn curves
    arm_w = _seg(-80, 0, -8, 0)
    arm_e = _seg(8, 0, 80, 0)
    c_str = _seg(-8, 0, 8, 0)
    c_left = np.array([[-8, 0], [-4, 0.8], [0, 4], [0, 8]], dtype=np.float64)
    c_right = np.array([[-8, 0], [-4, -0.8], [0, -4], [0, -8]], dtype=np.float64)
    straight_pts = [(-80, 0), (-8, 0), (8, 0), (80, 0)]
    left_pts = [(-80, 0), (-8, 0), (-4, 0.8), (0, 4), (0, 8), (0, 80)]
    right_pts = [(-80, 0), (-8, 0), (-4, -0.8), (0, -4), (0, -8), (0, -80)]

    # intersection: exits split 1/2/3 ways to break all arm symmetry
    catalog.append(
        _make_template(
            "intersection",
            [
                arm_w,
                c_str,
                c_left,
                c_right,
                arm_e,
                _seg(0, 8, 0, 40),
                _seg(0, 40, 0, 80),
                _seg(0, -8, 0, -30),
                _seg(0, -30, 0, -55),
                _seg(0, -55, 0, -80),
            ],
            [
                (0, 1, "successor"),
                (0, 2, "successor"),
                (0, 3, "successor"),
                (1, 4, "successor"),
                (2, 5, "successor"),
                (5, 6, "successor"),
                (3, 7, "successor"),
                (7, 8, "successor"),
                (8, 9, "successor"),
            ],
            [
                ("straight", straight_pts),
                ("left", left_pts),
                ("right", right_pts),
            ],
            "cruise",
        )
    )

    # intersection-entering: same strokes, different subdivision (branch
    # chains keep distinct lengths so no two routes are swappable), give-way
    # markings flanking the entry, and a decelerating approach profile
    catalog.append(
        _make_template(
            "intersection-entering",
            [
                _seg(-80, 0, -40, 0),
                _seg(-40, 0, -8, 0),
                c_str,
                c_left,
                c_right,
                _seg(8, 0, 40, 0),
                _seg(40, 0, 80, 0),
                _seg(0, 8, 0, 80),
                _seg(0, -8, 0, -30),
                _seg(0, -30, 0, -55),
                _seg(0, -55, 0, -80),
                # marker rows sit 7 m off the lane: far enough that
                # trajectory points always map to the arm and the strokes
                # render clear of the lane band
                _seg(-24, 7, -10, 7),
                _seg(-24, -7, -10, -7),
            ],
            [
                (0, 1, "successor"),
                (1, 2, "successor"),
                (1, 3, "successor"),
                (1, 4, "successor"),
                (2, 5, "successor"),
                (5, 6, "successor"),
                (3, 7, "successor"),
                (4, 8, "successor"),
                (8, 9, "successor"),
                (9, 10, "successor"),
            ],
            [
                ("straight", straight_pts),
                ("left", left_pts),
                ("right", right_pts),
            ],
            "enter",
        )
    )

    # roundabout: 24-gon ring in four arcs, west entry, two exits
    ring_a1 = _ring_points(180, 90)
    ring_a2 = _ring_points(90, 0)
    ring_a3 = _ring_points(0, -90)
    ring_a4 = _ring_points(-90, -180)
    entry_w = _seg(-80, 0, -20, 0)
    exit_n = _seg(0, 20, 0, 80)
    exit_e = _seg(20, 0, 80, 0)
    loop_pts = np.vstack([[(-80, 0)], ring_a1, ring_a2[1:], ring_a3[1:], ring_a4[1:]])
    north_pts = np.vstack([[(-80, 0)], ring_a1, [(0, 80)]])
    east_pts = np.vstack([[(-80, 0)], ring_a1, ring_a2[1:], [(80, 0)]])
    catalog.append(
        _make_template(
            "roundabout",
            [entry_w, ring_a1, ring_a2, ring_a3, ring_a4, exit_n, exit_e],
            [
                (0, 1, "successor"),
                (1, 2, "successor"),
                (2, 3, "successor"),
                (3, 4, "successor"),
                (4, 1, "successor"),
                (1, 5, "successor"),
                (2, 6, "successor"),
            ],
            [
                ("exit-north", north_pts),
                ("exit-east", east_pts),
                ("full-loop", loop_pts),
            ],
            "cruise",
        )
    )

    # roundabout-entering: same ring drawn from the same 24-gon, split
    # into three arcs instead, entry and east exit split in two, give-way
    # markings flanking the approach
    ring_b1 = _ring_points(180, 75)
    ring_b2 = _ring_points(75, -45)
    ring_b3 = _ring_points(-45, -180)
    enter_north = np.vstack([[(-80, 0)], ring_b1[: 24 // 4 + 1], [(0, 80)]])
    enter_east = np.vstack(
        [[(-80, 0)], ring_b1, ring_b2[: (75 - 0) // 15 + 1][1:], [(80, 0)]]
    )
    catalog.append(
        _make_template(
            "roundabout-entering",
            [
                _seg(-80, 0, -50, 0),
                _seg(-50, 0, -20, 0),
                ring_b1,
                ring_b2,
                ring_b3,
                exit_n,
                _seg(20, 0, 50, 0),
                _seg(50, 0, 80, 0),
                # 7 m off the entry lane, see intersection-entering
                _seg(-46, 7, -32, 7),
                _seg(-46, -7, -32, -7),
            ],
            [
                (0, 1, "successor"),
                (1, 2, "successor"),
                (2, 3, "successor"),
                (3, 4, "successor"),
                (4, 2, "successor"),
                (2, 5, "successor"),
                (3, 6, "successor"),
                (6, 7, "successor"),
            ],
            [
                ("enter-north", enter_north),
                ("enter-stop", [(-80, 0), (-20, 0)]),
                ("enter-east", enter_east),
            ],
            "enter",
        )
    )

    # highway: three parallel lanes subdivided 1/2/3
    catalog.append(
        _make_template(
            "highway",
            [
                _seg(-80, 4, 80, 4),
                _seg(-80, 0, 0, 0),
                _seg(0, 0, 80, 0),
                _seg(-80, -4, -30, -4),
                _seg(-30, -4, 30, -4),
                _seg(30, -4, 80, -4),
            ],
            [
                (1, 2, "successor"),
                (3, 4, "successor"),
                (4, 5, "successor"),
                (0, 1, "neighbor"),
                (1, 0, "neighbor"),
                (0, 2, "neighbor"),
                (2, 0, "neighbor"),
                (1, 3, "neighbor"),
                (3, 1, "neighbor"),
                (1, 4, "neighbor"),
                (4, 1, "neighbor"),
                (2, 4, "neighbor"),
                (4, 2, "neighbor"),
                (2, 5, "neighbor"),
                (5, 2, "neighbor"),
            ],
            [
                ("top-lane", [(-80, 4), (80, 4)]),
                ("middle-lane", [(-80, 0), (80, 0)]),
                ("bottom-lane", [(-80, -4), (80, -4)]),
            ],
            "cruise",
        )
    )

    # highway-entering: same lanes plus an on-ramp merging into the
    # middle piece of the bottom lane; the ego accelerates to merge
    catalog.append(
        _make_template(
            "highway-entering",
            [
                _seg(-80, 4, 80, 4),
                _seg(-80, 0, 0, 0),
                _seg(0, 0, 80, 0),
                _seg(-80, -4, -30, -4),
                _seg(-30, -4, 30, -4),
                _seg(30, -4, 80, -4),
                np.array([[-80, -40], [-40, -10], [-20, -4]], dtype=np.float64),
            ],
            [
                (1, 2, "successor"),
                (3, 4, "successor"),
                (4, 5, "successor"),
                (6, 4, "successor"),
                (0, 1, "neighbor"),
                (1, 0, "neighbor"),
                (0, 2, "neighbor"),
                (2, 0, "neighbor"),
                (1, 3, "neighbor"),
                (3, 1, "neighbor"),
                (1, 4, "neighbor"),
                (4, 1, "neighbor"),
                (2, 4, "neighbor"),
                (4, 2, "neighbor"),
                (2, 5, "neighbor"),
                (5, 2, "neighbor"),
            ],
            [
                ("ramp-merge", [(-80, -40), (-40, -10), (-20, -4), (80, -4)]),
                ("middle-lane", [(-80, 0), (80, 0)]),
                ("bottom-lane", [(-80, -4), (80, -4)]),
            ],
            "merge",
        )
    )

    assert tuple(t.category for t in catalog) == CATEGORIES
    return tuple(catalog)


# ------------------------------------------------------------ rendering


def _render_lanes(polylines, size, mpp, half_width_px=1.0):
    rows, cols = np.meshgrid(
        np.arange(size, dtype=np.float64),
        np.arange(size, dtype=np.float64),
        indexing="ij",
    )
    half = size / 2.0
    mask = np.zeros((size, size), dtype=bool)
    for poly in polylines:
        pix_c = poly[:, 0] / mpp + half - 0.5
        pix_r = poly[:, 1] / mpp + half - 0.5
        for k in range(poly.shape[0] - 1):
            d = _point_segment_distance(
                cols, rows, pix_c[k], pix_r[k], pix_c[k + 1], pix_r[k + 1]
            )
            mask |= d <= half_width_px
    return mask.astype(np.float32)


# ----------------------------------------------------------- trajectories


def _speed_curve(style, amp, freq, phase, tau):
    if style == "cruise":
        v = 1.0 + amp * np.sin(2.0 * np.pi * freq * tau + phase)
    elif style == "enter":
        v = 0.25 + 1.5 * (1.0 - tau) ** 2 + 0.2 * amp * np.sin(
            2.0 * np.pi * freq * tau + phase
        )
    elif style == "merge":
        v = 0.35 + 1.4 * tau**2 + 0.2 * amp * np.sin(
            2.0 * np.pi * freq * tau + phase
        )
    else:
        raise ValueError(f"unknown speed style {style!r}")
    return np.maximum(v, 0.0) + 0.05


def _sample_path(waypoints, distances):
    deltas = np.diff(waypoints, axis=0)
    seg_len = np.hypot(deltas[:, 0], deltas[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    xs = np.interp(distances, cum, waypoints[:, 0])
    ys = np.interp(distances, cum, waypoints[:, 1])
    return np.column_stack([xs, ys]), float(cum[-1])


def _transform(points, angle, scale, shift):
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    return scale * points @ rot.T + shift


def generate(config: GeneratorConfig) -> Dataset:
    """Build a deterministic labeled dataset from the template catalog."""
    catalog = template_catalog()
    by_name = {t.category: (i, t) for i, t in enumerate(catalog)}
    selected = [by_name[name] for name in config.templates]
    size = config.image_size
    mpp = WORLD_EXTENT / size

    entries = []
    cat_ids, graph_ids, route_ids = [], [], []
    route_counter = 0
    for sel_idx, (cat_idx, tmpl) in enumerate(selected):
        for ri, route in enumerate(tmpl.routes):
            for k in range(config.scenarios_per_template):
                ss = np.random.SeedSequence(
                    config.seed, spawn_key=(cat_idx, ri, k)
                )
                rng = np.random.default_rng(ss)
                angle = rng.uniform(-0.02, 0.02) * config.jitter
                shift = rng.uniform(-config.jitter, config.jitter, size=2)
                scale = 1.0 + rng.uniform(-0.004, 0.004) * config.jitter
                lo, hi = config.speed_profiles[
                    int(rng.integers(len(config.speed_profiles)))
                ]
                amp = rng.uniform(lo, hi)
                freq = int(rng.integers(1, 3))
                phase = rng.uniform(0.0, 2.0 * np.pi)
                # an entering ego has not cleared the junction yet, so its
                # endpoint sits well short of the route end
                if tmpl.speed_style == "enter":
                    pullback = rng.uniform(8.0, 18.0)
                else:
                    pullback = rng.uniform(0.5, 3.0)

                polys = tuple(
                    _transform(p, angle, scale, shift) for p in tmpl.graph.polylines
                )
                graph = TopologyGraph(polylines=polys, edges=tmpl.graph.edges)
                waypoints = _transform(route.waypoints, angle, scale, shift)

                tau = np.linspace(0.0, 1.0, N_SAMPLES)
                v = _speed_curve(tmpl.speed_style, amp, freq, phase, tau)
                s_rel = np.concatenate(
                    [[0.0], np.cumsum((v[1:] + v[:-1]) / 2.0)]
                )
                s_rel /= s_rel[-1]

                deltas = np.diff(waypoints, axis=0)
                total = float(np.hypot(deltas[:, 0], deltas[:, 1]).sum())
                # pull the endpoint inside the final piece so no sample sits
                # exactly on a piece boundary
                target = max(total - pullback, total * 0.5)

                traj = None
                for attempt in range(8):
                    dist = s_rel * target
                    if attempt:
                        # shift interior samples off any boundary-grazing spot
                        dist = np.minimum(dist + 0.013 * attempt, target)
                        dist[0] = 0.0
                    xy, _ = _sample_path(waypoints, dist)
                    pts = np.column_stack(
                        [xy, TIME_STEP * np.arange(N_SAMPLES)]
                    ).astype(np.float32)
                    candidate = Trajectory(points=pts)
                    fxy = candidate.xy.astype(np.float64)
                    mapped = _map_points_to_vertices(graph, fxy[:, 0], fxy[:, 1])
                    got = np.zeros(graph.n_vertices, dtype=np.int64)
                    got[np.unique(mapped)] = 1
                    got[mapped[0]] = 2
                    if np.array_equal(got, route.labels):
                        traj = candidate
                        break
                if traj is None:
                    raise RuntimeError(
                        f"could not realize route {route.name!r} of "
                        f"{tmpl.category!r} with consistent labels"
                    )

                image = InfrastructureImage(
                    pixels=_render_lanes(polys, size, mpp),
                    meters_per_pixel=mpp,
                )
                scenario = Scenario(
                    image=image,
                    trajectory=traj,
                    graph=graph,
                    route=RouteLabeling(labels=route.labels.copy()),
                    category=tmpl.category,
                )
                entries.append(scenario)
                cat_ids.append(sel_idx)
                graph_ids.append(sel_idx)
                route_ids.append(route_counter)
            route_counter += 1

    groups = GroupIndex(
        category_ids=np.asarray(cat_ids),
        graph_ids=np.asarray(graph_ids),
        route_ids=np.asarray(route_ids),
    )
    return Dataset(entries=tuple(entries), groups=groups)
