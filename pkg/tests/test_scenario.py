"""Data model invariants and derived quantities against independent oracles."""
import numpy as np
import pytest

from scenmetric.scenario import (
    GroupIndex,
    InfrastructureImage,
    RouteLabeling,
    Scenario,
    TopologyGraph,
    Trajectory,
    build_reconstruction_target,
    derive_action_sequence,
    derive_route_labeling,
    map_point_to_vertex,
)

from _util import line_trajectory, make_image, make_scenario, path_graph


# ---------------------------------------------------------------- type checks


def test_image_rejects_bad_shapes_and_values():
    with pytest.raises(ValueError, match="square"):
        InfrastructureImage(pixels=np.zeros((8, 9), np.float32), meters_per_pixel=1.0)
    with pytest.raises(ValueError, match=">= 8"):
        InfrastructureImage(pixels=np.zeros((4, 4), np.float32), meters_per_pixel=1.0)
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        InfrastructureImage(
            pixels=np.full((8, 8), 1.5, np.float32), meters_per_pixel=1.0
        )
    with pytest.raises(ValueError, match="positive"):
        InfrastructureImage(pixels=np.zeros((8, 8), np.float32), meters_per_pixel=0.0)


def test_image_world_to_pixel_hits_cell_centers():
    img = make_image(size=16, mpp=0.5)
    for row, col in [(0, 0), (3, 11), (15, 15)]:
        x = (col + 0.5) * img.meters_per_pixel - img.extent / 2.0
        y = (row + 0.5) * img.meters_per_pixel - img.extent / 2.0
        rc = img.world_to_pixel([(x, y)])[0]
        assert rc[0] == row and rc[1] == col


def test_trajectory_invariants():
    with pytest.raises(ValueError, match="at least 2"):
        Trajectory(points=np.array([[0.0, 0.0, 0.0]], np.float32))
    with pytest.raises(ValueError, match="non-monotonic time"):
        Trajectory(
            points=np.array([[0, 0, 0], [1, 0, 1], [2, 0, 1]], np.float32)
        )


def test_graph_invariants():
    poly = np.array([[0.0, 0.0], [1.0, 0.0]])
    with pytest.raises(ValueError, match="missing vertex"):
        TopologyGraph(polylines=(poly,), edges=((0, 1, "successor"),))
    with pytest.raises(ValueError, match="self-loop"):
        TopologyGraph(polylines=(poly, poly), edges=((0, 0, "successor"),))
    with pytest.raises(ValueError, match="edge kind"):
        TopologyGraph(polylines=(poly, poly), edges=((0, 1, "sibling"),))
    with pytest.raises(ValueError, match="at least one vertex"):
        TopologyGraph(polylines=(), edges=())


def test_route_labeling_invariants():
    with pytest.raises(ValueError, match=r"\{0, 1, 2\}"):
        RouteLabeling(labels=np.array([2, 3]))
    with pytest.raises(ValueError, match="label 2"):
        RouteLabeling(labels=np.array([0, 1, 1]))
    lab = RouteLabeling(labels=np.array([2, 1, 0]))
    assert lab == RouteLabeling(labels=np.array([2, 1, 0]))


def test_scenario_invariants():
    s = make_scenario()
    assert s.route.labels.tolist() == [2, 0, 0]
    with pytest.raises(ValueError, match="unknown category"):
        Scenario(
            image=s.image,
            trajectory=s.trajectory,
            graph=s.graph,
            route=s.route,
            category="bogus",
        )
    with pytest.raises(ValueError, match="does not match"):
        Scenario(
            image=s.image,
            trajectory=s.trajectory,
            graph=s.graph,
            route=RouteLabeling(labels=np.array([2, 0])),
            category="single-lane",
        )
    with pytest.raises(ValueError, match="not labeled 2"):
        Scenario(
            image=s.image,
            trajectory=s.trajectory,
            graph=s.graph,
            route=RouteLabeling(labels=np.array([1, 2, 0])),
            category="single-lane",
        )


def test_group_index_requires_dense_ids():
    with pytest.raises(ValueError, match="dense"):
        GroupIndex(
            category_ids=np.array([0, 2]),
            graph_ids=np.array([0, 1]),
            route_ids=np.array([0, 1]),
        )
    g = GroupIndex(
        category_ids=np.array([0, 0, 1]),
        graph_ids=np.array([0, 1, 2]),
        route_ids=np.array([0, 1, 1]),
    )
    assert g.n_groups("C") == 2
    assert g.n_groups("G") == 3
    assert g.labels("R").tolist() == [0, 1, 1]
    with pytest.raises(ValueError, match="unknown group level"):
        g.labels("X")


def test_arrays_are_frozen():
    s = make_scenario()
    with pytest.raises(ValueError):
        s.image.pixels[0, 0] = 1.0
    with pytest.raises(ValueError):
        s.route.labels[0] = 0


# ------------------------------------------------------- action sequences


def test_action_sequence_stationary_is_zero():
    pts = np.column_stack(
        [np.full(5, 2.0), np.full(5, -1.0), np.arange(5, dtype=float)]
    ).astype(np.float32)
    act = derive_action_sequence(Trajectory(points=pts))
    assert len(act) == 3
    assert np.allclose(act.rows, 0.0)


def test_action_sequence_uniform_motion():
    ts = np.arange(5, dtype=float)
    pts = np.column_stack([ts, np.zeros(5), ts]).astype(np.float32)
    act = derive_action_sequence(Trajectory(points=pts))
    assert np.allclose(act.rows[:, 2], 1.0)  # speed
    assert np.allclose(act.rows[:, 1], 0.0)  # a_lon
    assert np.allclose(act.rows[:, 0], 0.0)  # a_lat
    assert np.allclose(act.headings, 0.0)


def test_action_sequence_quadratic_position():
    # x = t^2: central differences of a quadratic are exact, so the
    # longitudinal acceleration must be exactly 2 at every interior step
    ts = np.arange(5, dtype=float)
    pts = np.column_stack([ts**2, np.zeros(5), ts]).astype(np.float32)
    act = derive_action_sequence(Trajectory(points=pts))
    assert np.allclose(act.rows[:, 2], [2.0, 4.0, 6.0], atol=1e-12)
    assert np.allclose(act.rows[:, 1], 2.0, atol=1e-12)
    assert np.allclose(act.rows[:, 0], 0.0, atol=1e-12)


def test_action_sequence_circular_motion_oracle():
    # counterclockwise circle, radius R, angular rate w: the closed forms are
    # speed = R*w, a_lon = 0, a_lat = R*w^2, heading = w*t + pi/2
    radius, omega, dt = 20.0, 0.5, 0.05
    ts = dt * np.arange(41)
    pts = np.column_stack(
        [radius * np.cos(omega * ts), radius * np.sin(omega * ts), ts]
    ).astype(np.float32)
    act = derive_action_sequence(Trajectory(points=pts))
    assert np.allclose(act.rows[:, 2], radius * omega, atol=1e-2)
    assert np.allclose(act.rows[:, 1], 0.0, atol=1e-2)
    assert np.allclose(act.rows[:, 0], radius * omega**2, atol=1e-2)
    expect_psi = np.mod(omega * ts[1:-1] + np.pi / 2 + np.pi, 2 * np.pi) - np.pi
    assert np.allclose(act.headings, expect_psi, atol=1e-3)


def test_action_sequence_handles_heading_wraparound():
    # driving in -x direction flips atan2 between pi and -pi under noise;
    # the wrapped heading rate must stay near zero instead of jumping by 2*pi
    rng = np.random.default_rng(7)
    n = 30
    ts = 0.1 * np.arange(n)
    xs = 50.0 - 5.0 * ts
    ys = 1e-4 * rng.standard_normal(n)
    pts = np.column_stack([xs, ys, ts]).astype(np.float32)
    act = derive_action_sequence(Trajectory(points=pts))
    assert np.max(np.abs(act.rows[:, 0])) < 1.0


def test_action_sequence_length_and_speed_sign():
    rng = np.random.default_rng(3)
    for trial in range(20):
        n = int(rng.integers(3, 40))
        ts = np.cumsum(rng.uniform(0.05, 0.3, size=n))
        xy = np.cumsum(rng.normal(0, 0.5, size=(n, 2)), axis=0)
        traj = Trajectory(points=np.column_stack([xy, ts]).astype(np.float32))
        act = derive_action_sequence(traj)
        assert len(act) == n - 2
        assert act.headings.shape == (n - 2,)
        assert np.all(act.rows[:, 2] >= 0)


def test_action_sequence_errors():
    short = Trajectory(points=np.array([[0, 0, 0], [1, 0, 1]], np.float32))
    with pytest.raises(ValueError, match="trajectory too short"):
        derive_action_sequence(short)


# ------------------------------------------------------ point to vertex


def _seg_dist(p, a, b):
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return float(np.hypot(p[0] - a[0], p[1] - a[1]))
    u = float((p - a) @ ab) / denom
    u = min(1.0, max(0.0, u))
    c = a + u * ab
    return float(np.hypot(p[0] - c[0], p[1] - c[1]))


def _nearest_vertex_oracle(graph, p):
    dists = []
    for poly in graph.polylines:
        if poly.shape[0] == 1:
            dists.append(float(np.hypot(p[0] - poly[0, 0], p[1] - poly[0, 1])))
        else:
            dists.append(
                min(
                    _seg_dist(p, poly[k], poly[k + 1])
                    for k in range(poly.shape[0] - 1)
                )
            )
    return int(np.argmin(dists)), float(min(dists))


def test_map_point_on_polyline_and_tie_break():
    g = path_graph(5)
    # vertex 3 spans x in [1.2, 3.6]; a point on it maps to 3
    assert map_point_to_vertex(g, 2.0, 0.0) == 3
    # point equidistant to two vertical segments picks the lower id
    polys = tuple(
        np.array([[x, -1.0], [x, 1.0]]) for x in (-2.0, -2.0, 7.0, 7.0, 2.0)
    )
    g2 = TopologyGraph(polylines=polys, edges=())
    assert map_point_to_vertex(g2, 0.0, 0.0) == 0  # ties with 1 and 4 at d=2


def test_map_point_threshold():
    poly0 = np.array([[0.0, 0.0], [4.0, 0.0]])
    poly1 = np.array([[0.0, 7.0], [4.0, 7.0]])
    g = TopologyGraph(polylines=(poly0, poly1), edges=())
    assert map_point_to_vertex(g, 2.0, 2.0) == 0  # 2 m vs 5 m away
    with pytest.raises(ValueError, match="point off-road"):
        map_point_to_vertex(g, 2.0, 13.0)  # 6 m from nearest


def test_map_point_against_brute_force():
    rng = np.random.default_rng(11)
    for trial in range(200):
        n = int(rng.integers(1, 7))
        polys = []
        for _ in range(n):
            k = int(rng.integers(1, 5))
            polys.append(rng.uniform(-8, 8, size=(k, 2)))
        g = TopologyGraph(polylines=tuple(polys), edges=())
        p = rng.uniform(-10, 10, size=2)
        want_id, want_d = _nearest_vertex_oracle(g, p)
        if want_d > 5.0:
            with pytest.raises(ValueError, match="off-road"):
                map_point_to_vertex(g, p[0], p[1])
        else:
            assert map_point_to_vertex(g, p[0], p[1]) == want_id


def test_point_distance_matches_dense_sampling():
    # independent check of the projection formula: minimum over a dense
    # sweep of points along the segment brackets the reported distance
    rng = np.random.default_rng(5)
    for trial in range(50):
        a, b = rng.uniform(-8, 8, size=(2, 2))
        p = rng.uniform(-10, 10, size=2)
        us = np.linspace(0.0, 1.0, 2001)
        pts = a[None, :] + us[:, None] * (b - a)[None, :]
        sampled = float(np.min(np.hypot(pts[:, 0] - p[0], pts[:, 1] - p[1])))
        exact = _seg_dist(p, a, b)
        step = float(np.hypot(*(b - a))) / 2000.0
        assert exact <= sampled + 1e-12
        assert sampled - exact <= step / 2.0 + 1e-9


# ------------------------------------------------------ route labeling


def test_route_labeling_examples():
    g = path_graph(3)  # spans [-6,-2], [-2,2], [2,6]
    inside0 = line_trajectory(-5.0, -3.0)
    assert derive_route_labeling(g, inside0).labels.tolist() == [2, 0, 0]
    across = line_trajectory(-5.0, 5.0)
    assert derive_route_labeling(g, across).labels.tolist() == [2, 1, 1]
    there_and_back = Trajectory(
        points=np.column_stack(
            [
                np.concatenate([np.linspace(-5, 1, 6), np.linspace(0, -5, 5)]),
                np.zeros(11),
                0.1 * np.arange(11),
            ]
        ).astype(np.float32)
    )
    assert derive_route_labeling(g, there_and_back).labels.tolist() == [2, 1, 0]


def test_route_labeling_against_per_point_membership():
    rng = np.random.default_rng(23)
    g = path_graph(4, span=14.0)
    for trial in range(50):
        n = int(rng.integers(2, 25))
        xs = rng.uniform(-6.9, 6.9, size=n)
        ys = rng.uniform(-0.5, 0.5, size=n)
        ts = np.cumsum(rng.uniform(0.05, 0.2, size=n))
        traj = Trajectory(points=np.column_stack([xs, ys, ts]).astype(np.float32))
        labels = derive_route_labeling(g, traj).labels
        visited = {
            map_point_to_vertex(g, float(x), float(y))
            for x, y in traj.xy.astype(np.float64)
        }
        start = map_point_to_vertex(
            g, float(traj.points[0, 0]), float(traj.points[0, 1])
        )
        for v in range(g.n_vertices):
            if v == start:
                assert labels[v] == 2
            elif v in visited:
                assert labels[v] == 1
            else:
                assert labels[v] == 0


def test_route_labeling_reparameterization_invariant():
    g = path_graph(3)
    xs = np.linspace(-5.0, 5.0, 21)
    base = Trajectory(
        points=np.column_stack([xs, np.zeros(21), 0.1 * np.arange(21)]).astype(
            np.float32
        )
    )
    # squashed, stretched and duplicated-position variants visit the same set
    warped = Trajectory(
        points=np.column_stack(
            [xs, np.zeros(21), 0.01 * (np.arange(21) + 1) ** 2]
        ).astype(np.float32)
    )
    doubled = Trajectory(
        points=np.column_stack(
            [np.repeat(xs, 2), np.zeros(42), 0.05 * np.arange(42)]
        ).astype(np.float32)
    )
    want = derive_route_labeling(g, base)
    assert derive_route_labeling(g, warped) == want
    assert derive_route_labeling(g, doubled) == want


def test_route_labeling_off_road_propagates():
    g = path_graph(3)
    far = line_trajectory(-5.0, -3.0, y=9.0)
    with pytest.raises(ValueError, match="point off-road"):
        derive_route_labeling(g, far)


def test_route_partition_property():
    rng = np.random.default_rng(31)
    for trial in range(20):
        s = make_scenario(x0=float(rng.uniform(-5.5, -3.5)), x1=float(rng.uniform(-3, 5)))
        labels = s.route.labels
        assert np.count_nonzero(labels == 2) >= 1
        for x, y in s.trajectory.xy.astype(np.float64):
            v = map_point_to_vertex(s.graph, float(x), float(y))
            assert labels[v] in (1, 2)


# ------------------------------------------------ reconstruction targets


def _segment_hits_box(p0, p1, rlo, rhi, clo, chi):
    # slab test for a segment in continuous (row, col) coordinates against an
    # axis-aligned box, boundaries inclusive
    d = p1 - p0
    tmin, tmax = 0.0, 1.0
    for axis, (lo, hi) in enumerate(((rlo, rhi), (clo, chi))):
        if d[axis] == 0.0:
            if not lo <= p0[axis] <= hi:
                return False
        else:
            t1 = (lo - p0[axis]) / d[axis]
            t2 = (hi - p0[axis]) / d[axis]
            t1, t2 = min(t1, t2), max(t1, t2)
            tmin, tmax = max(tmin, t1), min(tmax, t2)
            if tmin > tmax:
                return False
    return True


def test_target_horizontal_trajectory_raster():
    size = 16
    g = path_graph(1, y=-2.5, span=14.0)
    traj = line_trajectory(-4.5, 3.5, y=-2.5, n=9)  # cell centers, row 5
    s = Scenario(
        image=make_image(size=size),
        trajectory=traj,
        graph=g,
        route=derive_route_labeling(g, traj),
        category="single-lane",
    )
    target = build_reconstruction_target(s)
    raster = target.channels[:, :, 1]
    pix = s.image.world_to_pixel(traj.xy.astype(np.float64))
    want = np.zeros((size, size))
    for r in range(size):
        for c in range(size):
            for k in range(pix.shape[0] - 1):
                if _segment_hits_box(
                    pix[k], pix[k + 1], r - 0.5, r + 0.5, c - 0.5, c + 0.5
                ):
                    want[r, c] = 1.0
                    break
    assert np.array_equal(raster, want)
    assert set(zip(*np.nonzero(raster))) == {(5, c) for c in range(3, 12)}


def test_target_mask_empty_and_identity():
    size = 16
    # a lane 0.3 px off every pixel-center row produces an empty mask at
    # half-width 0.2
    g = path_graph(1, y=-7.2, span=14.0)
    traj = line_trajectory(-4.5, 3.5, y=-7.2, n=9)
    s = Scenario(
        image=make_image(size=size, seed=1),
        trajectory=traj,
        graph=g,
        route=derive_route_labeling(g, traj),
        category="single-lane",
    )
    t = build_reconstruction_target(s, half_width_px=0.2)
    assert np.all(t.channels[:, :, 0] == 0.0)

    # one lane per pixel row covers everything, so channel 0 equals the image
    ys = [(r + 0.5) - 8.0 for r in range(size)]
    polys = tuple(np.array([[-7.0, y], [7.0, y]]) for y in ys)
    g2 = TopologyGraph(polylines=polys, edges=())
    traj2 = line_trajectory(-4.5, 3.5, y=ys[8], n=9)
    s2 = Scenario(
        image=make_image(size=size, seed=2),
        trajectory=traj2,
        graph=g2,
        route=derive_route_labeling(g2, traj2),
        category="single-lane",
    )
    t2 = build_reconstruction_target(s2)
    assert np.array_equal(t2.channels[:, :, 0], s2.image.pixels.astype(np.float64))


def test_target_mask_against_per_pixel_oracle():
    rng = np.random.default_rng(17)
    size = 16
    for trial in range(10):
        n = int(rng.integers(1, 4))
        polys = [rng.uniform(-7, 7, size=(int(rng.integers(2, 4)), 2)) for _ in range(n)]
        g = TopologyGraph(polylines=tuple(polys), edges=())
        start = polys[0][0]
        traj = Trajectory(
            points=np.array(
                [
                    [start[0], start[1], 0.0],
                    [start[0] + 0.3, start[1], 0.5],
                    [start[0], start[1] + 0.3, 1.0],
                ],
                np.float32,
            )
        )
        s = Scenario(
            image=make_image(size=size, seed=trial),
            trajectory=traj,
            graph=g,
            route=derive_route_labeling(g, traj),
            category="single-lane",
        )
        got = build_reconstruction_target(s).channels[:, :, 0]
        img = s.image
        for r in range(size):
            for c in range(size):
                x = (c + 0.5) * img.meters_per_pixel - img.extent / 2.0
                y = (r + 0.5) * img.meters_per_pixel - img.extent / 2.0
                d = min(
                    _seg_dist(np.array([x, y]), poly[k], poly[k + 1])
                    for poly in g.polylines
                    for k in range(poly.shape[0] - 1)
                )
                inside = d / img.meters_per_pixel <= 1.0
                if inside:
                    assert got[r, c] == float(img.pixels[r, c])
                else:
                    assert got[r, c] == 0.0


def test_target_channel_bounds_and_raster_values():
    s = make_scenario(seed=9)
    t = build_reconstruction_target(s)
    assert t.channels.shape == (16, 16, 2)
    assert t.channels.min() >= 0.0 and t.channels.max() <= 1.0
    raster = t.channels[:, :, 1]
    assert set(np.unique(raster)) <= {0.0, 1.0}
    # endpoints of the trajectory are always marked
    pix = s.image.world_to_pixel(s.trajectory.xy.astype(np.float64))
    idx = np.floor(pix + 0.5).astype(int)
    assert raster[idx[0, 0], idx[0, 1]] == 1.0
    assert raster[idx[-1, 0], idx[-1, 1]] == 1.0


def test_target_out_of_frame():
    poly = np.array([[-6.0, 0.0], [40.0, 0.0]])
    g = TopologyGraph(polylines=(poly,), edges=())
    traj = line_trajectory(-5.0, 30.0)
    s = Scenario(
        image=make_image(size=16),
        trajectory=traj,
        graph=g,
        route=derive_route_labeling(g, traj),
        category="single-lane",
    )
    with pytest.raises(ValueError, match="trajectory out of frame"):
        build_reconstruction_target(s)
