"""Similarity measures checked against exhaustive enumeration oracles."""
import itertools

import numpy as np
import pytest

from scenmetric.scenario import (
    EDGE_KINDS,
    ActionSequence,
    RouteLabeling,
    TopologyGraph,
)
from scenmetric.similarity import (
    CanonicalForm,
    DtwResult,
    IsomorphismWitness,
    canonical_code,
    dtw,
    find_isomorphism,
    infra_similarity,
    route_similarity,
    trajectory_similarity,
)


def _graph(n, edges):
    polys = tuple(
        np.array([[float(i), 0.0], [float(i), 1.0]]) for i in range(n)
    )
    return TopologyGraph(polylines=polys, edges=tuple(edges))


def _kind_matrix(g):
    A = np.zeros((g.n_vertices, g.n_vertices), dtype=np.int64)
    for s, d, k in g.edges:
        A[s, d] |= 1 << EDGE_KINDS.index(k)
    return A


def _oracle_iso(g1, g2, lab1=None, lab2=None):
    # exhaustive bijection enumeration, vectorized over all permutations
    n = g1.n_vertices
    if g2.n_vertices != n:
        return False
    A1, A2 = _kind_matrix(g1), _kind_matrix(g2)
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    ok = (A2[perms[:, :, None], perms[:, None, :]] == A1[None]).all(axis=(1, 2))
    if lab1 is not None:
        ok &= (np.asarray(lab2)[perms] == np.asarray(lab1)[None]).all(axis=1)
    return bool(ok.any())


def _random_graph(rng, n, p=0.35):
    edges = []
    for s in range(n):
        for d in range(n):
            if s != d and rng.random() < p:
                edges.append((s, d, EDGE_KINDS[int(rng.integers(2))]))
    return _graph(n, edges)


def _permuted(g, perm):
    n = g.n_vertices
    polys = [None] * n
    for v in range(n):
        polys[perm[v]] = g.polylines[v]
    edges = tuple((perm[s], perm[d], k) for s, d, k in g.edges)
    return TopologyGraph(polylines=tuple(polys), edges=edges)


def _check_witness(w, g1, g2, lab1=None, lab2=None):
    m = w.mapping
    A1, A2 = _kind_matrix(g1), _kind_matrix(g2)
    assert np.array_equal(A2[np.ix_(m, m)], A1)
    if lab1 is not None:
        assert np.array_equal(np.asarray(lab2)[m], np.asarray(lab1))


# ------------------------------------------------------- infra similarity


def test_identical_cycles_are_isomorphic():
    cyc = _graph(4, [(i, (i + 1) % 4, "successor") for i in range(4)])
    assert infra_similarity(cyc, cyc) == 1


def test_cycle_vs_path():
    cyc = _graph(4, [(i, (i + 1) % 4, "successor") for i in range(4)])
    path = _graph(4, [(i, i + 1, "successor") for i in range(3)])
    assert infra_similarity(cyc, path) == 0
    assert infra_similarity(path, cyc) == 0


def test_six_vertex_permuted_intersection():
    # two entry lanes feed a junction pair that fans out to two exits
    edges = [
        (0, 2, "successor"),
        (1, 3, "successor"),
        (2, 4, "successor"),
        (3, 5, "successor"),
        (2, 3, "neighbor"),
        (4, 5, "neighbor"),
    ]
    g = _graph(6, edges)
    perm = [4, 2, 0, 5, 1, 3]
    h = _permuted(g, perm)
    assert _oracle_iso(g, h)
    assert infra_similarity(g, h) == 1
    _check_witness(find_isomorphism(g, h), g, h)


def test_edge_kinds_must_match():
    a = _graph(2, [(0, 1, "successor")])
    b = _graph(2, [(0, 1, "neighbor")])
    assert infra_similarity(a, b) == 0
    assert infra_similarity(a, a) == 1


def test_infra_against_brute_force():
    rng = np.random.default_rng(42)
    agree = 0
    for trial in range(300):
        n = int(rng.integers(2, 6))
        g1 = _random_graph(rng, n)
        mode = trial % 3
        if mode == 0:
            g2 = _random_graph(rng, n)
        elif mode == 1:
            g2 = _permuted(g1, list(rng.permutation(n)))
        else:
            # permute, then flip one edge kind to usually break the match
            g2 = _permuted(g1, list(rng.permutation(n)))
            if g2.edges:
                s, d, k = g2.edges[0]
                flipped = ("neighbor" if k == "successor" else "successor")
                g2 = TopologyGraph(
                    polylines=g2.polylines,
                    edges=((s, d, flipped),) + g2.edges[1:],
                )
        want = _oracle_iso(g1, g2)
        got = infra_similarity(g1, g2)
        assert got == int(want)
        assert got == infra_similarity(g2, g1)  # symmetry
        agree += 1
    assert agree == 300


# ------------------------------------------------------- route similarity


def test_route_same_graph_same_labels():
    g = _graph(3, [(0, 1, "successor"), (1, 2, "successor")])
    r = RouteLabeling(labels=np.array([2, 1, 0]))
    assert route_similarity(g, r, g, r) == 1


def test_route_on_non_corresponding_branch():
    # directed 5-path has only the identity automorphism, so routes pinned
    # to opposite ends cannot be aligned even though the graphs match
    g = _graph(5, [(i, i + 1, "successor") for i in range(4)])
    r_head = RouteLabeling(labels=np.array([2, 1, 0, 0, 0]))
    r_tail = RouteLabeling(labels=np.array([0, 0, 0, 1, 2]))
    assert infra_similarity(g, g) == 1
    assert not _oracle_iso(g, g, r_head.labels, r_tail.labels)
    assert route_similarity(g, r_head, g, r_tail) == 0


def test_route_related_by_rotation():
    # 4-way intersection: approach k feeds exits (k+1) and (k+3) mod 4;
    # the quarter-turn is an automorphism that aligns the two routes
    edges = []
    for k in range(4):
        edges.append((k, 4 + (k + 1) % 4, "successor"))
        edges.append((k, 4 + (k + 3) % 4, "successor"))
    g = _graph(8, edges)
    r_i = np.zeros(8, dtype=np.int64)
    r_i[0], r_i[4 + 1] = 2, 1
    r_j = np.zeros(8, dtype=np.int64)
    r_j[1], r_j[4 + 2] = 2, 1
    assert _oracle_iso(g, g, r_i, r_j)
    assert route_similarity(
        g, RouteLabeling(labels=r_i), g, RouteLabeling(labels=r_j)
    ) == 1
    w = find_isomorphism(g, g, r_i, r_j)
    _check_witness(w, g, g, r_i, r_j)


def test_route_against_brute_force():
    rng = np.random.default_rng(7)
    for trial in range(200):
        n = int(rng.integers(2, 6))
        g1 = _random_graph(rng, n)
        lab1 = rng.integers(0, 3, size=n)
        lab1[int(rng.integers(n))] = 2
        if trial % 2 == 0:
            g2 = _random_graph(rng, n)
            lab2 = rng.integers(0, 3, size=n)
            lab2[int(rng.integers(n))] = 2
        else:
            perm = list(rng.permutation(n))
            g2 = _permuted(g1, perm)
            lab2 = np.empty(n, dtype=np.int64)
            for v in range(n):
                lab2[perm[v]] = lab1[v]
            if trial % 4 == 1 and n >= 2:
                lab2[:2] = lab2[[1, 0]]  # perturb to usually break alignment
                if not np.any(lab2 == 2):
                    lab2[0] = 2
        want = _oracle_iso(g1, g2, lab1, lab2)
        got = route_similarity(
            g1,
            RouteLabeling(labels=lab1),
            g2,
            RouteLabeling(labels=lab2),
        )
        assert got == int(want)
        if got == 1:
            assert infra_similarity(g1, g2) == 1  # route match implies graph match


def test_route_label_alignment_checked():
    g = _graph(3, [(0, 1, "successor")])
    r_bad = RouteLabeling(labels=np.array([2, 0]))
    r_ok = RouteLabeling(labels=np.array([2, 0, 0]))
    with pytest.raises(ValueError, match="not aligned"):
        route_similarity(g, r_bad, g, r_ok)


def test_witness_must_be_permutation():
    with pytest.raises(ValueError, match="permutation"):
        IsomorphismWitness(mapping=np.array([0, 0, 1]))


# -------------------------------------------------------- canonical codes


def test_canonical_code_examples():
    path3 = _graph(3, [(0, 1, "successor"), (1, 2, "successor")])
    star3 = _graph(3, [(0, 1, "successor"), (0, 2, "successor")])
    assert canonical_code(path3) != canonical_code(star3)
    perm = _permuted(path3, [2, 0, 1])
    assert canonical_code(path3) == canonical_code(perm)
    assert isinstance(canonical_code(path3), CanonicalForm)


def test_canonical_code_symmetric_graphs():
    # graphs whose refinement stalls exercise the individualization search
    cyc = _graph(6, [(i, (i + 1) % 6, "successor") for i in range(6)])
    assert canonical_code(cyc) == canonical_code(_permuted(cyc, [3, 5, 1, 0, 2, 4]))
    other = _graph(6, [(i, (i + 1) % 6, "successor") for i in range(5)] + [(0, 5, "successor")])
    assert canonical_code(cyc) != canonical_code(other)
    empty1 = _graph(4, [])
    empty2 = _graph(4, [])
    assert canonical_code(empty1) == canonical_code(empty2)
    k4 = _graph(4, [(a, b, "neighbor") for a in range(4) for b in range(4) if a != b])
    assert canonical_code(k4) == canonical_code(_permuted(k4, [2, 3, 1, 0]))
    assert canonical_code(k4) != canonical_code(empty1)


def test_canonical_code_matches_pairwise_similarity():
    rng = np.random.default_rng(13)
    graphs, labelings = [], []
    for trial in range(24):
        n = int(rng.integers(2, 6))
        g = _random_graph(rng, n, p=0.4)
        if trial % 3 == 0 and graphs:
            base = graphs[trial % len(graphs)]
            g = _permuted(base, list(rng.permutation(base.n_vertices)))
        lab = rng.integers(0, 3, size=g.n_vertices)
        lab[int(rng.integers(g.n_vertices))] = 2
        graphs.append(g)
        labelings.append(lab)
    plain = [canonical_code(g) for g in graphs]
    aware = [canonical_code(g, lab) for g, lab in zip(graphs, labelings)]
    for i in range(len(graphs)):
        for j in range(i + 1, len(graphs)):
            same_i = _oracle_iso(graphs[i], graphs[j])
            assert (plain[i] == plain[j]) == same_i
            same_r = _oracle_iso(graphs[i], graphs[j], labelings[i], labelings[j])
            assert (aware[i] == aware[j]) == same_r


def test_canonical_code_size_bound():
    big = _graph(65, [])
    with pytest.raises(ValueError, match="too large"):
        canonical_code(big)
    assert canonical_code(big, max_vertices=70) == canonical_code(big, max_vertices=80)


def test_canonical_code_label_aware_accepts_route_labeling():
    g = _graph(3, [(0, 1, "successor"), (1, 2, "successor")])
    r = RouteLabeling(labels=np.array([2, 1, 0]))
    assert canonical_code(g, r) == canonical_code(g, np.array([2, 1, 0]))
    assert canonical_code(g, r) != canonical_code(g)


# ------------------------------------------------------------------- DTW


def _actions(rows):
    rows = np.asarray(rows, dtype=np.float64)
    return ActionSequence(rows=rows, headings=np.zeros(rows.shape[0]))


def _dtw_path_oracle(a, b):
    # literal enumeration of every monotone warping path
    ca = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))
    n, m = ca.shape
    best = [np.inf]

    def walk(i, j, total):
        total += ca[i, j]
        if i == n - 1 and j == m - 1:
            best[0] = min(best[0], total)
            return
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, total)
        if i + 1 < n:
            walk(i + 1, j, total)
        if j + 1 < m:
            walk(i, j + 1, total)

    walk(0, 0, 0.0)
    return float(best[0])


def test_dtw_identity():
    rows = np.arange(15, dtype=float).reshape(5, 3)
    rows[:, 2] = np.abs(rows[:, 2])
    r = dtw(_actions(rows), _actions(rows))
    assert r.distance == 0.0
    assert r.path_length == 5
    assert r.normalized_path == 1.0
    assert r.dissimilarity == 0.0


def test_dtw_repeated_row():
    one = _actions([[1.0, 0.0, 0.0]])
    three = _actions([[1.0, 0.0, 0.0]] * 3)
    r = dtw(one, three)
    assert r.distance == 0.0
    assert r.path_length == 3
    assert r.normalized_path == 1.0
    assert r.dissimilarity == 0.0


def test_dtw_two_step():
    a = _actions([[0.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    b = _actions([[0.0, 0.0, 0.0], [0.0, 0.0, 2.0]])
    r = dtw(a, b)
    assert r.distance == 1.0
    assert r.path_length == 2
    assert r.normalized_path == 1.0
    assert r.dissimilarity == 1.0


def test_dtw_against_path_enumeration():
    rng = np.random.default_rng(3)
    for trial in range(60):
        n, m = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        a = rng.normal(size=(n, 3))
        b = rng.normal(size=(m, 3))
        a[:, 2], b[:, 2] = np.abs(a[:, 2]), np.abs(b[:, 2])
        r = dtw(_actions(a), _actions(b))
        want = _dtw_path_oracle(a, b)
        assert abs(r.distance - want) < 1e-9
        assert r.path_length >= max(n, m)
        assert r.path_length <= n + m - 1
        assert r.normalized_path == r.path_length / max(n, m)
        assert abs(r.dissimilarity - r.distance * r.normalized_path) < 1e-15
        r_sym = dtw(_actions(b), _actions(a))
        assert abs(r.distance - r_sym.distance) < 1e-9


def test_dtw_self_distance_zero():
    rng = np.random.default_rng(5)
    for trial in range(10):
        n = int(rng.integers(1, 30))
        rows = rng.normal(size=(n, 3))
        rows[:, 2] = np.abs(rows[:, 2])
        a = _actions(rows)
        r = dtw(a, a)
        assert r.distance == 0.0
        assert r.path_length == n


def test_dtw_empty_errors():
    empty = ActionSequence(rows=np.zeros((0, 3)), headings=np.zeros(0))
    ok = _actions([[0.0, 0.0, 1.0]])
    with pytest.raises(ValueError, match="empty"):
        dtw(empty, ok)
    with pytest.raises(ValueError, match="empty"):
        dtw(ok, empty)


def test_dtw_result_invariants():
    with pytest.raises(ValueError, match="nonnegative"):
        DtwResult(distance=-1.0, path_length=3, normalized_path=1.0, dissimilarity=0.0)
    with pytest.raises(ValueError, match="shorter"):
        DtwResult(distance=1.0, path_length=3, normalized_path=0.5, dissimilarity=1.0)


# ---------------------------------------------------- trajectory similarity


def test_trajectory_similarity_values():
    assert trajectory_similarity(0.0, 5.0) == 1.0
    assert trajectory_similarity(5.0, 5.0) == 0.0
    assert trajectory_similarity(2.0, 8.0) == 0.75
    assert trajectory_similarity(0.0, 0.0) == 1.0


def test_trajectory_similarity_errors():
    with pytest.raises(ValueError, match="exceeds class maximum"):
        trajectory_similarity(6.0, 5.0)
    with pytest.raises(ValueError, match="exceeds class maximum"):
        trajectory_similarity(1.0, 0.0)
    with pytest.raises(ValueError, match="nonnegative"):
        trajectory_similarity(-1.0, 5.0)


def test_trajectory_similarity_range():
    rng = np.random.default_rng(11)
    for trial in range(50):
        d_max = float(rng.uniform(0.1, 10))
        d = float(rng.uniform(0, d_max))
        s = trajectory_similarity(d, d_max)
        assert 0.0 <= s <= 1.0
