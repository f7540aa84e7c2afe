"""Expert similarity measures over scenarios.

Infrastructure similarity is isomorphism of the lane topology graphs, route
similarity additionally requires the per-vertex route labels to correspond,
and trajectory similarity compares action sequences by path-normalized
dynamic time warping.  Canonical codes collapse either graph equivalence to
a hashable key, so a dataset can be partitioned into classes without
quadratic pair testing.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .scenario import EDGE_KINDS, ActionSequence, RouteLabeling, TopologyGraph

__all__ = [
    "IsomorphismWitness",
    "CanonicalForm",
    "DtwResult",
    "find_isomorphism",
    "infra_similarity",
    "route_similarity",
    "canonical_code",
    "dtw",
    "trajectory_similarity",
]


@dataclass(frozen=True, eq=False)
class IsomorphismWitness:
    """A vertex bijection from one graph onto another, ``mapping[i] = j``."""

    mapping: np.ndarray

    def __post_init__(self):
        m = np.ascontiguousarray(self.mapping, dtype=np.int64)
        if m.ndim != 1 or not np.array_equal(np.sort(m), np.arange(m.size)):
            raise ValueError("mapping must be a permutation of vertex ids")
        m.flags.writeable = False
        object.__setattr__(self, "mapping", m)

    def __eq__(self, other):
        if not isinstance(other, IsomorphismWitness):
            return NotImplemented
        return np.array_equal(self.mapping, other.mapping)


@dataclass(frozen=True)
class CanonicalForm:
    """Opaque byte code; equal codes mark the same equivalence class."""

    code: bytes

    def __post_init__(self):
        if not isinstance(self.code, bytes) or not self.code:
            raise ValueError("code must be a nonempty byte string")


@dataclass(frozen=True)
class DtwResult:
    """Alignment outcome: raw distance, matched-pair count, and the
    path-length-normalized dissimilarity ``distance * normalized_path``."""

    distance: float
    path_length: int
    normalized_path: float
    dissimilarity: float

    def __post_init__(self):
        if self.distance < 0 or self.dissimilarity < 0:
            raise ValueError("distances must be nonnegative")
        if self.path_length < 1 or self.normalized_path < 1.0:
            raise ValueError("warping path cannot be shorter than a sequence")


# ------------------------------------------------------------ isomorphism


def _edge_kind_map(g: TopologyGraph) -> dict:
    """Deduplicated (src, dst) -> frozenset of kind indices."""
    kinds: dict = {}
    for s, d, k in g.edges:
        kinds.setdefault((s, d), set()).add(EDGE_KINDS.index(k))
    return {pair: frozenset(ks) for pair, ks in kinds.items()}


def _vertex_signatures(n, kind_map, labels):
    out_sig = [[] for _ in range(n)]
    in_sig = [[] for _ in range(n)]
    for (s, d), ks in kind_map.items():
        key = tuple(sorted(ks))
        out_sig[s].append(key)
        in_sig[d].append(key)
    return [
        (int(labels[v]), tuple(sorted(out_sig[v])), tuple(sorted(in_sig[v])))
        for v in range(n)
    ]


def _match_order(n, kind_map):
    """Visit connected vertices early so partial mappings prune hard."""
    nbrs = [set() for _ in range(n)]
    for s, d in kind_map:
        nbrs[s].add(d)
        nbrs[d].add(s)
    degree = [len(nbrs[v]) for v in range(n)]
    order, placed = [], [False] * n
    for _ in range(n):
        best = max(
            (v for v in range(n) if not placed[v]),
            key=lambda v: (sum(placed[u] for u in nbrs[v]), degree[v], -v),
        )
        order.append(best)
        placed[best] = True
    return order


def find_isomorphism(
    g_i: TopologyGraph,
    g_j: TopologyGraph,
    labels_i=None,
    labels_j=None,
):
    """Search for an edge- and kind-preserving bijection from g_i onto g_j.

    When label arrays are given the bijection must preserve them as vertex
    colors.  Returns an :class:`IsomorphismWitness` or None.
    """
    n = g_i.n_vertices
    if g_j.n_vertices != n:
        return None
    lab_i = np.zeros(n, np.int64) if labels_i is None else np.asarray(labels_i, np.int64)
    lab_j = np.zeros(n, np.int64) if labels_j is None else np.asarray(labels_j, np.int64)
    kinds_i, kinds_j = _edge_kind_map(g_i), _edge_kind_map(g_j)
    if len(kinds_i) != len(kinds_j):
        return None
    sig_i = _vertex_signatures(n, kinds_i, lab_i)
    sig_j = _vertex_signatures(n, kinds_j, lab_j)
    if Counter(sig_i) != Counter(sig_j):
        return None

    candidates = [[w for w in range(n) if sig_j[w] == sig_i[v]] for v in range(n)]
    order = _match_order(n, kinds_i)
    mapping = [-1] * n
    used = [False] * n

    def extend(depth):
        if depth == n:
            return True
        v = order[depth]
        for w in candidates[v]:
            if used[w]:
                continue
            ok = True
            for u in order[:depth]:
                mu = mapping[u]
                if kinds_i.get((v, u)) != kinds_j.get((w, mu)):
                    ok = False
                    break
                if kinds_i.get((u, v)) != kinds_j.get((mu, w)):
                    ok = False
                    break
            if not ok:
                continue
            mapping[v] = w
            used[w] = True
            if extend(depth + 1):
                return True
            mapping[v] = -1
            used[w] = False
        return False

    if extend(0):
        return IsomorphismWitness(mapping=np.array(mapping, dtype=np.int64))
    return None


def infra_similarity(g_i: TopologyGraph, g_j: TopologyGraph) -> int:
    """1 if the lane graphs are isomorphic (edge kinds preserved), else 0."""
    return int(find_isomorphism(g_i, g_j) is not None)


def route_similarity(
    g_i: TopologyGraph,
    r_i: RouteLabeling,
    g_j: TopologyGraph,
    r_j: RouteLabeling,
) -> int:
    """1 if some isomorphism additionally maps route labels onto each other."""
    if r_i.labels.size != g_i.n_vertices or r_j.labels.size != g_j.n_vertices:
        raise ValueError("route labels not aligned with their graph")
    return int(find_isomorphism(g_i, g_j, r_i.labels, r_j.labels) is not None)


# -------------------------------------------------------- canonical codes


def canonical_code(
    g: TopologyGraph, labels=None, max_vertices: int = 64
) -> CanonicalForm:
    """Canonical byte code of a graph, optionally label-aware.

    Two graphs receive the same code exactly when they are isomorphic
    (label-preservingly so if ``labels`` is given).  Built by iterative
    color refinement with individualization on the first ambiguous color
    class; the minimal certificate over all branches is canonical.
    """
    n = g.n_vertices
    if n > max_vertices:
        raise ValueError(
            f"graph too large to canonicalize: {n} vertices exceeds bound {max_vertices}"
        )
    if labels is None:
        lab = np.zeros(n, dtype=np.int64)
    else:
        lab = np.asarray(
            labels.labels if isinstance(labels, RouteLabeling) else labels, np.int64
        )
        if lab.size != n:
            raise ValueError("route labels not aligned with their graph")
    kind_map = _edge_kind_map(g)
    edges = sorted(
        (s, d, k) for (s, d), ks in kind_map.items() for k in sorted(ks)
    )
    adj_out = [[] for _ in range(n)]
    adj_in = [[] for _ in range(n)]
    for s, d, k in edges:
        adj_out[s].append((d, k))
        adj_in[d].append((s, k))

    def refine(colors):
        while True:
            sigs = [
                (
                    colors[v],
                    tuple(sorted((k, colors[u]) for u, k in adj_out[v])),
                    tuple(sorted((k, colors[u]) for u, k in adj_in[v])),
                )
                for v in range(n)
            ]
            palette = {s: i for i, s in enumerate(sorted(set(sigs)))}
            fresh = [palette[s] for s in sigs]
            if len(palette) == len(set(colors)):
                return fresh
            colors = fresh

    def certificate(colors):
        # colors are a bijection onto 0..n-1 here
        canon_labels = [0] * n
        for v in range(n):
            canon_labels[colors[v]] = int(lab[v])
        canon_edges = sorted((colors[s], colors[d], k) for s, d, k in edges)
        return repr((n, tuple(canon_labels), tuple(canon_edges))).encode("ascii")

    kind_lookup = {pair: tuple(sorted(ks)) for pair, ks in kind_map.items()}

    def cell_is_module(members):
        # every transposition of two members must be an automorphism, which
        # holds when all members relate identically to each other and to
        # every outside vertex; then one branch stands in for the whole cell
        inner = {
            kind_lookup.get((u, v))
            for u in members
            for v in members
            if u != v
        }
        if len(inner) > 1:
            return False
        member_set = set(members)
        u0 = members[0]
        for v in members[1:]:
            for w in range(n):
                if w in member_set:
                    continue
                if kind_lookup.get((u0, w)) != kind_lookup.get((v, w)):
                    return False
                if kind_lookup.get((w, u0)) != kind_lookup.get((w, v)):
                    return False
        return True

    def search(colors):
        colors = refine(colors)
        counts = Counter(colors)
        ambiguous = [(cnt, c) for c, cnt in counts.items() if cnt > 1]
        if not ambiguous:
            return certificate(colors)
        _, target = min(ambiguous)
        members = [v for v in range(n) if colors[v] == target]
        if cell_is_module(members):
            members = members[:1]
        best = None
        for v in members:
            branched = [2 * c for c in colors]
            branched[v] = 2 * target + 1
            cert = search(branched)
            if best is None or cert < best:
                best = cert
        return best

    init = {c: i for i, c in enumerate(sorted(set(int(x) for x in lab)))}
    return CanonicalForm(code=search([init[int(x)] for x in lab]))


# ------------------------------------------------------------------- DTW


def dtw(a_i: ActionSequence, a_j: ActionSequence) -> DtwResult:
    """Dynamic time warping over the 3-channel action rows.

    Per-step cost is the Euclidean norm of the row difference; the optimal
    warping path is recovered by backtracking, preferring the diagonal step,
    then advancing the first sequence, then the second.  The dissimilarity
    scales the raw distance by path length over the longer sequence length.
    """
    rows_i = np.asarray(a_i.rows, dtype=np.float64)
    rows_j = np.asarray(a_j.rows, dtype=np.float64)
    n, m = rows_i.shape[0], rows_j.shape[0]
    if n == 0 or m == 0:
        raise ValueError("cannot warp an empty action sequence")
    cost = np.sqrt(
        ((rows_i[:, None, :] - rows_j[None, :, :]) ** 2).sum(axis=-1)
    ).tolist()
    acc = [[0.0] * m for _ in range(n)]
    acc[0][0] = cost[0][0]
    for j in range(1, m):
        acc[0][j] = cost[0][j] + acc[0][j - 1]
    for i in range(1, n):
        row_prev = acc[i - 1]
        row_cur = acc[i]
        crow = cost[i]
        row_cur[0] = crow[0] + row_prev[0]
        for j in range(1, m):
            best = row_prev[j - 1]
            if row_prev[j] < best:
                best = row_prev[j]
            if row_cur[j - 1] < best:
                best = row_cur[j - 1]
            row_cur[j] = crow[j] + best

    i, j, length = n - 1, m - 1, 1
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            diag, up, left = acc[i - 1][j - 1], acc[i - 1][j], acc[i][j - 1]
            best = min(diag, up, left)
            if diag == best:
                i, j = i - 1, j - 1
            elif up == best:
                i = i - 1
            else:
                j = j - 1
        elif i > 0:
            i = i - 1
        else:
            j = j - 1
        length += 1

    distance = float(acc[n - 1][m - 1])
    normalized = length / max(n, m)
    return DtwResult(
        distance=distance,
        path_length=length,
        normalized_path=normalized,
        dissimilarity=distance * normalized,
    )


def trajectory_similarity(d: float, d_max: float) -> float:
    """Map a dissimilarity onto [0, 1] relative to its class maximum."""
    if d < 0 or d_max < 0:
        raise ValueError("dissimilarities must be nonnegative")
    if d > d_max:
        raise ValueError(
            f"dissimilarity exceeds class maximum: {d} > {d_max}"
        )
    if d_max == 0.0:
        return 1.0
    return 1.0 - d / d_max
