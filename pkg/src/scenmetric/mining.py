"""Quadruplet mining over scenario class structure.

Scenarios are bucketed into graph classes (isomorphic topology) and route
classes (isomorphic topology plus matching route labels) via canonical
codes.  For an anchor, ``pp`` shares the route class, ``pn`` shares only
the graph class, and ``nn`` comes from a different graph class filtered by
the negative-sampling strategy.  The action similarity s_t between anchor
and pp is read from precomputed within-class dissimilarities.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .scenario import Dataset, derive_action_sequence
from .similarity import canonical_code, dtw, trajectory_similarity

__all__ = [
    "STRATEGIES",
    "ClassIndex",
    "Quadruplet",
    "build_index",
    "mine_quadruplet",
    "mine_epoch",
]

logger = logging.getLogger(__name__)

STRATEGIES = ("random", "group", "random_excl")


@dataclass(frozen=True)
class Quadruplet:
    """Indices of one mined (anchor, pp, pn, nn) tuple plus the action
    similarity of the anchor-pp pair."""

    anchor: int
    pp: int
    pn: int
    nn: int
    s_t: float

    def __post_init__(self):
        ids = (self.anchor, self.pp, self.pn, self.nn)
        if len(set(ids)) != 4:
            raise ValueError(f"quadruplet indices must be distinct, got {ids}")
        if not (0.0 <= self.s_t <= 1.0):
            raise ValueError(f"s_t must lie in [0, 1], got {self.s_t}")


@dataclass(frozen=True)
class ClassIndex:
    """Graph/route class structure of a dataset with cached within-route
    action dissimilarities."""

    graph_class: np.ndarray
    route_class: np.ndarray
    categories: tuple
    graph_members: tuple
    route_members: tuple
    route_dissim: tuple
    route_dmax: np.ndarray

    def __post_init__(self):
        n = self.graph_class.size
        for members, count in (
            (self.graph_members, self.graph_class.size),
            (self.route_members, self.route_class.size),
        ):
            seen = sorted(i for group in members for i in group)
            if seen != list(range(count)):
                raise ValueError("member lists must partition the dataset")
        # route classes refine graph classes
        for group in self.route_members:
            if len(set(self.graph_class[list(group)].tolist())) != 1:
                raise ValueError("route class spans multiple graph classes")
        if len(self.categories) != n:
            raise ValueError("category list length mismatch")

    @property
    def n_scenarios(self) -> int:
        return self.graph_class.size

    def pair_similarity(self, i: int, j: int) -> float:
        """s_t of two scenarios in the same route class."""
        rc = int(self.route_class[i])
        if int(self.route_class[j]) != rc:
            raise ValueError("scenarios are not in the same route class")
        members = self.route_members[rc]
        d = float(self.route_dissim[rc][members.index(i), members.index(j)])
        return trajectory_similarity(d, float(self.route_dmax[rc]))


def build_index(d: Dataset) -> ClassIndex:
    """Classify every scenario by canonical code and cache within-route
    pairwise action dissimilarities and each class maximum."""
    if len(d) == 0:
        raise ValueError("dataset empty")

    graph_ids, route_ids = [], []
    graph_codes, route_codes = {}, {}
    for s in d.entries:
        gc = canonical_code(s.graph)
        rc = canonical_code(s.graph, s.route)
        graph_ids.append(graph_codes.setdefault(gc, len(graph_codes)))
        route_ids.append(route_codes.setdefault(rc, len(route_codes)))
    graph_class = np.asarray(graph_ids, dtype=np.int64)
    route_class = np.asarray(route_ids, dtype=np.int64)

    graph_members = tuple(
        tuple(np.flatnonzero(graph_class == g).tolist())
        for g in range(len(graph_codes))
    )
    route_members = tuple(
        tuple(np.flatnonzero(route_class == r).tolist())
        for r in range(len(route_codes))
    )

    actions = [derive_action_sequence(s.trajectory) for s in d.entries]
    dissim, dmax = [], []
    for members in route_members:
        m = len(members)
        mat = np.zeros((m, m))
        for a in range(m):
            for b in range(a + 1, m):
                mat[a, b] = mat[b, a] = dtw(
                    actions[members[a]], actions[members[b]]
                ).dissimilarity
        dissim.append(mat)
        dmax.append(mat.max() if m > 1 else 0.0)

    return ClassIndex(
        graph_class=graph_class,
        route_class=route_class,
        categories=tuple(s.category for s in d.entries),
        graph_members=graph_members,
        route_members=route_members,
        route_dissim=tuple(dissim),
        route_dmax=np.asarray(dmax),
    )


def _nn_candidates(index: ClassIndex, anchor: int, strategy: str) -> list:
    gc = int(index.graph_class[anchor])
    cat = index.categories[anchor]
    out = []
    for i in range(index.n_scenarios):
        if int(index.graph_class[i]) == gc:
            continue
        if strategy == "group" and index.categories[i] != cat:
            continue
        if strategy == "random_excl" and index.categories[i] == cat:
            continue
        out.append(i)
    return out


def mine_quadruplet(
    index: ClassIndex, anchor: int, strategy: str, rng: np.random.Generator
) -> Quadruplet:
    """Draw pp, pn, and nn uniformly from the anchor's candidate sets."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if not (0 <= anchor < index.n_scenarios):
        raise ValueError(f"anchor index {anchor} out of range")

    rc = int(index.route_class[anchor])
    gc = int(index.graph_class[anchor])
    pp_pool = [i for i in index.route_members[rc] if i != anchor]
    if not pp_pool:
        raise ValueError("empty pp candidates")
    pn_pool = [
        i for i in index.graph_members[gc] if int(index.route_class[i]) != rc
    ]
    if not pn_pool:
        raise ValueError("empty pn candidates")
    nn_pool = _nn_candidates(index, anchor, strategy)
    if not nn_pool:
        raise ValueError("empty nn candidates")

    pp = pp_pool[int(rng.integers(len(pp_pool)))]
    pn = pn_pool[int(rng.integers(len(pn_pool)))]
    nn = nn_pool[int(rng.integers(len(nn_pool)))]
    return Quadruplet(
        anchor=anchor, pp=pp, pn=pn, nn=nn, s_t=index.pair_similarity(anchor, pp)
    )


def mine_epoch(
    index: ClassIndex, strategy: str, rng: np.random.Generator
) -> list:
    """One quadruplet per eligible anchor, in shuffled order.

    Anchors without a complete candidate set are skipped and reported.
    """
    order = rng.permutation(index.n_scenarios)
    mined, skipped = [], []
    for anchor in order.tolist():
        try:
            mined.append(mine_quadruplet(index, anchor, strategy, rng))
        except ValueError as exc:
            if "empty" not in str(exc):
                raise
            skipped.append((anchor, str(exc)))
    if skipped:
        logger.warning(
            "skipped %d ineligible anchors: %s",
            len(skipped),
            ", ".join(f"{a} ({why})" for a, why in skipped),
        )
    if not mined:
        raise ValueError("all anchors ineligible")
    return mined
