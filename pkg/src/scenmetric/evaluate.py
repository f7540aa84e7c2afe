"""Evaluation protocols on embedding matrices.

Three views of embedding quality, each computed against the dataset's
group structure at a detail level (C = category, G = graph class,
R = route class):

* novelty: hold each group out of an angle-based outlier detector's base
  set and measure how well its members rank as novel (mean AUC),
* clustering: average-linkage agglomerative clusters scored by the best
  one-to-one mapping onto the true groups,
* feature stability: how similar raw scenario features are among latent
  nearest neighbors.

plus a deterministic 2-D principal-component projection for plotting.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata

from .scenario import Dataset, derive_action_sequence

__all__ = [
    "LEVELS",
    "StabilityReport",
    "EvalReport",
    "abod_scores",
    "mann_whitney_auc",
    "novelty_experiment",
    "agglomerative_cluster",
    "clustering_accuracy",
    "feature_stability",
    "project_2d",
    "evaluate_embeddings",
]

LEVELS = ("C", "G", "R")


def _check_embeddings(embeddings) -> np.ndarray:
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] == 0:
        raise ValueError(f"embeddings must be a nonempty 2-D array, got shape {emb.shape}")
    if not np.all(np.isfinite(emb)):
        raise ValueError("embeddings contain non-finite values")
    return emb


# --------------------------------------------------------------- novelty


def abod_scores(base, queries) -> np.ndarray:
    """Angle-based novelty score for each query against a base set.

    For query q the outlier factor is the variance over all unordered
    base pairs (y, z) of <y-q, z-q> / (|y-q|^2 |z-q|^2); the returned
    score is its negation, so larger means more novel.  Base points at
    zero distance from q are skipped.
    """
    base = _check_embeddings(base)
    queries = _check_embeddings(queries)
    if base.shape[0] < 3:
        raise ValueError("base needs at least 3 points")
    if base.shape[1] != queries.shape[1]:
        raise ValueError(
            f"dimension mismatch: base {base.shape[1]} vs queries {queries.shape[1]}"
        )
    scores = np.empty(queries.shape[0])
    for qi, q in enumerate(queries):
        diff = base - q
        sq = np.einsum("ij,ij->i", diff, diff)
        keep = sq > 0.0
        d = diff[keep]
        s = sq[keep]
        n = d.shape[0]
        if n < 2:
            raise ValueError(f"all base pairs skipped for query {qi}")
        dots = d @ d.T
        weights = np.outer(s, s)
        iu = np.triu_indices(n, k=1)
        factors = dots[iu] / weights[iu]
        scores[qi] = -np.var(factors)
    return scores


def mann_whitney_auc(scores, positive) -> float:
    """Rank AUC of scores for the positive class; ties count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    if scores.shape != positive.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-D arrays")
    n1 = int(positive.sum())
    n0 = positive.size - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("both classes must be present")
    ranks = rankdata(scores)
    r1 = float(ranks[positive].sum())
    return (r1 - n1 * (n1 + 1) / 2.0) / (n1 * n0)


def novelty_experiment(embeddings, dataset: Dataset, level: str) -> float:
    """Hold-one-group-out novelty detection; unweighted mean AUC.

    For every group at the level, the detector base set is every other
    scenario's embedding and all embeddings are scored; members of the
    held-out group count as positives.
    """
    emb = _check_embeddings(embeddings)
    labels = dataset.groups.labels(level)
    if emb.shape[0] != labels.size:
        raise ValueError(
            f"embedding count {emb.shape[0]} does not match dataset size {labels.size}"
        )
    groups = np.unique(labels)
    if groups.size < 2:
        raise ValueError("need at least 2 groups for the novelty experiment")
    aucs = []
    for g in groups:
        held_out = labels == g
        scores = abod_scores(emb[~held_out], emb)
        aucs.append(mann_whitney_auc(scores, held_out))
    return float(np.mean(aucs))


# ------------------------------------------------------------ clustering


def agglomerative_cluster(embeddings, k: int) -> np.ndarray:
    """Average-linkage agglomerative clustering down to k clusters.

    Cluster distance is the plain mean of pairwise Euclidean distances
    across the two clusters.  Ties merge the pair whose combined member
    set has the lexicographically smallest (min id, max id).  Labels are
    dense, numbered by each cluster's smallest member id.
    """
    emb = _check_embeddings(embeddings)
    m = emb.shape[0]
    if not 1 <= k <= m:
        raise ValueError(f"k={k} out of range [1, {m}]")
    sq = np.einsum("ij,ij->i", emb, emb)
    d0 = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * emb @ emb.T, 0.0))
    np.fill_diagonal(d0, 0.0)

    members = {i: [i] for i in range(m)}
    sums = d0.copy()  # sums[i, j] = total cross-pair distance between clusters
    active = sorted(members)
    while len(active) > k:
        act = np.array(active)
        sizes = np.array([len(members[i]) for i in active], dtype=np.float64)
        means = sums[np.ix_(act, act)] / np.outer(sizes, sizes)
        means[np.tril_indices(len(active))] = np.inf
        best_value = means.min()
        ties = np.argwhere(means == best_value)
        best_key, best_pair = None, None
        for ai, aj in ties:
            i, j = active[ai], active[aj]
            merged = members[i] + members[j]
            key = (min(merged), max(merged))
            if best_key is None or key < best_key:
                best_key, best_pair = key, (i, j)
        i, j = best_pair
        members[i] = sorted(members[i] + members[j])
        for other in active:
            if other != i and other != j:
                total = sums[i, other] + sums[j, other]
                sums[i, other] = sums[other, i] = total
        del members[j]
        active.remove(j)

    labels = np.empty(m, dtype=np.int64)
    for rank, i in enumerate(sorted(active, key=lambda c: members[c][0])):
        labels[members[i]] = rank
    return labels


def clustering_accuracy(predicted, truth) -> float:
    """Best one-to-one mapping accuracy between two labelings."""
    p = np.asarray(predicted)
    t = np.asarray(truth)
    if p.size == 0:
        raise ValueError("empty labelings")
    if p.shape != t.shape or p.ndim != 1:
        raise ValueError("labelings must be equal-length 1-D arrays")
    _, pi = np.unique(p, return_inverse=True)
    _, ti = np.unique(t, return_inverse=True)
    contingency = np.zeros((pi.max() + 1, ti.max() + 1), dtype=np.int64)
    np.add.at(contingency, (pi, ti), 1)
    rows, cols = linear_sum_assignment(contingency, maximize=True)
    return float(contingency[rows, cols].sum()) / p.size


# ------------------------------------------------------- feature stability


@dataclass(frozen=True)
class StabilityReport:
    """Mean raw-feature differences among latent nearest neighbors."""

    d_i: float
    d_t: float
    d_v: float
    d_a_lon: float
    d_a_lat: float
    d_psi: float

    def __post_init__(self):
        for name in ("d_i", "d_t", "d_v", "d_a_lon", "d_a_lat", "d_psi"):
            if not getattr(self, name) >= 0.0:
                raise ValueError(f"{name} must be nonnegative")


def _resample_xy(xy: np.ndarray, n: int) -> np.ndarray:
    if xy.shape[0] == n:
        return xy
    src = np.linspace(0.0, 1.0, xy.shape[0])
    dst = np.linspace(0.0, 1.0, n)
    return np.column_stack([np.interp(dst, src, xy[:, 0]), np.interp(dst, src, xy[:, 1])])


def _circular_mean(angles: np.ndarray) -> float:
    return float(np.arctan2(np.sin(angles).mean(), np.cos(angles).mean()))


def _heading_difference(a: float, b: float) -> float:
    d = abs(a - b) % (2.0 * np.pi)
    return min(d, 2.0 * np.pi - d)


def feature_stability(embeddings, dataset: Dataset, k: int = 15) -> StabilityReport:
    """Raw-feature spread among each scenario's k latent nearest neighbors.

    Neighbors are by Euclidean distance, self excluded, distance ties
    resolved by scenario id.  All six differences are averaged over every
    (scenario, neighbor) pair.
    """
    emb = _check_embeddings(embeddings)
    m = emb.shape[0]
    if m != len(dataset):
        raise ValueError(f"embedding count {m} does not match dataset size {len(dataset)}")
    if not k >= 1:
        raise ValueError("k must be at least 1")
    if m <= k:
        raise ValueError(f"need more than k={k} scenarios, got {m}")

    images = [s.image.pixels.astype(np.float64) for s in dataset.entries]
    xys = [s.trajectory.xy.astype(np.float64) for s in dataset.entries]
    mean_v = np.empty(m)
    mean_a_lon = np.empty(m)
    mean_a_lat = np.empty(m)
    mean_psi = np.empty(m)
    for i, s in enumerate(dataset.entries):
        actions = derive_action_sequence(s.trajectory)
        mean_a_lat[i] = actions.rows[:, 0].mean()
        mean_a_lon[i] = actions.rows[:, 1].mean()
        mean_v[i] = actions.rows[:, 2].mean()
        mean_psi[i] = _circular_mean(actions.headings)

    sq = np.einsum("ij,ij->i", emb, emb)
    dist = np.maximum(sq[:, None] + sq[None, :] - 2.0 * emb @ emb.T, 0.0)
    totals = np.zeros(6)
    for i in range(m):
        row = dist[i].copy()
        row[i] = np.inf
        order = np.lexsort((np.arange(m), row))
        for j in order[:k].tolist():
            d_i = np.abs(images[i] - images[j]).mean() * 100.0
            n = max(xys[i].shape[0], xys[j].shape[0])
            a = _resample_xy(xys[i], n)
            b = _resample_xy(xys[j], n)
            d_t = float(np.hypot(*(a - b).T).mean())
            totals += (
                d_i,
                d_t,
                abs(mean_v[i] - mean_v[j]),
                abs(mean_a_lon[i] - mean_a_lon[j]),
                abs(mean_a_lat[i] - mean_a_lat[j]),
                _heading_difference(mean_psi[i], mean_psi[j]),
            )
    means = totals / (m * k)
    return StabilityReport(
        d_i=means[0],
        d_t=means[1],
        d_v=means[2],
        d_a_lon=means[3],
        d_a_lat=means[4],
        d_psi=means[5],
    )


# ------------------------------------------------------------ projection


def project_2d(embeddings):
    """Top-2 principal-component coordinates, deterministically signed.

    Returns (coords, degenerate): column i of coords is zeroed and the
    flag set when the i-th principal direction carries no variance.
    """
    emb = _check_embeddings(embeddings)
    m = emb.shape[0]
    if m < 2:
        raise ValueError("need at least 2 points to project")
    centered = emb - emb.mean(axis=0)
    cov = centered.T @ centered / (m - 1)
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    order = np.argsort(eigenvalues)[::-1][:2]
    coords = np.zeros((m, 2))
    degenerate = False
    tol = 1e-12 * max(1.0, float(eigenvalues.max(initial=0.0)))
    for c, idx in enumerate(order):
        if eigenvalues[idx] <= tol:
            degenerate = True
            continue
        v = eigenvectors[:, idx]
        peak = np.argmax(np.abs(v))
        if v[peak] < 0:
            v = -v
        coords[:, c] = centered @ v
    if len(order) < 2:
        degenerate = True
    return coords, degenerate


# -------------------------------------------------------------- report


@dataclass(frozen=True)
class EvalReport:
    """All protocol results for one embedding matrix."""

    auc: dict
    acc: dict
    stability: StabilityReport

    def __post_init__(self):
        for table, label in ((self.auc, "auc"), (self.acc, "acc")):
            for level, value in table.items():
                if level not in LEVELS:
                    raise ValueError(f"unknown group level {level!r}")
                if not 0.0 <= value <= 1.0:
                    raise ValueError(f"{label}_{level} must lie in [0, 1], got {value}")

    def to_dict(self) -> dict:
        out = {}
        for level in LEVELS:
            if level in self.auc:
                out[f"auc_{level}"] = self.auc[level]
            if level in self.acc:
                out[f"acc_{level}"] = self.acc[level]
        out["d_I"] = self.stability.d_i
        out["d_T"] = self.stability.d_t
        out["d_v"] = self.stability.d_v
        out["d_a_lon"] = self.stability.d_a_lon
        out["d_a_lat"] = self.stability.d_a_lat
        out["d_psi"] = self.stability.d_psi
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        auc = {lv: data[f"auc_{lv}"] for lv in LEVELS if f"auc_{lv}" in data}
        acc = {lv: data[f"acc_{lv}"] for lv in LEVELS if f"acc_{lv}" in data}
        stability = StabilityReport(
            d_i=data["d_I"],
            d_t=data["d_T"],
            d_v=data["d_v"],
            d_a_lon=data["d_a_lon"],
            d_a_lat=data["d_a_lat"],
            d_psi=data["d_psi"],
        )
        return cls(auc=auc, acc=acc, stability=stability)


def evaluate_embeddings(
    embeddings, dataset: Dataset, levels=LEVELS, k_neighbors: int = 15
) -> EvalReport:
    """Run all three protocols and collect an EvalReport.

    Clustering uses the true group count at each level.
    """
    emb = _check_embeddings(embeddings)
    auc, acc = {}, {}
    for level in levels:
        auc[level] = novelty_experiment(emb, dataset, level)
        k = dataset.groups.n_groups(level)
        predicted = agglomerative_cluster(emb, k)
        acc[level] = clustering_accuracy(predicted, dataset.groups.labels(level))
    stability = feature_stability(emb, dataset, k=k_neighbors)
    return EvalReport(auc=auc, acc=acc, stability=stability)
