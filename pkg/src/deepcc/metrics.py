"""Clustering evaluation: NMI, matched accuracy, and the paired-run harness."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment


def _check_labelings(l, c) -> tuple[np.ndarray, np.ndarray]:
    l = np.ascontiguousarray(l, dtype=np.int64).reshape(-1)
    c = np.ascontiguousarray(c, dtype=np.int64).reshape(-1)
    if l.shape[0] != c.shape[0]:
        raise ValueError(f"labelings differ in length: {l.shape[0]} vs {c.shape[0]}")
    if l.shape[0] == 0:
        raise ValueError("labelings are empty")
    return l, c


def contingency_table(l, c) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Counts of (true class, predicted cluster) co-occurrences."""
    l, c = _check_labelings(l, c)
    classes, li = np.unique(l, return_inverse=True)
    clusters, ci = np.unique(c, return_inverse=True)
    counts = np.zeros((classes.size, clusters.size), dtype=np.int64)
    np.add.at(counts, (li, ci), 1)
    return counts, classes, clusters


def nmi(l, c) -> float:
    """Mutual information normalized by the larger of the two entropies.

    Defined as 1 when both partitions are trivial (single cluster), 0 when
    exactly one is.
    """
    counts, _, _ = contingency_table(l, c)
    n = counts.sum()
    pl = counts.sum(axis=1) / n
    pc = counts.sum(axis=0) / n
    h_l = float(-(pl * np.log(pl)).sum())
    h_c = float(-(pc * np.log(pc)).sum())
    if h_l == 0.0 and h_c == 0.0:
        return 1.0
    joint = counts / n
    nz = joint > 0
    mi = float((joint[nz] * np.log(joint[nz] / np.outer(pl, pc)[nz])).sum())
    value = mi / max(h_l, h_c)
    return min(max(value, 0.0), 1.0)


def hungarian(cost) -> tuple[np.ndarray, float]:
    """Minimal-cost perfect matching; returns (column per row, total cost).

    Rectangular inputs are zero-padded to square first.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite entries")
    size = max(cost.shape)
    padded = np.zeros((size, size))
    padded[: cost.shape[0], : cost.shape[1]] = cost
    rows, cols = linear_sum_assignment(padded)
    assignment = np.empty(size, dtype=np.int64)
    assignment[rows] = cols
    total = float(padded[rows, cols].sum())
    return assignment, total


def _cluster_to_class(l, c) -> dict[int, int]:
    counts, classes, clusters = contingency_table(l, c)
    assignment, _ = hungarian(-counts.astype(np.float64))
    mapping: dict[int, int] = {}
    for class_i, cluster_j in enumerate(assignment):
        if class_i < classes.size and cluster_j < clusters.size:
            mapping[int(clusters[cluster_j])] = int(classes[class_i])
    return mapping


def align_clusters(l, c) -> np.ndarray:
    """Relabel clusters by the best one-to-one cluster-to-class matching.

    Clusters left unmatched (more clusters than classes) map to -1.
    """
    l, c = _check_labelings(l, c)
    mapping = _cluster_to_class(l, c)
    return np.asarray([mapping.get(int(ci), -1) for ci in c], dtype=np.int64)


def accuracy(l, c) -> float:
    """Best match fraction over one-to-one cluster-to-label mappings."""
    l, c = _check_labelings(l, c)
    mapped = align_clusters(l, c)
    return float((mapped == l).mean())


def negative_ratio(runs: list[tuple[float, float]]) -> float:
    """Fraction of paired (constrained, unconstrained) runs the unconstrained won.

    Exact ties do not count as losses.
    """
    if not runs:
        raise ValueError("need at least one paired run")
    losses = sum(1 for constrained, unconstrained in runs if unconstrained > constrained)
    return losses / len(runs)
