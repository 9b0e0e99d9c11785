"""Cluster state and the self-training math.

Soft assignments use a Student-t kernel over distances to trainable centroids;
targets sharpen those assignments; the clustering loss is the KL divergence
between the two. k-means (best of several restarts) seeds the centroids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Array, as_matrix, check_finite

LOG_FLOOR = 1e-12


@dataclass
class ClusterModel:
    """Trainable centroids plus the kernel's degrees-of-freedom constant."""

    centroids: Array
    dof: float = 1.0

    def __post_init__(self):
        self.centroids = as_matrix(self.centroids)
        check_finite("centroids", self.centroids)
        if self.k < 2:
            raise ValueError("need at least 2 clusters")
        if self.dof <= 0.0:
            raise ValueError("dof must be positive")

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def copy(self) -> "ClusterModel":
        return ClusterModel(self.centroids.copy(), self.dof)


def _sq_distances(Z: Array, C: Array) -> Array:
    d2 = (Z * Z).sum(axis=1)[:, None] - 2.0 * (Z @ C.T) + (C * C).sum(axis=1)[None, :]
    return np.maximum(d2, 0.0)


def kmeans(Z, k: int, restarts: int = 20, max_iters: int = 100,
           rng: np.random.Generator | None = None) -> tuple[Array, np.ndarray, float]:
    """Lloyd iterations, best of `restarts` by within-cluster sum of squares.

    An empty cluster is reseeded to the point farthest from its assigned
    centroid. Iteration stops at an assignment fixpoint or after max_iters.
    """
    Z = as_matrix(Z)
    n = Z.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"k={k} must be in [1, {n}]")
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    if rng is None:
        raise ValueError("kmeans requires a seeded rng")

    best: tuple[Array, np.ndarray, float] | None = None
    for _ in range(restarts):
        centroids = Z[rng.choice(n, size=k, replace=False)].copy()
        labels = None
        inertia = np.inf
        for _it in range(max_iters):
            d2 = _sq_distances(Z, centroids)
            new_labels = d2.argmin(axis=1)
            min_d2 = d2[np.arange(n), new_labels]
            counts = np.bincount(new_labels, minlength=k)
            taken: set[int] = set()
            for c in np.flatnonzero(counts == 0):
                order = np.argsort(min_d2)[::-1]
                far = next(int(i) for i in order if int(i) not in taken)
                taken.add(far)
                centroids[c] = Z[far]
                new_labels[far] = c
                min_d2[far] = 0.0
            inertia = float(min_d2.sum())
            if labels is not None and np.array_equal(new_labels, labels):
                break
            labels = new_labels
            for c in range(k):
                members = labels == c
                centroids[c] = Z[members].mean(axis=0)
        if best is None or inertia < best[2]:
            best = (centroids.copy(), labels.copy(), inertia)
    return best


def soft_assign(model: ClusterModel, Z) -> Array:
    """Row-stochastic similarities between embedded points and centroids."""
    Z = as_matrix(Z)
    if Z.shape[1] != model.centroids.shape[1]:
        raise ValueError(
            f"embedding width {Z.shape[1]} does not match centroid width {model.centroids.shape[1]}"
        )
    v = model.dof
    kernel = (1.0 + _sq_distances(Z, model.centroids) / v) ** (-(v + 1.0) / 2.0)
    Q = kernel / kernel.sum(axis=1, keepdims=True)
    check_finite("soft assignments", Q)
    return Q


def soft_assign_backward(model: ClusterModel, Z, dQ) -> tuple[Array, Array]:
    """Chain a loss gradient on Q back to the embedding and the centroids."""
    Z = as_matrix(Z)
    dQ = as_matrix(dQ)
    C = model.centroids
    v = model.dof
    d2 = _sq_distances(Z, C)
    base = 1.0 + d2 / v
    kernel = base ** (-(v + 1.0) / 2.0)
    total = kernel.sum(axis=1, keepdims=True)
    Q = kernel / total
    # d loss / d kernel, then through the power kernel to the distances
    d_kernel = (dQ - (dQ * Q).sum(axis=1, keepdims=True)) / total
    d_dist = d_kernel * (-(v + 1.0) / (2.0 * v)) * base ** (-(v + 3.0) / 2.0)
    row = d_dist.sum(axis=1, keepdims=True)
    col = d_dist.sum(axis=0)[:, None]
    dZ = 2.0 * (row * Z - d_dist @ C)
    dC = 2.0 * (col * C - d_dist.T @ Z)
    return dZ, dC


def target_distribution(Q) -> Array:
    """Sharpened, frequency-normalized targets; treated as a constant downstream."""
    Q = as_matrix(Q)
    mass = Q.sum(axis=0)
    safe = np.where(mass > 0.0, mass, 1.0)
    weighted = Q * Q / safe
    P = weighted / weighted.sum(axis=1, keepdims=True)
    check_finite("target distribution", P)
    return P


def kl_cluster_loss(P, Q) -> tuple[float, Array]:
    """KL(P || Q) with P constant. Returns the loss and its gradient on Q.

    q values below the floor are clamped inside the log and get zero gradient.
    """
    P = as_matrix(P)
    Q = as_matrix(Q)
    if P.shape != Q.shape:
        raise ValueError(f"shape mismatch: P {P.shape} vs Q {Q.shape}")
    q = np.maximum(Q, LOG_FLOOR)
    terms = np.where(P > 0.0, P * (np.log(np.maximum(P, LOG_FLOOR)) - np.log(q)), 0.0)
    loss = float(terms.sum())
    dQ = np.where(Q >= LOG_FLOOR, -P / q, 0.0)
    return loss, dQ


def hard_assign(Q) -> np.ndarray:
    """Per-row argmax; ties break toward the lowest column index."""
    return as_matrix(Q).argmax(axis=1)
