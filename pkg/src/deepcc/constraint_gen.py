"""Constraint generation: from labels, a weak learner, embeddings, or an ontology.

Also transitive closure of pairwise sets and label-flip noise injection.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .clustering import kmeans
from .constraint_losses import Pair, Triplet
from .data_io import Dataset
from .errors import ConsistencyError
from .metrics import align_clusters
from .numerics import as_matrix

EASY_SCORE = 1.0
HARD_SCORE = -0.1


def _canonical(a: int, b: int) -> Pair:
    return (a, b) if a < b else (b, a)


def _sample_distinct_pairs(n: int, count: int, rng: np.random.Generator,
                           exclude: set[Pair] | None = None) -> list[Pair]:
    exclude = exclude or set()
    total = n * (n - 1) // 2 - len(exclude)
    if count > total:
        raise ValueError(f"cannot draw {count} distinct pairs from {total} available")
    picked: set[Pair] = set()
    out: list[Pair] = []
    if count * 2 > total:
        # dense request: enumerate and subsample
        pool = [(i, j) for i in range(n) for j in range(i + 1, n)
                if (i, j) not in exclude]
        idx = rng.choice(len(pool), size=count, replace=False)
        return [pool[i] for i in sorted(int(i) for i in idx)]
    while len(out) < count:
        i = int(rng.integers(n))
        j = int(rng.integers(n))
        if i == j:
            continue
        pair = _canonical(i, j)
        if pair in picked or pair in exclude:
            continue
        picked.add(pair)
        out.append(pair)
    return out


def pairwise_from_labels(labels, count: int, rng: np.random.Generator) -> tuple[list[Pair], list[Pair]]:
    """Draw random index pairs; shared label makes a must-link, else a cannot-link."""
    labels = np.asarray(labels).reshape(-1)
    if count < 1:
        raise ValueError("count must be at least 1")
    ml: list[Pair] = []
    cl: list[Pair] = []
    for a, b in _sample_distinct_pairs(labels.shape[0], count, rng):
        (ml if labels[a] == labels[b] else cl).append((a, b))
    return ml, cl


class _UnionFind:
    def __init__(self):
        self.parent: dict[int, int] = {}

    def find(self, x: int) -> int:
        self.parent.setdefault(x, x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def close_constraints(must_links: list[Pair], cannot_links: list[Pair]) -> tuple[list[Pair], list[Pair]]:
    """Transitive closure: fully link every must-link component and entail
    cannot-links across component pairs.

    Raises if a cannot-link connects two instances of one component.
    """
    uf = _UnionFind()
    for a, b in must_links:
        uf.union(a, b)
    members: dict[int, list[int]] = {}
    touched = {i for pair in must_links for i in pair} | {i for pair in cannot_links for i in pair}
    for i in sorted(touched):
        members.setdefault(uf.find(i), []).append(i)

    closed_ml: set[Pair] = set()
    for group in members.values():
        for i in range(len(group)):
            for j in range(i + 1, len(group)):
                closed_ml.add(_canonical(group[i], group[j]))

    closed_cl: set[Pair] = set()
    for a, b in cannot_links:
        ra, rb = uf.find(a), uf.find(b)
        if ra == rb:
            raise ConsistencyError(
                f"cannot-link ({a}, {b}) contradicts must-link closure"
            )
        for x in members[ra]:
            for y in members[rb]:
                closed_cl.add(_canonical(x, y))
    return sorted(closed_ml), sorted(closed_cl)


def difficulty_from_weak_learner(dataset: Dataset, k: int, rng: np.random.Generator,
                                 restarts: int = 20, max_iters: int = 100) -> np.ndarray:
    """Cluster raw features, align clusters to labels, and mark instances:
    correctly clustered ones as confidently easy, the rest as mildly hard."""
    if dataset.labels is None:
        raise ValueError("difficulty generation requires labels")
    classes = np.unique(dataset.labels)
    if k != classes.size:
        raise ValueError(f"k={k} does not match the {classes.size} label classes")
    _, assigned, _ = kmeans(dataset.features, k, restarts=restarts, max_iters=max_iters, rng=rng)
    mapped = align_clusters(dataset.labels, assigned)
    return np.where(mapped == dataset.labels, EASY_SCORE, HARD_SCORE)


def triplets_from_embedding(Z, count: int, rng: np.random.Generator) -> list[Triplet]:
    """Anchor plus two random candidates; the nearer one (in the embedding)
    becomes the positive. Ties resolve toward the lower index."""
    Z = as_matrix(Z)
    n = Z.shape[0]
    if n < 3:
        raise ValueError("need at least 3 instances to form triplets")
    if count < 1:
        raise ValueError("count must be at least 1")
    triplets: list[Triplet] = []
    for _ in range(count):
        a = int(rng.integers(n))
        others = [int(x) for x in rng.choice(n - 1, size=2, replace=False)]
        j, m = (x + 1 if x >= a else x for x in others)
        dj = float(np.linalg.norm(Z[a] - Z[j]))
        dm = float(np.linalg.norm(Z[a] - Z[m]))
        if dj < dm:
            pos, neg = j, m
        elif dm < dj:
            pos, neg = m, j
        else:
            pos, neg = min(j, m), max(j, m)
        triplets.append((a, pos, neg))
    return triplets


@dataclass
class OntologyGraph:
    """Undirected ontology edges plus a map from dataset class ids to nodes."""

    adjacency: dict[str, set[str]]
    class_map: dict[int, str]

    @classmethod
    def from_files(cls, edges_path: str, classmap_path: str) -> "OntologyGraph":
        adjacency: dict[str, set[str]] = {}
        with open(edges_path, "r") as f:
            for line in f:
                text = line.strip()
                if not text or text.startswith("#"):
                    continue
                a, b = text.split()
                adjacency.setdefault(a, set()).add(b)
                adjacency.setdefault(b, set()).add(a)
        class_map: dict[int, str] = {}
        with open(classmap_path, "r") as f:
            for line in f:
                text = line.strip()
                if not text or text.startswith("#"):
                    continue
                cid, node = text.split()
                class_map[int(cid)] = node
        return cls(adjacency, class_map)

    def shortest_path(self, node_a: str, node_b: str) -> int:
        if node_a not in self.adjacency or node_b not in self.adjacency:
            missing = node_a if node_a not in self.adjacency else node_b
            raise ValueError(f"node {missing!r} is not in the ontology graph")
        if node_a == node_b:
            return 0
        seen = {node_a: 0}
        queue = deque([node_a])
        while queue:
            cur = queue.popleft()
            for nxt in self.adjacency[cur]:
                if nxt in seen:
                    continue
                seen[nxt] = seen[cur] + 1
                if nxt == node_b:
                    return seen[nxt]
                queue.append(nxt)
        raise ValueError(f"nodes {node_a!r} and {node_b!r} are not connected")


def ontology_similarity(graph: OntologyGraph, class_i: int, class_j: int) -> float:
    """1 / (shortest-path edge count + 1); equals 1 only for identical classes."""
    for c in (class_i, class_j):
        if c not in graph.class_map:
            raise ValueError(f"class {c} is not mapped to an ontology node")
    d = graph.shortest_path(graph.class_map[class_i], graph.class_map[class_j])
    return 1.0 / (d + 1.0)


@dataclass
class TripletGenConfig:
    """Thresholds and size for ontology-driven triplet sampling."""

    theta_p: float = 0.5
    theta_n: float = 0.3
    count: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.theta_p <= 1.0:
            raise ValueError("theta_p must lie in (0, 1]")
        if not 0.0 < self.theta_n < 1.0:
            raise ValueError("theta_n must lie in (0, 1)")
        if self.theta_n >= self.theta_p:
            raise ValueError("theta_n must be smaller than theta_p")
        if self.count < 1:
            raise ValueError("count must be at least 1")


def triplets_from_ontology(labels, graph: OntologyGraph, config: TripletGenConfig,
                           rng: np.random.Generator, pool=None,
                           max_attempts: int = 10**6) -> list[Triplet]:
    """Rejection-sample (anchor, positive, negative) triples whose class
    similarities pass the thresholds.

    theta_p = 1 degenerates to same-class positives (similarity exactly 1).
    """
    labels = np.asarray(labels).reshape(-1)
    pool = np.arange(labels.shape[0]) if pool is None else np.asarray(pool, dtype=np.int64)
    if pool.shape[0] < 3:
        raise ValueError("the candidate pool must contain at least 3 instances")

    sims: dict[tuple[int, int], float] = {}

    def sim(ca: int, cb: int) -> float:
        key = (min(ca, cb), max(ca, cb))
        if key not in sims:
            sims[key] = ontology_similarity(graph, key[0], key[1])
        return sims[key]

    def positive_ok(s: float) -> bool:
        if config.theta_p == 1.0:
            return s >= 1.0
        return s > config.theta_p

    out: list[Triplet] = []
    attempts = 0
    while len(out) < config.count:
        attempts += 1
        if attempts > max_attempts:
            raise RuntimeError(
                f"no admissible triple found after {max_attempts} attempts "
                f"(theta_p={config.theta_p}, theta_n={config.theta_n})"
            )
        a, p, n = (int(i) for i in rng.choice(pool, size=3, replace=False))
        la, lp, ln = int(labels[a]), int(labels[p]), int(labels[n])
        if not positive_ok(sim(la, lp)):
            continue
        if sim(la, ln) >= config.theta_n or sim(lp, ln) >= config.theta_n:
            continue
        out.append((a, p, n))
    return out


def inject_noise(must_links: list[Pair], cannot_links: list[Pair], labels,
                 degree: float, rng: np.random.Generator) -> tuple[list[Pair], list[Pair]]:
    """Append flipped ground-truth pairs: true must-links emitted as
    cannot-links and vice versa, ceil(degree * set size) of them."""
    if not 0.0 <= degree < 1.0:
        raise ValueError("degree must lie in [0, 1)")
    labels = np.asarray(labels).reshape(-1)
    ml = list(must_links)
    cl = list(cannot_links)
    if degree == 0.0:
        return ml, cl
    n_noise = int(np.ceil(degree * (len(ml) + len(cl))))
    exclude = {_canonical(a, b) for a, b in ml} | {_canonical(a, b) for a, b in cl}
    for a, b in _sample_distinct_pairs(labels.shape[0], n_noise, rng, exclude=exclude):
        if labels[a] == labels[b]:
            cl.append((a, b))  # true must-link, flipped
        else:
            ml.append((a, b))  # true cannot-link, flipped
    return ml, cl
