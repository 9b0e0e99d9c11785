"""Constraint representations and their differentiable losses on soft assignments.

Every loss takes a row-stochastic assignment matrix Q and returns a scalar plus
its gradient with respect to Q; callers chain that gradient through the
assignment kernel into the embedding and the centroids. Log arguments are
clamped to [1e-12, 1] and a clamped term contributes zero gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError, FormatError
from .numerics import Array, as_matrix

CLAMP_FLOOR = 1e-12

Pair = tuple[int, int]
Triplet = tuple[int, int, int]


@dataclass
class CardinalitySpec:
    """Binary protected-status values plus the balance requirement on them.

    mode "equal" balances the two groups per cluster; mode "bounds" keeps the
    per-cluster mass of group 1 between lower and upper.
    """

    psv: np.ndarray
    mode: str = "equal"
    lower: float | None = None
    upper: float | None = None

    def __post_init__(self):
        self.psv = np.ascontiguousarray(self.psv, dtype=np.int64).reshape(-1)
        if not np.all((self.psv == 0) | (self.psv == 1)):
            raise ValueError("protected-status values must be 0 or 1")
        if self.mode not in ("equal", "bounds"):
            raise ValueError(f"unknown cardinality mode {self.mode!r}")
        if self.mode == "bounds":
            if self.lower is None or self.upper is None:
                raise ValueError("bounds mode requires lower and upper")
            if not 0 <= self.lower <= self.upper:
                raise ValueError("bounds must satisfy 0 <= lower <= upper")


@dataclass
class HornRule:
    """body must-link literals, all satisfied => the head cannot-link activates."""

    body: list[Pair]
    head: Pair

    def __post_init__(self):
        if not self.body:
            raise ValueError("a rule body must have at least one literal")


@dataclass
class ConstraintSet:
    """All constraint kinds consumed by training, over dataset row indices."""

    must_links: list[Pair] = field(default_factory=list)
    cannot_links: list[Pair] = field(default_factory=list)
    triplets: list[Triplet] = field(default_factory=list)
    difficulty: np.ndarray | None = None
    global_size: bool = False
    cardinality: CardinalitySpec | None = None
    horn_rules: list[HornRule] = field(default_factory=list)

    def __post_init__(self):
        self.must_links = [(int(a), int(b)) for a, b in self.must_links]
        self.cannot_links = [(int(a), int(b)) for a, b in self.cannot_links]
        self.triplets = [(int(a), int(p), int(n)) for a, p, n in self.triplets]
        if self.difficulty is not None:
            self.difficulty = np.ascontiguousarray(self.difficulty, dtype=np.float64).reshape(-1)

    @property
    def has_pairwise(self) -> bool:
        return bool(self.must_links or self.cannot_links)

    @property
    def has_triplets(self) -> bool:
        return bool(self.triplets)

    def validate(self, n: int) -> None:
        def check_index(i: int, what: str) -> None:
            if not 0 <= i < n:
                raise ValueError(f"{what} index {i} out of range [0, {n})")

        for a, b in self.must_links + self.cannot_links:
            check_index(a, "pair")
            check_index(b, "pair")
            if a == b:
                raise ValueError(f"pair ({a}, {b}) links an instance to itself")
        ml = {(min(a, b), max(a, b)) for a, b in self.must_links}
        cl = {(min(a, b), max(a, b)) for a, b in self.cannot_links}
        overlap = ml & cl
        if overlap:
            a, b = sorted(overlap)[0]
            raise ConsistencyError(f"pair ({a}, {b}) is both must-link and cannot-link")
        for a, p, q in self.triplets:
            for i in (a, p, q):
                check_index(i, "triplet")
            if len({a, p, q}) != 3:
                raise ValueError(f"triplet ({a}, {p}, {q}) has repeated indices")
        if self.difficulty is not None:
            if self.difficulty.shape[0] != n:
                raise ValueError(
                    f"difficulty vector length {self.difficulty.shape[0]} does not match n={n}"
                )
            if np.any(np.abs(self.difficulty) > 1.0):
                raise ValueError("difficulty values must lie in [-1, 1]")
        if self.cardinality is not None and self.cardinality.psv.shape[0] != n:
            raise ValueError(
                f"psv length {self.cardinality.psv.shape[0]} does not match n={n}"
            )
        for rule in self.horn_rules:
            for x, y in rule.body + [rule.head]:
                check_index(x, "rule")
                check_index(y, "rule")


def _pair_arrays(pairs: list[Pair]) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(pairs, dtype=np.int64)
    return arr[:, 0], arr[:, 1]


def ml_loss(Q, must_links: list[Pair]) -> tuple[float, Array]:
    """Must-link loss: -sum log of the pairwise assignment similarity."""
    Q = as_matrix(Q)
    dQ = np.zeros_like(Q)
    if not must_links:
        return 0.0, dQ
    a, b = _pair_arrays(must_links)
    sims = np.einsum("ij,ij->i", Q[a], Q[b])
    clamped = np.clip(sims, CLAMP_FLOOR, 1.0)
    loss = float(-np.log(clamped).sum())
    coef = np.where((sims >= CLAMP_FLOOR) & (sims <= 1.0), -1.0 / clamped, 0.0)
    np.add.at(dQ, a, coef[:, None] * Q[b])
    np.add.at(dQ, b, coef[:, None] * Q[a])
    return loss, dQ


def cl_loss(Q, cannot_links: list[Pair]) -> tuple[float, Array]:
    """Cannot-link loss: -sum log of one minus the pairwise similarity."""
    Q = as_matrix(Q)
    dQ = np.zeros_like(Q)
    if not cannot_links:
        return 0.0, dQ
    a, b = _pair_arrays(cannot_links)
    sims = np.einsum("ij,ij->i", Q[a], Q[b])
    arg = 1.0 - sims
    clamped = np.clip(arg, CLAMP_FLOOR, 1.0)
    loss = float(-np.log(clamped).sum())
    coef = np.where((arg >= CLAMP_FLOOR) & (arg <= 1.0), 1.0 / clamped, 0.0)
    np.add.at(dQ, a, coef[:, None] * Q[b])
    np.add.at(dQ, b, coef[:, None] * Q[a])
    return loss, dQ


def difficulty_loss(Q, difficulty) -> tuple[float, Array]:
    """Sharpen easy instances (positive scores) and soften hard ones (negative).

    difficulty has one entry per row of Q; zeros contribute nothing.
    """
    Q = as_matrix(Q)
    m = np.ascontiguousarray(difficulty, dtype=np.float64).reshape(-1)
    if m.shape[0] != Q.shape[0]:
        raise ValueError(f"difficulty length {m.shape[0]} does not match batch size {Q.shape[0]}")
    if np.any(np.abs(m) > 1.0):
        raise ValueError("difficulty values must lie in [-1, 1]")
    sq = (Q * Q).sum(axis=1)
    loss = float(-(m * sq).sum())
    dQ = -2.0 * m[:, None] * Q
    return loss, dQ


def triplet_loss(Q, triplets: list[Triplet], margin: float = 0.1) -> tuple[float, Array]:
    """Hinge on assignment similarities: anchors should look like positives,
    not negatives, by at least the margin."""
    if margin <= 0.0:
        raise ValueError("margin must be positive")
    Q = as_matrix(Q)
    dQ = np.zeros_like(Q)
    if not triplets:
        return 0.0, dQ
    arr = np.asarray(triplets, dtype=np.int64)
    a, p, n = arr[:, 0], arr[:, 1], arr[:, 2]
    sim_an = np.einsum("ij,ij->i", Q[a], Q[n])
    sim_ap = np.einsum("ij,ij->i", Q[a], Q[p])
    viol = sim_an - sim_ap + margin
    active = viol > 0.0
    loss = float(viol[active].sum())
    w = active.astype(np.float64)[:, None]
    np.add.at(dQ, a, w * (Q[n] - Q[p]))
    np.add.at(dQ, n, w * Q[a])
    np.add.at(dQ, p, -w * Q[a])
    return loss, dQ


def global_size_loss(Q, k: int) -> tuple[float, Array]:
    """Penalize average soft cluster sizes that deviate from uniform 1/k."""
    Q = as_matrix(Q)
    if Q.shape[1] != k:
        raise ValueError(f"Q has {Q.shape[1]} columns, expected k={k}")
    n_rows = Q.shape[0]
    dev = Q.mean(axis=0) - 1.0 / k
    loss = float((dev * dev).sum())
    dQ = np.tile(2.0 * dev / n_rows, (n_rows, 1))
    return loss, dQ


def cardinality_loss(Q, spec: CardinalitySpec) -> tuple[float, Array]:
    """Equal-mode cardinality: per cluster, group masses should match."""
    Q = as_matrix(Q)
    if spec.mode != "equal":
        raise ValueError("cardinality_loss requires an equal-mode spec")
    psv = spec.psv
    if psv.shape[0] != Q.shape[0]:
        raise ValueError(f"psv length {psv.shape[0]} does not match batch size {Q.shape[0]}")
    in_group = psv == 1
    if in_group.all() or not in_group.any():
        raise ValueError("equal-mode cardinality needs both groups present")
    n_rows = Q.shape[0]
    dev = Q[in_group].sum(axis=0) / n_rows - Q[~in_group].sum(axis=0) / n_rows
    loss = float((dev * dev).sum())
    sign = np.where(in_group, 1.0, -1.0)[:, None]
    dQ = sign * (2.0 * dev / n_rows)[None, :]
    return loss, dQ


def cardinality_bound_loss(Q, spec: CardinalitySpec) -> tuple[float, Array]:
    """Bounds-mode cardinality: group-1 mass per cluster stays within [lower, upper]."""
    Q = as_matrix(Q)
    if spec.mode != "bounds":
        raise ValueError("cardinality_bound_loss requires a bounds-mode spec")
    psv = spec.psv
    if psv.shape[0] != Q.shape[0]:
        raise ValueError(f"psv length {psv.shape[0]} does not match batch size {Q.shape[0]}")
    in_group = psv == 1
    mass = Q[in_group].sum(axis=0)
    below = np.minimum(0.0, mass - spec.lower)
    above = np.maximum(0.0, mass - spec.upper)
    loss = float((below * below + above * above).sum())
    coef = 2.0 * below + 2.0 * above
    dQ = np.zeros_like(Q)
    dQ[in_group] = coef[None, :]
    return loss, dQ


def evaluate_horn_rules(Q, horn_rules: list[HornRule], tau: float = 0.5) -> list[Pair]:
    """Emit head cannot-link pairs of rules whose body literals are all satisfied.

    A must-link literal (x, y) is satisfied when the assignment similarity of
    x and y exceeds tau.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    Q = as_matrix(Q)
    activated: list[Pair] = []
    seen: set[Pair] = set()
    for rule in horn_rules:
        if all(float(Q[x] @ Q[y]) > tau for x, y in rule.body):
            if rule.head not in seen:
                seen.add(rule.head)
                activated.append(rule.head)
    return activated


def write_constraints(path: str, constraints: ConstraintSet) -> None:
    """Write the one-record-per-line constraint file."""
    with open(path, "w") as f:
        for a, b in constraints.must_links:
            f.write(f"ML {a} {b}\n")
        for a, b in constraints.cannot_links:
            f.write(f"CL {a} {b}\n")
        for a, p, n in constraints.triplets:
            f.write(f"TRI {a} {p} {n}\n")
        if constraints.difficulty is not None:
            for i in np.flatnonzero(constraints.difficulty != 0.0):
                f.write(f"DIF {int(i)} {repr(float(constraints.difficulty[i]))}\n")
        if constraints.cardinality is not None:
            for i, g in enumerate(constraints.cardinality.psv):
                f.write(f"PSV {i} {int(g)}\n")


def read_constraints(path: str, n: int, cardinality_mode: str = "equal",
                     lower: float | None = None, upper: float | None = None) -> ConstraintSet:
    """Parse a constraint file against a dataset of n instances.

    PSV records, when present, produce a cardinality spec in the given mode;
    unlisted instances default to group 0.
    """
    ml: list[Pair] = []
    cl: list[Pair] = []
    tri: list[Triplet] = []
    dif: dict[int, float] = {}
    psv: dict[int, int] = {}
    with open(path, "r") as f:
        for lineno, line in enumerate(f, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split()
            kind = parts[0].upper()
            try:
                if kind == "ML" and len(parts) == 3:
                    ml.append((int(parts[1]), int(parts[2])))
                elif kind == "CL" and len(parts) == 3:
                    cl.append((int(parts[1]), int(parts[2])))
                elif kind == "TRI" and len(parts) == 4:
                    tri.append((int(parts[1]), int(parts[2]), int(parts[3])))
                elif kind == "DIF" and len(parts) == 3:
                    dif[int(parts[1])] = float(parts[2])
                elif kind == "PSV" and len(parts) == 3:
                    psv[int(parts[1])] = int(parts[2])
                else:
                    raise FormatError(f"{path}: unrecognized record on line {lineno}: {text!r}")
            except ValueError:
                raise FormatError(f"{path}: malformed record on line {lineno}: {text!r}") from None
    difficulty = None
    if dif:
        difficulty = np.zeros(n)
        for i, v in dif.items():
            if not 0 <= i < n:
                raise ValueError(f"{path}: difficulty index {i} out of range [0, {n})")
            difficulty[i] = v
    cardinality = None
    if psv:
        vec = np.zeros(n, dtype=np.int64)
        for i, g in psv.items():
            if not 0 <= i < n:
                raise ValueError(f"{path}: psv index {i} out of range [0, {n})")
            vec[i] = g
        cardinality = CardinalitySpec(vec, mode=cardinality_mode, lower=lower, upper=upper)
    out = ConstraintSet(must_links=ml, cannot_links=cl, triplets=tri,
                        difficulty=difficulty, cardinality=cardinality)
    out.validate(n)
    return out
