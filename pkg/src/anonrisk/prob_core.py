"""Exact primitives on finite probability spaces.

Everything in the package is built on four immutable types:

* :class:`FiniteSpace` -- strictly positive outcome weights summing to one,
* :class:`RandVar` -- one real value per outcome,
* :class:`Partition` -- a finite sigma-field given by its atoms,
* :class:`RiskVector` -- ``n >= 2`` random variables on a common space.

Values are grouped into level sets with a relative tolerance
(:data:`GROUP_RTOL`) so that floating point sums of risks land in one level
deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass
from statistics import NormalDist
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BadVariance,
    InvalidPartition,
    InvalidRiskVector,
    NonPositiveWeight,
    SpaceMismatch,
    WeightsDoNotSumToOne,
)

PROB_ATOL = 1e-12
GROUP_RTOL = 1e-9
TOL = 1e-9


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FiniteSpace:
    """Outcomes ``0..m-1`` with strictly positive probabilities."""

    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 1 or p.size == 0:
            raise WeightsDoNotSumToOne("a space needs at least one outcome")
        if not np.all(np.isfinite(p)):
            raise NonPositiveWeight("probabilities must be finite")
        bad = np.flatnonzero(p <= 0)
        if bad.size:
            raise NonPositiveWeight(f"outcome {int(bad[0])} has weight {p[bad[0]]!r} <= 0")
        total = float(p.sum())
        if abs(total - 1.0) > PROB_ATOL:
            raise WeightsDoNotSumToOne(f"weights sum to {total!r}")
        object.__setattr__(self, "probs", p)

    @property
    def size(self) -> int:
        return self.probs.size

    def __len__(self):
        return self.size

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, FiniteSpace):
            return NotImplemented
        return self.size == other.size and bool(np.array_equal(self.probs, other.probs))

    def __hash__(self):
        return hash(self.probs.tobytes())

    def __repr__(self):
        return f"FiniteSpace(m={self.size})"

    def constant(self, c: float) -> "RandVar":
        return RandVar(self, np.full(self.size, float(c)))

    def indicator(self, outcomes: Iterable[int]) -> "RandVar":
        v = np.zeros(self.size)
        v[list(outcomes)] = 1.0
        return RandVar(self, v)

    def var(self, values) -> "RandVar":
        return RandVar(self, values)


def make_space(probs: Sequence[float]) -> FiniteSpace:
    return FiniteSpace(np.asarray(probs, dtype=float))


def uniform_space(m: int) -> FiniteSpace:
    return FiniteSpace(np.full(m, 1.0 / m))


def normalized_space(weights: Sequence[float]) -> FiniteSpace:
    """Space with probabilities proportional to ``weights`` (all > 0)."""
    w = np.asarray(weights, dtype=float)
    if np.any(w <= 0):
        raise NonPositiveWeight("weights must be positive")
    p = w / w.sum()
    # push the rounding residue into the largest weight
    p[np.argmax(p)] += 1.0 - p.sum()
    return FiniteSpace(p)


def product_space(*spaces: FiniteSpace) -> FiniteSpace:
    """Independent product; outcome index is row-major in the factor order."""
    p = np.ones(1)
    for s in spaces:
        p = np.outer(p, s.probs).ravel()
    return normalized_space(p)


def _check_same(a: FiniteSpace, b: FiniteSpace):
    if not (a is b or a == b):
        raise SpaceMismatch(f"{a!r} vs {b!r}")


@dataclass(frozen=True, eq=False)
class RandVar:
    """A real value per outcome (positive values are losses)."""

    space: FiniteSpace
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if v.shape != (self.space.size,):
            raise InvalidRiskVector(
                f"expected {self.space.size} values, got shape {v.shape}"
            )
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    def __repr__(self):
        return f"RandVar({np.array2string(self.values, precision=6)})"

    def _other(self, other):
        if isinstance(other, RandVar):
            _check_same(self.space, other.space)
            return other.values
        return float(other)

    def __add__(self, other):
        return RandVar(self.space, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return RandVar(self.space, self.values - self._other(other))

    def __rsub__(self, other):
        return RandVar(self.space, self._other(other) - self.values)

    def __neg__(self):
        return RandVar(self.space, -self.values)

    def __mul__(self, other):
        return RandVar(self.space, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, c):
        return RandVar(self.space, self.values / float(c))

    def allclose(self, other: "RandVar", tol: float = TOL) -> bool:
        _check_same(self.space, other.space)
        return bool(np.max(np.abs(self.values - other.values)) <= tol)

    def mean(self) -> float:
        return expectation(self)


def expectation(x: RandVar) -> float:
    return float(np.dot(x.space.probs, x.values))


def variance(x: RandVar) -> float:
    mu = expectation(x)
    return float(np.dot(x.space.probs, (x.values - mu) ** 2))


def covariance(x: RandVar, y: RandVar) -> float:
    _check_same(x.space, y.space)
    return float(np.dot(x.space.probs, (x.values - expectation(x)) * (y.values - expectation(y))))


def essential_sup(x: RandVar) -> float:
    # every outcome carries positive mass, so ess sup is the plain max
    return float(x.values.max())


def essential_inf(x: RandVar) -> float:
    return float(x.values.min())


# ---------------------------------------------------------------------------
# grouping and partitions


def same_level(v: float, w: float, rtol: float = GROUP_RTOL) -> bool:
    return abs(v - w) <= rtol * max(1.0, abs(v), abs(w))


def level_labels(values: np.ndarray, rtol: float = GROUP_RTOL) -> np.ndarray:
    """Label outcomes by value level.

    Values are scanned in increasing order; a new level starts when a value
    leaves the tolerance band of the current level's smallest member.
    """
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    labels = np.empty(values.size, dtype=np.int64)
    level = -1
    anchor = None
    for idx in order:
        v = values[idx]
        if anchor is None or not same_level(anchor, v, rtol):
            level += 1
            anchor = v
        labels[idx] = level
    return labels


def _canonical_labels(labels: np.ndarray) -> np.ndarray:
    """Relabel so blocks are numbered by their smallest outcome index."""
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(first.size)
    return rank[inverse.ravel()]


def _blocks_from_labels(labels: np.ndarray) -> tuple:
    nb = int(labels.max()) + 1
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(nb + 1))
    return tuple(tuple(order[bounds[b]:bounds[b + 1]].tolist()) for b in range(nb))


@dataclass(frozen=True, eq=False)
class Partition:
    """Atoms of a sigma-field on a finite space.

    Blocks are stored canonically: each block sorted, blocks ordered by their
    smallest element.  ``labels[w]`` is the index of the block holding ``w``.
    """

    space: FiniteSpace
    blocks: tuple

    def __post_init__(self):
        m = self.space.size
        labels = np.full(m, -1, dtype=np.int64)
        for b, block in enumerate(self.blocks):
            block = list(block)
            if not block:
                raise InvalidPartition("empty block")
            for w in block:
                if not (0 <= int(w) < m):
                    raise InvalidPartition(f"outcome {w} out of range 0..{m - 1}")
                if labels[int(w)] != -1:
                    raise InvalidPartition(f"outcome {w} appears in two blocks")
                labels[int(w)] = b
        if np.any(labels < 0):
            raise InvalidPartition(
                f"outcome {int(np.flatnonzero(labels < 0)[0])} not covered"
            )
        labels = _canonical_labels(labels)
        blocks = _blocks_from_labels(labels)
        labels.setflags(write=False)
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_labels(cls, space: FiniteSpace, labels) -> "Partition":
        return cls(space, _blocks_from_labels(_canonical_labels(np.asarray(labels))))

    @classmethod
    def trivial(cls, space: FiniteSpace) -> "Partition":
        return cls(space, (tuple(range(space.size)),))

    @classmethod
    def discrete(cls, space: FiniteSpace) -> "Partition":
        return cls(space, tuple((w,) for w in range(space.size)))

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    def __len__(self):
        return self.num_blocks

    def __eq__(self, other):
        if not isinstance(other, Partition):
            return NotImplemented
        return self.space == other.space and self.blocks == other.blocks

    def __hash__(self):
        return hash(self.blocks)

    def __repr__(self):
        return f"Partition({[set(b) for b in self.blocks]})"

    def is_finer_than(self, other: "Partition") -> bool:
        """True if every block of ``self`` sits inside one block of ``other``."""
        _check_same(self.space, other.space)
        return all(len({int(other.labels[w]) for w in b}) == 1 for b in self.blocks)


def partition_of(vars: Sequence[RandVar], rtol: float = GROUP_RTOL) -> Partition:
    """Joint level sets of ``vars``: the sigma-field they generate."""
    vars = list(vars)
    if not vars:
        raise InvalidPartition("partition_of needs at least one variable")
    space = vars[0].space
    for v in vars[1:]:
        _check_same(space, v.space)
    cols = np.stack([level_labels(v.values, rtol) for v in vars], axis=1)
    _, inverse = np.unique(cols, axis=0, return_inverse=True)
    return Partition.from_labels(space, inverse.ravel())


def refine(p: Partition, q: Partition) -> Partition:
    """Coarsest common refinement (join of the two sigma-fields)."""
    _check_same(p.space, q.space)
    _, inverse = np.unique(np.stack([p.labels, q.labels], axis=1), axis=0, return_inverse=True)
    return Partition.from_labels(p.space, inverse.ravel())


def cond_expectation(x: RandVar, g: Partition, probs: np.ndarray | None = None) -> RandVar:
    """Block-wise probability-weighted average of ``x``.

    ``probs`` optionally replaces the space's measure (used for a change of
    measure); it must be positive on every outcome.
    """
    _check_same(x.space, g.space)
    p = x.space.probs if probs is None else np.asarray(probs, dtype=float)
    mass = np.bincount(g.labels, weights=p, minlength=g.num_blocks)
    # normalised weights keep singleton blocks exact: w = p/p = 1.0
    w = p / mass[g.labels]
    avg = np.bincount(g.labels, weights=w * x.values, minlength=g.num_blocks)
    return RandVar(x.space, avg[g.labels])


def _block_ranges(values: np.ndarray, g: Partition):
    lo = np.full(g.num_blocks, np.inf)
    hi = np.full(g.num_blocks, -np.inf)
    np.minimum.at(lo, g.labels, values)
    np.maximum.at(hi, g.labels, values)
    return lo, hi


def measurability_violation(x: RandVar, g: Partition, rtol: float = GROUP_RTOL):
    """Worst block spread beyond tolerance as ``(excess, outcome)``, or None."""
    _check_same(x.space, g.space)
    lo, hi = _block_ranges(x.values, g)
    allowed = rtol * np.maximum(1.0, np.maximum(np.abs(lo), np.abs(hi)))
    excess = (hi - lo) - allowed
    b = int(np.argmax(excess))
    if excess[b] <= 0:
        return None
    block = np.array(g.blocks[b])
    # report the outcome furthest from the block's minimum
    w = int(block[np.argmax(x.values[block])])
    return float(hi[b] - lo[b]), w


def is_measurable(x: RandVar, g: Partition, rtol: float = GROUP_RTOL) -> bool:
    return measurability_violation(x, g, rtol) is None


# ---------------------------------------------------------------------------
# convex order


def stop_loss(x: RandVar, d: float) -> float:
    """E[(X - d)+]."""
    return float(np.dot(x.space.probs, np.maximum(x.values - d, 0.0)))


def _stop_loss_curve(values: np.ndarray, probs: np.ndarray, ds: np.ndarray) -> np.ndarray:
    order = np.argsort(values)
    v = values[order]
    p = probs[order]
    # tail sums over {x > d}
    tail_p = np.concatenate([np.cumsum(p[::-1])[::-1], [0.0]])
    tail_px = np.concatenate([np.cumsum((p * v)[::-1])[::-1], [0.0]])
    k = np.searchsorted(v, ds, side="right")
    return tail_px[k] - ds * tail_p[k]


def convex_order_gap(x: RandVar, y: RandVar) -> float:
    """How far ``x <=cx y`` is from holding (0 when it holds exactly).

    Maximum of the mean difference and the stop-loss excess of ``x`` over
    ``y`` on the union of both supports; both stop-loss curves are piecewise
    linear with kinks only there, so this grid is exhaustive.
    """
    _check_same(x.space, y.space)
    p = x.space.probs
    mean_gap = abs(expectation(x) - expectation(y))
    ds = np.union1d(x.values, y.values)
    excess = _stop_loss_curve(x.values, p, ds) - _stop_loss_curve(y.values, p, ds)
    return float(max(mean_gap, excess.max(), 0.0))


def convex_order_leq(x: RandVar, y: RandVar, tol: float = TOL) -> bool:
    return convex_order_gap(x, y) <= tol


# ---------------------------------------------------------------------------
# comonotonicity


def comonotonic_witness(vars: Sequence[RandVar], tol: float = TOL):
    """Most anti-monotone ``(i, j, w, w2, magnitude)`` pair, or None.

    ``magnitude`` is ``-(X_i(w)-X_i(w2)) * (X_j(w)-X_j(w2))`` and exceeds
    ``tol`` whenever a witness is returned.
    """
    vars = list(vars)
    if len(vars) < 2:
        return None
    space = vars[0].space
    for v in vars[1:]:
        _check_same(space, v.space)
    mat = np.stack([v.values for v in vars])
    m = space.size
    worst = None
    chunk = max(1, 2_000_000 // max(m, 1))
    for i in range(len(vars)):
        for j in range(i + 1, len(vars)):
            xi, xj = mat[i], mat[j]
            for start in range(0, m, chunk):
                sl = slice(start, min(m, start + chunk))
                prod = (xi[sl, None] - xi[None, :]) * (xj[sl, None] - xj[None, :])
                flat = int(np.argmin(prod))
                lo = float(prod.flat[flat])
                if lo < -tol and (worst is None or -lo > worst[4]):
                    r, c = divmod(flat, m)
                    worst = (i, j, start + r, c, -lo)
    return worst


def is_comonotonic(vars: Sequence[RandVar], tol: float = TOL) -> bool:
    return comonotonic_witness(vars, tol) is None


# ---------------------------------------------------------------------------
# discretisation


def discretize_gaussian(mean: float, variance: float, points: int):
    """Quantile-midpoint grid: ``points`` equally likely values."""
    if not variance > 0:
        raise BadVariance(f"variance must be > 0, got {variance!r}")
    if points < 2:
        raise BadVariance(f"need at least 2 points, got {points}")
    nd = NormalDist()
    sd = float(np.sqrt(variance))
    z = [nd.inv_cdf((k + 0.5) / points) for k in range(points)]
    # mirror the lower half so the grid is exactly symmetric
    for k in range(points // 2):
        z[points - 1 - k] = -z[k]
    if points % 2:
        z[points // 2] = 0.0
    return [(mean + sd * zk, 1.0 / points) for zk in z]


# ---------------------------------------------------------------------------
# risk vectors


@dataclass(frozen=True, eq=False)
class RiskVector:
    """``n >= 2`` random variables on one space; ``total`` is their sum."""

    agents: tuple

    def __post_init__(self):
        agents = tuple(self.agents)
        if len(agents) < 2:
            raise InvalidRiskVector(f"need at least 2 agents, got {len(agents)}")
        space = agents[0].space
        for a in agents[1:]:
            _check_same(space, a.space)
        mat = np.stack([a.values for a in agents])
        mat.setflags(write=False)
        object.__setattr__(self, "agents", agents)
        object.__setattr__(self, "matrix", mat)

    @classmethod
    def from_matrix(cls, space: FiniteSpace, matrix) -> "RiskVector":
        return cls(tuple(RandVar(space, row) for row in np.asarray(matrix, dtype=float)))

    @property
    def space(self) -> FiniteSpace:
        return self.agents[0].space

    @property
    def n(self) -> int:
        return len(self.agents)

    def __len__(self):
        return self.n

    def __getitem__(self, i) -> RandVar:
        return self.agents[i]

    def __iter__(self):
        return iter(self.agents)

    def __repr__(self):
        return f"{type(self).__name__}(n={self.n}, m={self.space.size})"

    @property
    def total(self) -> RandVar:
        return RandVar(self.space, self.matrix.sum(axis=0))

    def means(self) -> np.ndarray:
        return self.matrix @ self.space.probs

    def merge(self, i: int, j: int) -> "RiskVector":
        """Move agent ``j``'s risk onto agent ``i`` (``j`` is left with 0)."""
        if i == j:
            raise ValueError("cannot merge an agent into itself")
        mat = np.array(self.matrix)
        mat[i] += mat[j]
        mat[j] = 0.0
        return RiskVector.from_matrix(self.space, mat)

    def permute(self, perm: Sequence[int]) -> "RiskVector":
        """``X_pi = (X_pi(1), ..., X_pi(n))``."""
        return type(self).from_matrix(self.space, self.matrix[list(perm)])

    def allclose(self, other: "RiskVector", tol: float = TOL) -> bool:
        return self.max_deviation(other) <= tol

    def max_deviation(self, other: "RiskVector") -> float:
        _check_same(self.space, other.space)
        if other.n != self.n:
            raise InvalidRiskVector("agent counts differ")
        return float(np.max(np.abs(self.matrix - other.matrix)))


class Allocation(RiskVector):
    """Output of a sharing rule; its components sum to the pool total."""
