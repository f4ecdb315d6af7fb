"""Risk sharing rules.

A rule maps a :class:`~anonrisk.prob_core.RiskVector` to an
:class:`~anonrisk.prob_core.Allocation` whose components add up to the
pool total at every outcome.  Rules are described declaratively by
:class:`RuleSpec` and evaluated with :func:`apply`; every catalog rule is
also available as a plain function of the risk vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    BadMeasure,
    NegativeRiskForProportional,
    RuleError,
    SpaceMismatch,
    UnknownRule,
)
from .prob_core import (
    TOL,
    Allocation,
    Partition,
    RiskVector,
    cond_expectation,
    partition_of,
    refine,
)

RULE_NAMES = (
    "identity",
    "all-in-one",
    "mean-adjusted",
    "uniform",
    "cmrs",
    "mean-proportional",
    "covariance",
    "q-cmrs",
    "generalized-cmrs",
    "mixture",
    "gated",
    "comono-improve",
)

_ALIASES = {
    "id": "identity",
    "all": "all-in-one",
    "all_in_one": "all-in-one",
    "mean_adjusted": "mean-adjusted",
    "unif": "uniform",
    "cm": "cmrs",
    "mean_proportional": "mean-proportional",
    "prop": "mean-proportional",
    "cov": "covariance",
    "q_cmrs": "q-cmrs",
    "generalized_cmrs": "generalized-cmrs",
    "comonotonic_improvement": "comono-improve",
    "comono_improve": "comono-improve",
}


def canonical_name(name: str) -> str:
    key = name.strip().lower()
    key = _ALIASES.get(key, key)
    if key not in RULE_NAMES:
        raise UnknownRule(f"unknown rule {name!r}; expected one of {', '.join(RULE_NAMES)}")
    return key


@dataclass(frozen=True, eq=False)
class RuleSpec:
    """Declarative rule identifier plus its parameters.

    Only the parameters of ``kind`` are used:

    - ``q-cmrs``: ``qweights`` (positive, summing to one, one per outcome)
    - ``generalized-cmrs``: optional fixed ``partition``; otherwise the
      target information supplied at application time is used
    - ``mixture``: ``weight`` in [0, 1] on ``first``, the rest on ``second``
    - ``gated``: ``first`` when the input equals ``trigger``, else ``second``
    """

    kind: str
    qweights: Optional[tuple] = None
    partition: Optional[Partition] = None
    weight: Optional[float] = None
    first: Optional["RuleSpec"] = None
    second: Optional["RuleSpec"] = None
    trigger: Optional[RiskVector] = None

    def __post_init__(self):
        kind = canonical_name(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind == "q-cmrs":
            if self.qweights is None:
                raise BadMeasure("q-cmrs needs qweights")
            q = np.asarray(self.qweights, dtype=float)
            if q.ndim != 1 or np.any(q <= 0) or abs(q.sum() - 1.0) > 1e-12:
                raise BadMeasure("Q weights must be strictly positive and sum to 1")
            object.__setattr__(self, "qweights", tuple(float(v) for v in q))
        elif kind == "mixture":
            if self.first is None or self.second is None or self.weight is None:
                raise RuleError("mixture needs weight, first and second")
            if not 0.0 <= float(self.weight) <= 1.0:
                raise RuleError(f"mixture weight {self.weight} outside [0, 1]")
            object.__setattr__(self, "weight", float(self.weight))
        elif kind == "gated":
            if self.first is None or self.second is None or self.trigger is None:
                raise RuleError("gated needs trigger, first and second")

    def __call__(self, x: RiskVector, g: Optional[Partition] = None) -> Allocation:
        return apply(self, x, g)

    def __repr__(self):
        return f"RuleSpec({self.describe()})"

    def describe(self) -> str:
        if self.kind == "mixture":
            return f"mixture({self.weight:g}, {self.first.describe()}, {self.second.describe()})"
        if self.kind == "gated":
            return f"gated({self.first.describe()}, {self.second.describe()})"
        if self.kind == "q-cmrs":
            return "q-cmrs(" + ", ".join(f"{v:g}" for v in self.qweights) + ")"
        return self.kind


def _alloc(x: RiskVector, matrix) -> Allocation:
    return Allocation.from_matrix(x.space, matrix)


def _check_full(x: RiskVector, a: Allocation, rule: str):
    s = x.matrix.sum(axis=0)
    err = np.max(np.abs(a.matrix.sum(axis=0) - s))
    if err > TOL * max(1.0, float(np.max(np.abs(s)))):
        raise RuleError(f"{rule} produced an allocation off the total by {err:.3g}")


# ---------------------------------------------------------------------------
# catalog


def identity(x: RiskVector) -> Allocation:
    return _alloc(x, x.matrix)


def all_in_one(x: RiskVector) -> Allocation:
    mat = np.zeros_like(x.matrix)
    mat[0] = x.matrix.sum(axis=0)
    return _alloc(x, mat)


def mean_adjusted(x: RiskVector) -> Allocation:
    s = x.matrix.sum(axis=0)
    mat = np.repeat(x.means()[:, None], x.space.size, axis=1)
    mat[0] += s - float(x.space.probs @ s)
    return _alloc(x, mat)


def uniform(x: RiskVector) -> Allocation:
    s = x.matrix.sum(axis=0)
    return _alloc(x, np.tile(s / x.n, (x.n, 1)))


def _sum_partition(x: RiskVector) -> Partition:
    return partition_of([x.total])


def cmrs(x: RiskVector) -> Allocation:
    """Conditional mean risk sharing: ``A_i = E[X_i | S]``."""
    g = _sum_partition(x)
    return Allocation(tuple(cond_expectation(xi, g) for xi in x))


def q_cmrs(x: RiskVector, qweights) -> Allocation:
    """CMRS computed under the measure ``Q`` instead of ``P``."""
    q = np.asarray(qweights, dtype=float)
    if q.shape != (x.space.size,):
        raise BadMeasure(f"Q has {q.size} weights for a space of {x.space.size} outcomes")
    if np.any(q <= 0) or abs(q.sum() - 1.0) > 1e-12:
        raise BadMeasure("Q weights must be strictly positive and sum to 1")
    g = _sum_partition(x)
    return Allocation(tuple(cond_expectation(xi, g, probs=q) for xi in x))


def mean_proportional(x: RiskVector) -> Allocation:
    if np.any(x.matrix < 0):
        i, w = np.argwhere(x.matrix < 0)[0]
        raise NegativeRiskForProportional(
            f"agent {i} has negative value {x.matrix[i, w]!r} at outcome {w}"
        )
    means = x.means()
    es = means.sum()
    s = x.matrix.sum(axis=0)
    if es == 0:
        # 0/0 = 0: a zero mean forces every component to vanish
        return _alloc(x, np.zeros_like(x.matrix))
    return _alloc(x, np.outer(means / es, s))


def covariance_rule(x: RiskVector) -> Allocation:
    p = x.space.probs
    s = x.matrix.sum(axis=0)
    means = x.means()
    ds = s - float(p @ s)
    var_s = float(p @ ds**2)
    if _sum_partition(x).num_blocks == 1 or var_s == 0:
        beta = np.zeros(x.n)
    else:
        beta = ((x.matrix - means[:, None]) @ (p * ds)) / var_s
    return _alloc(x, np.outer(beta, ds) + means[:, None])


def generalized_cmrs(x: RiskVector, g: Optional[Partition] = None) -> Allocation:
    """``E[X | sigma(S, G)]``; ``g=None`` means no target information."""
    gs = _sum_partition(x)
    if g is not None:
        if g.space != x.space:
            raise SpaceMismatch("target partition lives on a different space")
        gs = refine(g, gs)
    return Allocation(tuple(cond_expectation(xi, gs) for xi in x))


def _comonotone_levels(c: np.ndarray, s: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """Make level-wise allocations non-decreasing in the level.

    ``c`` is ``n x K`` with columns summing to the increasing levels ``s``
    carrying masses ``pi``.  Each step takes a pair of adjacent levels where
    some component drops, flattens the dropping components to their pair
    mean and shrinks the others' increments proportionally so the columns
    still sum to ``s``.  Both moves are mean-preserving contractions on the
    pair, so every component only decreases in convex order.
    """
    c = np.array(c, dtype=float)
    n, K = c.shape
    if K < 2:
        return c
    stop = 1e-13 * max(1.0, float(np.max(np.abs(c))))
    max_sweeps = max(1000, n * n * K * K)
    for _ in range(max_sweeps):
        worst = 0.0
        for parity in (0, 1):
            k = np.arange(parity, K - 1, 2)
            if k.size == 0:
                continue
            gap = c[:, k + 1] - c[:, k]
            drops = gap < 0
            hit = drops.any(axis=0)
            if not hit.any():
                continue
            worst = max(worst, float(-gap.min()))
            k, gap, drops = k[hit], gap[:, hit], drops[:, hit]
            p, q = pi[k], pi[k + 1]
            mid = (p * c[:, k] + q * c[:, k + 1]) / (p + q)
            rise = np.where(drops, 0.0, gap)
            new_gap = rise * (s[k + 1] - s[k]) / rise.sum(axis=0)
            low = mid - q * new_gap / (p + q)
            c[:, k] = low
            c[:, k + 1] = low + new_gap
        if worst <= stop:
            break
    return c


def comonotonic_improvement(x: RiskVector) -> Allocation:
    """A comonotonic allocation of ``S`` improving every component in convex order.

    Starts from ``E[X | S]`` and removes anti-monotone steps between adjacent
    levels of ``S`` by pairwise contractions (see :func:`_comonotone_levels`).
    Comonotonic inputs are returned unchanged.
    """
    g = _sum_partition(x)
    c_out = np.stack([cond_expectation(xi, g).values for xi in x])
    first = np.array([b[0] for b in g.blocks])
    s_lvl = x.matrix.sum(axis=0)
    s_lvl = np.bincount(g.labels, weights=x.space.probs * s_lvl) / np.bincount(
        g.labels, weights=x.space.probs
    )
    pi = np.bincount(g.labels, weights=x.space.probs)
    order = np.argsort(s_lvl)
    f = _comonotone_levels(c_out[:, first][:, order], s_lvl[order], pi[order])
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return _alloc(x, f[:, rank[g.labels]])


def _equals_trigger(x: RiskVector, trigger: RiskVector) -> bool:
    if x.n != trigger.n or x.space != trigger.space:
        return False
    return x.allclose(trigger, TOL)


def gated(x: RiskVector, trigger: RiskVector, a: RuleSpec, b: RuleSpec,
          g: Optional[Partition] = None) -> Allocation:
    """Rule ``a`` on the one designated input ``trigger``, rule ``b`` elsewhere."""
    return apply(a if _equals_trigger(x, trigger) else b, x, g)


def mixture(x: RiskVector, weight: float, a: RuleSpec, b: RuleSpec,
            g: Optional[Partition] = None) -> Allocation:
    first = apply(a, x, g)
    second = apply(b, x, g)
    return _alloc(x, weight * first.matrix + (1.0 - weight) * second.matrix)


_SIMPLE = {
    "identity": identity,
    "all-in-one": all_in_one,
    "mean-adjusted": mean_adjusted,
    "uniform": uniform,
    "cmrs": cmrs,
    "mean-proportional": mean_proportional,
    "covariance": covariance_rule,
    "comono-improve": comonotonic_improvement,
}


def apply(rule: RuleSpec | str, x: RiskVector, g: Optional[Partition] = None) -> Allocation:
    """Evaluate ``rule`` on ``x``.

    ``g`` is target information; only ``generalized-cmrs`` without a fixed
    partition reads it, every other rule ignores it.
    """
    if isinstance(rule, str):
        rule = RuleSpec(rule)
    kind = rule.kind
    if kind in _SIMPLE:
        out = _SIMPLE[kind](x)
    elif kind == "q-cmrs":
        out = q_cmrs(x, rule.qweights)
    elif kind == "generalized-cmrs":
        out = generalized_cmrs(x, rule.partition if rule.partition is not None else g)
    elif kind == "mixture":
        out = mixture(x, rule.weight, rule.first, rule.second, g)
    elif kind == "gated":
        out = gated(x, rule.trigger, rule.first, rule.second, g)
    else:  # pragma: no cover - RuleSpec validates kinds
        raise UnknownRule(kind)
    _check_full(x, out, rule.describe())
    return out
