"""Checkers for the fairness and anonymity axioms and related properties.

Every checker takes a rule and a scenario set and returns an
:class:`AxiomReport`.  A pass means no violation was found on the scenarios
supplied; ``scenarios_checked`` records how many scenarios the verdict rests
on.  Rules are :class:`~anonrisk.rules.RuleSpec` values, canonical rule
names, or callables ``f(x, g)`` returning an allocation (``g`` is the
scenario's target partition or None).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .battery import Scenario, ScenarioSet, as_scenarios
from .errors import AnonRiskError, RuleApplicationError
from .prob_core import (
    TOL,
    Allocation,
    Partition,
    RiskVector,
    comonotonic_witness,
    convex_order_gap,
    is_measurable,
    measurability_violation,
    partition_of,
    refine,
)
from .rules import RuleSpec, apply

AXIOMS = ("AF", "RF", "RA", "OA", "CP", "ZP", "UI", "CM", "SM", "BT", "IA", "IB")
FOUR_AXIOMS = ("AF", "RF", "RA", "OA")

PASS, FAIL, SKIPPED = "pass", "fail", "skipped"


@dataclass(frozen=True)
class Witness:
    scenario: str
    agent: int
    magnitude: float
    outcome: Optional[int] = None
    other_agent: Optional[int] = None
    other_outcome: Optional[int] = None
    note: str = ""

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None and v != ""}


@dataclass(frozen=True)
class AxiomReport:
    axiom: str
    verdict: str
    witnesses: tuple = ()
    scenarios_checked: int = 0
    skipped: int = 0
    rule: str = ""
    note: str = ""
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.verdict == FAIL and not self.witnesses:
            raise AnonRiskError("a failing report needs a witness")
        if self.verdict != FAIL and self.witnesses:
            raise AnonRiskError("a passing report cannot carry witnesses")

    @property
    def passed(self) -> bool:
        return self.verdict != FAIL

    def to_dict(self) -> dict:
        return {
            "axiom": self.axiom,
            "rule": self.rule,
            "verdict": self.verdict,
            "scenarios_checked": self.scenarios_checked,
            "skipped": self.skipped,
            "note": self.note,
            "witnesses": [w.to_dict() for w in self.witnesses],
            "details": dict(self.details),
        }


def _resolve(rule) -> tuple[Callable, str]:
    if isinstance(rule, str):
        rule = RuleSpec(rule)
    if isinstance(rule, RuleSpec):
        return (lambda x, g, _r=rule: apply(_r, x, g)), rule.describe()
    if callable(rule):
        return rule, getattr(rule, "__name__", "custom")
    raise AnonRiskError(f"not a rule: {rule!r}")


class _Evaluator:
    """Applies a rule to scenarios, memoising the unperturbed allocations."""

    def __init__(self, rule):
        self.fn, self.name = _resolve(rule)
        self._cache: dict = {}

    def call(self, sc: Scenario, x: Optional[RiskVector] = None) -> Allocation:
        try:
            return self.fn(sc.x if x is None else x, sc.g)
        except RuleApplicationError:
            raise
        except AnonRiskError as exc:
            raise RuleApplicationError(sc.id, exc) from exc

    def base(self, sc: Scenario) -> Allocation:
        key = id(sc)
        if key not in self._cache:
            self._cache[key] = (sc, self.call(sc))
        return self._cache[key][1]


def _report(axiom, ev, witnesses, checked, skipped=0, note="") -> AxiomReport:
    return AxiomReport(
        axiom=axiom,
        verdict=FAIL if witnesses else PASS,
        witnesses=tuple(witnesses),
        scenarios_checked=checked,
        skipped=skipped,
        rule=ev.name,
        note=note,
    )


def _worst(diff: np.ndarray):
    """Index and value of the largest entry of a 1-d array."""
    w = int(np.argmax(diff))
    return w, float(diff[w])


# ---------------------------------------------------------------------------
# the four axioms


def _af(ev, scs, tol):
    wit = []
    for sc in scs:
        a = ev.base(sc)
        gap = np.abs(a.means() - sc.x.means())
        for i in np.flatnonzero(gap > tol):
            wit.append(Witness(sc.id, int(i), float(gap[i])))
    return _report("AF", ev, wit, len(scs))


def _rf(ev, scs, tol):
    wit = []
    for sc in scs:
        a = ev.base(sc)
        sup = sc.x.matrix.max(axis=1)
        for i in range(sc.x.n):
            w, excess = _worst(a.matrix[i] - sup[i])
            if excess > tol:
                wit.append(Witness(sc.id, i, excess, outcome=w))
    return _report("RF", ev, wit, len(scs))


def _measurability_witnesses(sc, alloc, g: Partition):
    wit = []
    for i, ai in enumerate(alloc):
        v = measurability_violation(ai, g)
        if v is not None:
            wit.append(Witness(sc.id, i, v[0], outcome=v[1]))
    return wit


def _ra(ev, scs, tol):
    wit = []
    for sc in scs:
        wit += _measurability_witnesses(sc, ev.base(sc), partition_of([sc.x.total]))
    return _report("RA", ev, wit, len(scs))


def _collapse(x: RiskVector, i: int) -> RiskVector:
    """``X_i`` kept in place, every other agent merged onto one neighbour."""
    t = (i + 1) % x.n
    mat = np.zeros_like(x.matrix)
    mat[i] = x.matrix[i]
    mat[t] = x.matrix.sum(axis=0) - x.matrix[i]
    return RiskVector.from_matrix(x.space, mat)


def _oa(ev, scs, tol):
    """Merging ``j`` into ``i`` must leave every other agent untouched.

    Also checks the equivalent form that agent ``i``'s allocation depends
    only on ``(X_i, S)``, by comparing with the fully collapsed vector.
    """
    wit, checked, skipped = [], 0, 0
    for sc in scs:
        x = sc.x
        if x.n < 3:
            skipped += 1
            continue
        checked += 1
        a = ev.base(sc)
        for i, j in itertools.permutations(range(x.n), 2):
            b = ev.call(sc, x.merge(i, j))
            for k in range(x.n):
                if k in (i, j):
                    continue
                w, d = _worst(np.abs(b.matrix[k] - a.matrix[k]))
                if d > tol:
                    wit.append(Witness(sc.id, k, d, outcome=w, note=f"merge {j}->{i}"))
        for i in range(x.n):
            b = ev.call(sc, _collapse(x, i))
            w, d = _worst(np.abs(b.matrix[i] - a.matrix[i]))
            if d > tol:
                wit.append(Witness(sc.id, i, d, outcome=w, note="collapse to (X_i, S - X_i)"))
    note = ""
    if skipped:
        note = f"{skipped} scenario(s) with n=2 skipped: no merge is possible"
    report = _report("OA", ev, wit, checked, skipped, note)
    if checked == 0 and not wit:
        report = AxiomReport("OA", SKIPPED, (), 0, skipped, ev.name, note)
    return report


# ---------------------------------------------------------------------------
# further properties


def _constant_components(x: RiskVector, zero: bool, tol: float):
    out = []
    for i, row in enumerate(x.matrix):
        if zero:
            if np.max(np.abs(row)) <= tol:
                out.append((i, 0.0))
        elif row.max() - row.min() <= tol:
            out.append((i, float(row[0])))
    return out


def _preserving(axiom, ev, scs, tol, zero):
    wit, checked = [], 0
    for sc in scs:
        comps = _constant_components(sc.x, zero, tol)
        if not comps:
            continue
        checked += 1
        a = ev.base(sc)
        for i, c in comps:
            w, d = _worst(np.abs(a.matrix[i] - c))
            if d > tol:
                wit.append(Witness(sc.id, i, d, outcome=w))
    skipped = len(scs) - checked
    note = f"{skipped} scenario(s) without a {'zero' if zero else 'constant'} component" if skipped else ""
    return _report(axiom, ev, wit, checked, skipped, note)


def _ui(ev, scs, tol):
    wit = []
    for sc in scs:
        a = ev.base(sc)
        for i, (ai, xi) in enumerate(zip(a, sc.x)):
            gap = convex_order_gap(ai, xi)
            if gap > tol:
                wit.append(Witness(sc.id, i, gap))
    return _report("UI", ev, wit, len(scs))


def _cm(ev, scs, tol):
    wit = []
    for sc in scs:
        hit = comonotonic_witness(list(ev.base(sc)), tol)
        if hit is not None:
            i, j, w, w2, mag = hit
            wit.append(Witness(sc.id, i, mag, outcome=w, other_agent=j, other_outcome=w2))
    return _report("CM", ev, wit, len(scs))


def _permutations(n: int, salt: int):
    if n <= 4:
        return [p for p in itertools.permutations(range(n)) if list(p) != list(range(n))]
    rng = np.random.default_rng(salt)
    return [tuple(int(v) for v in rng.permutation(n)) for _ in range(20)]


def _sm(ev, scs, tol):
    wit = []
    for idx, sc in enumerate(scs):
        a = ev.base(sc)
        for perm in _permutations(sc.x.n, idx):
            b = ev.call(sc, sc.x.permute(perm))
            diff = np.abs(b.matrix - a.matrix[list(perm)])
            k, w = np.unravel_index(int(np.argmax(diff)), diff.shape)
            if diff[k, w] > tol:
                wit.append(Witness(sc.id, int(k), float(diff[k, w]), outcome=int(w),
                                   note=f"permutation {list(perm)}"))
    return _report("SM", ev, wit, len(scs))


def _identity_on(axiom, ev, scs, tol, info: Callable[[Scenario], Partition]):
    wit, checked = [], 0
    for sc in scs:
        g = info(sc)
        if not all(is_measurable(xi, g) for xi in sc.x):
            continue
        checked += 1
        a = ev.base(sc)
        for i in range(sc.x.n):
            w, d = _worst(np.abs(a.matrix[i] - sc.x.matrix[i]))
            if d > tol:
                wit.append(Witness(sc.id, i, d, outcome=w))
    skipped = len(scs) - checked
    note = f"{skipped} scenario(s) not determined by the available information" if skipped else ""
    return _report(axiom, ev, wit, checked, skipped, note)


def target_information(sc: Scenario) -> Partition:
    """``sigma(S, G)`` for the scenario (plain ``sigma(S)`` without ``G``)."""
    gs = partition_of([sc.x.total])
    return gs if sc.g is None else refine(sc.g, gs)


def _bt(ev, scs, tol):
    return _identity_on("BT", ev, scs, tol, lambda sc: partition_of([sc.x.total]))


def _ia(ev, scs, tol):
    wit = []
    for sc in scs:
        wit += _measurability_witnesses(sc, ev.base(sc), target_information(sc))
    return _report("IA", ev, wit, len(scs))


def _ib(ev, scs, tol):
    return _identity_on("IB", ev, scs, tol, target_information)


_CHECKERS = {
    "AF": _af,
    "RF": _rf,
    "RA": _ra,
    "OA": _oa,
    "CP": lambda ev, scs, tol: _preserving("CP", ev, scs, tol, zero=False),
    "ZP": lambda ev, scs, tol: _preserving("ZP", ev, scs, tol, zero=True),
    "UI": _ui,
    "CM": _cm,
    "SM": _sm,
    "BT": _bt,
    "IA": _ia,
    "IB": _ib,
}


def normalize_axioms(axioms) -> tuple:
    if axioms is None or axioms == "all" or axioms == ["all"]:
        return AXIOMS
    if isinstance(axioms, str):
        axioms = [axioms]
    out = []
    for a in axioms:
        key = a.strip().upper()
        if key == "ALL":
            return AXIOMS
        if key not in _CHECKERS:
            raise AnonRiskError(f"unknown axiom {a!r}; expected one of {', '.join(AXIOMS)}")
        out.append(key)
    return tuple(out)


def run_checks(rule, scenarios, axioms="all", tol: float = TOL) -> list[AxiomReport]:
    """Run several checkers sharing one set of base allocations."""
    scs = as_scenarios(scenarios)
    ev = _Evaluator(rule)
    return [_CHECKERS[a](ev, scs, tol) for a in normalize_axioms(axioms)]


def _single(axiom):
    def check(rule, scenarios, tol: float = TOL) -> AxiomReport:
        return _CHECKERS[axiom](_Evaluator(rule), as_scenarios(scenarios), tol)

    check.__name__ = f"check_{axiom}"
    check.__doc__ = f"Check property {axiom} of ``rule`` on every scenario."
    return check


check_AF = _single("AF")
check_RF = _single("RF")
check_RA = _single("RA")
check_OA = _single("OA")
check_CP = _single("CP")
check_ZP = _single("ZP")
check_UI = _single("UI")
check_CM = _single("CM")
check_SM = _single("SM")
check_BT = _single("BT")
check_IA = _single("IA")
check_IB = _single("IB")


def verdicts(reports) -> dict:
    return {r.axiom: r.verdict for r in reports}
