"""Worked constructions: axiom independence, the CM conflict, the n=2 rule
that is not CMRS, and the backtracking digits example."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .axioms import (
    FAIL,
    FOUR_AXIOMS,
    PASS,
    AxiomReport,
    Witness,
    run_checks,
)
from .battery import Scenario, ScenarioSet, random_battery
from .prob_core import (
    RiskVector,
    cond_expectation,
    convex_order_gap,
    discretize_gaussian,
    expectation,
    make_space,
    normalized_space,
    partition_of,
    product_space,
    uniform_space,
    variance,
)
from .rules import RuleSpec, cmrs

# ---------------------------------------------------------------------------
# fixed scenarios


def demo_vector() -> RiskVector:
    """Uniform 4-outcome vector; X_1 is not determined by the total."""
    return RiskVector.from_matrix(uniform_space(4), [[0, 1, 0, 1], [0, 0, 1, 1], [0, 0, 0, 0]])


def q_witness():
    """Two outcomes where sigma(S) is trivial, so Q-CMRS returns E^Q[X]."""
    space = make_space([0.5, 0.5])
    x = RiskVector.from_matrix(space, [[1, 0], [0, 1], [0, 0]])
    return x, (0.25, 0.75)


def covariance_rf_witness() -> RiskVector:
    """A_1 reaches 2/7 at outcome 0 while sup X_1 = 0."""
    return RiskVector.from_matrix(uniform_space(3), [[0, -2, 0], [1, 0, 0], [0, 0, 0]])


def proportional_rf_witness() -> RiskVector:
    """Constant X_1 = 1 receives S/2, which reaches 1.5."""
    return RiskVector.from_matrix(uniform_space(2), [[1, 1], [0, 2], [0, 0]])


def oa_trigger() -> RiskVector:
    """Designated input on which the gated rule switches to all-in-one.

    Components have mean zero and S never exceeds sup X_1, so all-in-one
    keeps AF and RF here; merging agents 2 and 3 hands agent 1 E[X_1|S]
    instead of S.
    """
    return RiskVector.from_matrix(
        uniform_space(4), [[3, -1, -1, -1], [-1, 1, -1, 1], [0, 0, 1, -1]]
    )


def gated_witness_rule() -> RuleSpec:
    return RuleSpec("gated", trigger=oa_trigger(), first=RuleSpec("all-in-one"),
                    second=RuleSpec("cmrs"))


def conflict_vector(s_values=(0.0, 1.0), probs=None) -> RiskVector:
    """``(-S, 2S, 0)``: OA and ZP force it to be returned unchanged."""
    s = np.asarray(s_values, dtype=float)
    space = uniform_space(s.size) if probs is None else make_space(probs)
    return RiskVector.from_matrix(space, [-s, 2 * s, np.zeros_like(s)])


def backtracking_vector(digits: int = 10, weights=(1001, 1010, 1100)) -> RiskVector:
    """``X_i = w_i Y_i`` with ``Y_i`` iid uniform on ``{0..digits-1}``."""
    base = uniform_space(digits)
    space = product_space(base, base, base)
    grid = np.array(np.meshgrid(*(np.arange(digits),) * 3, indexing="ij")).reshape(3, -1)
    return RiskVector.from_matrix(space, np.asarray(weights, dtype=float)[:, None] * grid)


# ---------------------------------------------------------------------------
# independence of the four axioms


@dataclass(frozen=True)
class BatteryRow:
    label: str
    rule: str
    expected_failures: tuple
    reports: tuple

    @property
    def observed(self) -> dict:
        return {r.axiom: r.verdict for r in self.reports}

    @property
    def expected(self) -> dict:
        return {a: FAIL if a in self.expected_failures else PASS for a in FOUR_AXIOMS}

    @property
    def matches(self) -> bool:
        return self.observed == self.expected


def _with(battery: ScenarioSet, *extra: Scenario) -> ScenarioSet:
    return ScenarioSet(tuple(extra) + battery.scenarios, battery.seed)


def independence_battery(seed: int = 0, count: int = 60) -> list[BatteryRow]:
    """One row per witness rule, each checked against AF, RF, RA and OA.

    Rows (i)-(iv) fail exactly one axiom each; the covariance and
    mean-proportional rows fail RF only; plain CMRS passes all four.
    """
    standard = random_battery(seed, count, max_outcomes=12)
    nonneg = random_battery(seed + 1, count, max_outcomes=12, nonnegative=True)
    qx, q = q_witness()
    q_battery = random_battery(seed + 2, count, space=qx.space)
    demo = Scenario("demo", demo_vector())

    rows = [
        ("(i)", RuleSpec("q-cmrs", qweights=q), ("AF",),
         _with(q_battery, Scenario("q-witness", qx))),
        ("(ii)", RuleSpec("mean-adjusted"), ("RF",), _with(standard, demo)),
        ("(iii)", RuleSpec("identity"), ("RA",), _with(standard, demo)),
        ("(iv)", gated_witness_rule(), ("OA",),
         _with(standard, Scenario("trigger", oa_trigger()))),
        ("(ii)-cov", RuleSpec("covariance"), ("RF",),
         _with(standard, Scenario("cov-witness", covariance_rf_witness()))),
        ("(ii)-prop", RuleSpec("mean-proportional"), ("RF",),
         _with(nonneg, Scenario("prop-witness", proportional_rf_witness()))),
        ("cmrs", RuleSpec("cmrs"), (), _with(standard, demo)),
    ]
    out = []
    for label, rule, fails, scs in rows:
        reports = run_checks(rule, scs, FOUR_AXIOMS)
        out.append(BatteryRow(label, rule.describe(), fails, tuple(reports)))
    return out


# ---------------------------------------------------------------------------
# OA + ZP + CM cannot coexist


def conflict_demo(seed: int = 0, count: int = 40) -> dict:
    """CMRS on ``(-S, 2S, 0)`` is not comonotonic, while OA and ZP hold."""
    x = conflict_vector()
    scs = _with(random_battery(seed, count, max_outcomes=12), Scenario("conflict", x))
    cm = run_checks("cmrs", ScenarioSet((Scenario("conflict", x),)), ["CM"])[0]
    oa, zp = run_checks("cmrs", scs, ["OA", "ZP"])
    return {"allocation": cmrs(x), "CM": cm, "OA": oa, "ZP": zp}


# ---------------------------------------------------------------------------
# n = 2: a rule satisfying everything that is not CMRS


def gaussian_pair(points: int = 50) -> RiskVector:
    """Discretised independent ``Y_1 ~ N(0,1)``, ``Y_2 ~ N(0,2)``.

    Built from ``S ~ N(0,3)`` and an independent ``W ~ N(0,2/3)`` via
    ``Y_1 = S/3 + W`` and ``Y_2 = 2S/3 - W`` (the Gaussian decomposition of
    the pair), so ``E[Y_1 | S] = S/3`` holds exactly on the grid.
    """
    s_grid = discretize_gaussian(0.0, 3.0, points)
    w_grid = discretize_gaussian(0.0, 2.0 / 3.0, points)
    space = product_space(
        normalized_space([p for _, p in s_grid]), normalized_space([p for _, p in w_grid])
    )
    s = np.repeat([v for v, _ in s_grid], points)
    w = np.tile([v for v, _ in w_grid], points)
    return RiskVector.from_matrix(space, [s / 3 + w, 2 * s / 3 - w])


def gaussian_n2_regression(points: int = 50, slack: float = 2e-2) -> AxiomReport:
    """Perturbed CMRS ``A_1 = E[Y_1|S] + S/6`` at n=2 still improves both risks."""
    if points < 20:
        raise ValueError("points must be >= 20")
    y = gaussian_pair(points)
    s = y.total
    g = partition_of([s])
    c1, c2 = cond_expectation(y[0], g), cond_expectation(y[1], g)
    a1, a2 = c1 + s / 6, c2 - s / 6
    half = s / 2
    wit = []
    details = {
        "points": points,
        "outcomes": y.space.size,
        "mean_A1": expectation(a1),
        "mean_A2": expectation(a2),
        "var_A1": variance(a1),
        "max_dev_A1_half_S": float(np.max(np.abs(a1.values - half.values))),
        "max_dev_A2_half_S": float(np.max(np.abs(a2.values - half.values))),
        "cx_gap_1": convex_order_gap(a1, y[0]),
        "cx_gap_2": convex_order_gap(a2, y[1]),
        # root-mean-square distance from CMRS, in units of sd(S)
        "rms_dist_from_cmrs_over_sd_S": float(
            np.sqrt(expectation((a1 - c1) * (a1 - c1)) / variance(s))
        ),
    }
    for i, key in ((0, "cx_gap_1"), (1, "cx_gap_2")):
        if details[key] > slack:
            wit.append(Witness("gaussian-n2", i, details[key], note="convex order"))
    for i, key in ((0, "mean_A1"), (1, "mean_A2")):
        if abs(details[key]) > slack:
            wit.append(Witness("gaussian-n2", i, abs(details[key]), note="mean"))
    for i, key in ((0, "max_dev_A1_half_S"), (1, "max_dev_A2_half_S")):
        if details[key] > 1e-9:
            wit.append(Witness("gaussian-n2", i, details[key], note="A_i != S/2"))
    return AxiomReport(
        axiom="UI",
        verdict=FAIL if wit else PASS,
        witnesses=tuple(wit),
        scenarios_checked=1,
        rule="cmrs + S/6 perturbation (n=2)",
        note="OA is vacuous at n=2",
        details=details,
    )


# ---------------------------------------------------------------------------
# backtracking


def backtracking_demo(digits: int = 10) -> dict:
    x = backtracking_vector(digits)
    a = cmrs(x)
    bt = run_checks("cmrs", ScenarioSet((Scenario("digits", x),)), ["BT"])[0]
    return {"vector": x, "allocation": a, "max_deviation": x.max_deviation(a), "BT": bt}
