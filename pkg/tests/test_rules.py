import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracle
from strategies import risk_vectors
from anonrisk.counterexamples import backtracking_vector, conflict_vector, oa_trigger
from anonrisk.errors import BadMeasure, NegativeRiskForProportional, RuleError, SpaceMismatch, UnknownRule
from anonrisk.prob_core import (
    Partition,
    RiskVector,
    cond_expectation,
    convex_order_leq,
    is_comonotonic,
    make_space,
    partition_of,
    uniform_space,
)
from anonrisk.rules import (
    RULE_NAMES,
    RuleSpec,
    apply,
    canonical_name,
    cmrs,
    comonotonic_improvement,
    covariance_rule,
    generalized_cmrs,
    mean_proportional,
    q_cmrs,
)

U4 = uniform_space(4)
DEMO = RiskVector.from_matrix(U4, [[0, 1, 0, 1], [0, 0, 1, 1], [0, 0, 0, 0]])


def cmrs_oracle(x):
    blocks = oracle.blocks_of([list(x.total.values)], x.space.size)
    p = list(x.space.probs)
    return np.array([oracle.cond_exp(p, list(row), blocks) for row in x.matrix])


def test_cmrs_demo():
    np.testing.assert_allclose(cmrs(DEMO).matrix, [[0, .5, .5, 1], [0, .5, .5, 1], [0, 0, 0, 0]])


def test_mean_adjusted_demo():
    a = apply("mean-adjusted", DEMO).matrix
    np.testing.assert_allclose(a, [[-.5, .5, .5, 1.5], [.5] * 4, [0] * 4])


def test_uniform_demo():
    a = apply("uniform", DEMO).matrix
    np.testing.assert_allclose(a, np.tile([0, 1 / 3, 1 / 3, 2 / 3], (3, 1)))


def test_identity_echoes():
    np.testing.assert_array_equal(apply("identity", DEMO).matrix, DEMO.matrix)


def test_all_in_one():
    a = apply("all-in-one", DEMO).matrix
    np.testing.assert_array_equal(a[0], DEMO.total.values)
    assert not a[1:].any()


def test_cmrs_backtracking_digits_exact():
    x = backtracking_vector(digits=10)
    assert cmrs(x).max_deviation(x) == 0.0
    small = backtracking_vector(digits=2)
    assert cmrs(small).max_deviation(small) == 0.0


def test_cmrs_single_risky_agent_and_constants():
    x = RiskVector.from_matrix(U4, [[3, 1, 4, 1], [0] * 4, [0] * 4])
    np.testing.assert_allclose(cmrs(x).matrix, x.matrix)
    y = RiskVector.from_matrix(U4, [[0, 1, 0, 1], [2, 2, 2, 2], [0, 0, 1, 1]])
    np.testing.assert_allclose(cmrs(y).matrix[1], 2.0)


@settings(max_examples=150, deadline=None)
@given(risk_vectors())
def test_cmrs_matches_oracle(x):
    np.testing.assert_allclose(cmrs(x).matrix, cmrs_oracle(x), atol=1e-12)


# --- Q-CMRS -----------------------------------------------------------------


def test_q_cmrs_two_outcome_example():
    x = RiskVector.from_matrix(make_space([.5, .5]), [[1, 0], [0, 1]])
    a = q_cmrs(x, (.25, .75)).matrix
    np.testing.assert_allclose(a, [[.25, .25], [.75, .75]])


@settings(max_examples=60, deadline=None)
@given(risk_vectors())
def test_q_cmrs_with_p_is_cmrs(x):
    np.testing.assert_allclose(q_cmrs(x, x.space.probs).matrix, cmrs(x).matrix, atol=1e-12)


def test_q_cmrs_injective_sum_is_identity():
    x = RiskVector.from_matrix(make_space([.2, .3, .5]), [[0, 1, 5], [1, 3, 0]])
    np.testing.assert_allclose(q_cmrs(x, (.6, .3, .1)).matrix, x.matrix)


@pytest.mark.parametrize("q", [(.5, .6), (0.0, 1.0)])
def test_q_cmrs_spec_rejects_bad_measure(q):
    with pytest.raises(BadMeasure):
        RuleSpec("q-cmrs", qweights=q)


def test_q_cmrs_rejects_wrong_length():
    x = RiskVector.from_matrix(make_space([.5, .5]), [[1, 0], [0, 1]])
    with pytest.raises(BadMeasure):
        q_cmrs(x, (.2, .3, .5))


# --- covariance and proportional ----------------------------------------------


def test_covariance_constant_sum_gives_means():
    x = RiskVector.from_matrix(U4, [[1, 0, 2, 1], [1, 2, 0, 1], [0, 0, 0, 0]])
    np.testing.assert_allclose(covariance_rule(x).matrix, np.repeat(x.means()[:, None], 4, axis=1))


def test_covariance_independent_equal_variance():
    # X1, X2 independent fair coins on a product space
    x = RiskVector.from_matrix(U4, [[0, 0, 1, 1], [0, 1, 0, 1], [0, 0, 0, 0]])
    s = x.total.values
    a = covariance_rule(x).matrix
    for i in (0, 1):
        np.testing.assert_allclose(a[i], (s - 1) / 2 + 0.5)


def test_covariance_single_risky():
    x = RiskVector.from_matrix(U4, [[0, 1, 3, 2], [0] * 4, [0] * 4])
    np.testing.assert_allclose(covariance_rule(x).matrix, x.matrix, atol=1e-12)


def test_mean_proportional_examples():
    x = RiskVector.from_matrix(make_space([.5, .5]), [[0, 2], [1, 1]])
    np.testing.assert_allclose(mean_proportional(x).matrix, [[.5, 1.5], [.5, 1.5]])
    z = RiskVector.from_matrix(U4, np.zeros((3, 4)))
    assert not mean_proportional(z).matrix.any()
    y = RiskVector.from_matrix(U4, [[0, 1, 3, 2], [0] * 4, [0] * 4])
    np.testing.assert_allclose(mean_proportional(y).matrix, y.matrix)


def test_mean_proportional_rejects_negative():
    x = RiskVector.from_matrix(make_space([.5, .5]), [[-1, 2], [1, 1]])
    with pytest.raises(NegativeRiskForProportional):
        apply("mean-proportional", x)


# --- generalized CMRS ----------------------------------------------------------


@settings(max_examples=80, deadline=None)
@given(risk_vectors())
def test_generalized_cmrs_extremes(x):
    np.testing.assert_allclose(
        generalized_cmrs(x, Partition.trivial(x.space)).matrix, cmrs(x).matrix, atol=1e-12
    )
    np.testing.assert_allclose(
        generalized_cmrs(x, Partition.discrete(x.space)).matrix, x.matrix, atol=1e-12
    )


def test_generalized_cmrs_space_mismatch():
    with pytest.raises(SpaceMismatch):
        generalized_cmrs(DEMO, Partition.trivial(uniform_space(3)))


# --- full allocation ----------------------------------------------------------


def _catalog(x):
    rules = [RuleSpec(k) for k in ("identity", "all-in-one", "mean-adjusted", "uniform", "cmrs",
                                   "covariance", "comono-improve", "generalized-cmrs")]
    rules.append(RuleSpec("q-cmrs", qweights=tuple(np.linspace(1, 2, x.space.size) / np.linspace(1, 2, x.space.size).sum())))
    rules.append(RuleSpec("mixture", weight=0.3, first=RuleSpec("identity"), second=RuleSpec("cmrs")))
    rules.append(RuleSpec("gated", trigger=x, first=RuleSpec("all-in-one"), second=RuleSpec("cmrs")))
    if np.all(x.matrix >= 0):
        rules.append(RuleSpec("mean-proportional"))
    return rules


@settings(max_examples=60, deadline=None)
@given(risk_vectors(max_size=8))
def test_full_allocation_every_rule(x):
    s = x.total.values
    for rule in _catalog(x):
        a = apply(rule, x)
        assert np.max(np.abs(a.matrix.sum(axis=0) - s)) <= 1e-9, rule.describe()


@settings(max_examples=60, deadline=None)
@given(risk_vectors(lo=0))
def test_full_allocation_proportional(x):
    a = mean_proportional(x)
    np.testing.assert_allclose(a.matrix.sum(axis=0), x.total.values, atol=1e-9)


# --- CMRS properties ------------------------------------------------------------


@settings(max_examples=100, deadline=None)
@given(risk_vectors())
def test_cmrs_unanimous_improvement(x):
    a = cmrs(x)
    for ai, xi in zip(a, x):
        assert convex_order_leq(ai, xi)


@settings(max_examples=100, deadline=None)
@given(risk_vectors())
def test_cmrs_backtracking_on_measurable(x):
    g = partition_of([x.total])
    y = RiskVector(tuple(cond_expectation(xi, g) for xi in x))
    np.testing.assert_allclose(cmrs(y).matrix, y.matrix, atol=1e-12)


def test_cmrs_symmetric_all_perms_n3():
    x = DEMO
    a = cmrs(x).matrix
    for perm in itertools.permutations(range(3)):
        np.testing.assert_allclose(cmrs(x.permute(perm)).matrix, a[list(perm)])


@settings(max_examples=60, deadline=None)
@given(risk_vectors(max_agents=6), st.randoms(use_true_random=False))
def test_cmrs_symmetric_random_perms(x, rnd):
    perm = list(range(x.n))
    rnd.shuffle(perm)
    np.testing.assert_allclose(cmrs(x.permute(perm)).matrix, cmrs(x).matrix[perm], atol=1e-12)


def test_cmrs_conflict_not_comonotonic():
    for s in ([0, 1], [0, 1, 3], [2, -1, 5, 5]):
        a = cmrs(conflict_vector(s))
        assert not is_comonotonic(list(a))


# --- mixtures ---------------------------------------------------------------------


def test_mixture_endpoints_and_midpoint():
    mid = RuleSpec("mixture", weight=0.5, first=RuleSpec("identity"), second=RuleSpec("cmrs"))
    np.testing.assert_allclose(apply(mid, DEMO).matrix, 0.5 * DEMO.matrix + 0.5 * cmrs(DEMO).matrix)
    one = RuleSpec("mixture", weight=1.0, first=RuleSpec("identity"), second=RuleSpec("cmrs"))
    np.testing.assert_allclose(apply(one, DEMO).matrix, DEMO.matrix)


def test_mixture_weight_validated():
    with pytest.raises(RuleError):
        RuleSpec("mixture", weight=1.5, first=RuleSpec("identity"), second=RuleSpec("cmrs"))


# --- comonotonic improvement -------------------------------------------------------


def _improvement_postconditions(x, a):
    assert is_comonotonic(list(a), tol=1e-9)
    np.testing.assert_allclose(a.matrix.sum(axis=0), x.total.values, atol=1e-9)
    for ai, xi in zip(a, x):
        assert convex_order_leq(ai, xi, tol=1e-9)


def test_comonotonic_improvement_conflict_example():
    x = conflict_vector([0, 1])
    a = comonotonic_improvement(x)
    _improvement_postconditions(x, a)


def test_comonotonic_improvement_fixes_comonotonic_input():
    s = np.array([0, 1, 2, 4.0])
    x = RiskVector.from_matrix(U4, [s, 2 * s, np.zeros(4)])
    np.testing.assert_allclose(comonotonic_improvement(x).matrix, x.matrix, atol=1e-12)


@settings(max_examples=120, deadline=None)
@given(risk_vectors(max_size=12))
def test_comonotonic_improvement_postconditions(x):
    _improvement_postconditions(x, comonotonic_improvement(x))


# --- gated ---------------------------------------------------------------------------


def test_gated_branches():
    t = oa_trigger()
    rule = RuleSpec("gated", trigger=t, first=RuleSpec("all-in-one"), second=RuleSpec("cmrs"))
    np.testing.assert_allclose(apply(rule, t).matrix[0], t.total.values)
    merged = t.merge(1, 2)
    np.testing.assert_allclose(apply(rule, merged).matrix, cmrs(merged).matrix)
    # merging agents 2 and 3 moves agent 1 from S to E[X_1|S]
    assert np.max(np.abs(apply(rule, merged).matrix[0] - apply(rule, t).matrix[0])) > 0.1


def test_gated_other_space_takes_second_branch():
    rule = RuleSpec("gated", trigger=oa_trigger(), first=RuleSpec("all-in-one"), second=RuleSpec("cmrs"))
    np.testing.assert_allclose(apply(rule, DEMO.permute([0, 1, 2])).matrix, cmrs(DEMO).matrix)


# --- names ------------------------------------------------------------------------------


def test_canonical_names():
    assert RULE_NAMES == ("identity", "all-in-one", "mean-adjusted", "uniform", "cmrs",
                          "mean-proportional", "covariance", "q-cmrs", "generalized-cmrs",
                          "mixture", "gated", "comono-improve")
    assert canonical_name("all_in_one") == "all-in-one"
    with pytest.raises(UnknownRule):
        canonical_name("nope")
