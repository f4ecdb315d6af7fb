import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracle
from strategies import partitions, randvars, risk_vectors, spaces, values
from anonrisk.errors import (
    BadVariance,
    InvalidPartition,
    InvalidRiskVector,
    NonPositiveWeight,
    SpaceMismatch,
    WeightsDoNotSumToOne,
)
from anonrisk.prob_core import (
    Partition,
    RandVar,
    RiskVector,
    comonotonic_witness,
    cond_expectation,
    convex_order_gap,
    convex_order_leq,
    discretize_gaussian,
    essential_inf,
    essential_sup,
    expectation,
    is_comonotonic,
    is_measurable,
    make_space,
    measurability_violation,
    normalized_space,
    partition_of,
    product_space,
    refine,
    stop_loss,
    uniform_space,
)

U4 = uniform_space(4)


def blocks(p):
    return [list(map(int, b)) for b in p.blocks]


# --- spaces ----------------------------------------------------------------


def test_make_space_valid():
    assert make_space([0.25] * 4).size == 4


def test_make_space_rejects_bad_sum():
    with pytest.raises(WeightsDoNotSumToOne):
        make_space([0.5, 0.5, 0.1])


def test_make_space_rejects_zero_weight():
    with pytest.raises(NonPositiveWeight):
        make_space([0.5, 0.0, 0.5])


def test_make_space_rejects_empty():
    with pytest.raises(Exception):
        make_space([])


def test_product_space_is_row_major():
    p = product_space(make_space([0.25, 0.75]), make_space([0.5, 0.5]))
    np.testing.assert_allclose(p.probs, [0.125, 0.125, 0.375, 0.375])


def test_normalized_space_sums_to_one():
    s = normalized_space([1, 2, 3, 7])
    assert abs(s.probs.sum() - 1.0) <= 1e-15


# --- expectation and extremes ----------------------------------------------


def test_expectation_examples():
    assert expectation(RandVar(U4, [0, 1, 0, 1])) == pytest.approx(0.5)
    assert expectation(U4.constant(3.7)) == pytest.approx(3.7)
    assert expectation(RandVar(make_space([0.25, 0.75]), [1, 0])) == pytest.approx(0.25)


def test_essential_bounds():
    x = RandVar(U4, [0, 1, 0, 1])
    assert (essential_sup(x), essential_inf(x)) == (1, 0)
    c = U4.constant(3)
    assert (essential_sup(c), essential_inf(c)) == (3, 3)
    y = RandVar(uniform_space(3), [-2, 5, 1])
    assert (essential_sup(y), essential_inf(y)) == (5, -2)


def test_randvar_length_checked():
    with pytest.raises(Exception):
        RandVar(U4, [1, 2, 3])


def test_arithmetic_on_different_spaces_rejected():
    with pytest.raises(SpaceMismatch):
        RandVar(U4, [0, 0, 0, 0]) + RandVar(uniform_space(3), [0, 0, 0])


# --- partitions ------------------------------------------------------------


def test_partition_of_examples():
    assert blocks(partition_of([RandVar(U4, [0, 1, 1, 2])])) == [[0], [1, 2], [3]]
    assert blocks(partition_of([U4.constant(5)])) == [[0, 1, 2, 3]]
    two = partition_of([RandVar(U4, [0, 0, 1, 1]), RandVar(U4, [0, 1, 0, 1])])
    assert blocks(two) == [[0], [1], [2], [3]]


def test_partition_of_groups_float_noise():
    s = RandVar(uniform_space(3), [0.1 + 0.2, 0.3, 1.0])
    assert blocks(partition_of([s])) == [[0, 1], [2]]


def test_partition_rejects_overlap_and_gaps():
    with pytest.raises(InvalidPartition):
        Partition(U4, ((0, 1), (1, 2, 3)))
    with pytest.raises(InvalidPartition):
        Partition(U4, ((0, 1), (2,)))


def test_refine_examples():
    p = Partition(U4, ((0, 1), (2, 3)))
    q = Partition(U4, ((0, 2), (1, 3)))
    assert blocks(refine(p, q)) == [[0], [1], [2], [3]]
    assert refine(p, Partition.trivial(U4)) == p
    assert refine(p, p) == p


def test_refine_space_mismatch():
    with pytest.raises(SpaceMismatch):
        refine(Partition.trivial(U4), Partition.trivial(uniform_space(3)))


@settings(max_examples=150, deadline=None)
@given(st.data())
def test_refine_lattice_laws(data):
    space = data.draw(spaces(1, 9))
    p, q, r = (data.draw(partitions(space)) for _ in range(3))
    assert refine(p, q) == refine(q, p)
    assert refine(refine(p, q), r) == refine(p, refine(q, r))
    assert refine(p, p) == p
    j = refine(p, q)
    assert j.is_finer_than(p) and j.is_finer_than(q)


@settings(max_examples=150, deadline=None)
@given(st.data())
def test_partition_of_matches_oracle(data):
    space = data.draw(spaces(1, 9))
    cols = [data.draw(values(space.size)) for _ in range(data.draw(st.integers(1, 3)))]
    got = blocks(partition_of([RandVar(space, c) for c in cols]))
    assert got == oracle.blocks_of([list(c) for c in cols], space.size)


# --- conditional expectation ------------------------------------------------


def test_cond_expectation_examples():
    x = RandVar(U4, [0, 1, 0, 1])
    g = partition_of([RandVar(U4, [0, 1, 1, 2])])
    np.testing.assert_allclose(cond_expectation(x, g).values, [0, 0.5, 0.5, 1])
    m = RandVar(U4, [0, 0.5, 0.5, 1])
    np.testing.assert_array_equal(cond_expectation(m, g).values, m.values)
    triv = cond_expectation(x, Partition.trivial(U4))
    np.testing.assert_allclose(triv.values, 0.5)


def test_cond_expectation_space_mismatch():
    with pytest.raises(SpaceMismatch):
        cond_expectation(RandVar(U4, [0, 1, 0, 1]), Partition.trivial(uniform_space(3)))


def test_is_measurable_examples():
    g = Partition(U4, ((0,), (1, 2), (3,)))
    assert is_measurable(RandVar(U4, [0, 0.5, 0.5, 1]), g)
    assert not is_measurable(RandVar(U4, [0, 1, 0, 1]), g)
    assert is_measurable(RandVar(U4, [3, -1, 7, 2]), Partition.discrete(U4))
    spread, w = measurability_violation(RandVar(U4, [0, 1, 0, 1]), g)
    assert spread == pytest.approx(1.0) and w in (1, 2)


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_cond_expectation_matches_oracle(data):
    space = data.draw(spaces())
    x = data.draw(randvars(space))
    g = data.draw(partitions(space))
    got = cond_expectation(x, g).values
    want = oracle.cond_exp(list(space.probs), list(x.values), [list(b) for b in g.blocks])
    np.testing.assert_allclose(got, want, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_cond_expectation_operator_properties(data):
    space = data.draw(spaces())
    x = data.draw(randvars(space))
    y = data.draw(randvars(space))
    g = data.draw(partitions(space))
    c = data.draw(st.floats(-5, 5))
    ce = lambda v: cond_expectation(v, g).values
    # (a) constants
    np.testing.assert_allclose(ce(space.constant(c)), c, atol=1e-9)
    # (b) additivity
    np.testing.assert_allclose(ce(x + y), ce(x) + ce(y), atol=1e-9)
    # (c) monotonicity
    lo, hi = RandVar(space, np.minimum(x.values, y.values)), RandVar(space, np.maximum(x.values, y.values))
    assert np.all(ce(lo) <= ce(hi) + 1e-9)
    # (d) measurable inputs are fixed points
    m = cond_expectation(x, g)
    np.testing.assert_allclose(ce(m), m.values, atol=1e-9)
    # (e) mean preserved
    assert abs(expectation(m) - expectation(x)) <= 1e-9
    # output is measurable, and cond <=cx X
    assert is_measurable(m, g)
    assert convex_order_leq(m, x)


@settings(max_examples=150, deadline=None)
@given(st.data())
def test_tower_property(data):
    space = data.draw(spaces())
    x = data.draw(randvars(space))
    coarse = data.draw(partitions(space))
    fine = refine(coarse, data.draw(partitions(space)))
    twice = cond_expectation(cond_expectation(x, fine), coarse)
    np.testing.assert_allclose(twice.values, cond_expectation(x, coarse).values, atol=1e-9)


# --- convex order ------------------------------------------------------------


def test_stop_loss_examples():
    x = RandVar(uniform_space(2), [0, 1])
    assert stop_loss(x, 0.5) == pytest.approx(0.25)
    assert stop_loss(x, -2) == pytest.approx(expectation(x) + 2)
    assert stop_loss(x, 1) == 0.0


def test_convex_order_examples():
    s2 = uniform_space(2)
    assert convex_order_leq(s2.constant(0.5), RandVar(s2, [0, 1]))
    assert convex_order_leq(RandVar(s2, [0, 1]), RandVar(s2, [-1, 2]))
    assert not convex_order_leq(RandVar(s2, [0, 1]), RandVar(s2, [0, 0.5]))
    assert not convex_order_leq(RandVar(s2, [-1, 2]), RandVar(s2, [0, 1]))


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_convex_order_matches_oracle(data):
    space = data.draw(spaces())
    x, y = data.draw(randvars(space)), data.draw(randvars(space))
    if data.draw(st.booleans()):
        y = RandVar(space, y.values - expectation(y) + expectation(x))
    p = list(space.probs)
    assert convex_order_leq(x, y) == oracle.convex_leq(p, list(x.values), p, list(y.values))
    assert convex_order_leq(x, x)


@settings(max_examples=150, deadline=None)
@given(st.data())
def test_convex_order_transitive(data):
    space = data.draw(spaces())
    z = data.draw(randvars(space))
    g1 = data.draw(partitions(space))
    g2 = refine(g1, data.draw(partitions(space)))
    # coarser conditioning is smaller in convex order: E[z|g1] <=cx E[z|g2] <=cx z
    x, y = cond_expectation(z, g1), cond_expectation(z, g2)
    assert convex_order_leq(x, y) and convex_order_leq(y, z)
    assert convex_order_leq(x, z)


def test_convex_order_gap_reports_stop_loss_excess():
    s2 = uniform_space(2)
    gap = convex_order_gap(RandVar(s2, [-1, 2]), RandVar(s2, [0, 1]))
    # at d = 0: E[(X)+] = 1 vs E[(Y)+] = 0.5
    assert gap == pytest.approx(0.5)


# --- comonotonicity ----------------------------------------------------------


def test_comonotonic_examples():
    s = RandVar(uniform_space(3), [0, 1, 2])
    assert is_comonotonic([s, s * 2])
    assert not is_comonotonic([-s, s * 2])
    c = uniform_space(3)
    assert is_comonotonic([c.constant(1), c.constant(-4), c.constant(0)])


def test_comonotonic_witness_shape():
    s = RandVar(uniform_space(3), [0, 1, 2])
    i, j, w, v, mag = comonotonic_witness([-s, s * 2, s * 0])
    assert (i, j) == (0, 1)
    a, b = (-s).values, (s * 2).values
    assert -(a[w] - a[v]) * (b[w] - b[v]) == pytest.approx(mag)
    assert mag == pytest.approx(8.0)


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_comonotonic_matches_sort_oracle(data):
    m = data.draw(st.integers(2, 8))
    space = uniform_space(m)
    first = data.draw(st.permutations(list(range(m))))
    cols = [np.asarray(first, dtype=float)]
    for _ in range(data.draw(st.integers(1, 3))):
        if data.draw(st.booleans()):
            # increasing transform of the first column
            k = data.draw(st.lists(st.integers(0, 3), min_size=m, max_size=m))
            inc = np.cumsum(k)
            cols.append(inc[np.asarray(first)].astype(float))
        else:
            cols.append(np.asarray(data.draw(st.permutations(list(range(m)))), dtype=float))
    got = is_comonotonic([RandVar(space, c) for c in cols])
    assert got == oracle.comonotonic_sorted([list(c) for c in cols])
    assert got == oracle.comonotonic_pairs([list(c) for c in cols])


# --- discretisation -----------------------------------------------------------


def test_discretize_two_points():
    grid = discretize_gaussian(0.0, 1.0, 2)
    q = oracle.normal_quantile(0.75)
    assert [v for v, _ in grid] == pytest.approx([-q, q], abs=1e-9)
    assert [p for _, p in grid] == [0.5, 0.5]


@pytest.mark.parametrize("mean,var,points", [(0, 1, 7), (2.5, 4, 50), (-1, 0.3, 11)])
def test_discretize_matches_quantile_midpoints(mean, var, points):
    grid = discretize_gaussian(mean, var, points)
    sd = var ** 0.5
    want = [oracle.normal_quantile((k + 0.5) / points, mean, sd) for k in range(points)]
    assert [v for v, _ in grid] == pytest.approx(want, abs=1e-8)
    assert abs(sum(v * p for v, p in grid) - mean) <= 1e-9


def test_discretize_rejects_bad_variance():
    with pytest.raises(BadVariance):
        discretize_gaussian(0, 0, 10)
    with pytest.raises(BadVariance):
        discretize_gaussian(0, -1, 10)


# --- risk vectors --------------------------------------------------------------


def test_risk_vector_needs_two_agents_on_one_space():
    with pytest.raises(InvalidRiskVector):
        RiskVector((RandVar(U4, [0, 0, 0, 0]),))
    with pytest.raises(SpaceMismatch):
        RiskVector((RandVar(U4, [0] * 4), RandVar(uniform_space(3), [0] * 3)))


def test_merge_and_permute():
    x = RiskVector.from_matrix(U4, [[0, 1, 0, 1], [0, 0, 1, 1], [1, 1, 1, 1]])
    merged = x.merge(0, 2)
    np.testing.assert_array_equal(merged.matrix, [[1, 2, 1, 2], [0, 0, 1, 1], [0, 0, 0, 0]])
    np.testing.assert_array_equal(merged.total.values, x.total.values)
    np.testing.assert_array_equal(x.permute([2, 0, 1]).matrix[0], [1, 1, 1, 1])


@settings(max_examples=60, deadline=None)
@given(risk_vectors())
def test_total_and_means(x):
    np.testing.assert_allclose(x.total.values, x.matrix.sum(axis=0))
    assert x.means().sum() == pytest.approx(expectation(x.total), abs=1e-9)
