import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slexp import (
    Driver,
    PreconditionError,
    RandomVariable,
    SolverError,
    build_tree,
    comparison_check,
    conditional_expectation,
    constant_driver,
    discount_driver,
    driver_from_expectation,
    driver_property_check,
    roundtrip_check,
    solve_bsde,
    trinomial_kernels,
    trinomial_phi,
    zero_driver,
)
from slexp.ambiguity import KernelSet
from slexp.sampling import random_kernel_pair, random_kernels, random_phi, random_tree, random_variable


def test_zero_driver_is_conditional_expectation(tri, QV, phi):
    tree, k = tri
    sol = solve_bsde(tree, k, phi, zero_driver(), QV.terminal())
    assert sol.Y.values[0] == pytest.approx(1.6, abs=1e-12)
    ref = conditional_expectation(tree, k, QV.terminal()).values.values
    assert np.max(np.abs(sol.Y.values - ref)) <= 1e-12
    assert sol.edge_residual(phi) <= 1e-12


def test_discount_driver(tri, phi):
    tree, k = tri
    sol = solve_bsde(tree, k, phi, discount_driver(0.1), RandomVariable.constant(tree, 1.0))
    assert sol.Y.values[0] == pytest.approx(1 / 1.21, abs=1e-11)
    assert np.all(sol.Z == 0) and np.all(sol.Z_prime == 0)


def test_constants_are_fixed_points(tri, phi):
    tree, k = tri
    sol = solve_bsde(tree, k, phi, discount_driver(0.0), RandomVariable.constant(tree, 2.5))
    assert np.allclose(sol.Y.values, 2.5, atol=1e-12)


def test_solution_does_not_depend_on_bracket(tri, phi, rng):
    tree, k = tri
    Q = random_variable(tree, rng)
    F = Driver(lambda node, t, y, z, zp: -0.3 * y + 0.2 * np.tanh(y) + 0.1 * abs(zp[0]), "nonlinear")
    a = solve_bsde(tree, k, phi, F, Q, initial_step=1.0)
    b = solve_bsde(tree, k, phi, F, Q, initial_step=37.0)
    c = solve_bsde(tree, k, phi, F, Q, newton=True)
    assert np.max(np.abs(a.Y.values - b.Y.values)) <= 1e-11
    assert np.max(np.abs(a.Y.values - c.Y.values)) <= 1e-11
    assert a.edge_residual(phi) <= 1e-9


def test_non_monotone_driver_rejected(tri, phi):
    tree, k = tri
    F = Driver(lambda node, t, y, z, zp: 2.0 * y, "expanding")
    with pytest.raises(PreconditionError):
        solve_bsde(tree, k, phi, F, RandomVariable.constant(tree, 1.0))
    with pytest.raises(PreconditionError):
        solve_bsde(tree, k, phi, Driver(lambda *a: 0.0, "x", claims_monotone=False), RandomVariable.constant(tree, 1.0))


def test_bracket_failure(tri, phi):
    tree, k = tri
    # y - F = arctan-like, bounded: no root for large targets
    F = Driver(lambda node, t, y, z, zp: y - np.arctan(y), "bounded")
    with pytest.raises(SolverError):
        solve_bsde(tree, k, phi, F, RandomVariable.constant(tree, 10.0), check_monotone=False)


def test_vector_equation(tri, phi, rng):
    tree, k = tri
    Q = rng.uniform(-1, 1, (tree.num_paths, 2))
    F = Driver(lambda node, t, y, z, zp: np.array([0.0, -0.1 * y[1]]), "pair", dim=2)
    sol = solve_bsde(tree, k, phi, F, Q)
    ref0 = conditional_expectation(tree, k, RandomVariable(tree, Q[:, 0])).values.values
    assert np.allclose(sol.Y[:, 0], ref0, atol=1e-12)
    one = solve_bsde(tree, k, phi, discount_driver(0.1), RandomVariable(tree, Q[:, 1]))
    assert np.allclose(sol.Y[:, 1], one.Y.values, atol=1e-11)
    assert sol.edge_residual(phi) <= 1e-9


def test_comparison_examples(tri, QV, phi):
    tree, k = tri
    Q = QV.terminal()
    rep = comparison_check(tree, k, phi, zero_driver(), zero_driver(), Q, Q - 0.5)
    assert rep.hypotheses_hold and rep.conclusion_ok and rep.strict_ok
    d = 0.3
    rep = comparison_check(tree, k, phi, constant_driver(d), zero_driver(), Q, Q)
    assert rep.hypotheses_hold and rep.conclusion_ok
    a = solve_bsde(tree, k, phi, constant_driver(d), Q).Y.values
    b = solve_bsde(tree, k, phi, zero_driver(), Q).Y.values
    assert np.allclose(a - b, d * (tree.horizon - tree.node_levels), atol=1e-11)
    rep = comparison_check(tree, k, phi, zero_driver(), zero_driver(), Q, Q)
    assert rep.strict_ok and rep.min_gap == 0.0


def test_comparison_reports_failed_hypotheses(tri, QV, phi):
    tree, k = tri
    rep = comparison_check(tree, k, phi, zero_driver(), constant_driver(0.2), QV.terminal(), QV.terminal())
    assert not rep.hypotheses["driver_order"] and not rep.conclusion_ok


def test_derived_driver_examples(tri, phi):
    tree, k = tri
    F = driver_from_expectation(tree, k, trinomial_kernels(tree, 0.2), phi)
    assert F(0, 0, 0.0, [0.0], [1.0]) == pytest.approx(-0.2)
    assert F(0, 0, 0.0, [0.0], [0.0]) == 0.0
    for z in (-3.0, 0.5, 2.0):
        assert F(0, 0, 0.0, [z], [0.0]) == pytest.approx(0.0, abs=1e-15)


def test_derived_driver_is_not_subadditive(tri, phi):
    """Difference of two sublinear maps: F(0, z') = -0.2 |z'| here."""
    tree, k = tri
    F = driver_from_expectation(tree, k, trinomial_kernels(tree, 0.2), phi)
    assert F(0, 0, 0.0, [0.0], [-1.0]) == pytest.approx(-0.2)
    assert F(0, 0, 0.0, [0.0], [1.0]) + F(0, 0, 0.0, [0.0], [-1.0]) < F(0, 0, 0.0, [0.0], [0.0])
    assert not F.claims_sublinear
    rep = driver_property_check(tree, k, phi, F, samples=500, seed=0)
    assert rep.counts["driver_subadditivity"] == 500
    assert {v.check for v in rep.violations} == {"driver_subadditivity"}


def test_derived_driver_sublinear_over_linear_base(rng):
    tree = build_tree(2, 3)
    base = KernelSet.shared(tree, [[0.3, 0.4, 0.3]])
    bar = trinomial_kernels(tree, 0.05)
    phi = trinomial_phi(tree)
    F = driver_from_expectation(tree, base, bar, phi)
    assert F.claims_sublinear
    assert driver_property_check(tree, base, phi, F, samples=500, seed=1).ok


def test_derived_driver_precondition():
    tree = build_tree(1, 3)
    charged = trinomial_kernels(tree, 0.1)
    null_middle = KernelSet.shared(tree, [[0.5, 0.0, 0.5]])
    with pytest.raises(PreconditionError):
        driver_from_expectation(tree, null_middle, charged, trinomial_phi(tree))
    driver_from_expectation(tree, charged, null_middle, trinomial_phi(tree))


@pytest.mark.parametrize("eps_bar, expr, want", [(0.2, "QV", 1.2), (0.25, "Bpos", 0.375), (0.1, "QV", 1.6)])
def test_roundtrip_examples(tri, QV, B, phi, eps_bar, expr, want):
    tree, k = tri
    Q = QV.terminal() if expr == "QV" else B.terminal().positive_part()
    rep = roundtrip_check(tree, k, trinomial_kernels(tree, eps_bar), phi, Q)
    assert rep.ok and rep.Y.values[0] == pytest.approx(want, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_roundtrips(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, horizons=(1, 2, 3))
    base, bar = random_kernel_pair(tree, rng)
    phi = random_phi(tree, base, rng)
    rep = roundtrip_check(tree, base, bar, phi, random_variable(tree, rng))
    assert rep.max_gap <= 1e-8


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_comparisons(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, horizons=(1, 2, 3))
    k = random_kernels(tree, rng, polar_prob=0.2)
    phi = random_phi(tree, k, rng)
    Q = random_variable(tree, rng)
    Qb = Q - rng.uniform(0, 1, tree.num_paths) * (rng.random(tree.num_paths) < 0.5)
    rep = comparison_check(tree, k, phi, constant_driver(float(rng.uniform(0, 0.3))), zero_driver(), Q, Qb, seed=seed)
    if rep.hypotheses_hold:
        assert rep.conclusion_ok and rep.strict_ok
