"""Acceptance suite: one check per criterion, one PASS/FAIL line each.

Run under pytest, or directly with ``python tests/test_acceptance.py``.
Seeds are fixed up front; every criterion runs at its stated tolerance.
"""

import io
import json
import os
import sys
import tempfile
import time

import numpy as np
import pytest

from slexp import (
    Kind,
    RandomVariable,
    StoppingTime,
    TheoremViolation,
    build_tree,
    check_axioms,
    classify,
    comparison_check,
    compensator,
    conditional_expectation,
    constant_driver,
    crossing_inequality_report,
    discount_driver,
    doob_decomposition,
    driver_from_expectation,
    driver_property_check,
    expectation,
    lower_expectation,
    martingale_rep,
    optional_stopping_check,
    oracle_expectation,
    roundtrip_check,
    semimartingale_rep,
    solve_bsde,
    trinomial_kernels,
    zero_driver,
)
from slexp.cli import main as cli_main
from slexp.martingale import compensator_monotonicity
from slexp.representation import g_values
from slexp.sampling import (
    random_kernel_pair,
    random_kernels,
    random_martingale,
    random_phi,
    random_process,
    random_stopping_pair,
    random_stopping_time,
    random_submartingale,
    random_supermartingale,
    random_tree,
    random_variable,
)

sys.path.insert(0, os.path.dirname(__file__))
from conftest import walk  # noqa: E402

TOL = 1e-9
ORACLE_CAP = 20_000


def c1_oracle_equivalence():
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(200):
        tree = random_tree(rng, branching=(2, 3), horizons=(1, 2, 3, 4))
        k = random_kernels(tree, rng, max_vertices=3, polar_prob=0.1, measure_cap=ORACLE_CAP)
        for _ in range(5):
            X = random_variable(tree, rng)
            worst = max(worst, abs(expectation(tree, k, X) - oracle_expectation(tree, k, X)))
    return worst <= TOL, f"200 trees x 5 variables, max |recursion - oracle| = {worst:.2e}"


def c2_trinomial_closed_forms():
    tree = build_tree(2, 3)
    k = trinomial_kernels(tree, 0.1)
    B, QV = walk(tree, [1, 0, -1]), walk(tree, [1, 0, 1])
    got = {
        "E([B]_2)": (expectation(tree, k, QV.terminal()), 1.6),
        "lower([B]_2)": (lower_expectation(tree, k, QV.terminal()), 0.4),
        "E(B_2)": (expectation(tree, k, B.terminal()), 0.0),
        "E(B_2+)": (expectation(tree, k, B.terminal().positive_part()), 0.48),
    }
    comp = compensator(tree, k, QV).as_adapted().values
    errs = {name: abs(a - b) for name, (a, b) in got.items()}
    errs["compensator"] = float(np.max(np.abs(comp - 0.8 * tree.node_levels)))
    lin = trinomial_kernels(tree, 0.25)
    rng = np.random.default_rng(102)
    lin_gap = max(abs(expectation(tree, lin, X) - lower_expectation(tree, lin, X))
                  for X in (random_variable(tree, rng) for _ in range(100)))
    ok = max(errs.values()) <= TOL and lin_gap <= TOL
    return ok, f"max closed-form error {max(errs.values()):.1e}; eps=0.25 upper-lower gap {lin_gap:.1e} over 100 variables"


def c3_axiom_suite():
    tree = build_tree(3, 3)
    rep = check_axioms(tree, trinomial_kernels(tree, 0.1), 1000, seed=103)
    rng = np.random.default_rng(103)
    for i in range(10):
        t = random_tree(rng, horizons=(2, 3))
        rep.merge(check_axioms(t, random_kernels(t, rng, polar_prob=0.2), 100, seed=i))
    need = ["monotonicity", "tower", "regularity", "constant_preservation", "subadditivity",
            "positive_homogeneity", "translation_invariance", "jensen"]
    enough = all(rep.counts.get(c, 0) >= 1000 for c in need)
    return rep.ok and enough, (f"{min(rep.counts[c] for c in need)}+ instances per axiom, "
                               f"{len(rep.violations)} violations")


def c4_doob():
    rng = np.random.default_rng(104)
    want = {Kind.MARTINGALE: "constant", Kind.SUBMARTINGALE: "nondecreasing", Kind.SUPERMARTINGALE: "nonincreasing"}
    worst, mismatches = 0.0, 0
    kinds = {}
    for i in range(500):
        tree = random_tree(rng, horizons=(1, 2, 3))
        k = random_kernels(tree, rng, polar_prob=0.1)
        X = [lambda: random_process(tree, rng), lambda: random_martingale(tree, k, rng),
             lambda: random_submartingale(tree, k, rng), lambda: random_supermartingale(tree, k, rng)][i % 4]()
        mart, hat = doob_decomposition(tree, k, X)
        worst = max(worst, float(np.max(np.abs(mart.values + hat.values - X.values))))
        kind = classify(tree, k, X)
        kinds[kind.value] = kinds.get(kind.value, 0) + 1
        if classify(tree, k, mart) is not Kind.MARTINGALE:
            mismatches += 1
        if compensator_monotonicity(compensator(tree, k, X)) != want.get(kind, "neither"):
            mismatches += 1
    return worst <= 1e-12 and mismatches == 0, (f"500 processes {kinds}, reconstruction error {worst:.1e}, "
                                                f"{mismatches} classification mismatches")


def c5_optional_stopping():
    rng = np.random.default_rng(105)
    fails, worst = 0, 0.0
    for gen in (random_martingale, random_submartingale, random_supermartingale):
        for _ in range(100):
            tree = random_tree(rng, horizons=(1, 2, 3, 4), branching=(2, 3))
            k = random_kernels(tree, rng, polar_prob=0.1)
            X = gen(tree, k, rng)
            S, T2 = random_stopping_pair(tree, rng)
            rep = optional_stopping_check(tree, k, X, S, T2, TOL)
            fails += not rep.ok
            if gen is random_martingale:
                worst = max(worst, rep.max_gap)
    return fails == 0, f"300 instances (100 each), {fails} failures, martingale max |X_S - E_S(X_T')| = {worst:.1e}"


def c6_crossings():
    rng = np.random.default_rng(0)
    fails = {}
    n = 0
    for gen in (random_submartingale, random_supermartingale):
        for _ in range(200):
            tree = random_tree(rng, horizons=(1, 2, 3, 4), branching=(2, 3))
            k = random_kernels(tree, rng)
            X = gen(tree, k, rng)
            S = random_stopping_time(tree, rng)
            a, b = np.sort(rng.uniform(-1.5, 1.5, 2))
            rep = crossing_inequality_report(tree, k, X, S, float(a), float(b) + 1e-6, TOL)
            n += 1
            for name, slack in rep.slacks.items():
                if slack < -TOL:
                    fails[name] = fails.get(name, 0) + 1
    tree = build_tree(2, 3)
    k = trinomial_kernels(tree, 0.1)
    rep = crossing_inequality_report(tree, k, walk(tree, [1, 0, 1]), StoppingTime.constant(tree, 2), 0.0, 1.0)
    lhs, rhs = rep.bounds["sub_up"]
    tri_ok = abs(lhs - 0.96) <= TOL and abs(rhs - 1.6) <= TOL and rep.ok
    return not fails and tri_ok, f"{n} instances, bound violations {fails or 'none'}; trinomial E(M)={lhs:.6g} <= {rhs:.6g}"


def c7_representation():
    rng = np.random.default_rng(107)
    worst_edge, worst_g = 0.0, 0.0
    for _ in range(200):
        tree = random_tree(rng, horizons=(1, 2, 3))
        k = random_kernels(tree, rng, polar_prob=0.15)
        phi = random_phi(tree, k, rng)
        X = random_martingale(tree, k, rng)
        tri = martingale_rep(tree, k, X, phi, TOL)
        G = g_values(phi, k, tri.Z_prime)
        worst_g = max(worst_g, float(np.max(np.abs(tri.Z_wedge + G))))
        worst_edge = max(worst_edge, float(np.max(np.abs(tri.edge_increments(phi, -G) - semimartingale_rep(tree, X)))))
    return max(worst_edge, worst_g) <= TOL, f"200 martingales, edge error {worst_edge:.1e}, |Z^ + G(Z')| {worst_g:.1e}"


def c8_bsde():
    rng = np.random.default_rng(108)
    zero_gap = disc_gap = 0.0
    compared = broken = 0
    while compared < 100:
        tree = random_tree(rng, horizons=(1, 2, 3))
        k = random_kernels(tree, rng, polar_prob=0.1)
        phi = random_phi(tree, k, rng)
        Q = random_variable(tree, rng)
        sol = solve_bsde(tree, k, phi, zero_driver(), Q)
        zero_gap = max(zero_gap, float(np.max(np.abs(sol.Y.values - conditional_expectation(tree, k, Q).values.values))))
        r, c = float(rng.uniform(0, 0.5)), float(rng.uniform(-2, 2))
        Y0 = solve_bsde(tree, k, phi, discount_driver(r), RandomVariable.constant(tree, c)).Y.values[0]
        disc_gap = max(disc_gap, abs(Y0 - c * (1 + r) ** -tree.horizon))
        Qb = Q - rng.uniform(0, 1, tree.num_paths) * (rng.random(tree.num_paths) < 0.5)
        rep = comparison_check(tree, k, phi, constant_driver(float(rng.uniform(0, 0.3))), zero_driver(), Q, Qb,
                               seed=compared)
        if rep.hypotheses_hold:
            compared += 1
            broken += not (rep.conclusion_ok and rep.strict_ok)
    ok = zero_gap <= TOL and disc_gap <= TOL and broken == 0
    return ok, (f"F=0 gap {zero_gap:.1e}, discount gap {disc_gap:.1e}, "
                f"comparison {compared} instances with hypotheses verified, {broken} conclusion failures")


def c9_roundtrip():
    rng = np.random.default_rng(109)
    worst = 0.0
    counts, viol = {}, {}
    for i in range(50):
        tree = random_tree(rng, horizons=(1, 2, 3))
        base, bar = random_kernel_pair(tree, rng)
        phi = random_phi(tree, base, rng)
        try:
            worst = max(worst, roundtrip_check(tree, base, bar, phi, random_variable(tree, rng)).max_gap)
        except TheoremViolation:
            worst = np.inf
        rep = driver_property_check(tree, base, phi, driver_from_expectation(tree, base, bar, phi), 500, seed=i)
        for c, n in rep.counts.items():
            counts[c] = counts.get(c, 0) + n
        for v in rep.violations:
            viol[v.check] = viol.get(v.check, 0) + 1
    sampled = {c: viol.get(c, 0) for c in ("driver_subadditivity", "driver_homogeneity")}
    ok = worst <= 1e-8 and not any(sampled.values())
    return ok, f"50 pairs, max |Y - Ebar_t(Q)| = {worst:.1e}; driver sampling violations {sampled} of {counts['driver_homogeneity']} each"


def c10_determinism():
    spec = {"tree": {"horizon": 4, "branching": 3}, "kernels": {"trinomial": {"epsilon": 0.1}},
            "variables": {"X": "pos(QV - 2) * B + min(B2, B3)"}}
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "spec.json")
        with open(path, "w") as fh:
            json.dump(spec, fh)
        runs = [["eval", "--spec", path, "--expr", "X", "--per-node"],
                ["verify", "--spec", path, "--suite", "axioms", "--seed", "7", "--samples", "50"]]
        same = True
        for argv in runs:
            outs = []
            for threads in ("1", "8"):
                buf = io.StringIO()
                code = cli_main(["--threads", threads, "--format", "csv", *argv], buf)
                outs.append((code, buf.getvalue().encode()))
            same &= outs[0] == outs[1] and outs[0][0] == 0
    return same, "eval --per-node and verify byte-identical with --threads 1 and 8"


CRITERIA = [
    (1, "oracle equivalence", c1_oracle_equivalence),
    (2, "trinomial closed forms", c2_trinomial_closed_forms),
    (3, "axiom suite", c3_axiom_suite),
    (4, "Doob decomposition", c4_doob),
    (5, "optional stopping", c5_optional_stopping),
    (6, "crossing inequalities", c6_crossings),
    (7, "martingale representation", c7_representation),
    (8, "BSDE", c8_bsde),
    (9, "round trip", c9_roundtrip),
    (10, "determinism", c10_determinism),
]


def run_one(num, name, fn):
    t0 = time.perf_counter()
    ok, detail = fn()
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num} ({name}): {detail} [{time.perf_counter() - t0:.1f}s]"
    return ok, line


@pytest.mark.parametrize("num, name, fn", CRITERIA, ids=[f"c{n}_{s.replace(' ', '_')}" for n, s, _ in CRITERIA])
def test_acceptance(num, name, fn, capsys):
    ok, line = run_one(num, name, fn)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    results = [run_one(*c) for c in CRITERIA]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
