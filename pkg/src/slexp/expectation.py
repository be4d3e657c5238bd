"""Conditional sublinear expectations by backward recursion.

``E_t(X)`` at a level-``t`` node is the one-step sup of its children's
``E_{t+1}(X)`` values, with ``E_T(X) = X``. The tower property therefore
holds by construction; the remaining axioms are checked numerically by
``check_axioms``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ambiguity import KernelSet, iter_measure_blocks, level_sup
from .config import settings
from .errors import KernelError, TreeError
from .tree import AdaptedProcess, RandomVariable, ScenarioTree


@dataclass(frozen=True)
class ExpectationResult:
    values: AdaptedProcess
    optimal_kernel: np.ndarray  # per non-terminal node, index of the maximising vertex

    @property
    def root(self) -> float:
        return float(self.values.values[0])

    def at_level(self, t: int) -> np.ndarray:
        return self.values.at_level(t)


def _check(tree, kernels, X):
    if kernels.tree != tree:
        raise TreeError("kernels were built for a different tree")
    if not isinstance(X, RandomVariable) or X.tree != tree:
        raise TreeError("X must be a RandomVariable on the same tree")


def conditional_expectation(tree: ScenarioTree, kernels: KernelSet, X: RandomVariable,
                            workers: int | None = None) -> ExpectationResult:
    _check(tree, kernels, X)
    out = np.empty(tree.num_nodes)
    arg = np.empty(tree.num_internal, dtype=np.int64)
    out[tree.level_slice(tree.horizon)] = X.values
    for t in range(tree.horizon - 1, -1, -1):
        sl = tree.level_slice(t)
        out[sl], arg[sl] = level_sup(kernels, t, out[tree.level_slice(t + 1)], workers)
    arg.setflags(write=False)
    return ExpectationResult(AdaptedProcess(tree, out), arg)


def expectation(tree, kernels, X) -> float:
    return conditional_expectation(tree, kernels, X).root


def lower_expectation(tree, kernels, X) -> float:
    return -conditional_expectation(tree, kernels, -X).root


def one_step_expectation(kernels: KernelSet, X: AdaptedProcess, workers: int | None = None) -> np.ndarray:
    """``E_t(X_{t+1})`` at every non-terminal node, as a flat array over those nodes."""
    tree = kernels.tree
    out = np.empty(tree.num_internal)
    for t in range(tree.horizon):
        out[tree.level_slice(t)], _ = level_sup(kernels, t, X.at_level(t + 1), workers)
    return out


def qs_leq(X: RandomVariable, Y: RandomVariable, polar: set[int] = frozenset(), tol: float | None = None) -> bool:
    """``X <= Y`` on every non-polar path."""
    tol = settings.tolerance if tol is None else tol
    keep = np.ones(X.tree.num_paths, dtype=bool)
    keep[list(polar)] = False
    return bool(np.all(X.values[keep] <= Y.values[keep] + tol))


def qs_equal(X: RandomVariable, Y: RandomVariable, polar: set[int] = frozenset(), tol: float | None = None) -> bool:
    return qs_leq(X, Y, polar, tol) and qs_leq(Y, X, polar, tol)


def oracle_expectation(tree: ScenarioTree, kernels: KernelSet, X: RandomVariable, budget: int | None = None) -> float:
    """Max of the linear expectation of ``X`` over every vertex selection."""
    _check(tree, kernels, X)
    best = -np.inf
    for _, prob in iter_measure_blocks(tree, kernels, budget=budget):
        best = max(best, float(np.max(prob @ X.values)))
    return best


class ConvexPiecewiseLinear:
    """``phi(x) = max_i (a_i x + b_i)``, pieces listed left to right.

    Listing order is part of the contract: slopes must be nondecreasing,
    otherwise the list does not describe the convex function it claims to.
    """

    def __init__(self, pieces: Sequence[tuple[float, float]]):
        if not pieces:
            raise ValueError("need at least one affine piece")
        arr = np.asarray(pieces, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError("pieces must be (slope, intercept) pairs")
        if np.any(np.diff(arr[:, 0]) < 0):
            raise ValueError("slopes must be nondecreasing: piece list is not convex")
        self.slopes = arr[:, 0]
        self.intercepts = arr[:, 1]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.max(self.slopes[:, None] * x.reshape(1, -1) + self.intercepts[:, None], axis=0).reshape(x.shape)

    @classmethod
    def secant_square(cls, lo: int, hi: int):
        """Chords of ``x**2`` between consecutive integers in ``[lo, hi]``; exact on that lattice."""
        return cls([(2 * k + 1, -k * (k + 1)) for k in range(lo, hi)])


@dataclass
class Violation:
    check: str
    sample: int
    node: int
    lhs: float
    rhs: float


@dataclass
class PropertyReport:
    """Per-check instance counts and any witnesses found."""

    counts: dict[str, int] = field(default_factory=dict)
    violations: list[Violation] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def record(self, check: str, sample: int, lhs, rhs, holds, nodes=None):
        self.counts[check] = self.counts.get(check, 0) + 1
        holds = np.asarray(holds, dtype=bool).reshape(-1)
        if holds.all():
            return
        lhs = np.broadcast_to(np.asarray(lhs, dtype=float).reshape(-1), holds.shape)
        rhs = np.broadcast_to(np.asarray(rhs, dtype=float).reshape(-1), holds.shape)
        nodes = np.arange(holds.size) if nodes is None else np.asarray(nodes).reshape(-1)
        k = int(np.flatnonzero(~holds)[0])
        self.violations.append(Violation(check, sample, int(nodes[k]), float(lhs[k]), float(rhs[k])))

    def merge(self, other: "PropertyReport"):
        for k, v in other.counts.items():
            self.counts[k] = self.counts.get(k, 0) + v
        self.violations.extend(other.violations)
        self.notes.extend(other.notes)
        return self


def jensen_check(tree, kernels, phi: ConvexPiecewiseLinear, X: RandomVariable,
                 tol: float | None = None, report: PropertyReport | None = None, sample: int = 0) -> PropertyReport:
    """``E_t(phi(X)) >= phi(E_t(X))`` at every node."""
    tol = settings.tolerance if tol is None else tol
    report = PropertyReport() if report is None else report
    lhs = conditional_expectation(tree, kernels, X.apply(phi)).values.values
    rhs = phi(conditional_expectation(tree, kernels, X).values.values)
    report.record("jensen", sample, lhs, rhs, lhs >= rhs - tol)
    return report


def _random_convex(rng) -> ConvexPiecewiseLinear:
    k = int(rng.integers(1, 5))
    slopes = np.sort(rng.uniform(-2, 2, k))
    return ConvexPiecewiseLinear(list(zip(slopes, rng.uniform(-1, 1, k))))


def check_axioms(tree: ScenarioTree, kernels: KernelSet, sample_count: int, seed: int = 0,
                 tol: float | None = None) -> PropertyReport:
    """Randomised check of the sublinear-expectation axioms at every node.

    Covers monotonicity, the tower property, regularity in both forms,
    constant preservation, subadditivity, homogeneity in both forms,
    translation invariance, Jensen, and the triangle bounds at the root.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    if kernels.tree != tree:
        raise KernelError("kernels were built for a different tree")
    tol = settings.tolerance if tol is None else tol
    rng = np.random.default_rng(seed)
    rep = PropertyReport()
    if kernels.is_linear():
        rep.notes.append("linear case")
    T, P = tree.horizon, tree.num_paths
    levels = tree.node_levels

    def E(v):
        return conditional_expectation(tree, kernels, RandomVariable(tree, v)).values.values

    for k in range(sample_count):
        x = rng.uniform(-1, 1, P)
        y = rng.uniform(-1, 1, P)
        t = int(rng.integers(0, T + 1))
        deep = levels >= t  # nodes at which F_t-measurable data is known
        ex, ey = E(x), E(y)

        def lift_t(level_vals):
            return tree.lift(level_vals, t)

        bump = rng.uniform(0, 1, P) * (rng.random(P) < 0.5)
        ex2 = E(x + bump)
        rep.record("monotonicity", k, ex2, ex, ex2 >= ex - tol)

        et_lift = lift_t(ex[tree.level_slice(t)])
        tower = E(et_lift)
        shallow = levels <= t
        rep.record("tower", k, tower[shallow], ex[shallow], np.abs(tower[shallow] - ex[shallow]) <= tol,
                   np.flatnonzero(shallow))

        A = lift_t((rng.random(tree.level_size(t)) < 0.5).astype(float))
        An = _on_nodes(tree, A)
        lhs = E(A * y)
        rhs = An * ey
        rep.record("regularity", k, lhs[deep], rhs[deep], np.abs(lhs - rhs)[deep] <= tol, np.flatnonzero(deep))
        lhs = E(A * x + (1 - A) * y)
        rhs = An * ex + (1 - An) * ey
        rep.record("regularity_pasting", k, lhs[deep], rhs[deep], np.abs(lhs - rhs)[deep] <= tol, np.flatnonzero(deep))

        h = lift_t(rng.uniform(-1, 1, tree.level_size(t)))
        eh = E(h)
        hn = _on_nodes(tree, h)
        rep.record("constant_preservation", k, eh[deep], hn[deep], np.abs(eh - hn)[deep] <= tol, np.flatnonzero(deep))
        c = float(rng.uniform(-1, 1))
        ec = E(np.full(P, c))
        rep.record("constant_preservation", k, ec, c, np.abs(ec - c) <= tol)

        exy = E(x + y)
        rep.record("subadditivity", k, exy, ex + ey, exy <= ex + ey + tol)

        lam = lift_t(rng.uniform(-2, 2, tree.level_size(t)))
        ln = _on_nodes(tree, lam)
        lhs = E(lam * y)
        rhs = np.maximum(ln, 0) * ey + np.maximum(-ln, 0) * E(-y)
        rep.record("positive_homogeneity", k, lhs[deep], rhs[deep], np.abs(lhs - rhs)[deep] <= tol, np.flatnonzero(deep))
        lhs = E(np.abs(lam) * y)
        rhs = np.abs(ln) * ey
        rep.record("positive_homogeneity_nonneg", k, lhs[deep], rhs[deep], np.abs(lhs - rhs)[deep] <= tol,
                   np.flatnonzero(deep))

        lhs = E(x + h)
        rhs = ex + hn
        rep.record("translation_invariance", k, lhs[deep], rhs[deep], np.abs(lhs - rhs)[deep] <= tol, np.flatnonzero(deep))

        jensen_check(tree, kernels, _random_convex(rng), RandomVariable(tree, x), tol, rep, k)

        d = E(x - y)[0]
        lo, hi = ex[0] - ey[0], ex[0] + E(-y)[0]
        rep.record("triangle_bounds", k, [lo, d], [d, hi], [lo <= d + tol, d <= hi + tol], [0, 0])
    return rep


def _on_nodes(tree: ScenarioTree, path_vals: np.ndarray) -> np.ndarray:
    """Per-node view of path data that is constant below some level.

    Each node takes the value of the first path through it; callers only read
    nodes deep enough for that to be unambiguous.
    """
    out = np.empty(tree.num_nodes)
    for t in range(tree.horizon + 1):
        sl = tree.level_slice(t)
        out[sl] = path_vals[:: tree.branching ** (tree.horizon - t)]
    return out
