"""Backward stochastic difference equations driven by a sublinear expectation.

The one-step dynamics are

    Y_{t+1} = Y_t - F(t, Y_t, Z_t, Z'_t) + Z_t M_{t+1} + Z'_t N_{t+1} - G_t(Z'_t)

with ``Y_T = Q``. Going backwards, ``E_t(Y_{t+1})`` fixes the martingale
part through the representation in ``Phi`` coordinates, and ``Y_t`` solves
the scalar equation ``y - F(t, y, Z_t, Z'_t) = E_t(Y_{t+1})``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .ambiguity import KernelSet, level_sup, polar_node_mask, polar_paths, sup_step
from .config import settings
from .errors import PreconditionError, SolverError, TheoremViolation, TreeError
from .expectation import PropertyReport, conditional_expectation
from .representation import PhiMap, g_function, g_values
from .tree import AdaptedProcess, RandomVariable, ScenarioTree

ROOT_TOL = 1e-12
MAX_ITER = 200


@dataclass(frozen=True)
class Driver:
    """``F(node, t, y, z, z')``; must be a pure function of its arguments.

    For scalar equations ``y`` is a float, ``z`` an ``M``-vector and ``z'``
    an ``(N-M-1)``-vector. For ``dim = K > 1`` they carry a leading ``K`` axis
    and ``F`` returns a ``K``-vector whose ``k``-th entry may depend on
    ``y`` only through ``y[k]``.
    """

    func: Callable
    name: str = "custom"
    claims_monotone: bool = True
    claims_sublinear: bool = False
    claims_positively_homogeneous: bool = False
    dim: int = 1

    def __call__(self, node, t, y, z, zp):
        return self.func(node, t, y, z, zp)


def zero_driver() -> Driver:
    return Driver(lambda node, t, y, z, zp: 0.0 * np.asarray(y), "zero", True, True, True)


def constant_driver(delta: float) -> Driver:
    return Driver(lambda node, t, y, z, zp: delta + 0.0 * np.asarray(y), f"constant({delta})")


def discount_driver(r: float) -> Driver:
    """``F = -r y``, so ``Y_t = E_t(Y_{t+1}) / (1 + r)``; needs ``r > -1``."""
    if not r > -1:
        raise PreconditionError("discount rate must exceed -1")
    return Driver(lambda node, t, y, z, zp: -r * np.asarray(y), f"discount({r})", True, False, True)


def driver_from_expectation(tree: ScenarioTree, kernels_base: KernelSet, kernels_bar: KernelSet,
                            phi: PhiMap) -> Driver:
    """``F(z, z') = Ebar_t(z M + z' N) - G_t(z')``, with ``G`` taken under the base kernels."""
    if not polar_paths(tree, kernels_base) <= polar_paths(tree, kernels_bar):
        raise PreconditionError("bar expectation is not absolutely continuous w.r.t. the base expectation")
    ps, pp = phi.phi_s, phi.phi_prime

    def F(node, t, y, z, zp):
        z = np.asarray(z, dtype=float)
        zp = np.asarray(zp, dtype=float)
        child = z @ ps[node] + zp @ pp[node]
        return sup_step(node, child, kernels_bar)[0] - g_function(node, zp, phi, kernels_base)

    # subadditivity is only guaranteed when G is linear: a difference of two
    # sublinear maps can be concave (see driver_property_check)
    return Driver(F, "derived", True, kernels_base.is_linear(), True)


def _bracket_and_bisect(f, target, start, step, tol, max_iter, newton):
    """Solve increasing ``f(y) = target``; returns ``(root, iterations)``."""
    lo = hi = start
    flo = fhi = f(start)
    if abs(flo - target) <= tol:
        return start, 0
    h = step
    it = 0
    while flo > target:
        hi, fhi = lo, flo
        lo -= h
        h *= 2
        flo = f(lo)
        it += 1
        if it > max_iter:
            raise SolverError("could not bracket the root from below")
    while fhi < target:
        lo, flo = hi, fhi
        hi += h
        h *= 2
        fhi = f(hi)
        it += 1
        if it > max_iter:
            raise SolverError("could not bracket the root from above")
    y = 0.5 * (lo + hi)
    for k in range(max_iter):
        fy = f(y)
        r = fy - target
        if abs(r) <= tol:
            return y, it + k + 1
        if r > 0:
            hi = y
        else:
            lo = y
        nxt = 0.5 * (lo + hi)
        if newton:
            d = 1e-7 * max(1.0, abs(y))
            slope = (f(y + d) - fy) / d
            if slope > 0:
                cand = y - r / slope
                if lo < cand < hi:
                    nxt = cand
        if nxt == y or nxt <= lo or nxt >= hi:
            # bracket collapsed to adjacent floats
            best = min((lo, hi), key=lambda v: abs(f(v) - target))
            if abs(f(best) - target) <= tol:
                return best, it + k + 1
            raise SolverError(f"bracket collapsed with residual {abs(f(best) - target):.3g}")
        y = nxt
    raise SolverError(f"root finder hit the {max_iter}-iteration cap")


def _monotone_on_grid(f, centre, points=9) -> bool:
    spread = max(1.0, abs(centre))
    ys = centre + spread * np.linspace(-1, 1, points)
    vals = np.array([f(y) for y in ys])
    return bool(np.all(np.diff(vals) > 0))


@dataclass
class BsdeSolution:
    Y: AdaptedProcess | np.ndarray
    Z: np.ndarray
    Z_prime: np.ndarray
    root_iterations: np.ndarray
    F_values: np.ndarray  # driver at the solution, per non-terminal node
    G_values: np.ndarray

    def edge_residual(self, phi: PhiMap) -> float:
        """Max over edges of the one-step equation's residual."""
        tree = phi.tree
        Y = self.Y.values if isinstance(self.Y, AdaptedProcess) else self.Y
        Y = Y.reshape(tree.num_nodes, -1)
        K = Y.shape[1]
        Z = self.Z.reshape(tree.num_internal, K, phi.M)
        Zp = self.Z_prime.reshape(tree.num_internal, K, -1)
        Fv = self.F_values.reshape(tree.num_internal, K)
        Gv = self.G_values.reshape(tree.num_internal, K)
        worst = 0.0
        for t in range(tree.horizon):
            sl, nxt = tree.level_slice(t), tree.level_slice(t + 1)
            mart = np.einsum("nkm,nmi->nki", Z[sl], phi.phi_s[sl]) + np.einsum("nkj,nji->nki", Zp[sl], phi.phi_prime[sl])
            pred = Y[sl][:, :, None] - Fv[sl][:, :, None] + mart - Gv[sl][:, :, None]
            actual = Y[nxt].reshape(-1, tree.branching, K).transpose(0, 2, 1)
            worst = max(worst, float(np.max(np.abs(pred - actual))))
        return worst


def solve_bsde(tree: ScenarioTree, kernels: KernelSet, phi: PhiMap, F: Driver, Q, *,
               tol: float = ROOT_TOL, max_iter: int = MAX_ITER, initial_step: float = 1.0,
               newton: bool = False, check_monotone: bool = True) -> BsdeSolution:
    """Backward induction from ``Y_T = Q``.

    ``Q`` is a ``RandomVariable`` or, for ``K``-dimensional equations, an
    array of shape ``(num_paths, K)``.
    """
    if phi.tree != tree or kernels.tree != tree:
        raise TreeError("tree, kernels and Phi disagree")
    if not F.claims_monotone:
        raise PreconditionError(f"driver {F.name!r} does not claim y -> y - F is increasing")
    scalar = isinstance(Q, RandomVariable)
    q = np.asarray(Q.values if scalar else Q, dtype=float).reshape(tree.num_paths, -1)
    K = q.shape[1]
    if K != F.dim:
        raise PreconditionError(f"terminal value has dimension {K}, driver has {F.dim}")
    N, M = tree.branching, phi.M
    Y = np.empty((tree.num_nodes, K))
    Zs = np.zeros((tree.num_internal, K, M))
    Zp = np.zeros((tree.num_internal, K, N - M - 1))
    iters = np.zeros(tree.num_internal, dtype=np.int64)
    Fv = np.zeros((tree.num_internal, K))
    Gv = np.zeros((tree.num_internal, K))
    Y[tree.level_slice(tree.horizon)] = q

    for t in range(tree.horizon - 1, -1, -1):
        sl, nxt = tree.level_slice(t), tree.level_slice(t + 1)
        child = Y[nxt].reshape(-1, N, K)
        cond = np.empty((sl.stop - sl.start, K))
        for k in range(K):
            cond[:, k], _ = level_sup(kernels, t, child[:, :, k].reshape(-1))
        for j, node in enumerate(range(sl.start, sl.stop)):
            D = child[j].T - cond[j][:, None]  # (K, N) martingale difference
            W = D @ phi.inverses[node]
            z, zp = W[:, 1 : M + 1], W[:, M + 1 :]
            g = np.array([g_function(node, zp[k], phi, kernels) for k in range(K)])
            scale = max(1.0, float(np.max(np.abs(D))))
            if np.any(np.abs(W[:, 0] + g) > settings.tolerance * scale):
                raise TheoremViolation(f"martingale difference at node {node} violates Z^wedge = -G(Z')")
            Zs[node], Zp[node], Gv[node] = z, zp, g
            y = cond[j].copy()
            total = 0
            for _sweep in range(50 if K > 1 else 1):
                prev = y.copy()
                for k in range(K):
                    def f(v, k=k):
                        yy = y.copy()
                        yy[k] = v
                        out = F(node, t, yy[0] if K == 1 else yy, z[0] if K == 1 else z, zp[0] if K == 1 else zp)
                        return v - float(np.asarray(out).reshape(-1)[k])

                    if check_monotone and not _monotone_on_grid(f, cond[j][k]):
                        raise PreconditionError(f"y -> y - F is not increasing at node {node}")
                    y[k], n_it = _bracket_and_bisect(f, cond[j][k], cond[j][k], initial_step, tol, max_iter, newton)
                    total += n_it
                if np.max(np.abs(y - prev)) <= tol:
                    break
            Y[node] = y
            out = F(node, t, y[0] if K == 1 else y, z[0] if K == 1 else z, zp[0] if K == 1 else zp)
            Fv[node] = np.asarray(out, dtype=float).reshape(-1)
            iters[node] = total

    if scalar:
        return BsdeSolution(AdaptedProcess(tree, Y[:, 0]), Zs[:, 0], Zp[:, 0], iters, Fv[:, 0], Gv[:, 0])
    return BsdeSolution(Y, Zs, Zp, iters, Fv, Gv)


def _essential_min_holds(lhs: float, diff_live: np.ndarray, margin: float, tol: float) -> tuple[bool, float]:
    """Essential-min condition at one node: ``lhs`` against the min increment difference on non-polar children.

    Strict (by ``margin``) when the difference varies across those children.
    When it is constant there, the two arguments drive the same noise q.s.
    and only ``>=`` can be asked for.
    """
    rhs = float(np.min(diff_live))
    if np.ptp(diff_live) <= tol:
        return lhs >= rhs - tol, rhs
    return lhs > rhs + margin, rhs


@dataclass
class ComparisonReport:
    hypotheses: dict[str, bool] = field(default_factory=dict)
    conclusion_ok: bool = True
    strict_ok: bool = True
    min_gap: float = np.inf  # min of Y - Ybar over non-polar nodes
    witnesses: list[tuple[str, int, float, float]] = field(default_factory=list)

    @property
    def hypotheses_hold(self) -> bool:
        return all(self.hypotheses.values())


def comparison_check(tree: ScenarioTree, kernels: KernelSet, phi: PhiMap, F: Driver, F_bar: Driver,
                     Q: RandomVariable, Q_bar: RandomVariable, *, samples: int = 8, seed: int = 0,
                     tol: float | None = None, margin: float = 1e-9) -> ComparisonReport:
    """Check the comparison theorem's hypotheses and conclusions on one instance.

    The essential-min hypothesis is verified at the realised solution arguments and at
    ``samples`` random argument pairs per node; it cannot be checked
    exhaustively. Hypothesis failures are reported. A failed conclusion
    with every hypothesis verified raises ``TheoremViolation``.
    """
    tol = settings.tolerance if tol is None else tol
    rng = np.random.default_rng(seed)
    sol = solve_bsde(tree, kernels, phi, F, Q)
    bar = solve_bsde(tree, kernels, phi, F_bar, Q_bar)
    polar = polar_node_mask(tree, kernels)
    live_paths = ~polar[tree.level_slice(tree.horizon)]
    rep = ComparisonReport()

    gap_q = Q.values - Q_bar.values
    rep.hypotheses["terminal_order"] = bool(np.all(gap_q[live_paths] >= -tol))

    Y, Yb = sol.Y.values, bar.Y.values
    ok_ii, ok_iii, ok_iv = True, True, True
    ps, pp = phi.phi_s, phi.phi_prime
    dim_p = tree.branching - phi.M - 1
    for node in range(tree.num_internal):
        if polar[node]:
            continue
        t = int(tree.node_levels[node])
        for (y, z, zp) in ((Yb[node], bar.Z[node], bar.Z_prime[node]), (Y[node], sol.Z[node], sol.Z_prime[node])):
            a, b = float(F(node, t, y, z, zp)), float(F_bar(node, t, y, z, zp))
            if a < b - tol:
                ok_ii = False
                rep.witnesses.append(("driver_order", node, a, b))
        if not _monotone_on_grid(lambda v: v - float(F(node, t, v, sol.Z[node], sol.Z_prime[node])), Y[node]):
            ok_iii = False
            rep.witnesses.append(("monotone", node, Y[node], np.nan))
        kids = np.array(tree.children(node))
        live = ~polar[kids]
        pairs = [(Y[node], sol.Z[node], sol.Z_prime[node], bar.Z[node], bar.Z_prime[node])]
        for _ in range(samples):
            pairs.append((float(rng.uniform(-2, 2)), rng.uniform(-2, 2, phi.M), rng.uniform(-2, 2, dim_p),
                          rng.uniform(-2, 2, phi.M), rng.uniform(-2, 2, dim_p)))
        for y, z, zp, zb, zpb in pairs:
            dz, dzp = z - zb, zp - zpb
            if max(np.max(np.abs(dz), initial=0.0), np.max(np.abs(dzp), initial=0.0)) <= tol:
                continue
            lhs = (float(F(node, t, y, z, zp)) - float(F(node, t, y, zb, zpb))
                   + g_function(node, zp, phi, kernels) - g_function(node, zpb, phi, kernels))
            holds, rhs = _essential_min_holds(lhs, (dz @ ps[node] + dzp @ pp[node])[live], margin, tol)
            if not holds:
                ok_iv = False
                rep.witnesses.append(("essential_min", node, lhs, rhs))
    rep.hypotheses["driver_order"] = ok_ii
    rep.hypotheses["monotone"] = ok_iii
    rep.hypotheses["essential_min"] = ok_iv

    gap = (Y - Yb)[~polar]
    rep.min_gap = float(np.min(gap))
    rep.conclusion_ok = bool(np.all(gap >= -tol))
    for node in np.flatnonzero(~polar):
        if abs(Y[node] - Yb[node]) <= tol:
            paths = np.array(tree.paths_through(int(node)))
            paths = paths[live_paths[paths]]
            if np.any(np.abs(gap_q[paths]) > tol):
                rep.strict_ok = False
                rep.witnesses.append(("strict", int(node), float(Y[node]), float(Yb[node])))
    if rep.hypotheses_hold and not (rep.conclusion_ok and rep.strict_ok):
        raise TheoremViolation(f"comparison fails with all hypotheses verified: {rep.witnesses[:3]}")
    return rep


@dataclass
class RoundtripReport:
    Y: AdaptedProcess
    target: AdaptedProcess
    max_gap: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.max_gap <= self.tol


def roundtrip_check(tree: ScenarioTree, kernels_base: KernelSet, kernels_bar: KernelSet, phi: PhiMap,
                    Q: RandomVariable, tol: float = 1e-8) -> RoundtripReport:
    """Solve under the base expectation with the derived driver; compare with ``Ebar_t(Q)``."""
    F = driver_from_expectation(tree, kernels_base, kernels_bar, phi)
    sol = solve_bsde(tree, kernels_base, phi, F, Q)
    target = conditional_expectation(tree, kernels_bar, Q).values
    gap = float(np.max(np.abs(sol.Y.values - target.values)))
    if gap > tol:
        raise TheoremViolation(f"BSDE solution differs from the bar expectation by {gap:.3g}")
    return RoundtripReport(sol.Y, target, gap, tol)


def driver_property_check(tree: ScenarioTree, kernels_base: KernelSet, phi: PhiMap, F: Driver,
                          samples: int = 500, seed: int = 0, tol: float | None = None,
                          margin: float = 1e-9, check_essential_min: bool = True) -> PropertyReport:
    """Sample sublinearity, positive homogeneity, the essential-min condition and boundedness of difference quotients."""
    tol = settings.tolerance if tol is None else tol
    rng = np.random.default_rng(seed)
    rep = PropertyReport()
    polar = polar_node_mask(tree, kernels_base)
    M, P = phi.M, tree.branching - phi.M - 1
    lip = 2.0 * float(np.max(np.abs(phi.matrices)))
    for k in range(samples):
        node = int(rng.integers(0, tree.num_internal))
        t = int(tree.node_levels[node])
        z, zp, zb, zpb = rng.uniform(-2, 2, M), rng.uniform(-2, 2, P), rng.uniform(-2, 2, M), rng.uniform(-2, 2, P)
        f = float(F(node, t, 0.0, z, zp))
        fb = float(F(node, t, 0.0, zb, zpb))
        fs = float(F(node, t, 0.0, z + zb, zp + zpb))
        rep.record("driver_subadditivity", k, fs, f + fb, fs <= f + fb + tol, [node])
        lam = float(rng.uniform(0, 3))
        fl = float(F(node, t, 0.0, lam * z, lam * zp))
        rep.record("driver_homogeneity", k, fl, lam * f, abs(fl - lam * f) <= tol * max(1.0, lam), [node])
        if check_essential_min and not polar[node]:
            kids = np.array(tree.children(node))
            live = ~polar[kids]
            lhs = f - fb + g_function(node, zp, phi, kernels_base) - g_function(node, zpb, phi, kernels_base)
            holds, rhs = _essential_min_holds(
                lhs, ((z - zb) @ phi.phi_s[node] + (zp - zpb) @ phi.phi_prime[node])[live], margin, tol)
            rep.record("driver_essential_min", k, lhs, rhs, holds, [node])
        d_z, d_zp = rng.normal(size=M), rng.normal(size=P)
        norm = float(np.sum(np.abs(d_z)) + np.sum(np.abs(d_zp)))
        quotients = [abs(float(F(node, t, 0.0, z + h * d_z, zp + h * d_zp)) - f) / h for h in (1e-2, 1e-4, 1e-6)]
        bound = lip * norm + 1e-6
        rep.record("driver_continuity", k, max(quotients), bound, max(quotients) <= bound, [node])
    return rep
