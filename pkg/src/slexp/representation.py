"""Finite-state martingale representation.

Write ``dX_{t+1}`` for the unit vector of the branch taken at time ``t``.
Any adapted process has increments ``Z_t . dX_{t+1}`` (semimartingale
representation). A per-node invertible matrix ``Phi = [1 | phi_s | phi']``
re-expresses ``Z_t`` in three coordinates: a drift ``Z^wedge``, loadings
``Z^s`` on the symmetric increments ``M = phi_s dX`` and loadings ``Z'``
on the remaining increments ``N = phi' dX``. For a martingale the drift is
pinned to ``-G_t(Z')`` where ``G_t(z) = E_t(z N_{t+1})``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ambiguity import KernelSet, level_sup, sup_step
from .config import settings
from .errors import PreconditionError, TheoremViolation, TreeError
from .martingale import Kind, classify
from .tree import AdaptedProcess, ScenarioTree


class PhiMap:
    """Per-node change of coordinates ``[1 | phi_s | phi']`` with cached inverses.

    ``matrices`` may be a single ``(N, N)`` matrix, one per level
    ``(T, N, N)``, or one per non-terminal node ``(num_internal, N, N)``.
    Row 0 must be all ones; rows ``1..M`` are the symmetric block.
    """

    def __init__(self, tree: ScenarioTree, M: int, matrices, cond_bound: float = 1e8):
        N = tree.branching
        if not 0 <= M <= N - 1:
            raise PreconditionError(f"M must lie in [0, {N - 1}], got {M}")
        arr = np.asarray(matrices, dtype=float)
        if arr.shape == (N, N):
            arr = np.broadcast_to(arr, (tree.num_internal, N, N))
        elif arr.shape == (tree.horizon, N, N):
            arr = np.repeat(arr, [tree.level_size(t) for t in range(tree.horizon)], axis=0)
        elif arr.shape != (tree.num_internal, N, N):
            raise PreconditionError(f"cannot read Phi matrices of shape {arr.shape}")
        arr = np.array(arr)
        if not np.all(arr[:, 0, :] == 1.0):
            raise PreconditionError("first row of every Phi matrix must be all ones")
        cond = np.linalg.cond(arr)
        bad = np.flatnonzero(~(cond <= cond_bound))
        if bad.size:
            raise PreconditionError(f"Phi at node {int(bad[0])} is singular or ill-conditioned (cond={cond[bad[0]]:.3g})")
        arr.setflags(write=False)
        inv = np.linalg.inv(arr)
        inv.setflags(write=False)
        self.tree = tree
        self.M = M
        self.matrices = arr
        self.inverses = inv

    @property
    def phi_s(self) -> np.ndarray:
        """``(num_internal, M, N)``."""
        return self.matrices[:, 1 : self.M + 1, :]

    @property
    def phi_prime(self) -> np.ndarray:
        """``(num_internal, N - M - 1, N)``."""
        return self.matrices[:, self.M + 1 :, :]

    def symmetric_rows_ok(self, kernels: KernelSet, tol: float | None = None) -> bool:
        """Each symmetric row has zero upper and lower one-step expectation at its node."""
        tol = settings.tolerance if tol is None else tol
        for node in range(self.tree.num_internal):
            for row in self.phi_s[node]:
                hi, _ = sup_step(node, row, kernels)
                lo = -sup_step(node, -row, kernels)[0]
                if abs(hi) > tol or abs(lo) > tol:
                    return False
        return True

    def require_symmetric(self, kernels: KernelSet, tol: float | None = None):
        if not self.symmetric_rows_ok(kernels, tol):
            raise PreconditionError("symmetric block of Phi does not generate a symmetric martingale")


def trinomial_phi(tree: ScenarioTree) -> PhiMap:
    return PhiMap(tree, 1, [[1, 1, 1], [1, 0, -1], [1, 0, 1]])


def semimartingale_rep(tree: ScenarioTree, X: AdaptedProcess) -> np.ndarray:
    """``Z[n, i] = X(child_i(n)) - X(n)``, shape ``(num_internal, N)``."""
    if X.tree != tree:
        raise TreeError("process lives on a different tree")
    Z = np.empty((tree.num_internal, tree.branching))
    for t in range(tree.horizon):
        sl = tree.level_slice(t)
        Z[sl] = X.at_level(t + 1).reshape(-1, tree.branching) - X.values[sl][:, None]
    return Z


def reconstruct(tree: ScenarioTree, x0: float, Z: np.ndarray) -> AdaptedProcess:
    vals = [np.array([float(x0)])]
    for t in range(tree.horizon):
        vals.append((vals[-1][:, None] + Z[tree.level_slice(t)]).reshape(-1))
    return AdaptedProcess.from_levels(tree, vals)


def g_function(node: int, z_prime, phi: PhiMap, kernels: KernelSet) -> float:
    """``G_t(z') = E_t(z' N_{t+1})`` at one node."""
    z_prime = np.asarray(z_prime, dtype=float).reshape(-1)
    if z_prime.shape[0] != phi.tree.branching - phi.M - 1:
        raise PreconditionError("z' has the wrong dimension")
    return sup_step(node, z_prime @ phi.phi_prime[node], kernels)[0]


def g_values(phi: PhiMap, kernels: KernelSet, z_prime: np.ndarray) -> np.ndarray:
    """``G`` at every non-terminal node for per-node ``z'`` rows, shape ``(num_internal, N-M-1)``."""
    tree = phi.tree
    child = np.einsum("nk,nki->ni", z_prime, phi.phi_prime)
    out = np.empty(tree.num_internal)
    for t in range(tree.horizon):
        sl = tree.level_slice(t)
        out[sl], _ = level_sup(kernels, t, child[sl].reshape(-1))
    return out


@dataclass(frozen=True)
class RepresentationTriple:
    """Per non-terminal node coordinates ``Z^* Phi^{-1} = [Z^wedge | Z^s | Z']``."""

    Z_wedge: np.ndarray  # (num_internal,)
    Z_s: np.ndarray  # (num_internal, M)
    Z_prime: np.ndarray  # (num_internal, N - M - 1)

    def edge_increments(self, phi: PhiMap, drift=None) -> np.ndarray:
        """Per-edge ``drift + Z^s phi_s e_i + Z' phi' e_i``, shape ``(num_internal, N)``.

        ``drift`` defaults to ``Z^wedge``.
        """
        drift = self.Z_wedge if drift is None else np.asarray(drift)
        return (drift[:, None]
                + np.einsum("nm,nmi->ni", self.Z_s, phi.phi_s)
                + np.einsum("nk,nki->ni", self.Z_prime, phi.phi_prime))


def coordinates(Z: np.ndarray, phi: PhiMap) -> RepresentationTriple:
    """Split semimartingale loadings ``Z`` into ``Phi`` coordinates (no martingale assumption)."""
    W = np.einsum("ni,nij->nj", Z, phi.inverses)
    return RepresentationTriple(W[:, 0], W[:, 1 : phi.M + 1], W[:, phi.M + 1 :])


def increment_decomposition(tree: ScenarioTree, X: AdaptedProcess, phi: PhiMap) -> RepresentationTriple:
    return coordinates(semimartingale_rep(tree, X), phi)


def martingale_rep(tree: ScenarioTree, kernels: KernelSet, X: AdaptedProcess, phi: PhiMap,
                   tol: float | None = None) -> RepresentationTriple:
    """Unique ``(Z^s, Z')`` with ``X_{t+1} = X_t + Z^s M + Z' N - G_t(Z')`` on every edge."""
    tol = settings.tolerance if tol is None else tol
    if phi.tree != tree:
        raise TreeError("Phi lives on a different tree")
    if classify(tree, kernels, X, tol) is not Kind.MARTINGALE:
        raise PreconditionError("X is not a martingale")
    phi.require_symmetric(kernels, tol)
    Z = semimartingale_rep(tree, X)
    triple = coordinates(Z, phi)
    G = g_values(phi, kernels, triple.Z_prime)
    gap = np.abs(triple.Z_wedge + G)
    if np.any(gap > tol):
        n = int(np.argmax(gap))
        raise TheoremViolation(f"drift coordinate {triple.Z_wedge[n]!r} != -G = {-G[n]!r} at node {n}")
    resid = np.abs(triple.edge_increments(phi, -G) - Z)
    if np.any(resid > tol):
        raise TheoremViolation(f"representation fails to reconstruct an edge (residual {resid.max():.3g})")
    return triple
