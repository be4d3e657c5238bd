"""Per-node ambiguity sets of transition kernels.

Each non-terminal node carries a finite list of probability vectors over its
children (the vertices of a polytope). The family of measures is every
per-node choice of vertex, which is rectangular by construction, so the
backward recursion and the global supremum agree. ``enumerate_measures``
exists only to let tests confirm that.

Vertex lists are stored padded to a common length with copies of vertex 0,
so vectorised maxima and lowest-index argmaxima are unchanged by padding.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .config import settings
from .errors import BudgetExceeded, KernelError
from .tree import RandomVariable, ScenarioTree

_SUM_TOL = 1e-12


def _normalise(vertex, N, where):
    v = np.asarray(vertex, dtype=float).reshape(-1)
    if v.shape[0] != N:
        raise KernelError(f"{where}: vertex has {v.shape[0]} entries, expected {N}")
    if not np.all(np.isfinite(v)) or np.any(v < -_SUM_TOL):
        raise KernelError(f"{where}: vertex {v.tolist()} has negative or non-finite entries")
    v = np.clip(v, 0.0, None)
    s = v.sum()
    if abs(s - 1.0) > _SUM_TOL:
        raise KernelError(f"{where}: vertex {v.tolist()} sums to {s!r}, not 1")
    return v / s


class KernelSet:
    """Vertex lists of one-step transition probabilities for every non-terminal node."""

    def __init__(self, tree: ScenarioTree, per_node: Sequence[Sequence[Sequence[float]]], polar_tolerance: float = 0.0):
        if len(per_node) != tree.num_internal:
            raise KernelError(f"need vertex lists for {tree.num_internal} nodes, got {len(per_node)}")
        N = tree.branching
        counts = np.array([len(vs) for vs in per_node], dtype=np.int64)
        if np.any(counts == 0):
            raise KernelError(f"empty vertex list at node {int(np.flatnonzero(counts == 0)[0])}")
        width = int(counts.max())
        verts = np.empty((tree.num_internal, width, N))
        for node, vs in enumerate(per_node):
            rows = [_normalise(v, N, f"node {node}") for v in vs]
            rows += [rows[0]] * (width - len(rows))
            verts[node] = rows
        verts.setflags(write=False)
        self.tree = tree
        self.vertices = verts
        self.counts = counts
        self.polar_tolerance = float(polar_tolerance)

    @classmethod
    def shared(cls, tree, vertices, polar_tolerance=0.0):
        return cls(tree, [vertices] * tree.num_internal, polar_tolerance)

    @classmethod
    def per_level(cls, tree, level_vertices, polar_tolerance=0.0):
        if len(level_vertices) != tree.horizon:
            raise KernelError(f"need {tree.horizon} level vertex lists, got {len(level_vertices)}")
        per_node = []
        for t in range(tree.horizon):
            per_node += [level_vertices[t]] * tree.level_size(t)
        return cls(tree, per_node, polar_tolerance)

    def vertices_at(self, node: int) -> np.ndarray:
        return self.vertices[node, : self.counts[node]]

    def is_linear(self, tol: float = 1e-12) -> bool:
        """Every node's vertices coincide, so the expectation is linear."""
        spread = self.vertices.max(axis=1) - self.vertices.min(axis=1)
        return bool(np.all(spread <= tol))

    def measure_count(self) -> int:
        return math.prod(int(c) for c in self.counts)


@dataclass(frozen=True)
class TrinomialSpec:
    """Trinomial ambiguity: up/down probability ``p`` ranges over ``[eps, 1/2 - eps]``."""

    epsilon: float
    horizon: int

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 0.25:
            raise KernelError(f"epsilon must lie in [0, 1/4], got {self.epsilon}")

    def tree(self) -> ScenarioTree:
        from .tree import build_tree

        return build_tree(self.horizon, 3)

    def kernels(self, tree: ScenarioTree | None = None) -> KernelSet:
        return trinomial_kernels(tree or self.tree(), self.epsilon)


def trinomial_kernels(tree: ScenarioTree, epsilon: float) -> KernelSet:
    if tree.branching != 3:
        raise KernelError("the trinomial model needs branching 3")
    if not 0.0 <= epsilon <= 0.25:
        raise KernelError(f"epsilon must lie in [0, 1/4], got {epsilon}")
    lo, hi = epsilon, 0.5 - epsilon
    return KernelSet.shared(tree, [(lo, 1 - 2 * lo, lo), (hi, 1 - 2 * hi, hi)])


def _anchored_dot(verts, child):
    """``verts @ child`` written as ``c_0 + sum_i v_i (c_i - c_0)``.

    Exact on constant children and sign-symmetric; the summation order is
    fixed so results never depend on how rows are chunked.
    ``verts``: (rows, V, N); ``child``: (rows, N) -> (rows, V).
    """
    base = child[:, :1]
    acc = np.zeros(verts.shape[:2])
    for i in range(1, child.shape[1]):
        acc = acc + verts[:, :, i] * (child[:, i : i + 1] - base)
    return base + acc


def level_sup(kernels: KernelSet, t: int, child_values, workers: int | None = None):
    """One-step sup at every level-``t`` node.

    ``child_values`` holds the level-``t+1`` values, shape ``(N**(t+1),)``.
    Returns ``(values, argmax)`` with one entry per level-``t`` node.
    """
    tree = kernels.tree
    sl = tree.level_slice(t)
    child = np.asarray(child_values, dtype=float).reshape(-1, tree.branching)
    verts = kernels.vertices[sl]
    workers = settings.workers if workers is None else workers
    rows = child.shape[0]
    if workers <= 1 or rows < 2 * workers:
        dots = _anchored_dot(verts, child)
    else:
        bounds = np.linspace(0, rows, workers + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda ab: _anchored_dot(verts[ab[0] : ab[1]], child[ab[0] : ab[1]]),
                                  zip(bounds[:-1], bounds[1:])))
        dots = np.concatenate(parts, axis=0)
    idx = np.argmax(dots, axis=1)
    return dots[np.arange(rows), idx], idx


def sup_step(node: int, child_values, kernels: KernelSet) -> tuple[float, int]:
    """Largest kernel-weighted average of the children, and the lowest maximising vertex."""
    tree = kernels.tree
    if tree.is_terminal(node):
        raise KernelError(f"node {node} is terminal")
    cv = np.asarray(child_values, dtype=float).reshape(1, -1)
    if cv.shape[1] != tree.branching or not np.all(np.isfinite(cv)):
        raise KernelError("child_values must be N finite reals")
    dots = _anchored_dot(kernels.vertices_at(node)[None], cv)[0]
    k = int(np.argmax(dots))
    return float(dots[k]), k


def inf_step(node: int, child_values, kernels: KernelSet) -> tuple[float, int]:
    value, k = sup_step(node, -np.asarray(child_values, dtype=float), kernels)
    return -value, k


def edge_polar_mask(kernels: KernelSet) -> np.ndarray:
    """``(num_internal, N)``: the edge has probability ``<= eta`` under every vertex."""
    return kernels.vertices.max(axis=1) <= kernels.polar_tolerance


def polar_node_mask(tree: ScenarioTree, kernels: KernelSet) -> np.ndarray:
    """Nodes reached only through some polar edge (capacity zero)."""
    edges = edge_polar_mask(kernels)
    polar = np.zeros(tree.num_nodes, dtype=bool)
    for t in range(tree.horizon):
        sl = tree.level_slice(t)
        child = tree.level_slice(t + 1)
        polar[child] = (polar[sl][:, None] | edges[sl]).reshape(-1)
    return polar


def polar_paths(tree: ScenarioTree, kernels: KernelSet) -> set[int]:
    leaves = polar_node_mask(tree, kernels)[tree.level_slice(tree.horizon)]
    return set(int(p) for p in np.flatnonzero(leaves))


@dataclass(frozen=True)
class EnumeratedMeasure:
    selection: tuple[int, ...]
    path_probabilities: np.ndarray

    def expectation(self, X: RandomVariable) -> float:
        return float(self.path_probabilities @ X.values)


def _check_budget(kernels, budget):
    budget = settings.oracle_budget if budget is None else budget
    count = kernels.measure_count()
    if count > budget:
        raise BudgetExceeded(f"{count} vertex selections exceed the oracle budget {budget}")
    return count


def iter_measure_blocks(tree: ScenarioTree, kernels: KernelSet, block: int = 4096,
                        budget: int | None = None) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(selections, path_probabilities)`` for consecutive blocks of measures."""
    total = _check_budget(kernels, budget)
    counts = kernels.counts
    # mixed-radix place values; node 0 is the most significant digit
    place = np.ones(tree.num_internal, dtype=np.int64)
    for n in range(tree.num_internal - 2, -1, -1):
        place[n] = place[n + 1] * counts[n + 1]
    for start in range(0, total, block):
        k = np.arange(start, min(start + block, total), dtype=np.int64)
        sel = (k[:, None] // place[None, :]) % counts[None, :]
        prob = np.ones((k.shape[0], 1))
        for t in range(tree.horizon):
            sl = tree.level_slice(t)
            nodes = np.arange(sl.start, sl.stop)
            chosen = kernels.vertices[nodes[None, :], sel[:, sl]]  # (b, n_t, N)
            prob = (prob[:, :, None] * chosen).reshape(k.shape[0], -1)
        yield sel, prob


def enumerate_measures(tree: ScenarioTree, kernels: KernelSet, budget: int | None = None) -> list[EnumeratedMeasure]:
    out = []
    for sel, prob in iter_measure_blocks(tree, kernels, budget=budget):
        for s, p in zip(sel, prob):
            p.setflags(write=False)
            out.append(EnumeratedMeasure(tuple(int(x) for x in s), p))
    return out
