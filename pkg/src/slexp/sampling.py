"""Random instances for property tests, the acceptance suite and ``verify``.

Everything takes an explicit ``numpy.random.Generator`` so results are
reproducible from a seed.
"""

from __future__ import annotations

import numpy as np

from .ambiguity import KernelSet
from .martingale import doob_decomposition
from .representation import PhiMap
from .tree import AdaptedProcess, PredictableProcess, RandomVariable, ScenarioTree, StoppingTime, build_tree


def random_tree(rng, branching=(2, 3), horizons=(1, 2, 3, 4)) -> ScenarioTree:
    return build_tree(int(rng.choice(horizons)), int(rng.choice(branching)))


def random_support(tree: ScenarioTree, rng, polar_prob: float = 0.0) -> np.ndarray:
    """``(num_internal, N)`` mask of edges that may carry mass; each node keeps at least one."""
    N = tree.branching
    mask = rng.random((tree.num_internal, N)) >= polar_prob
    for node in np.flatnonzero(~mask.any(axis=1)):
        mask[node, rng.integers(N)] = True
    return mask


def _vertices(rng, support, count):
    out = []
    for _ in range(count):
        v = np.zeros(support.shape[0])
        v[support] = rng.dirichlet(np.ones(int(support.sum())))
        out.append(v)
    return out


def random_kernels(tree: ScenarioTree, rng, max_vertices: int = 3, polar_prob: float = 0.0,
                   measure_cap: int | None = None, support: np.ndarray | None = None) -> KernelSet:
    """Random vertex lists with 1..``max_vertices`` vertices per node.

    ``measure_cap`` bounds the number of vertex selections (for the brute-force
    oracle) by collapsing randomly chosen nodes to a single vertex.
    """
    if support is None:
        support = random_support(tree, rng, polar_prob)
    counts = rng.integers(1, max_vertices + 1, tree.num_internal)
    if measure_cap is not None:
        order = rng.permutation(tree.num_internal)
        i = 0
        while np.prod(counts.astype(float)) > measure_cap:
            counts[order[i]] = 1
            i += 1
    return KernelSet(tree, [_vertices(rng, support[n], int(counts[n])) for n in range(tree.num_internal)])


def random_kernel_pair(tree: ScenarioTree, rng, max_vertices: int = 3, polar_prob: float = 0.2):
    """Base and bar kernels with the same null edges, hence the same polar sets."""
    support = random_support(tree, rng, polar_prob)
    return (random_kernels(tree, rng, max_vertices, support=support),
            random_kernels(tree, rng, max_vertices, support=support))


def random_variable(tree: ScenarioTree, rng, scale: float = 1.0) -> RandomVariable:
    return RandomVariable(tree, rng.uniform(-scale, scale, tree.num_paths))


def random_process(tree: ScenarioTree, rng, scale: float = 1.0) -> AdaptedProcess:
    return AdaptedProcess(tree, rng.uniform(-scale, scale, tree.num_nodes))


def random_martingale(tree, kernels, rng) -> AdaptedProcess:
    return doob_decomposition(tree, kernels, random_process(tree, rng))[0]


def random_drift(tree: ScenarioTree, rng, sign: float = 1.0) -> AdaptedProcess:
    """Predictable, monotone along paths (nondecreasing for ``sign > 0``), zero at the root."""
    steps = rng.uniform(0, 1, tree.num_internal) * (rng.random(tree.num_internal) < 0.7)
    acc = np.empty(tree.num_internal)
    acc[0] = steps[0]
    for t in range(1, tree.horizon):
        sl = tree.level_slice(t)
        acc[sl] = np.repeat(acc[tree.level_slice(t - 1)], tree.branching) + steps[sl]
    return PredictableProcess(tree, sign * acc).as_adapted()


def random_submartingale(tree, kernels, rng) -> AdaptedProcess:
    return random_martingale(tree, kernels, rng) + random_drift(tree, rng)


def random_supermartingale(tree, kernels, rng) -> AdaptedProcess:
    return random_martingale(tree, kernels, rng) + random_drift(tree, rng, -1.0)


def _from_levels(tree, levels) -> StoppingTime:
    return StoppingTime(tree, tree.path_nodes[np.arange(tree.num_paths), levels])


def random_stopping_time(tree: ScenarioTree, rng, stop_prob: float = 0.4) -> StoppingTime:
    """Each live node stops with probability ``stop_prob``; everything stops at the horizon."""
    stop = rng.random(tree.num_nodes) < stop_prob
    stop[tree.level_slice(tree.horizon)] = True
    hit = stop[tree.path_nodes]
    return _from_levels(tree, np.argmax(hit, axis=1))


def random_stopping_pair(tree: ScenarioTree, rng) -> tuple[StoppingTime, StoppingTime]:
    """``(S, T')`` with ``S <= T'`` on every path (``S`` is a minimum of two stopping times)."""
    T2 = random_stopping_time(tree, rng)
    other = random_stopping_time(tree, rng)
    return _from_levels(tree, np.minimum(other.level_per_path(), T2.level_per_path())), T2


def _null_space(V, tol=1e-10):
    _, s, vt = np.linalg.svd(V)
    rank = int(np.sum(s > tol * max(1.0, s.max(initial=0.0))))
    return vt[rank:]


def random_phi(tree: ScenarioTree, kernels: KernelSet, rng, M: int | None = None,
               cond_bound: float = 1e6, attempts: int = 50) -> PhiMap:
    """A valid ``Phi`` whose symmetric rows are orthogonal to every vertex at their node.

    ``M`` defaults to a random size no larger than the smallest such null space.
    """
    N = tree.branching
    nulls = [_null_space(kernels.vertices_at(n)) for n in range(tree.num_internal)]
    m_max = min(min(ns.shape[0] for ns in nulls), N - 1)
    if M is None:
        M = int(rng.integers(0, m_max + 1))
    if M > m_max:
        raise ValueError(f"only {m_max} symmetric directions are available")
    mats = np.empty((tree.num_internal, N, N))
    for n, ns in enumerate(nulls):
        for _ in range(attempts):
            sym = rng.normal(size=(M, ns.shape[0])) @ ns if M else np.zeros((0, N))
            mat = np.vstack([np.ones(N), sym, rng.normal(size=(N - M - 1, N))])
            if np.linalg.cond(mat) <= cond_bound:
                break
        else:
            raise RuntimeError(f"could not draw a well-conditioned Phi at node {n}")
        mats[n] = mat
    return PhiMap(tree, M, mats)
