"""Finite scenario trees and the value types that live on them.

Nodes carry level-order integer ids: the root is 0, level ``t`` holds
``N**t`` consecutive ids, and the children of a node are ``N`` consecutive
ids one level down. Every lookup is arithmetic; nothing is hashed.

A path is identified with its leaf rank ``r`` in ``0 .. N**T - 1``. The
ancestor of path ``r`` at level ``t`` has rank ``r // N**(T - t)``, so
lifting level-``t`` data onto paths is a ``np.repeat``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable

import numpy as np

from .config import settings
from .errors import BudgetExceeded, TreeError


@dataclass(frozen=True)
class ScenarioTree:
    horizon: int
    branching: int

    def __post_init__(self):
        if not isinstance(self.horizon, (int, np.integer)) or self.horizon < 1:
            raise TreeError(f"horizon must be an integer >= 1, got {self.horizon!r}")
        if not isinstance(self.branching, (int, np.integer)) or self.branching < 2:
            raise TreeError(f"branching must be an integer >= 2, got {self.branching!r}")

    @cached_property
    def level_offsets(self) -> np.ndarray:
        """First node id of each level, plus the total node count at the end."""
        sizes = [self.branching**t for t in range(self.horizon + 1)]
        return np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)

    @property
    def num_nodes(self) -> int:
        return int(self.level_offsets[-1])

    @property
    def num_internal(self) -> int:
        return int(self.level_offsets[self.horizon])

    @property
    def num_paths(self) -> int:
        return self.branching**self.horizon

    def level_size(self, t: int) -> int:
        return self.branching**t

    def level_slice(self, t: int) -> slice:
        self._check_level(t)
        return slice(int(self.level_offsets[t]), int(self.level_offsets[t + 1]))

    def level_of(self, node: int) -> int:
        self._check_node(node)
        return int(np.searchsorted(self.level_offsets, node, side="right") - 1)

    def rank_of(self, node: int) -> int:
        return node - int(self.level_offsets[self.level_of(node)])

    def node_id(self, level: int, rank: int) -> int:
        self._check_level(level)
        if not 0 <= rank < self.level_size(level):
            raise TreeError(f"rank {rank} out of range at level {level}")
        return int(self.level_offsets[level]) + rank

    def children(self, node: int) -> range:
        t = self.level_of(node)
        if t == self.horizon:
            raise TreeError(f"node {node} is terminal")
        first = int(self.level_offsets[t + 1]) + self.rank_of(node) * self.branching
        return range(first, first + self.branching)

    def parent(self, node: int) -> int:
        t = self.level_of(node)
        if t == 0:
            raise TreeError("the root has no parent")
        return int(self.level_offsets[t - 1]) + self.rank_of(node) // self.branching

    def is_terminal(self, node: int) -> bool:
        return self.level_of(node) == self.horizon

    @cached_property
    def node_levels(self) -> np.ndarray:
        return np.repeat(np.arange(self.horizon + 1), np.diff(self.level_offsets))

    @cached_property
    def path_nodes(self) -> np.ndarray:
        """``(num_paths, T + 1)`` array; row ``r`` lists the node ids along path ``r``."""
        paths = np.arange(self.num_paths)
        cols = [
            self.level_offsets[t] + paths // self.branching ** (self.horizon - t)
            for t in range(self.horizon + 1)
        ]
        out = np.stack(cols, axis=1)
        out.setflags(write=False)
        return out

    def lift(self, level_values, level: int, to_level: int | None = None) -> np.ndarray:
        """Repeat per-node values at ``level`` onto the nodes of ``to_level`` (default: paths)."""
        to_level = self.horizon if to_level is None else to_level
        if to_level < level:
            raise TreeError("can only lift values downward")
        level_values = np.asarray(level_values, dtype=float)
        if level_values.shape[0] != self.level_size(level):
            raise TreeError(
                f"expected {self.level_size(level)} values at level {level}, got {level_values.shape[0]}"
            )
        return np.repeat(level_values, self.branching ** (to_level - level), axis=0)

    def paths_through(self, node: int) -> range:
        t = self.level_of(node)
        width = self.branching ** (self.horizon - t)
        start = self.rank_of(node) * width
        return range(start, start + width)

    def _check_level(self, t):
        if not 0 <= t <= self.horizon:
            raise TreeError(f"level {t} outside 0..{self.horizon}")

    def _check_node(self, node):
        if not 0 <= node < self.num_nodes:
            raise TreeError(f"node id {node} outside 0..{self.num_nodes - 1}")


def build_tree(T: int, N: int, node_budget: int | None = None) -> ScenarioTree:
    tree = ScenarioTree(T, N)
    budget = settings.node_budget if node_budget is None else node_budget
    # exact integer count; the float level offsets are never built for oversize trees
    count = (N ** (T + 1) - 1) // (N - 1)
    if count > budget:
        raise BudgetExceeded(f"tree with T={T}, N={N} has {count} nodes, budget is {budget}")
    return tree


class _Arithmetic:
    """Pointwise arithmetic shared by the node- and path-indexed value types."""

    tree: ScenarioTree
    values: np.ndarray

    def _wrap(self, values):
        return type(self)(self.tree, values)

    def _other(self, other):
        if isinstance(other, _Arithmetic):
            if type(other) is not type(self) or other.tree != self.tree:
                raise TreeError(f"cannot combine {type(self).__name__} with {type(other).__name__}")
            return other.values
        return other

    def __add__(self, other):
        return self._wrap(self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self._wrap(self.values - self._other(other))

    def __rsub__(self, other):
        return self._wrap(self._other(other) - self.values)

    def __mul__(self, other):
        return self._wrap(self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._wrap(self.values / self._other(other))

    def __neg__(self):
        return self._wrap(-self.values)

    def __abs__(self):
        return self._wrap(np.abs(self.values))

    def __pow__(self, k):
        return self._wrap(self.values**k)

    def positive_part(self):
        return self._wrap(np.maximum(self.values, 0.0))

    def negative_part(self):
        return self._wrap(np.maximum(-self.values, 0.0))

    def apply(self, fn: Callable[[np.ndarray], np.ndarray]):
        return self._wrap(fn(self.values))


def _as_values(values, n, what):
    arr = np.array(values, dtype=float)
    if arr.ndim != 1 or arr.shape[0] != n:
        raise TreeError(f"{what} needs {n} values, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise TreeError(f"{what} has non-finite values")
    arr.setflags(write=False)
    return arr


class RandomVariable(_Arithmetic):
    """One real per path (equivalently per terminal node)."""

    __slots__ = ("tree", "values")

    def __init__(self, tree: ScenarioTree, values):
        self.tree = tree
        self.values = _as_values(values, tree.num_paths, "RandomVariable")

    @classmethod
    def constant(cls, tree, c: float):
        return cls(tree, np.full(tree.num_paths, float(c)))

    @classmethod
    def indicator(cls, tree, paths: Iterable[int]):
        v = np.zeros(tree.num_paths)
        v[list(paths)] = 1.0
        return cls(tree, v)

    def __repr__(self):
        return f"RandomVariable({self.values.tolist()})"


class AdaptedProcess(_Arithmetic):
    """One real per node for levels 0..T; the value at a level-``t`` node is ``X_t``."""

    __slots__ = ("tree", "values")

    def __init__(self, tree: ScenarioTree, values):
        self.tree = tree
        self.values = _as_values(values, tree.num_nodes, "AdaptedProcess")

    @classmethod
    def from_levels(cls, tree, level_values):
        """Build from a list of per-level arrays (length ``N**t`` at level ``t``)."""
        if len(level_values) != tree.horizon + 1:
            raise TreeError(f"need {tree.horizon + 1} levels, got {len(level_values)}")
        parts = [np.asarray(v, dtype=float).reshape(-1) for v in level_values]
        return cls(tree, np.concatenate(parts))

    @classmethod
    def from_increments(cls, tree, x0: float, increments):
        """Start at ``x0`` and add ``increments[i]`` when moving to child ``i``."""
        inc = np.asarray(increments, dtype=float)
        if inc.shape != (tree.branching,):
            raise TreeError("increments need one entry per child")
        vals = [np.array([float(x0)])]
        for t in range(1, tree.horizon + 1):
            vals.append((vals[-1][:, None] + inc[None, :]).reshape(-1))
        return cls.from_levels(tree, vals)

    def at_level(self, t: int) -> np.ndarray:
        return self.values[self.tree.level_slice(t)]

    def time_value(self, t: int) -> RandomVariable:
        """``X_t`` viewed as a random variable on paths."""
        return RandomVariable(self.tree, self.tree.lift(self.at_level(t), t))

    def terminal(self) -> RandomVariable:
        return self.time_value(self.tree.horizon)

    def path_values(self) -> np.ndarray:
        """``(num_paths, T + 1)`` array of the process along every path."""
        return self.values[self.tree.path_nodes]

    def __repr__(self):
        return f"AdaptedProcess({self.values.tolist()})"


class PredictableProcess(_Arithmetic):
    """Values for times 1..T; the level-``t`` node carries the time-``t+1`` value."""

    __slots__ = ("tree", "values")

    def __init__(self, tree: ScenarioTree, values):
        self.tree = tree
        self.values = _as_values(values, tree.num_internal, "PredictableProcess")

    def as_adapted(self) -> AdaptedProcess:
        """Place each value at the time it refers to; time 0 gets 0."""
        out = np.zeros(self.tree.num_nodes)
        out[1:] = np.repeat(self.values, self.tree.branching)
        return AdaptedProcess(self.tree, out)

    def __repr__(self):
        return f"PredictableProcess({self.values.tolist()})"


class StoppingTime:
    """An antichain of nodes hit exactly once by every root-to-leaf path."""

    __slots__ = ("tree", "nodes", "_path_nodes")

    def __init__(self, tree: ScenarioTree, nodes: Iterable[int]):
        self.tree = tree
        nodes = frozenset(int(n) for n in nodes)
        for n in nodes:
            tree._check_node(n)
        tagged = np.zeros(tree.num_nodes, dtype=bool)
        tagged[list(nodes)] = True
        hits = tagged[tree.path_nodes].sum(axis=1)
        if not np.all(hits == 1):
            bad = np.flatnonzero(hits != 1)
            raise TreeError(
                f"not a stopping time: path {int(bad[0])} meets {int(hits[bad[0]])} tagged nodes"
            )
        self.nodes = nodes
        pn = tree.path_nodes[tagged[tree.path_nodes]]
        pn.setflags(write=False)
        self._path_nodes = pn

    @classmethod
    def constant(cls, tree, t: int):
        return cls(tree, range(*tree.level_slice(t).indices(tree.num_nodes)))

    @classmethod
    def first_hitting(cls, process: AdaptedProcess, hit: Callable[[np.ndarray], np.ndarray], cap: int | None = None):
        """First time ``hit(X_t)`` is true on each path, stopped at ``cap`` (default ``T``)."""
        tree = process.tree
        cap = tree.horizon if cap is None else cap
        hits = np.asarray(hit(process.values), dtype=bool)
        chosen = np.zeros(tree.num_nodes, dtype=bool)
        below = np.zeros(tree.num_nodes, dtype=bool)  # some strict ancestor is chosen
        for t in range(cap + 1):
            cur = tree.level_slice(t)
            if t > 0:
                prev = tree.level_slice(t - 1)
                below[cur] = np.repeat(below[prev] | chosen[prev], tree.branching)
            chosen[cur] = ~below[cur] & (hits[cur] | (t == cap))
        return cls(tree, np.flatnonzero(chosen))

    def node_per_path(self) -> np.ndarray:
        return self._path_nodes

    def level_per_path(self) -> np.ndarray:
        return self.tree.node_levels[self._path_nodes]

    def precedes(self, other: "StoppingTime") -> bool:
        """True when ``self <= other`` on every path."""
        return bool(np.all(self.level_per_path() <= other.level_per_path()))

    def __eq__(self, other):
        return isinstance(other, StoppingTime) and other.tree == self.tree and other.nodes == self.nodes

    def __hash__(self):
        return hash((self.tree, self.nodes))

    def __repr__(self):
        return f"StoppingTime({sorted(self.nodes)})"


def stopped_process(X: AdaptedProcess, S: StoppingTime) -> AdaptedProcess:
    """``X^S_t = X_{t ^ S}``: each path is frozen from its tagged node on."""
    if S.tree != X.tree:
        raise TreeError("process and stopping time live on different trees")
    tree = X.tree
    out = X.values.copy()
    frozen = np.zeros(tree.num_nodes, dtype=bool)
    tagged = np.zeros(tree.num_nodes, dtype=bool)
    tagged[list(S.nodes)] = True
    for t in range(1, tree.horizon + 1):
        prev, cur = tree.level_slice(t - 1), tree.level_slice(t)
        carry = frozen[prev] | tagged[prev]
        frozen[cur] = np.repeat(carry, tree.branching)
        parent_vals = np.repeat(out[prev], tree.branching)
        out[cur] = np.where(frozen[cur], parent_vals, out[cur])
    return AdaptedProcess(tree, out)


def stopped_value(X: AdaptedProcess, S: StoppingTime) -> RandomVariable:
    """``X_S`` as a random variable on paths."""
    return RandomVariable(X.tree, X.values[S.node_per_path()])


def count_crossings(path_values, alpha: float, beta: float) -> tuple[int, int]:
    """Completed up- and downcrossings of ``[alpha, beta]`` by one sequence.

    An upcrossing starts at a value ``<= alpha`` and completes at the next
    later value ``>= beta``; a downcrossing is the mirror image.
    """
    if not alpha < beta:
        raise ValueError(f"need alpha < beta, got [{alpha}, {beta}]")
    seq = list(path_values)
    if not seq:
        raise ValueError("empty sequence")

    up = 0
    armed = False
    for x in seq:
        if not armed and x <= alpha:
            armed = True
        elif armed and x >= beta:
            up += 1
            armed = False
    down = 0
    armed = False
    for x in seq:
        if not armed and x >= beta:
            armed = True
        elif armed and x <= alpha:
            down += 1
            armed = False
    return up, down
