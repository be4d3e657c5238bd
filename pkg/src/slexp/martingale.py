"""Martingale theory under a sublinear expectation on a finite tree.

All stopping times here are bounded by the horizon, so the bounded and the
general optional stopping statements coincide.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .ambiguity import KernelSet, polar_node_mask
from .config import settings
from .errors import PreconditionError, TheoremViolation, TreeError
from .expectation import conditional_expectation, one_step_expectation
from .tree import (
    AdaptedProcess,
    PredictableProcess,
    RandomVariable,
    ScenarioTree,
    StoppingTime,
    stopped_process,
    stopped_value,
)


class Kind(str, enum.Enum):
    MARTINGALE = "martingale"
    SUBMARTINGALE = "submartingale"
    SUPERMARTINGALE = "supermartingale"
    NONE = "none"


def _drift(tree, kernels, X):
    """``E_t(X_{t+1}) - X_t`` at every non-terminal node."""
    if X.tree != tree or kernels.tree != tree:
        raise TreeError("process, kernels and tree disagree")
    return one_step_expectation(kernels, X) - X.values[: tree.num_internal]


def classify(tree: ScenarioTree, kernels: KernelSet, X: AdaptedProcess, tol: float | None = None) -> Kind:
    """Compare ``X_t`` with ``E_t(X_{t+1})`` at every node.

    One-step relations extend to all ``s <= t`` by the tower property and
    monotonicity, so this is the full classification.
    """
    tol = settings.tolerance if tol is None else tol
    d = _drift(tree, kernels, X)
    up, down = bool(np.all(d >= -tol)), bool(np.all(d <= tol))
    if up and down:
        return Kind.MARTINGALE
    if up:
        return Kind.SUBMARTINGALE
    if down:
        return Kind.SUPERMARTINGALE
    return Kind.NONE


def compensator(tree: ScenarioTree, kernels: KernelSet, X: AdaptedProcess) -> PredictableProcess:
    """The predictable ``Xhat`` with ``Xhat_0 = 0`` making ``X - Xhat`` a martingale.

    Built one step at a time: ``Xhat_{t+1} = E_t(X_{t+1}) - X_t + Xhat_t``.
    """
    d = _drift(tree, kernels, X)
    out = np.empty(tree.num_internal)
    out[0] = d[0]
    for t in range(1, tree.horizon):
        sl = tree.level_slice(t)
        prev = tree.level_slice(t - 1)
        out[sl] = np.repeat(out[prev], tree.branching) + d[sl]
    return PredictableProcess(tree, out)


def doob_decomposition(tree, kernels, X: AdaptedProcess) -> tuple[AdaptedProcess, AdaptedProcess]:
    """``(X - Xhat, Xhat)`` with the compensator placed at the times it refers to."""
    hat = compensator(tree, kernels, X).as_adapted()
    return X - hat, hat


def compensator_monotonicity(comp: PredictableProcess, tol: float | None = None) -> str:
    """``'nondecreasing'``, ``'nonincreasing'``, ``'constant'`` or ``'neither'`` along every path."""
    tol = settings.tolerance if tol is None else tol
    inc = np.diff(comp.as_adapted().path_values(), axis=1)
    up, down = bool(np.all(inc >= -tol)), bool(np.all(inc <= tol))
    if up and down:
        return "constant"
    return "nondecreasing" if up else "nonincreasing" if down else "neither"


def _symmetric_rv(tree, kernels, X: RandomVariable, tol):
    a = conditional_expectation(tree, kernels, X).values.values
    b = conditional_expectation(tree, kernels, -X).values.values
    return bool(np.all(np.abs(a + b) <= tol))


def is_symmetric(tree: ScenarioTree, kernels: KernelSet, X, tol: float | None = None) -> bool:
    """``E_t(X) = -E_t(-X)`` at every node; for a process, for every ``X_t``."""
    tol = settings.tolerance if tol is None else tol
    if isinstance(X, RandomVariable):
        return _symmetric_rv(tree, kernels, X, tol)
    if isinstance(X, AdaptedProcess):
        return all(_symmetric_rv(tree, kernels, X.time_value(t), tol) for t in range(tree.horizon + 1))
    raise TypeError("X must be a RandomVariable or an AdaptedProcess")


def symmetric_step_criterion(tree, kernels, X: AdaptedProcess, tol: float | None = None) -> bool:
    """``X_t = -E_t(-X_{t+1})`` at every node; for a martingale this is equivalent to symmetry."""
    tol = settings.tolerance if tol is None else tol
    lower = -one_step_expectation(kernels, -X)
    return bool(np.all(np.abs(lower - X.values[: tree.num_internal]) <= tol))


def martingale_transform(tree: ScenarioTree, kernels: KernelSet, Z: AdaptedProcess, X: AdaptedProcess,
                         tol: float | None = None) -> AdaptedProcess:
    """``Y_t = sum_{u<t} Z_u (X_{u+1} - X_u)``, a symmetric martingale when ``X`` is one."""
    if classify(tree, kernels, X, tol) is not Kind.MARTINGALE or not is_symmetric(tree, kernels, X, tol):
        raise PreconditionError("integrator must be a symmetric martingale")
    out = np.zeros(tree.num_nodes)
    for t in range(tree.horizon):
        sl, nxt = tree.level_slice(t), tree.level_slice(t + 1)
        step = np.repeat(Z.values[sl], tree.branching) * (X.values[nxt] - np.repeat(X.values[sl], tree.branching))
        out[nxt] = np.repeat(out[sl], tree.branching) + step
    Y = AdaptedProcess(tree, out)
    if classify(tree, kernels, Y, tol) is not Kind.MARTINGALE or not is_symmetric(tree, kernels, Y, tol):
        raise TheoremViolation("transform of a symmetric martingale is not a symmetric martingale")
    return Y


def conditional_at_stopping_time(tree: ScenarioTree, kernels: KernelSet, X: RandomVariable,
                                 S: StoppingTime) -> np.ndarray:
    """Per path, ``E_{S(w)}(X)`` read at the node where the path meets ``S``."""
    if S.tree != tree:
        raise TreeError("stopping time lives on a different tree")
    vals = conditional_expectation(tree, kernels, X).values.values
    return vals[S.node_per_path()]


@dataclass
class OptionalStoppingReport:
    kind: Kind
    nodes: np.ndarray  # non-polar nodes of S
    stopped: np.ndarray  # X_S at those nodes
    conditional: np.ndarray  # E_S(X_T') at those nodes
    ok: bool

    @property
    def max_gap(self) -> float:
        return float(np.max(np.abs(self.stopped - self.conditional))) if self.nodes.size else 0.0


def optional_stopping_check(tree: ScenarioTree, kernels: KernelSet, X: AdaptedProcess, S: StoppingTime,
                            T2: StoppingTime, tol: float | None = None) -> OptionalStoppingReport:
    """Check ``X_S`` against ``E_S(X_T')`` in the direction ``classify(X)`` predicts, q.s."""
    tol = settings.tolerance if tol is None else tol
    if not S.precedes(T2):
        raise PreconditionError("need S <= T' on every path")
    kind = classify(tree, kernels, X, tol)
    cond = conditional_expectation(tree, kernels, stopped_value(X, T2)).values.values
    polar = polar_node_mask(tree, kernels)
    nodes = np.array(sorted(n for n in S.nodes if not polar[n]), dtype=np.int64)
    lhs, rhs = X.values[nodes], cond[nodes]
    if kind is Kind.MARTINGALE:
        ok = np.all(np.abs(lhs - rhs) <= tol)
    elif kind is Kind.SUBMARTINGALE:
        ok = np.all(lhs <= rhs + tol)
    elif kind is Kind.SUPERMARTINGALE:
        ok = np.all(lhs >= rhs - tol)
    else:
        ok = True  # nothing is claimed
    return OptionalStoppingReport(kind, nodes, lhs, rhs, bool(ok))


def crossing_counts(paths: np.ndarray, alpha: float, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised up/downcrossing counts, one row per path."""
    if not alpha < beta:
        raise ValueError(f"need alpha < beta, got [{alpha}, {beta}]")
    n = paths.shape[0]
    up = np.zeros(n, dtype=np.int64)
    down = np.zeros(n, dtype=np.int64)
    armed_up = np.zeros(n, dtype=bool)
    armed_down = np.zeros(n, dtype=bool)
    for col in paths.T:
        lo, hi = col <= alpha, col >= beta
        done_up = armed_up & hi
        up += done_up
        armed_up = (armed_up & ~done_up) | (~armed_up & lo)
        done_down = armed_down & lo
        down += done_down
        armed_down = (armed_down & ~done_down) | (~armed_down & hi)
    return up, down


@dataclass
class CrossingReport:
    kind: Kind
    expected_up: float
    expected_down: float
    bounds: dict[str, tuple[float, float]] = field(default_factory=dict)  # name -> (lhs, rhs)
    tol: float = 1e-9
    # reported but not part of ``ok``: the sharper downcrossing bound
    # -E(-(X_S - beta)^+) / (beta - alpha), which fails in general
    diagnostics: dict[str, tuple[float, float]] = field(default_factory=dict)

    @property
    def slacks(self) -> dict[str, float]:
        return {k: rhs - lhs for k, (lhs, rhs) in self.bounds.items()}

    @property
    def ok(self) -> bool:
        return all(s >= -self.tol for s in self.slacks.values())


def crossing_inequality_report(tree: ScenarioTree, kernels: KernelSet, X: AdaptedProcess, S: StoppingTime,
                               alpha: float, beta: float, tol: float | None = None) -> CrossingReport:
    """Evaluate both sides of the up/downcrossing inequalities for ``X`` stopped at ``S``."""
    tol = settings.tolerance if tol is None else tol
    if not alpha < beta:
        raise PreconditionError(f"need alpha < beta, got [{alpha}, {beta}]")
    kind = classify(tree, kernels, X, tol)
    if kind is Kind.NONE:
        raise PreconditionError("X is neither a sub- nor a supermartingale")

    def E(v):
        return conditional_expectation(tree, kernels, RandomVariable(tree, v)).root

    up, down = crossing_counts(stopped_process(X, S).path_values(), alpha, beta)
    XS = stopped_value(X, S).values
    x0 = float(X.values[0])
    width = beta - alpha
    eu, ed = E(up.astype(float)), E(down.astype(float))
    rep = CrossingReport(kind, eu, ed, tol=tol)
    if kind in (Kind.SUBMARTINGALE, Kind.MARTINGALE):
        rep.bounds["sub_up"] = (eu, (E(np.maximum(XS - alpha, 0)) - max(x0 - alpha, 0.0)) / width)
        rep.bounds["sub_down"] = (ed, E(np.maximum(XS - beta, 0)) / width)
        rep.diagnostics["sub_down_sharp"] = (ed, -E(-np.maximum(XS - beta, 0)) / width)
    if kind in (Kind.SUPERMARTINGALE, Kind.MARTINGALE):
        rep.bounds["super_up"] = (eu, E(np.maximum(alpha - XS, 0)) / width)
        rep.bounds["super_down"] = (ed, (E(np.maximum(beta - XS, 0)) - max(beta - x0, 0.0)) / width)
    return rep
