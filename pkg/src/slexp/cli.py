"""Command-line front end.

    slexp eval --spec problem.json --expr QV2 [--per-node]
    slexp verify --spec problem.json --suite axioms --seed 42 --samples 1000
    slexp demo trinomial --epsilon 0.1 --horizon 2

Exit codes: 0 success, 1 numeric or theorem failure, 2 usage or parse error.
"""

from __future__ import annotations

import argparse
import ast
import csv
import io
import json
import re
import sys
from dataclasses import dataclass, field

import numpy as np

from . import sampling
from .ambiguity import KernelSet, trinomial_kernels
from .bsde import (
    comparison_check,
    constant_driver,
    discount_driver,
    driver_from_expectation,
    driver_property_check,
    roundtrip_check,
    solve_bsde,
    zero_driver,
)
from .config import settings
from .errors import BudgetExceeded, SlexpError, TheoremViolation
from .expectation import PropertyReport, check_axioms, conditional_expectation, lower_expectation
from .martingale import (
    Kind,
    classify,
    compensator,
    compensator_monotonicity,
    crossing_inequality_report,
    doob_decomposition,
    optional_stopping_check,
)
from .representation import PhiMap, g_function, martingale_rep, trinomial_phi
from .tree import AdaptedProcess, RandomVariable, ScenarioTree, StoppingTime, build_tree


class UsageError(Exception):
    """Bad spec file or unknown name; exit code 2."""


def fmt(x: float) -> str:
    return f"{float(x) + 0.0:.12g}"  # no negative zero


# ---------------------------------------------------------------- spec files

_SAFE_FUNCS = {
    "pos": lambda x: np.maximum(x, 0.0),
    "neg": lambda x: np.maximum(-x, 0.0),
    "abs": np.abs,
    "max": np.maximum,
    "min": np.minimum,
}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide, ast.Pow: np.power}
_BUILTIN = re.compile(r"^(B|QV)(\d*)$")


@dataclass
class Problem:
    tree: ScenarioTree
    kernels: KernelSet
    kernels_bar: KernelSet | None = None
    phi: PhiMap | None = None
    variables: dict[str, np.ndarray] = field(default_factory=dict)  # name -> path values
    stopping_times: dict[str, StoppingTime] = field(default_factory=dict)
    trinomial: bool = False

    def builtin_process(self, name: str) -> AdaptedProcess:
        """``B`` has increments ``1 - 2i/(N-1)`` on branch ``i``; ``QV`` sums their squares."""
        tree = self.tree
        N = tree.branching
        inc = 1.0 - 2.0 * np.arange(N) / (N - 1)
        if name == "QV":
            inc = inc**2
        vals = [np.zeros(1)]
        for _ in range(tree.horizon):
            vals.append((vals[-1][:, None] + inc).reshape(-1))
        return AdaptedProcess.from_levels(tree, vals)

    def lookup(self, name: str) -> np.ndarray:
        if name in self.variables:
            return self.variables[name]
        m = _BUILTIN.match(name)
        if m:
            t = int(m.group(2)) if m.group(2) else self.tree.horizon
            if t > self.tree.horizon:
                raise UsageError(f"{name}: time {t} is past the horizon {self.tree.horizon}")
            proc = self.builtin_process(m.group(1))
            return self.tree.lift(proc.at_level(t), t)
        raise UsageError(f"unknown variable {name!r}")

    def evaluate(self, expr: str) -> RandomVariable:
        try:
            node = ast.parse(expr, mode="eval").body
        except SyntaxError as e:
            raise UsageError(f"cannot parse expression {expr!r}: {e.msg}") from None
        vals = np.broadcast_to(np.asarray(self._eval(node), dtype=float), (self.tree.num_paths,))
        return RandomVariable(self.tree, np.array(vals))

    def _eval(self, node):
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name):
            return self.lookup(node.id)
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = self._eval(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](self._eval(node.left), self._eval(node.right))
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _SAFE_FUNCS
                and not node.keywords):
            args = [self._eval(a) for a in node.args]
            fn = _SAFE_FUNCS[node.func.id]
            if node.func.id in ("max", "min"):
                if len(args) < 2:
                    raise UsageError(f"{node.func.id} needs at least two arguments")
                out = args[0]
                for a in args[1:]:
                    out = fn(out, a)
                return out
            if len(args) != 1:
                raise UsageError(f"{node.func.id} takes one argument")
            return fn(args[0])
        raise UsageError(f"unsupported expression element: {ast.dump(node)[:60]}")


def _depth(x) -> int:
    d = 0
    while isinstance(x, list):
        if not x:
            break
        x = x[0]
        d += 1
    return d


def _kernels(tree: ScenarioTree, spec: dict) -> tuple[KernelSet, bool]:
    if not isinstance(spec, dict):
        raise UsageError("kernels must be an object")
    eta = float(spec.get("polar_tolerance", 0.0))
    if "trinomial" in spec:
        ks = trinomial_kernels(tree, float(spec["trinomial"]["epsilon"]))
        return KernelSet(tree, [ks.vertices_at(n) for n in range(tree.num_internal)], eta), True
    if "vertices" in spec:
        v = spec["vertices"]
        depth = _depth(v)
        if depth == 2:
            return KernelSet.shared(tree, v, eta), False
        if depth == 3 and len(v) == tree.num_internal:
            return KernelSet(tree, v, eta), False
        raise UsageError("vertices must be a shared list of vectors or one list per non-terminal node")
    if "per_level" in spec:
        return KernelSet.per_level(tree, spec["per_level"], eta), False
    raise UsageError("kernels need one of 'trinomial', 'vertices' or 'per_level'")


def _default_phi(tree: ScenarioTree) -> PhiMap:
    N = tree.branching
    return PhiMap(tree, 0, np.vstack([np.ones(N), np.eye(N)[1:]]))


def load_problem(path: str) -> Problem:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from None
    try:
        return _build_problem(raw)
    except (KeyError, TypeError) as e:
        raise UsageError(f"{path}: malformed spec ({e!r})") from None
    except (ValueError, BudgetExceeded) as e:
        raise UsageError(f"{path}: {e}") from None


def _build_problem(raw: dict) -> Problem:
    if not isinstance(raw, dict) or "tree" not in raw or "kernels" not in raw:
        raise UsageError("spec needs 'tree' and 'kernels'")
    tree = build_tree(int(raw["tree"]["horizon"]), int(raw["tree"]["branching"]), settings.node_budget)
    kernels, tri = _kernels(tree, raw["kernels"])
    bar = _kernels(tree, raw["kernels_bar"])[0] if "kernels_bar" in raw else None
    if "phi" in raw:
        ph = raw["phi"]
        phi = PhiMap(tree, int(ph["M"]), ph["per_level"] if "per_level" in ph else ph["rows"])
    else:
        phi = trinomial_phi(tree) if tri else _default_phi(tree)
    prob = Problem(tree, kernels, bar, phi, trinomial=tri)
    for name, v in raw.get("variables", {}).items():
        if isinstance(v, str):
            prob.variables[name] = prob.evaluate(v).values
        elif isinstance(v, (int, float)):
            prob.variables[name] = np.full(tree.num_paths, float(v))
        else:
            arr = np.asarray(v, dtype=float)
            if arr.shape != (tree.num_paths,):
                raise UsageError(f"variable {name!r} needs {tree.num_paths} path values")
            prob.variables[name] = arr
    for name, nodes in raw.get("stopping_times", {}).items():
        prob.stopping_times[name] = StoppingTime(tree, nodes)
    return prob


# ---------------------------------------------------------------- output


def emit(rows: list[list], header: list[str], style: str, out) -> None:
    if style == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        out.write(buf.getvalue())
        return
    cells = [header] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    for r in cells:
        out.write("  ".join(c.rjust(w) for c, w in zip(r, widths)).rstrip() + "\n")


def node_rows(tree: ScenarioTree, *columns) -> list[list]:
    levels = tree.node_levels
    n = min(len(c) for c in columns)
    return [[i, int(levels[i])] + [fmt(c[i]) for c in columns] for i in range(n)]


# ---------------------------------------------------------------- commands


def cmd_eval(args, out) -> int:
    prob = load_problem(args.spec)
    X = prob.evaluate(args.expr)
    res = conditional_expectation(prob.tree, prob.kernels, X)
    lower = lower_expectation(prob.tree, prob.kernels, X)
    emit([["expectation", fmt(res.root)], ["lower", fmt(lower)]], ["quantity", "value"], args.format, out)
    if args.per_node:
        out.write("\n")
        emit(node_rows(prob.tree, res.values.values), ["node_id", "level", "value"], args.format, out)
    return 0


def _suite_axioms(prob: Problem, seed, samples, tol) -> PropertyReport:
    return check_axioms(prob.tree, prob.kernels, samples, seed, tol)


def _suite_martingale(prob: Problem, seed, samples, tol) -> PropertyReport:
    tree, k = prob.tree, prob.kernels
    rng = np.random.default_rng(seed)
    rep = PropertyReport()
    want = {Kind.MARTINGALE: "constant", Kind.SUBMARTINGALE: "nondecreasing", Kind.SUPERMARTINGALE: "nonincreasing"}
    for i in range(samples):
        X = [sampling.random_process, sampling.random_martingale, sampling.random_submartingale,
             sampling.random_supermartingale][i % 4](*((tree, rng) if i % 4 == 0 else (tree, k, rng)))
        mart, hat = doob_decomposition(tree, k, X)
        gap = np.abs(mart.values + hat.values - X.values)
        rep.record("doob_reconstruction", i, gap, 0.0, gap <= 1e-12)
        rep.record("doob_martingale_part", i, 0, 0, classify(tree, k, mart, tol) is Kind.MARTINGALE)
        kind = classify(tree, k, X, tol)
        mono = compensator_monotonicity(compensator(tree, k, X), tol)
        rep.record("classification_vs_compensator", i, 0, 0, want.get(kind, "neither") == mono)
        if kind is Kind.SUPERMARTINGALE:
            rep.record("negated_supermartingale", i, 0, 0, classify(tree, k, -X, tol) in (Kind.SUBMARTINGALE, Kind.MARTINGALE))
        if kind is not Kind.NONE:
            S, T2 = sampling.random_stopping_pair(tree, rng)
            os = optional_stopping_check(tree, k, X, S, T2, tol)
            rep.record(f"optional_stopping_{kind.value}", i, os.stopped, os.conditional, os.ok, os.nodes)
    return rep


def _suite_crossings(prob: Problem, seed, samples, tol) -> PropertyReport:
    tree, k = prob.tree, prob.kernels
    rng = np.random.default_rng(seed)
    rep = PropertyReport()
    for i in range(samples):
        X = (sampling.random_submartingale if i % 2 == 0 else sampling.random_supermartingale)(tree, k, rng)
        S = sampling.random_stopping_time(tree, rng)
        a, b = np.sort(rng.uniform(-1.5, 1.5, 2))
        if b - a < 1e-3:
            b = a + 0.5
        cr = crossing_inequality_report(tree, k, X, S, float(a), float(b), tol)
        for name, (lhs, rhs) in cr.bounds.items():
            rep.record(f"crossing_{name}", i, lhs, rhs, lhs <= rhs + tol)
    return rep


def _suite_bsde(prob: Problem, seed, samples, tol) -> PropertyReport:
    tree, k, phi = prob.tree, prob.kernels, prob.phi
    rng = np.random.default_rng(seed)
    rep = PropertyReport()
    phi.require_symmetric(k, tol)
    for i in range(samples):
        Q = sampling.random_variable(tree, rng)
        sol = solve_bsde(tree, k, phi, zero_driver(), Q)
        ref = conditional_expectation(tree, k, Q).values.values
        gap = np.abs(sol.Y.values - ref)
        rep.record("zero_driver", i, sol.Y.values, ref, gap <= tol)
        rep.record("edge_reconstruction", i, sol.edge_residual(phi), 0.0, sol.edge_residual(phi) <= tol)
        r, c = float(rng.uniform(0, 0.5)), float(rng.uniform(-2, 2))
        disc = solve_bsde(tree, k, phi, discount_driver(r), RandomVariable.constant(tree, c))
        want = c * (1 + r) ** (-tree.horizon)
        rep.record("discount", i, disc.Y.values[0], want, abs(disc.Y.values[0] - want) <= tol)
        Qb = Q - np.abs(sampling.random_variable(tree, rng).values) * (rng.random(tree.num_paths) < 0.5)
        delta = float(rng.uniform(0, 0.2)) * (i % 2)
        cmp = comparison_check(tree, k, phi, constant_driver(delta), zero_driver(), Q, Qb, seed=seed + i, tol=tol)
        if cmp.hypotheses_hold:
            rep.record("comparison", i, cmp.min_gap, 0.0, cmp.conclusion_ok and cmp.strict_ok)
        else:
            rep.counts["comparison_hypotheses_failed"] = rep.counts.get("comparison_hypotheses_failed", 0) + 1
    return rep


def _suite_roundtrip(prob: Problem, seed, samples, tol) -> PropertyReport:
    tree, k, phi = prob.tree, prob.kernels, prob.phi
    bar = prob.kernels_bar if prob.kernels_bar is not None else k
    rng = np.random.default_rng(seed)
    rep = PropertyReport()
    phi.require_symmetric(k, tol)
    for i in range(samples):
        Q = sampling.random_variable(tree, rng)
        try:
            rt = roundtrip_check(tree, k, bar, phi, Q)
            rep.record("roundtrip", i, rt.max_gap, rt.tol, rt.ok)
        except TheoremViolation:
            rep.record("roundtrip", i, np.inf, 1e-8, False)
    F = driver_from_expectation(tree, k, bar, phi)
    rep.merge(driver_property_check(tree, k, phi, F, max(samples, 500), seed, tol))
    return rep


SUITES = {
    "axioms": _suite_axioms,
    "martingale": _suite_martingale,
    "crossings": _suite_crossings,
    "bsde": _suite_bsde,
    "roundtrip": _suite_roundtrip,
}


def cmd_verify(args, out) -> int:
    prob = load_problem(args.spec)
    if args.samples < 1:
        raise UsageError("--samples must be >= 1")
    tol = settings.tolerance
    rep = SUITES[args.suite](prob, args.seed, args.samples, tol)
    if args.suite != "axioms" and prob.kernels.is_linear():
        rep.notes.append("linear case")
    for note in rep.notes:
        out.write(f"note: {note}\n")
    bad: dict[str, int] = {}
    for v in rep.violations:
        bad[v.check] = bad.get(v.check, 0) + 1
    rows = [[name, n, bad.get(name, 0), "fail" if bad.get(name) else "pass"] for name, n in sorted(rep.counts.items())]
    emit(rows, ["check", "instances", "violations", "status"], args.format, out)
    out.write(f"result: {'pass' if rep.ok else 'fail'}\n")
    if not rep.ok:
        out.write("\n")
        emit([[v.check, v.sample, v.node, fmt(v.lhs), fmt(v.rhs)] for v in rep.violations],
             ["check", "sample", "node", "lhs", "rhs"], "csv", out)
        return 1
    return 0


def cmd_demo(args, out) -> int:
    eps, T = args.epsilon, args.horizon
    if not 0.0 <= eps <= 0.25:
        raise UsageError(f"epsilon must lie in [0, 0.25], got {eps}")
    if T < 1:
        raise UsageError("horizon must be >= 1")
    tree = build_tree(T, 3, settings.node_budget)
    k = trinomial_kernels(tree, eps)
    phi = trinomial_phi(tree)
    prob = Problem(tree, k, phi=phi, trinomial=True)
    B, QV = prob.builtin_process("B"), prob.builtin_process("QV")
    hat = compensator(tree, k, QV)
    comp = hat.as_adapted()
    style = args.format
    e = conditional_expectation(tree, k, QV.terminal()).root
    out.write(f"trinomial model: epsilon={fmt(eps)} horizon={T}\n")
    emit([["E([B]_T)", fmt(e)], ["lower E([B]_T)", fmt(lower_expectation(tree, k, QV.terminal()))],
          ["compensator slope", fmt(hat.values[0])]], ["quantity", "value"], style, out)
    out.write("\n")
    emit(node_rows(tree, B.values, QV.values, comp.values), ["node_id", "level", "B", "QV", "compensator"], style, out)
    out.write("\n")
    tri = martingale_rep(tree, k, QV - comp, phi)
    minus_g = np.array([-g_function(n, tri.Z_prime[n], phi, k) for n in range(tree.num_internal)])
    rows = [[n, int(tree.node_levels[n]), fmt(tri.Z_s[n, 0]), fmt(tri.Z_prime[n, 0]), fmt(tri.Z_wedge[n]),
             fmt(minus_g[n]), "ok" if abs(tri.Z_wedge[n] - minus_g[n]) <= settings.tolerance else "FAIL"]
            for n in range(tree.num_internal)]
    emit(rows, ["node_id", "level", "Z_s", "Z_prime", "Z_wedge", "minus_G", "check"], style, out)
    out.write("\n")
    emit([[fmt(z), fmt(g_function(0, [z], phi, k))] for z in (-1.0, 0.0, 1.0)], ["z_prime", "G"], style, out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads per level sweep")
    common.add_argument("--tolerance", type=float, default=argparse.SUPPRESS, help="assertion tolerance")
    common.add_argument("--format", choices=("table", "csv"), default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="slexp", description="Sublinear expectations on finite scenario trees.",
                                parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("eval", parents=[common], help="upper and lower expectation of a variable")
    e.add_argument("--spec", required=True)
    e.add_argument("--expr", required=True, help="variable name or expression over B, QV, Bt, QVt")
    e.add_argument("--per-node", action="store_true", help="also print E_t at every node")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify", parents=[common], help="randomised property suites")
    v.add_argument("--spec", required=True)
    v.add_argument("--suite", required=True, choices=sorted(SUITES))
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--samples", type=int, default=100)
    v.set_defaults(func=cmd_verify)

    d = sub.add_parser("demo", parents=[common], help="worked examples")
    dsub = d.add_subparsers(dest="model", required=True)
    t = dsub.add_parser("trinomial", parents=[common])
    t.add_argument("--epsilon", type=float, default=0.1)
    t.add_argument("--horizon", type=int, default=2)
    t.set_defaults(func=cmd_demo)
    return p


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    args = build_parser().parse_args(argv)
    args.threads = getattr(args, "threads", 1)
    args.format = getattr(args, "format", "table")
    if args.threads < 1:
        print("slexp: --threads must be >= 1", file=sys.stderr)
        return 2
    old = (settings.workers, settings.tolerance)
    settings.workers = args.threads
    if hasattr(args, "tolerance"):
        settings.tolerance = args.tolerance
    try:
        return args.func(args, out)
    except UsageError as e:
        print(f"slexp: {e}", file=sys.stderr)
        return 2
    except SlexpError as e:
        print(f"slexp: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except FloatingPointError as e:
        print(f"slexp: numeric failure: {e}", file=sys.stderr)
        return 1
    finally:
        settings.workers, settings.tolerance = old


if __name__ == "__main__":
    sys.exit(main())
