"""Exact selection via big-M linearization and branch-and-bound.

For binary pi_i the bilinear coupling G = Pi Z is equivalent to the
linear rows

    |G_{i,(l,m)} - Z_{i,(l,m)}| <= M (1 - pi_i),
    |G_{i,(l,m)}|               <= M pi_i,

for M larger than the biggest optimal |Z| entry.  With these rows the
selection problem is a mixed-integer SDP; branch-and-bound explores the
binary tree best-first, bounding each node by its box relaxation
(free pi entries in [0, 1], which contains every binary completion).

``brute_force`` enumerates all admissible binary patterns through the
fixed-selection SDP and is the independent oracle the exact methods are
tested against.
"""

from __future__ import annotations

import heapq
import itertools
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .build import ConicBuilder
from .conic import (
    ConicProblem,
    ConicSolution,
    MAX_ITER,
    PRIMAL_INFEASIBLE,
    SolverSettings,
    solve,
)
from .lmi import (
    add_floors,
    add_perf_lmi,
    add_stab_lmi,
    evaluate_objective,
    solve_linf_fixed_pi,
)
from .model import CpsSystem, LogisticConstraints, SelectionWeights

BRUTE_FORCE_GUARD = 12


class SelectionInfeasibleError(RuntimeError):
    """No binary selection is feasible for the synthesis LMIs."""


def build_bigm(
    system: CpsSystem,
    weights: SelectionWeights,
    logistics: LogisticConstraints,
    M: float,
    lo: np.ndarray | None = None,
    hi: np.ndarray | None = None,
):
    """Box relaxation of the big-M program with per-node bounds
    lo <= pi <= hi (binary tree nodes fix entries by pinching them)."""
    if M <= 0:
        raise ValueError("M must be positive")
    N = system.N
    lo = np.zeros(N) if lo is None else np.asarray(lo, dtype=float)
    hi = np.ones(N) if hi is None else np.asarray(hi, dtype=float)
    b = ConicBuilder()
    S = b.sym("S", system.n_x)
    zeta = b.scalar("zeta")
    Z = b.mat("Z", system.n_u, system.n_x)
    pi = b.vec("pi", N)
    G = b.mat("G", system.n_u, system.n_x)
    b.add_cost(zeta, [weights.eta + 1.0])
    b.add_cost(pi, weights.alpha_pi)
    B_u = system.B_u
    add_stab_lmi(
        b, system, weights, S,
        [(G, lambda Gb: -B_u @ Gb - Gb.T @ B_u.T)],
    )
    add_perf_lmi(b, system, S, zeta)
    add_floors(b, S, zeta, system.n_x)

    row_node = np.repeat(np.arange(N), system.partition)
    rows, rhs = [], []
    eq_rows, eq_rhs = [], []
    pinned = lo == hi
    for l in range(system.n_u):
        i = int(row_node[l])
        for m in range(system.n_x):
            flat = l * system.n_x + m
            if pinned[i]:
                # fixed entry: the big-M rows degenerate to equalities,
                # which the zero cone handles without losing interior
                if lo[i] >= 0.5:
                    eq_rows.append([(G, flat, 1.0), (Z, flat, -1.0)])
                else:
                    eq_rows.append([(G, flat, 1.0)])
                eq_rhs.append(0.0)
                continue
            # G - Z <= M (1 - pi_i) and Z - G <= M (1 - pi_i), rows
            # divided by M up front so the data stays well equilibrated
            w = 1.0 / M
            rows.append([(G, flat, w), (Z, flat, -w), (pi, i, 1.0)])
            rhs.append(1.0)
            rows.append([(G, flat, -w), (Z, flat, w), (pi, i, 1.0)])
            rhs.append(1.0)
            # |G| <= M pi_i
            rows.append([(G, flat, w), (pi, i, -1.0)])
            rhs.append(0.0)
            rows.append([(G, flat, -w), (pi, i, -1.0)])
            rhs.append(0.0)
    if rows:
        b.add_ineq(rows, rhs)
    if eq_rows:
        b.add_eq(eq_rows, eq_rhs)
        b.add_eq(
            [[(pi, int(i), 1.0)] for i in np.nonzero(pinned)[0]],
            [float(lo[i]) for i in np.nonzero(pinned)[0]],
        )
    free_idx = np.nonzero(~pinned)[0]
    if free_idx.size:
        fr_rows, fr_rhs = [], []
        for i in free_idx:
            fr_rows.append([(pi, int(i), 1.0)])
            fr_rhs.append(float(hi[i]))
            fr_rows.append([(pi, int(i), -1.0)])
            fr_rhs.append(-float(lo[i]))
        b.add_ineq(fr_rows, fr_rhs)
    if logistics.n_rows:
        lrows = [
            [(pi, j, logistics.H[r, j]) for j in range(N) if logistics.H[r, j]]
            for r in range(logistics.n_rows)
        ]
        b.add_ineq(lrows, logistics.h)
    return b.build()


@dataclass
class BnbSettings:
    max_nodes: int = 300
    gap_tol: float = 1e-4
    M: float = 1e4
    int_tol: float = 1e-6
    solver: SolverSettings = field(default_factory=SolverSettings)
    # iteration cap for node box relaxations; a stalled node falls back to
    # its parent bound, so these solves need not run to full precision
    node_max_iter: int = 15_000


@dataclass(order=True)
class BnbNode:
    bound: float
    counter: int
    lo: np.ndarray = field(compare=False)
    hi: np.ndarray = field(compare=False)
    depth: int = field(compare=False, default=0)
    warm: ConicSolution | None = field(compare=False, default=None)

    @property
    def free(self) -> np.ndarray:
        return np.nonzero(self.lo < self.hi)[0]


@dataclass
class BnbResult:
    pi: np.ndarray | None
    objective: float
    lower_bound: float
    gap: float                  # (incumbent - bound) / |incumbent|
    nodes: int
    wall_time: float
    status: str                 # "optimal" | "node_limit" | "infeasible"
    zeta: float = np.nan
    S: np.ndarray | None = None
    Z: np.ndarray | None = None
    trace: list = field(default_factory=list)

    @property
    def gap_percent(self) -> float:
        return 100.0 * self.gap


def branch_and_bound(
    system: CpsSystem,
    weights: SelectionWeights,
    logistics: LogisticConstraints,
    settings: BnbSettings | None = None,
    progress=None,
) -> BnbResult:
    """Best-first branch-and-bound on the big-M MISDP.

    Branches on the most fractional selection entry (ties to the smallest
    index); node bounds come from the box relaxation, incumbents from
    rounded relaxation points re-solved through the fixed-selection SDP.
    ``progress``, when given, receives one dict per explored node.
    """
    settings = settings or BnbSettings()
    t0 = time.perf_counter()
    N = system.N
    inc_obj = np.inf
    inc = None          # (pi, zeta, S, Z)
    counter = itertools.count()
    root = BnbNode(bound=-np.inf, counter=next(counter),
                   lo=np.zeros(N), hi=np.ones(N))
    heap = [root]
    explored = 0
    trace = []
    global_lb = -np.inf
    seen_binary: set[tuple] = set()
    fixed_warm: ConicSolution | None = None

    def try_binary(pattern: np.ndarray) -> None:
        nonlocal inc_obj, inc, fixed_warm
        key = tuple(int(v) for v in pattern)
        if key in seen_binary:
            return
        seen_binary.add(key)
        if not logistics.admits(pattern):
            return
        fixed = solve_linf_fixed_pi(system, pattern, weights,
                                    settings.solver, fixed_warm)
        if not fixed.feasible:
            return
        fixed_warm = fixed.solution
        val = evaluate_objective(pattern, fixed.zeta, weights)
        if val < inc_obj:
            inc_obj = val
            inc = (pattern.copy(), fixed.zeta, fixed.S, fixed.Z)

    while heap and explored < settings.max_nodes:
        node = heapq.heappop(heap)
        open_bounds = [n.bound for n in heap] + [node.bound]
        global_lb = max(global_lb, min(open_bounds))
        if inc_obj < np.inf:
            gap = (inc_obj - global_lb) / max(abs(inc_obj), 1e-12)
            if gap <= settings.gap_tol:
                heapq.heappush(heap, node)  # still open, bound is valid
                break
        if node.bound >= inc_obj - settings.gap_tol * abs(inc_obj):
            continue  # cannot improve the incumbent
        free = node.free
        explored += 1
        if free.size == 0:
            # fully pinned: the node IS a fixed-selection problem
            try_binary(node.lo)
            event = {
                "node": explored, "bound": inc_obj, "incumbent": inc_obj,
                "lower_bound": global_lb, "depth": node.depth,
            }
            trace.append(event)
            if progress is not None:
                progress(event)
            continue
        problem, dec = build_bigm(
            system, weights, logistics, settings.M, node.lo, node.hi
        )
        node_solver = replace(
            settings.solver,
            max_iter=min(settings.node_max_iter, settings.solver.max_iter),
        )
        sol = solve(problem, node_solver, warm=node.warm)
        if sol.status == PRIMAL_INFEASIBLE:
            if node.depth == 0 and inc is None and not heap:
                return BnbResult(
                    pi=None, objective=np.inf, lower_bound=np.inf, gap=0.0,
                    nodes=explored, wall_time=time.perf_counter() - t0,
                    status="infeasible", trace=trace,
                )
            continue
        if sol.optimal:
            val = sol.objective
            pi_rel = np.clip(dec["pi"].extract(sol.x), node.lo, node.hi)
        else:
            # unresolved relaxation: keep the parent bound and branch on it
            val = node.bound
            pi_rel = np.where(node.lo < node.hi, 0.5, node.lo)
        event = {
            "node": explored, "bound": val, "incumbent": inc_obj,
            "lower_bound": global_lb, "depth": node.depth,
        }
        trace.append(event)
        if progress is not None:
            progress(event)
        if val >= inc_obj - settings.gap_tol * abs(inc_obj):
            continue
        frac = np.abs(pi_rel - np.round(pi_rel))
        if sol.optimal and frac[free].max() <= settings.int_tol:
            try_binary(np.round(pi_rel))
            continue
        # rounding heuristic keeps the incumbent fresh
        if sol.optimal:
            try_binary(np.round(pi_rel))
        j = free[np.lexsort((free, -frac[free]))[0]]
        for fix in (0.0, 1.0):
            lo, hi = node.lo.copy(), node.hi.copy()
            lo[j] = hi[j] = fix
            heapq.heappush(
                heap,
                BnbNode(bound=max(val, node.bound), counter=next(counter),
                        lo=lo, hi=hi, depth=node.depth + 1,
                        warm=sol if sol.optimal else None),
            )

    wall = time.perf_counter() - t0
    if inc is None:
        status = "infeasible" if not heap else "node_limit"
        return BnbResult(
            pi=None, objective=np.inf,
            lower_bound=global_lb if heap else np.inf,
            gap=np.inf if heap else 0.0, nodes=explored, wall_time=wall,
            status=status, trace=trace,
        )
    if heap:
        global_lb = max(global_lb, min(n.bound for n in heap))
        global_lb = min(global_lb, inc_obj)
    else:
        global_lb = inc_obj
    gap = max(0.0, (inc_obj - global_lb) / max(abs(inc_obj), 1e-12))
    status = "optimal" if (gap <= settings.gap_tol or not heap) else "node_limit"
    pi, zeta, S, Z = inc
    return BnbResult(
        pi=pi, objective=inc_obj, lower_bound=global_lb, gap=gap,
        nodes=explored, wall_time=wall, status=status,
        zeta=zeta, S=S, Z=Z, trace=trace,
    )


@dataclass
class BruteForceResult:
    pi: np.ndarray
    objective: float
    zeta: float
    S: np.ndarray
    Z: np.ndarray
    per_pattern: dict
    wall_time: float


def brute_force(
    system: CpsSystem,
    weights: SelectionWeights,
    logistics: LogisticConstraints,
    settings: SolverSettings | None = None,
    guard: int = BRUTE_FORCE_GUARD,
) -> BruteForceResult:
    """Exhaustive oracle: solve the fixed-selection SDP for every binary
    pattern admitted by the logistic rows and return the minimizer."""
    N = system.N
    if N > guard:
        raise ValueError(f"brute force guarded at N <= {guard}")
    t0 = time.perf_counter()
    best = None
    per_pattern = {}
    warm = None
    for bits in itertools.product((0, 1), repeat=N):
        pattern = np.array(bits, dtype=float)
        if not logistics.admits(pattern):
            per_pattern[bits] = ("excluded", np.nan)
            continue
        fixed = solve_linf_fixed_pi(system, pattern, weights, settings, warm)
        if not fixed.feasible:
            per_pattern[bits] = (fixed.status, np.nan)
            continue
        warm = fixed.solution
        val = evaluate_objective(pattern, fixed.zeta, weights)
        per_pattern[bits] = ("optimal", val)
        if best is None or val < best[1]:
            best = (pattern, val, fixed.zeta, fixed.S, fixed.Z)
    if best is None:
        raise SelectionInfeasibleError(
            "no admissible binary selection is feasible"
        )
    pattern, val, zeta, S, Z = best
    return BruteForceResult(
        pi=pattern, objective=val, zeta=zeta, S=S, Z=Z,
        per_pattern=per_pattern, wall_time=time.perf_counter() - t0,
    )
