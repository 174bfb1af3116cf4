"""Successive convex approximations of the box-relaxed selection problem.

Both variants replace the bilinear decay constraint with a convex
restriction built at the previous iterate, so every subproblem solution
stays feasible for the original matrix inequality and the objective
sequence decreases monotonically toward an upper bound.

Variant 1 (difference of convex functions):  the bilinear term is split
as half a convex square minus half a concave square; linearizing the
concave part at (Pi0, Z0) gives the affine over-estimator ``h_lin`` and a
Schur complement turns the resulting convex constraint into an LMI.

Variant 2 (parametric):  the increment form of the bilinear term is
bounded through B dPi Q dPi B' + dZ' Q^{-1} dZ with a positive definite
weight Q; linearizing -Q^{-1} around Q_{k-1} and applying a congruence
yields a four-block LMI linear in (S, Z, pi, Q).

Each subproblem carries the quadratic proximal term
rho * (|zeta - zeta_prev|^2 + |S - S_prev|_F^2 + |Z - Z_prev|_F^2
+ |Pi - Pi_prev|_F^2), modeled by per-coordinate 2x2 PSD epigraph blocks.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .build import ConicBuilder, VarBlock
from .conic import ConicProblem, ConicSolution, SolverSettings, solve
from .lmi import (
    BoundValue,
    UPPER,
    _embed,
    _sym_embed,
    add_floors,
    add_perf_lmi,
    evaluate_objective,
    solve_linf_fixed_pi,
)
from .linalg import svec
from .model import CpsSystem, LogisticConstraints, SelectionWeights

log = logging.getLogger(__name__)

SCA1 = "sca1"
SCA2 = "sca2"

# Initial selection level used to produce the strictly feasible starting
# point; the all-channels fallback covers instances where the scaled-down
# channels cannot stabilize.
INIT_PI_LEVEL = 0.1


class InitializationError(RuntimeError):
    """No strictly feasible starting point could be produced."""


@dataclass
class ScaSettings:
    rho: float = 1e-3           # proximal weight
    c1: float = 1e-3            # Q >= c1 I        (variant 2)
    c2: float = 1e3             # Q <= c2 I        (variant 2)
    c3: float = 1e-3            # Q <= 2 Q_prev - c3 I
    tol: float = 1e-6           # stop on |Lhat_k - Lhat_{k-1}| < tol
    step_tol: float = 1e-8      # secondary stop on the proximal step norm
    max_iter_num: int = 100
    solver: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self):
        if min(self.rho, self.c1, self.c2, self.c3, self.tol) <= 0:
            raise ValueError("SCA settings must be positive")
        if self.c1 > self.c2:
            raise ValueError("need c1 <= c2")


@dataclass
class ScaState:
    k: int
    S: np.ndarray
    Z: np.ndarray
    pi: np.ndarray              # node-level entries in [0, 1]
    zeta: float
    Q: np.ndarray | None = None  # variant-2 weight, kept in [c1 I, c2 I]

    def objective(self, weights: SelectionWeights) -> float:
        return evaluate_objective(self.pi, self.zeta, weights)


@dataclass
class ScaTrace:
    objectives: list[float] = field(default_factory=list)
    subproblem_values: list[float] = field(default_factory=list)
    step_norms: list[float] = field(default_factory=list)

    def max_upward_step(self) -> float:
        worst = 0.0
        for a, b in zip(self.objectives, self.objectives[1:]):
            worst = max(worst, b - a)
        return worst


def h_lin(
    B_u: np.ndarray,
    Pi: np.ndarray,
    Z: np.ndarray,
    Pi0: np.ndarray,
    Z0: np.ndarray,
) -> np.ndarray:
    """First-order expansion of -(B_u Pi + Z')(B_u Pi + Z')' at (Pi0, Z0).

    A global over-estimator of that concave term; exact at the base point.
    """
    BP = B_u @ Pi
    BP0 = B_u @ Pi0
    return (
        BP0 @ BP0.T - BP @ BP0.T - BP0 @ BP.T
        + BP0 @ Z0 - BP @ Z0 - BP0 @ Z
        + Z0.T @ BP0.T - Z0.T @ BP.T - Z.T @ BP0.T
        + Z0.T @ Z0 - Z0.T @ Z - Z.T @ Z0
    )


def bilinear_block(B_u, Pi, Z) -> np.ndarray:
    """-B_u Pi Z - Z' Pi B_u', the (1,1) bilinear contribution."""
    BPZ = B_u @ Pi @ Z
    return -BPZ - BPZ.T


def dc_surrogate(system, weights, S, Pi, Z, Pi0, Z0) -> np.ndarray:
    """The variant-1 convex majorant of the decay LMI block (dense
    evaluation, used by the property tests and strictness checks)."""
    n_x, n_w = system.n_x, system.n_w
    A, B_w, B_u = system.A, system.B_w, system.B_u
    alpha, eta = weights.alpha, weights.eta
    R = B_u @ Pi - Z.T
    top = (
        A @ S + S @ A.T + alpha * S
        + 0.5 * R @ R.T
        + 0.5 * h_lin(B_u, Pi, Z, Pi0, Z0)
    )
    d = n_x + n_w
    return (
        _embed(d, 0, 0, top)
        + _sym_embed(d, 0, n_x, B_w)
        + _embed(d, n_x, n_x, -alpha * eta * np.eye(n_w))
    )


def dc_surrogate_schur(system, weights, S, Pi, Z, Pi0, Z0) -> np.ndarray:
    """Schur-complement LMI form of the variant-1 majorant."""
    n_x, n_u, n_w = system.n_x, system.n_u, system.n_w
    A, B_w, B_u = system.A, system.B_w, system.B_u
    alpha, eta = weights.alpha, weights.eta
    d = n_x + n_u + n_w
    top = A @ S + S @ A.T + alpha * S + 0.5 * h_lin(B_u, Pi, Z, Pi0, Z0)
    out = _embed(d, 0, 0, top)
    out += _sym_embed(d, 0, n_x, (B_u @ Pi - Z.T) / np.sqrt(2.0))
    out += _embed(d, n_x, n_x, -np.eye(n_u))
    out += _sym_embed(d, 0, n_x + n_u, B_w)
    out += _embed(d, n_x + n_u, n_x + n_u, -alpha * eta * np.eye(n_w))
    return out


def parametric_block(system, weights, S, Pi, Z, Pi_k, Z_k, Q) -> np.ndarray:
    """The variant-2 majorant K_1 of the decay LMI block at (Pi_k, Z_k)."""
    n_x, n_w = system.n_x, system.n_w
    A, B_w, B_u = system.A, system.B_w, system.B_u
    alpha, eta = weights.alpha, weights.eta
    dPi, dZ = Pi - Pi_k, Z - Z_k
    top = (
        bilinear_block(B_u, Pi_k, Z_k)
        + A @ S + S @ A.T + alpha * S
        - B_u @ Pi_k @ dZ - dZ.T @ Pi_k @ B_u.T
        - B_u @ dPi @ Z_k - Z_k.T @ dPi @ B_u.T
        + B_u @ dPi @ Q @ dPi @ B_u.T
        + dZ.T @ np.linalg.solve(Q, dZ)
    )
    d = n_x + n_w
    return (
        _embed(d, 0, 0, top)
        + _sym_embed(d, 0, n_x, B_w)
        + _embed(d, n_x, n_x, -alpha * eta * np.eye(n_w))
    )


def parametric_schur(system, weights, S, Pi, Z, Pi_k, Z_k, Q, Q_k) -> np.ndarray:
    """The four-block linearized LMI K_s of variant 2."""
    n_x, n_u, n_w = system.n_x, system.n_u, system.n_w
    A, B_w, B_u = system.A, system.B_w, system.B_u
    alpha, eta = weights.alpha, weights.eta
    dPi, dZ = Pi - Pi_k, Z - Z_k
    omega = (
        bilinear_block(B_u, Pi_k, Z_k)
        + A @ S + S @ A.T + alpha * S
        - B_u @ Pi_k @ dZ - dZ.T @ Pi_k @ B_u.T
        - B_u @ dPi @ Z_k - Z_k.T @ dPi @ B_u.T
    )
    d = n_x + n_w + 2 * n_u
    r_w, r_q1, r_q2 = n_x, n_x + n_w, n_x + n_w + n_u
    out = _embed(d, 0, 0, omega)
    out += _sym_embed(d, 0, r_w, B_w)
    out += _embed(d, r_w, r_w, -alpha * eta * np.eye(n_w))
    out += _sym_embed(d, 0, r_q1, B_u @ dPi @ Q_k)
    out += _embed(d, r_q1, r_q1, -2.0 * Q_k + Q)
    out += _sym_embed(d, 0, r_q2, dZ.T)
    out += _embed(d, r_q2, r_q2, -Q)
    return out


def _add_proximal(
    b: ConicBuilder,
    blocks: list[tuple[VarBlock, np.ndarray, np.ndarray]],
) -> VarBlock:
    """Epigraph of the squared proximal distance.

    ``blocks`` lists (variable block, previous value in block coordinates,
    per-coordinate scale).  Adds one aux variable t_j >= (scale*(x_j -
    prev_j))^2 per coordinate via 2x2 PSD blocks and returns the aux
    block; the caller prices sum(t) in the objective.
    """
    total = sum(blk.size for blk, _, _ in blocks)
    t = b.vec("prox_t", total)
    at = 0
    for blk, prev, scale in blocks:
        for j in range(blk.size):
            s = float(scale[j])
            const = np.array([[1.0, -s * prev[j]], [-s * prev[j], 0.0]])
            b.add_psd(
                2,
                const,
                entry_terms=[
                    (blk, j, np.array([[0.0, s], [s, 0.0]])),
                    (t, at, np.array([[0.0, 0.0], [0.0, 1.0]])),
                ],
            )
            at += 1
    return t


def _pi_basis(system: CpsSystem, i: int) -> np.ndarray:
    """Diagonal of the Pi basis element for node i (n_u x n_u diagonal)."""
    d = np.zeros(system.n_u)
    d[np.repeat(np.arange(system.N), system.partition) == i] = 1.0
    return d


def _common_rows(b, system, weights, logistics, S, zeta, pi):
    add_perf_lmi(b, system, S, zeta)
    add_floors(b, S, zeta, system.n_x)
    b.add_box(pi, 0.0, 1.0)
    if logistics.n_rows:
        rows = [
            [
                (pi, j, logistics.H[r, j])
                for j in range(system.N)
                if logistics.H[r, j]
            ]
            for r in range(logistics.n_rows)
        ]
        b.add_ineq(rows, logistics.h)


def build_sca1_subproblem(
    system: CpsSystem,
    weights: SelectionWeights,
    logistics: LogisticConstraints,
    state: ScaState,
    settings: ScaSettings,
):
    """Subproblem of the difference-of-convex variant at the given state."""
    n_x, n_u, n_w, N = system.n_x, system.n_u, system.n_w, system.N
    A, B_w, B_u = system.A, system.B_w, system.B_u
    alpha, eta = weights.alpha, weights.eta
    Pi0 = np.diag(system.expand_pi(state.pi))
    Z0 = state.Z
    BP0 = B_u @ Pi0

    b = ConicBuilder()
    S = b.sym("S", n_x)
    zeta = b.scalar("zeta")
    Z = b.mat("Z", n_u, n_x)
    pi = b.vec("pi", N)

    d = n_x + n_u + n_w
    r_u, r_w = n_x, n_x + n_u
    const = _embed(
        d, 0, 0, 0.5 * (BP0 @ BP0.T + BP0 @ Z0 + Z0.T @ BP0.T + Z0.T @ Z0)
    )
    const += _sym_embed(d, 0, r_u, -Z0.T / np.sqrt(2.0))
    const += _embed(d, r_u, r_u, -np.eye(n_u))
    const += _sym_embed(d, 0, r_w, B_w)
    const += _embed(d, r_w, r_w, -alpha * eta * np.eye(n_w))

    def s_map(Sb):
        return _embed(d, 0, 0, A @ Sb + Sb @ A.T + alpha * Sb)

    def z_map(Zb):
        top = 0.5 * (-BP0 @ Zb - Zb.T @ BP0.T - Z0.T @ Zb - Zb.T @ Z0)
        return _embed(d, 0, 0, top) + _sym_embed(
            d, 0, r_u, -Zb.T / np.sqrt(2.0)
        )

    pi_entries = []
    for i in range(N):
        Pib = np.diag(_pi_basis(system, i))
        BPb = B_u @ Pib
        top = 0.5 * (
            -BPb @ BP0.T - BP0 @ BPb.T - BPb @ Z0 - Z0.T @ BPb.T
        )
        Fi = _embed(d, 0, 0, top) + _sym_embed(d, 0, r_u, BPb / np.sqrt(2.0))
        pi_entries.append((pi, i, Fi))
    b.add_lmi(d, const, [(S, s_map), (Z, z_map)], entry_terms=pi_entries)

    _common_rows(b, system, weights, logistics, S, zeta, pi)
    t = _add_proximal(
        b,
        [
            (S, svec(state.S), np.ones(S.size)),
            (Z, state.Z.ravel(), np.ones(Z.size)),
            (zeta, np.array([state.zeta]), np.ones(1)),
            (pi, state.pi, np.sqrt(np.asarray(system.partition, float))),
        ],
    )
    b.add_cost(zeta, [eta + 1.0])
    b.add_cost(pi, weights.alpha_pi)
    b.add_cost(t, np.full(t.size, settings.rho))
    return b.build()


def build_sca2_subproblem(
    system: CpsSystem,
    weights: SelectionWeights,
    logistics: LogisticConstraints,
    state: ScaState,
    settings: ScaSettings,
):
    """Subproblem of the parametric variant at the given state."""
    n_x, n_u, n_w, N = system.n_x, system.n_u, system.n_w, system.N
    A, B_w, B_u = system.A, system.B_w, system.B_u
    alpha, eta = weights.alpha, weights.eta
    Pi_k = np.diag(system.expand_pi(state.pi))
    Z_k = state.Z
    Q_k = state.Q if state.Q is not None else np.eye(n_u)
    BPk = B_u @ Pi_k

    b = ConicBuilder()
    S = b.sym("S", n_x)
    zeta = b.scalar("zeta")
    Z = b.mat("Z", n_u, n_x)
    pi = b.vec("pi", N)
    Q = b.sym("Q", n_u)

    d = n_x + n_w + 2 * n_u
    r_w, r_q1, r_q2 = n_x, n_x + n_w, n_x + n_w + n_u
    const = _embed(d, 0, 0, BPk @ Z_k + Z_k.T @ BPk.T)
    const += _sym_embed(d, 0, r_w, B_w)
    const += _embed(d, r_w, r_w, -alpha * eta * np.eye(n_w))
    const += _sym_embed(d, 0, r_q1, -BPk @ Q_k)
    const += _embed(d, r_q1, r_q1, -2.0 * Q_k)
    const += _sym_embed(d, 0, r_q2, -Z_k.T)

    def s_map(Sb):
        return _embed(d, 0, 0, A @ Sb + Sb @ A.T + alpha * Sb)

    def z_map(Zb):
        return _embed(
            d, 0, 0, -BPk @ Zb - Zb.T @ BPk.T
        ) + _sym_embed(d, 0, r_q2, Zb.T)

    def q_map(Qb):
        return _embed(d, r_q1, r_q1, Qb) + _embed(d, r_q2, r_q2, -Qb)

    pi_entries = []
    for i in range(N):
        Pib = np.diag(_pi_basis(system, i))
        BPb = B_u @ Pib
        Fi = _embed(d, 0, 0, -BPb @ Z_k - Z_k.T @ BPb.T)
        Fi += _sym_embed(d, 0, r_q1, BPb @ Q_k)
        pi_entries.append((pi, i, Fi))
    b.add_lmi(
        d, const, [(S, s_map), (Z, z_map), (Q, q_map)], entry_terms=pi_entries
    )

    # c1 I <= Q <= c2 I and Q <= 2 Q_prev - c3 I keep the weight positive
    # definite and its linearization block negative definite
    b.add_psd(n_u, -settings.c1 * np.eye(n_u), [(Q, lambda Qb: Qb)])
    b.add_lmi(n_u, -settings.c2 * np.eye(n_u), [(Q, lambda Qb: Qb)])
    b.add_lmi(
        n_u, settings.c3 * np.eye(n_u) - 2.0 * Q_k, [(Q, lambda Qb: Qb)]
    )

    _common_rows(b, system, weights, logistics, S, zeta, pi)
    t = _add_proximal(
        b,
        [
            (S, svec(state.S), np.ones(S.size)),
            (Z, state.Z.ravel(), np.ones(Z.size)),
            (zeta, np.array([state.zeta]), np.ones(1)),
            (pi, state.pi, np.sqrt(np.asarray(system.partition, float))),
        ],
    )
    b.add_cost(zeta, [eta + 1.0])
    b.add_cost(pi, weights.alpha_pi)
    b.add_cost(t, np.full(t.size, settings.rho))
    return b.build()


def initial_state(
    system: CpsSystem,
    weights: SelectionWeights,
    solver: SolverSettings | None = None,
) -> ScaState:
    """Strictly feasible start: fix the selection at a low uniform level
    and take the max-margin interior point of the synthesis SDP.

    The margin matters: the first convex restriction is built at this
    point, and a boundary point would leave the subproblem without a
    strictly feasible interior."""
    from .conic import strict_interior
    from .lmi import build_linf_fixed_pi

    for level in (INIT_PI_LEVEL, 1.0):
        pi0 = np.full(system.N, level)
        problem, dec = build_linf_fixed_pi(system, pi0, weights)
        res = strict_interior(problem, solver)
        if res.status == "interior":
            if level != INIT_PI_LEVEL:
                log.info("SCA start fell back to the all-channels level")
            return ScaState(
                k=0,
                S=dec.S(res.x),
                Z=dec.Z(res.x),
                pi=pi0,
                zeta=dec.zeta(res.x),
                Q=np.eye(system.n_u),
            )
    raise InitializationError(
        "no strictly feasible starting point (is the all-ones selection "
        "feasible?)"
    )


@dataclass
class ScaResult:
    variant: str
    bound: BoundValue
    pi: np.ndarray
    state: ScaState
    trace: ScaTrace
    iterations: int
    status: str                 # "converged" | "max_iter" | "stalled"
    wall_time: float

    @property
    def value(self) -> float:
        return self.bound.value


def run_sca(
    variant: str,
    system: CpsSystem,
    weights: SelectionWeights,
    logistics: LogisticConstraints,
    settings: ScaSettings | None = None,
    state: ScaState | None = None,
) -> ScaResult:
    """Iterate one of the convex approximations until the subproblem value
    settles within tol or the iteration cap is reached."""
    if variant not in (SCA1, SCA2):
        raise ValueError(f"unknown SCA variant {variant!r}")
    settings = settings or ScaSettings()
    t0 = time.perf_counter()
    if state is None:
        state = initial_state(system, weights, settings.solver)
    build = build_sca1_subproblem if variant == SCA1 else build_sca2_subproblem
    trace = ScaTrace()
    prev_lhat = None
    warm = None
    status = "max_iter"
    for k in range(1, settings.max_iter_num + 1):
        problem, blocks = build(system, weights, logistics, state, settings)
        sol = solve(problem, settings.solver, warm=warm)
        if not sol.optimal:
            status = "stalled" if trace.objectives else "infeasible"
            log.warning("SCA subproblem %d returned %s", k, sol.status)
            break
        warm = sol
        new = ScaState(
            k=k,
            S=blocks["S"].extract(sol.x),
            Z=blocks["Z"].extract(sol.x),
            pi=np.clip(blocks["pi"].extract(sol.x), 0.0, 1.0),
            zeta=blocks["zeta"].extract(sol.x),
            Q=blocks["Q"].extract(sol.x) if "Q" in blocks else state.Q,
        )
        step = float(np.sqrt(max(blocks["prox_t"].extract(sol.x).sum(), 0.0)))
        f_new = new.objective(weights)
        if trace.objectives and f_new > trace.objectives[-1] + 1e-8 * (
            1.0 + abs(f_new)
        ):
            log.warning(
                "non-monotone SCA step at k=%d: %.3e -> %.3e "
                "(solver accuracy)", k, trace.objectives[-1], f_new,
            )
        trace.objectives.append(f_new)
        trace.subproblem_values.append(sol.objective)
        trace.step_norms.append(step)
        state = new
        if prev_lhat is not None and abs(sol.objective - prev_lhat) < settings.tol:
            status = "converged"
            break
        if step <= settings.step_tol:
            status = "converged"
            break
        prev_lhat = sol.objective
    return ScaResult(
        variant=variant,
        bound=BoundValue(state.objective(weights), UPPER),
        pi=state.pi,
        state=state,
        trace=trace,
        iterations=len(trace.objectives),
        status=status,
        wall_time=time.perf_counter() - t0,
    )
