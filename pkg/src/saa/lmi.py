"""Conic-program builders for the control and estimation formulations.

Central object: the robust L-infinity synthesis LMIs for a FIXED
selection.  With Pi constant the bilinear term B_u Pi Z becomes linear in
Z, so the problem

    min (eta+1) zeta
    s.t. [A S + S A' + alpha S - B_u Pi Z - Z' Pi B_u',  B_w ]
         [B_w',                                 -alpha eta I ]  <= 0
         [-S, 0, S C_z'; 0, -I, D_wz'; C_z S, D_wz, -zeta I]    <= 0
         S >= eps1 I,  zeta >= eps1

is an SDP.  Any accepted solution certifies
||z(t)||_2 <= sqrt((eta+1) zeta) * ||w(t)||_inf under u = -Z S^{-1} x.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .build import ConicBuilder, VarBlock
from .conic import ConicProblem, ConicSolution, SolverSettings, solve
from .linalg import project_psd, spectral_abscissa
from .model import CpsSystem, SelectionWeights

# Lower bound applied to S and zeta in every fixed-selection solve.
EPS1 = 1e-8

LOWER = "lower"
UPPER = "upper"
EXACT = "exact"


@dataclass(frozen=True)
class BoundValue:
    value: float
    direction: str

    def __post_init__(self):
        if self.direction not in (LOWER, UPPER, EXACT):
            raise ValueError(f"bad bound direction {self.direction!r}")


@dataclass
class LinfDecision:
    """Named decision variables with their index map into the conic x."""

    blocks: dict[str, VarBlock]
    pi: np.ndarray               # node-level selection used in the build
    n_x: int
    n_u: int

    def S(self, x: np.ndarray) -> np.ndarray:
        return self.blocks["S"].extract(x)

    def Z(self, x: np.ndarray) -> np.ndarray:
        return self.blocks["Z"].extract(x)

    def zeta(self, x: np.ndarray) -> float:
        return self.blocks["zeta"].extract(x)


def _embed(order: int, r0: int, c0: int, M: np.ndarray) -> np.ndarray:
    out = np.zeros((order, order))
    r, c = M.shape
    out[r0: r0 + r, c0: c0 + c] = M
    return out


def _sym_embed(order, r0, c0, M):
    out = _embed(order, r0, c0, M)
    if r0 != c0:
        out += _embed(order, c0, r0, M.T)
    return out


def add_stab_lmi(
    b: ConicBuilder,
    system: CpsSystem,
    weights: SelectionWeights,
    S: VarBlock,
    bilinear_terms: list[tuple[VarBlock, callable]],
    bilinear_const: np.ndarray | None = None,
) -> None:
    """The 2x2-block decay LMI with a caller-supplied (1,1) term standing
    in for -B_u Pi Z - Z' Pi B_u' (fixed-Pi and G-substituted variants)."""
    n_x, n_w = system.n_x, system.n_w
    alpha, eta = weights.alpha, weights.eta
    A, B_w = system.A, system.B_w
    d1 = n_x + n_w
    const1 = _sym_embed(d1, 0, n_x, B_w) + _embed(
        d1, n_x, n_x, -alpha * eta * np.eye(n_w)
    )
    if bilinear_const is not None:
        const1 += _embed(d1, 0, 0, bilinear_const)
    terms1 = [
        (S, lambda Sb: _embed(d1, 0, 0, A @ Sb + Sb @ A.T + alpha * Sb)),
    ]
    for blk, linmap in bilinear_terms:
        terms1.append((blk, (lambda f: (lambda B: _embed(d1, 0, 0, f(B))))(linmap)))
    b.add_lmi(d1, const1, terms1)


def add_perf_lmi(
    b: ConicBuilder,
    system: CpsSystem,
    S: VarBlock,
    zeta: VarBlock,
) -> None:
    """The 3x3-block performance LMI tying zeta to S."""
    n_x, n_w, n_z = system.n_x, system.n_w, system.n_z
    C_z, D_wz = system.C_z, system.D_wz
    d2 = n_x + n_w + n_z
    const2 = _embed(d2, n_x, n_x, -np.eye(n_w)) + _sym_embed(
        d2, n_x + n_w, n_x, D_wz
    )
    terms2 = [
        (
            S,
            lambda Sb: _embed(d2, 0, 0, -Sb)
            + _sym_embed(d2, 0, n_x + n_w, Sb @ C_z.T),
        ),
        (
            zeta,
            lambda t: _embed(d2, n_x + n_w, n_x + n_w, -t * np.eye(n_z)),
        ),
    ]
    b.add_lmi(d2, const2, terms2)


def add_floors(b: ConicBuilder, S: VarBlock, zeta: VarBlock, n_x: int) -> None:
    """S >= eps1 I and zeta >= eps1."""
    b.add_psd(n_x, -EPS1 * np.eye(n_x), [(S, lambda Sb: Sb)])
    b.add_ineq([[(zeta, 0, -1.0)]], [-EPS1])


def add_linf_lmis(
    b: ConicBuilder,
    system: CpsSystem,
    weights: SelectionWeights,
    S: VarBlock,
    zeta: VarBlock,
    bilinear_terms: list[tuple[VarBlock, callable]],
    floors: bool = True,
) -> None:
    add_stab_lmi(b, system, weights, S, bilinear_terms)
    add_perf_lmi(b, system, S, zeta)
    if floors:
        add_floors(b, S, zeta, system.n_x)


def build_linf_fixed_pi(
    system: CpsSystem,
    pi: np.ndarray,
    weights: SelectionWeights,
) -> tuple[ConicProblem, LinfDecision]:
    """Synthesis SDP for a fixed (possibly fractional) selection vector."""
    pi = np.asarray(pi, dtype=float)
    if np.any(pi < 0) or np.any(pi > 1):
        raise ValueError("pi entries must lie in [0, 1]")
    B_hat = system.B_u * system.expand_pi(pi)[None, :]

    b = ConicBuilder()
    S = b.sym("S", system.n_x)
    Z = b.mat("Z", system.n_u, system.n_x)
    zeta = b.scalar("zeta")
    b.add_cost(zeta, [weights.eta + 1.0])
    add_linf_lmis(
        b, system, weights, S, zeta,
        [(Z, lambda Zb: -B_hat @ Zb - Zb.T @ B_hat.T)],
    )
    problem, blocks = b.build()
    return problem, LinfDecision(
        blocks=blocks, pi=pi.copy(), n_x=system.n_x, n_u=system.n_u
    )


@dataclass
class FixedPiSolution:
    status: str
    S: np.ndarray | None
    Z: np.ndarray | None
    zeta: float
    objective: float            # (eta+1) zeta
    solution: ConicSolution

    @property
    def feasible(self) -> bool:
        return self.status == "optimal"


def solve_linf_fixed_pi(
    system: CpsSystem,
    pi: np.ndarray,
    weights: SelectionWeights,
    settings: SolverSettings | None = None,
    warm: ConicSolution | None = None,
) -> FixedPiSolution:
    problem, dec = build_linf_fixed_pi(system, pi, weights)
    sol = solve(problem, settings, warm=warm)
    if not sol.optimal:
        return FixedPiSolution(sol.status, None, None, np.nan, np.nan, sol)
    return FixedPiSolution(
        status=sol.status,
        S=dec.S(sol.x),
        Z=dec.Z(sol.x),
        zeta=dec.zeta(sol.x),
        objective=sol.objective,
        solution=sol,
    )


def feedback_gain(S: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """K = Z S^{-1} via Cholesky; falls back to a PSD-projected S."""
    try:
        f = cho_factor(S, lower=True)
    except np.linalg.LinAlgError:
        f = cho_factor(project_psd(S) + EPS1 * np.eye(S.shape[0]), lower=True)
    return cho_solve(f, Z.T).T


def closed_loop(system: CpsSystem, pi: np.ndarray, K: np.ndarray) -> np.ndarray:
    """A - B_u Pi K for a node-level selection vector."""
    B_hat = system.B_u * system.expand_pi(np.asarray(pi, float))[None, :]
    return system.A - B_hat @ K


def closed_loop_abscissa(system, pi, S, Z) -> tuple[float, np.ndarray]:
    K = feedback_gain(S, Z)
    return spectral_abscissa(closed_loop(system, pi, K)), K


def evaluate_objective(pi, zeta: float, weights: SelectionWeights) -> float:
    """(eta+1) zeta + alpha_pi' pi, the selection objective f."""
    pi = np.asarray(pi, dtype=float)
    if not np.all(np.isfinite(pi)) or not np.isfinite(zeta):
        raise ValueError("objective inputs must be finite")
    return float((weights.eta + 1.0) * zeta + weights.alpha_pi @ pi)


def performance_index(zeta: float, weights: SelectionWeights) -> float:
    """Certified gain sqrt((eta+1) zeta) from ||z|| <= k ||w||_inf."""
    return float(np.sqrt((weights.eta + 1.0) * max(zeta, 0.0)))


def build_stabilization_feasibility(
    system: CpsSystem,
) -> tuple[ConicProblem, dict[str, VarBlock]]:
    """Feasibility SDP: find S >= eps1 I with A S + S A' <= B_u B_u'."""
    n_x = system.n_x
    A = system.A
    BBt = system.B_u @ system.B_u.T
    b = ConicBuilder()
    S = b.sym("S", n_x)
    b.add_lmi(n_x, -BBt, [(S, lambda Sb: A @ Sb + Sb @ A.T)])
    b.add_psd(n_x, -EPS1 * np.eye(n_x), [(S, lambda Sb: Sb)])
    return b.build()


@dataclass
class ObserverDecision:
    blocks: dict[str, VarBlock]
    gamma: np.ndarray

    def P(self, x):
        return self.blocks["P"].extract(x)

    def Y(self, x):
        return self.blocks["Y"].extract(x)

    def kappa(self, x):
        return self.blocks["kappa"].extract(x)


def observer_lmi_terms(system: CpsSystem, weights: SelectionWeights):
    """Constant and per-block maps of the Lipschitz observer LMI of order
    2 n_x, excluding the bilinear -Y Gamma C - C' Gamma Y' part."""
    n_x = system.n_x
    alpha, beta = weights.alpha, system.beta
    A = system.A
    d = 2 * n_x
    const = np.zeros((d, d))

    def p_map(Pb):
        return _embed(d, 0, 0, A.T @ Pb + Pb @ A + alpha * Pb) + _sym_embed(
            d, 0, n_x, Pb
        )

    def kappa_map(t):
        return _embed(d, 0, 0, t * beta ** 2 * np.eye(n_x)) + _embed(
            d, n_x, n_x, -t * np.eye(n_x)
        )

    return d, const, p_map, kappa_map


def build_lipschitz_observer(
    system: CpsSystem,
    gamma: np.ndarray,
    weights: SelectionWeights,
) -> tuple[ConicProblem, ObserverDecision]:
    """Fixed-Gamma sensor LMI: find P >= eps1 I, Y, kappa >= eps1 with

        [A'P + PA - Y Gamma C - C' Gamma Y' + alpha P + kappa beta^2 I,  P]
        [P,                                                     -kappa I ]  <= 0
    """
    if system.C is None:
        raise ValueError("system has no output matrix C")
    gamma = np.asarray(gamma, dtype=float)
    C_hat = system.C * system.expand_gamma(gamma)[:, None]
    n_x, n_y = system.n_x, system.C.shape[0]
    d, const, p_map, kappa_map = observer_lmi_terms(system, weights)

    b = ConicBuilder()
    P = b.sym("P", n_x)
    Y = b.mat("Y", n_x, n_y)
    kappa = b.scalar("kappa")
    b.add_lmi(
        d,
        const,
        [
            (P, p_map),
            (Y, lambda Yb: _embed(d, 0, 0, -Yb @ C_hat - C_hat.T @ Yb.T)),
            (kappa, kappa_map),
        ],
    )
    b.add_psd(n_x, -EPS1 * np.eye(n_x), [(P, lambda Pb: Pb)])
    b.add_ineq([[(kappa, 0, -1.0)]], [-EPS1])
    problem, blocks = b.build()
    return problem, ObserverDecision(blocks=blocks, gamma=gamma.copy())
