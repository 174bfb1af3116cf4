"""One-shot SDP relaxations of the selection problem: lower bounds.

The bilinearity B_u Pi Z is pushed into G = Pi Z, which (Pi being
diagonal) splits into scalar equations G_{i,(l,m)} = pi_i Z_{i,(l,m)}.
Each scalar triple v = (G, Z, pi) is relaxed through a symmetric 3x3
moment block V with

    trace(E V) - e'v = 0,   [[V, v], [v', 1]] >= 0,

where E picks twice the (Z, pi) entry of V and e = (2, 0, 0).  Dropping
rank(V) = 1 yields the relaxation; if every solved block is rank one the
relaxed value matches the box-constrained problem.  The tightened variant
adds the nuclear-norm cap ||V||_* <= 1, which is the linear row
trace(V) <= 1 since the moment block forces V to be PSD.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .build import ConicBuilder, VarBlock
from .conic import ConicProblem, ConicSolution, SolverSettings, solve
from .lmi import (
    BoundValue,
    LOWER,
    add_perf_lmi,
    add_stab_lmi,
    _embed,
    _sym_embed,
)
from .linalg import svec, sym_eig
from .model import CpsSystem, LogisticConstraints, SelectionWeights

E_MATRIX = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
E_VECTOR = np.array([2.0, 0.0, 0.0])

RANK1_RATIO_TOL = 1e-5


def bilinear_residual(v: np.ndarray, V: np.ndarray) -> float:
    """trace(E V) - e'v, zero exactly when the moment block encodes
    G = pi * Z."""
    return float(np.trace(E_MATRIX @ V) - E_VECTOR @ v)


@dataclass(frozen=True)
class Triple:
    """One scalar bilinear constraint G_{i,(l,m)} = pi_i Z_{i,(l,m)}."""

    node: int        # i, 0-based
    flat: int        # row-major index of (l, m) into the stacked Z/G
    vblock: str      # name of the 3x3 moment block


@dataclass
class SdprDecision:
    blocks: dict[str, VarBlock]
    triples: list[Triple]
    N: int

    def pi(self, x):
        return np.clip(self.blocks["pi"].extract(x), 0.0, 1.0)

    def S(self, x):
        return self.blocks["S"].extract(x)

    def Z(self, x):
        return self.blocks["Z"].extract(x)

    def G(self, x):
        return self.blocks["G"].extract(x)

    def zeta(self, x):
        return self.blocks["zeta"].extract(x)

    def v_of(self, x, t: Triple) -> np.ndarray:
        G = self.blocks["G"].extract(x)
        Z = self.blocks["Z"].extract(x)
        pi = self.blocks["pi"].extract(x)
        g = G.ravel()[t.flat]
        z = Z.ravel()[t.flat]
        return np.array([g, z, pi[t.node]])


def _add_triples(
    b: ConicBuilder,
    system: CpsSystem,
    Z: VarBlock,
    G: VarBlock,
    pi: VarBlock,
    nuclear: bool,
) -> list[Triple]:
    n_x = system.n_x
    triples = []
    row_node = np.repeat(np.arange(system.N), system.partition)
    svec_E = svec(E_MATRIX)
    for l in range(system.n_u):
        i = int(row_node[l])
        for m in range(n_x):
            flat = l * n_x + m
            V = b.sym(f"V{l}_{m}", 3)
            t = Triple(node=i, flat=flat, vblock=V.name)
            triples.append(t)
            # trace(E V) - e'v = 0  (e'v = 2 G)
            row = [(V, j, svec_E[j]) for j in np.nonzero(svec_E)[0]]
            row.append((G, flat, -2.0))
            b.add_eq([row], [0.0])
            # [[V, v],[v', 1]] >= 0
            const = np.zeros((4, 4))
            const[3, 3] = 1.0
            b.add_psd(
                4,
                const,
                terms=[(V, lambda Vb: _embed(4, 0, 0, Vb))],
                entry_terms=[
                    (G, flat, _sym_embed(4, 0, 3, np.array([[1.0], [0], [0]]))),
                    (Z, flat, _sym_embed(4, 0, 3, np.array([[0], [1.0], [0]]))),
                    (pi, i, _sym_embed(4, 0, 3, np.array([[0], [0], [1.0]]))),
                ],
            )
            if nuclear:
                # PSD moment block makes the nuclear norm equal the trace
                b.add_ineq(
                    [[(V, j, c) for j, c in zip(*_svec_eye3())]], [1.0]
                )
    return triples


def _svec_eye3():
    v = svec(np.eye(3))
    nz = np.nonzero(v)[0]
    return nz, v[nz]


def _build(
    system: CpsSystem,
    weights: SelectionWeights,
    logistics: LogisticConstraints,
    nuclear: bool,
) -> tuple[ConicProblem, SdprDecision]:
    N = system.N
    if logistics.n_cols != N:
        raise ValueError("logistics must be single-period here")
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
    triples = _add_triples(b, system, Z, G, pi, nuclear)
    b.add_box(pi, 0.0, 1.0)
    if logistics.n_rows:
        rows = [
            [(pi, j, logistics.H[r, j]) for j in range(N) if logistics.H[r, j]]
            for r in range(logistics.n_rows)
        ]
        b.add_ineq(rows, logistics.h)
    problem, blocks = b.build()
    return problem, SdprDecision(blocks=blocks, triples=triples, N=N)


def build_sdpr(system, weights, logistics):
    """The plain relaxation (lower bound L-tilde)."""
    return _build(system, weights, logistics, nuclear=False)


def build_sdprn(system, weights, logistics):
    """The nuclear-norm tightened relaxation (lower bound L-breve)."""
    return _build(system, weights, logistics, nuclear=True)


@dataclass
class TightnessReport:
    ratios: np.ndarray          # second/largest eigenvalue per moment block
    max_ratio: float
    tight: bool
    threshold: float = RANK1_RATIO_TOL


def certify_rank1(
    vblocks: list[np.ndarray], threshold: float = RANK1_RATIO_TOL
) -> TightnessReport:
    """Rank-one certificate: when every block has eigenvalue ratio
    lambda_2 / lambda_1 below the threshold, the relaxation value equals
    the box-constrained optimum."""
    ratios = []
    for V in vblocks:
        w, _ = sym_eig(V)
        lead = max(float(w[-1]), 0.0)
        second = max(float(w[-2]), 0.0) if len(w) > 1 else 0.0
        ratios.append(second / lead if lead > 1e-12 else 0.0)
    ratios = np.asarray(ratios)
    mx = float(ratios.max()) if ratios.size else 0.0
    return TightnessReport(
        ratios=ratios, max_ratio=mx, tight=mx <= threshold, threshold=threshold
    )


@dataclass
class RelaxationResult:
    bound: BoundValue
    pi: np.ndarray
    S: np.ndarray
    Z: np.ndarray
    G: np.ndarray
    zeta: float
    vblocks: list[np.ndarray]
    tightness: TightnessReport
    solution: ConicSolution
    wall_time: float

    @property
    def value(self) -> float:
        return self.bound.value


def reconstruct_vblock(v: np.ndarray) -> np.ndarray:
    """Minimum-trace moment block for a solved triple: V = v v' + W with
    W chosen so the trace identity holds exactly and [[V, v],[v', 1]] is
    PSD by construction (a sum of two PSD matrices)."""
    delta = v[0] - v[1] * v[2]   # G - Z*pi
    W = np.zeros((3, 3))
    W[1, 1] = W[2, 2] = abs(delta)
    W[1, 2] = W[2, 1] = delta
    return np.outer(v, v) + W


def _solve(system, weights, logistics, settings, nuclear) -> RelaxationResult:
    t0 = time.perf_counter()
    problem, dec = _build(system, weights, logistics, nuclear)
    sol = solve(problem, settings)
    if not sol.optimal:
        raise RelaxationError(
            f"relaxation solve returned {sol.status}", sol
        )
    vblocks = [reconstruct_vblock(dec.v_of(sol.x, t)) for t in dec.triples]
    return RelaxationResult(
        bound=BoundValue(sol.objective, LOWER),
        pi=dec.pi(sol.x),
        S=dec.S(sol.x),
        Z=dec.Z(sol.x),
        G=dec.G(sol.x),
        zeta=dec.zeta(sol.x),
        vblocks=vblocks,
        tightness=certify_rank1(vblocks),
        solution=sol,
        wall_time=time.perf_counter() - t0,
    )


class RelaxationError(RuntimeError):
    def __init__(self, msg, solution=None):
        super().__init__(msg)
        self.solution = solution


def solve_sdpr(system, weights, logistics, settings: SolverSettings | None = None):
    return _solve(system, weights, logistics, settings, nuclear=False)


def solve_sdprn(system, weights, logistics, settings: SolverSettings | None = None):
    return _solve(system, weights, logistics, settings, nuclear=True)
