"""First-order solver for linear conic programs over zero/nonneg/PSD cones.

Solves the standard form

    minimize    c'x
    subject to  Ax + s = b,  s in K

together with its dual via the homogeneous self-dual embedding, using
operator splitting (ADMM).  The embedding makes primal and dual
infeasibility certificates fall out of the same iteration; the splitting
map is positively homogeneous, so iterates are renormalized each step to
keep the embedding away from its trivial fixed point.

Data is equilibrated with a Ruiz-style diagonal scaling before solving;
row scalings are kept uniform inside each PSD block so the scaled slack
cone is still a product of PSD cones.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve

from .cones import ConeProjector, ConeSpec, NONNEG, ZERO
from .linalg import tri_dim

OPTIMAL = "optimal"
PRIMAL_INFEASIBLE = "primal_infeasible"
DUAL_INFEASIBLE = "dual_infeasible"
MAX_ITER = "max_iter"
NUMERICAL_FAILURE = "numerical_failure"

_RUIZ_PASSES = 10
_MIN_SCALE = 1e-8
_MIN_TAU = 1e-12


@dataclass
class SolverSettings:
    eps_abs: float = 1e-7
    eps_rel: float = 1e-7
    max_iter: int = 200_000
    relax: float = 1.5          # over-relaxation factor in (0, 2)
    scale: bool = True          # Ruiz diagonal equilibration
    eps_infeas: float = 1e-9
    check_every: int = 25

    def __post_init__(self):
        if self.eps_abs <= 0 or self.eps_rel <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0.0 < self.relax < 2.0:
            raise ValueError("over-relaxation factor must lie in (0, 2)")


@dataclass(frozen=True)
class ConicProblem:
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    cones: ConeSpec

    def __post_init__(self):
        A = self.A if sp.issparse(self.A) else sp.csr_matrix(self.A)
        object.__setattr__(self, "A", sp.csr_matrix(A))
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))
        m, n = self.A.shape
        if self.c.shape != (n,) or self.b.shape != (m,):
            raise ValueError("dimension mismatch between c, A, b")
        if self.cones.total_rows != m:
            raise ValueError("cone dimensions do not match A")
        if not (
            np.all(np.isfinite(self.c))
            and np.all(np.isfinite(self.b))
            and np.all(np.isfinite(self.A.data))
        ):
            raise ValueError("problem data must be finite")

    @property
    def num_vars(self) -> int:
        return self.A.shape[1]

    @property
    def num_rows(self) -> int:
        return self.A.shape[0]


@dataclass
class ConicSolution:
    status: str
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    objective: float
    prim_res: float
    dual_res: float
    gap: float
    iterations: int
    solve_time: float = 0.0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _ruiz_equilibrate(A: sp.csr_matrix, cones: ConeSpec):
    """Block-uniform Ruiz scaling.  Returns (D, E) with A_hat = D A E."""
    m, n = A.shape
    D = np.ones(m)
    E = np.ones(n)
    # rows of each cone block share one scaling factor
    block_of_row = np.empty(m, dtype=int)
    uniform = []
    for bi, (cone, sl) in enumerate(cones.row_slices()):
        block_of_row[sl] = bi
        uniform.append(cone.kind not in (ZERO, NONNEG))
    nblocks = len(uniform)
    Aw = A.copy().tocsr()
    for _ in range(_RUIZ_PASSES):
        Aabs = abs(Aw)
        row_norm = np.asarray(Aabs.max(axis=1).todense()).ravel()
        # unify within PSD blocks via the block max
        blk_max = np.zeros(nblocks)
        np.maximum.at(blk_max, block_of_row, row_norm)
        for bi in range(nblocks):
            if uniform[bi]:
                row_norm[block_of_row == bi] = blk_max[bi]
        col_norm = np.asarray(Aabs.max(axis=0).todense()).ravel()
        dr = 1.0 / np.sqrt(np.maximum(row_norm, _MIN_SCALE))
        dc = 1.0 / np.sqrt(np.maximum(col_norm, _MIN_SCALE))
        dr[row_norm == 0] = 1.0
        dc[col_norm == 0] = 1.0
        D *= dr
        E *= dc
        Aw = sp.diags(dr) @ Aw @ sp.diags(dc)
    return D, E


class _Workspace:
    """Scaled data plus the factorization used by every iteration."""

    def __init__(self, problem: ConicProblem, settings: SolverSettings):
        self.problem = problem
        self.settings = settings
        self.proj = ConeProjector(problem.cones)
        m, n = problem.A.shape
        self.m, self.n = m, n
        if settings.scale:
            self.D, self.E = _ruiz_equilibrate(problem.A, problem.cones)
        else:
            self.D, self.E = np.ones(m), np.ones(n)
        self.A = sp.csr_matrix(
            sp.diags(self.D) @ problem.A @ sp.diags(self.E)
        )
        self.b = self.D * problem.b
        self.c = self.E * problem.c
        # scalar scalings keep b and c comparable in norm
        self.sigma = 1.0 / max(np.linalg.norm(self.b), 1.0)
        self.rho = 1.0 / max(np.linalg.norm(self.c), 1.0)
        self.b = self.b * self.sigma
        self.c = self.c * self.rho
        self.AT = sp.csr_matrix(self.A.T)
        # dense matvecs beat sparse dispatch overhead at this scale
        self.dense = m * n <= 2_000_000
        if self.dense:
            self.A_d = self.A.toarray()
            self.AT_d = self.A_d.T.copy()
        G = (self.AT @ self.A).toarray()
        G[np.diag_indices_from(G)] += 1.0
        self.chol = cho_factor(G, lower=True)
        self.h = np.concatenate([self.c, self.b])
        g = self._solve_M(self.h)
        self.g = g
        self.hg = 1.0 + float(self.h @ g)
        self.znorm = np.sqrt(m + n + 1.0)

    def _Ax(self, x):
        return self.A_d @ x if self.dense else self.A @ x

    def _ATy(self, y):
        return self.AT_d @ y if self.dense else self.AT @ y

    def _solve_M(self, w: np.ndarray) -> np.ndarray:
        wx, wy = w[: self.n], w[self.n:]
        px = cho_solve(self.chol, wx - self._ATy(wy), check_finite=False)
        py = wy + self._Ax(px)
        return np.concatenate([px, py])

    def project_u(self, z: np.ndarray) -> np.ndarray:
        u = z.copy()
        u[self.n:-1] = self.proj.project_dual(z[self.n:-1])
        u[-1] = max(z[-1], 0.0)
        return u

    def step(self, z: np.ndarray, u: np.ndarray | None = None):
        """One application of the splitting map, radially renormalized.

        The map is positively homogeneous, so rescaling to a fixed norm
        after each step changes nothing but keeps the iteration away from
        the trivial fixed point at the origin (which Anderson steps would
        otherwise drift into).  Returns (z_next, u_next) with
        u_next = Pi_C(z_next).
        """
        if u is None:
            u = self.project_u(z)
        v = z - u
        # linear step: solve (I + Q) u_tilde = z
        p = self._solve_M(z[:-1])
        tau = (z[-1] + self.h @ p) / self.hg
        xy = p - tau * self.g
        alpha = self.settings.relax
        w = np.empty_like(z)
        w[:-1] = alpha * xy + (1.0 - alpha) * u[:-1] - v[:-1]
        w[-1] = alpha * tau + (1.0 - alpha) * u[-1] - v[-1]
        u_next = self.project_u(w)
        z_next = 2.0 * u_next - w
        nrm = np.linalg.norm(z_next)
        if nrm > 0 and np.isfinite(nrm):
            scale = self.znorm / nrm
            z_next = z_next * scale
            u_next = u_next * scale
        return z_next, u_next

    def unscale(self, u: np.ndarray, v: np.ndarray, tau: float):
        x = self.E * u[: self.n] / tau * (1.0 / self.sigma)
        y = self.D * u[self.n:-1] / tau * (1.0 / self.rho)
        s = (v[self.n:-1] / self.D) / tau * (1.0 / self.sigma)
        return x, y, s


class _Residuals:
    def __init__(self, problem: ConicProblem):
        self.problem = problem
        self.norm_b = np.linalg.norm(problem.b)
        self.norm_c = np.linalg.norm(problem.c)

    def evaluate(self, x, y, s):
        p = self.problem
        rp = np.linalg.norm(p.A @ x + s - p.b) / (1.0 + self.norm_b)
        rd = np.linalg.norm(p.A.T @ y + p.c) / (1.0 + self.norm_c)
        ctx = float(p.c @ x)
        bty = float(p.b @ y)
        gap = abs(ctx + bty) / (1.0 + abs(ctx) + abs(bty))
        return rp, rd, gap, ctx


def solve(
    problem: ConicProblem,
    settings: SolverSettings | None = None,
    warm: ConicSolution | tuple | None = None,
) -> ConicSolution:
    """Solve a conic problem; see module docstring for the formulation."""
    settings = settings or SolverSettings()
    t0 = time.perf_counter()
    ws = _Workspace(problem, settings)
    res = _Residuals(problem)
    n, m = ws.n, ws.m

    z = np.zeros(n + m + 1)
    z[-1] = 1.0
    if warm is not None:
        if isinstance(warm, ConicSolution):
            wx, wy, wsl = warm.x, warm.y, warm.s
        else:
            wx, wy, wsl = warm
        if (
            wx.shape == (n,)
            and wy.shape == (m,)
            and wsl.shape == (m,)
            and np.all(np.isfinite(wx))
            and np.all(np.isfinite(wy))
            and np.all(np.isfinite(wsl))
        ):
            z[:n] = (wx / ws.E) * ws.sigma
            z[n:-1] = ws.D * wy * ws.rho + (ws.D * wsl) * ws.sigma
            z[-1] = 1.0
    z *= ws.znorm / np.linalg.norm(z)

    best: tuple[float, ConicSolution] | None = None
    fail_status = MAX_ITER
    u = ws.project_u(z)
    iters_done = 0

    def snapshot(status: str, it: int) -> ConicSolution | None:
        v = z - u
        tau = u[-1]
        if tau <= _MIN_TAU:
            return None
        x, y, s = ws.unscale(u, v, tau)
        if not (
            np.all(np.isfinite(x))
            and np.all(np.isfinite(y))
            and np.all(np.isfinite(s))
        ):
            return None
        rp, rd, gap, ctx = res.evaluate(x, y, s)
        return ConicSolution(
            status=status, x=x, y=y, s=s, objective=ctx,
            prim_res=rp, dual_res=rd, gap=gap, iterations=it,
        )

    def check_certificates(it: int) -> ConicSolution | None:
        v = z - u
        p = problem
        # primal infeasibility: A'y ~ 0, b'y < 0, y in K*
        y = ws.D * u[n:-1]
        bty = float(p.b @ y)
        if bty < -1e-14:
            yc = y / (-bty)
            if np.linalg.norm(p.A.T @ yc) * (1.0 + res.norm_c) <= settings.eps_infeas * max(
                1.0, np.linalg.norm(yc)
            ):
                return ConicSolution(
                    status=PRIMAL_INFEASIBLE, x=np.full(n, np.nan), y=yc,
                    s=np.full(m, np.nan), objective=np.nan,
                    prim_res=np.nan, dual_res=np.nan, gap=np.nan, iterations=it,
                )
        # dual infeasibility: Ax + s ~ 0, c'x < 0, s in K
        x = ws.E * u[:n]
        s = v[n:-1] / ws.D
        ctx = float(p.c @ x)
        if ctx < -1e-14:
            xc = x / (-ctx)
            sc = s / (-ctx)
            if np.linalg.norm(p.A @ xc + sc) * (1.0 + res.norm_b) <= settings.eps_infeas * max(
                1.0, np.linalg.norm(xc)
            ):
                return ConicSolution(
                    status=DUAL_INFEASIBLE, x=xc, y=np.full(m, np.nan),
                    s=sc, objective=np.nan,
                    prim_res=np.nan, dual_res=np.nan, gap=np.nan, iterations=it,
                )
        return None

    k = 0
    while k < settings.max_iter:
        z_next, u_next = ws.step(z, u)
        if not np.all(np.isfinite(z_next)):
            fail_status = NUMERICAL_FAILURE
            break
        z, u = z_next, u_next
        k += 1
        iters_done = k

        if k % settings.check_every == 0 or k == settings.max_iter:
            sol = snapshot(OPTIMAL, k)
            if sol is not None:
                score = max(sol.prim_res, sol.dual_res, sol.gap)
                if best is None or score < best[0]:
                    best = (score, sol)
                if (
                    sol.prim_res <= settings.eps_rel
                    and sol.dual_res <= settings.eps_rel
                    and sol.gap
                    <= max(
                        settings.eps_rel,
                        settings.eps_abs
                        / (1.0 + abs(sol.objective)),
                    )
                ):
                    sol.solve_time = time.perf_counter() - t0
                    return sol
            cert = check_certificates(k)
            if cert is not None:
                cert.solve_time = time.perf_counter() - t0
                return cert

    if best is not None:
        out = best[1]
        out.status = fail_status
        out.iterations = iters_done
        out.solve_time = time.perf_counter() - t0
        return out
    return ConicSolution(
        status=fail_status,
        x=np.full(n, np.nan), y=np.full(m, np.nan), s=np.full(m, np.nan),
        objective=np.nan, prim_res=np.nan, dual_res=np.nan, gap=np.nan,
        iterations=iters_done, solve_time=time.perf_counter() - t0,
    )


@dataclass
class InteriorResult:
    """Outcome of the max-margin strict feasibility solve."""

    status: str                 # "interior", "infeasible", or a solver status
    x: np.ndarray | None
    margin: float
    solution: ConicSolution | None = None


def strict_interior(
    problem: ConicProblem,
    settings: SolverSettings | None = None,
    min_margin: float = 1e-8,
    margin_cap: float = 1.0,
) -> InteriorResult:
    """Find a point with all inequality slacks strictly inside their cones.

    Maximizes a uniform slack margin t (capped to keep the problem
    bounded); equality rows carry no margin.  Returns a certified
    infeasible status when no feasible point exists at all.
    """
    settings = settings or SolverSettings()
    proj = ConeProjector(problem.cones)
    e = proj.margin_vector()
    m, n = problem.A.shape
    A_aug = sp.hstack([problem.A, sp.csr_matrix(e.reshape(-1, 1))])
    # extra row: t <= margin_cap
    cap_row = sp.csr_matrix(
        (np.array([1.0]), (np.array([0]), np.array([n]))), shape=(1, n + 1)
    )
    A_aug = sp.vstack([A_aug, cap_row]).tocsr()
    b_aug = np.concatenate([problem.b, [margin_cap]])
    c_aug = np.concatenate([np.zeros(n), [-1.0]])
    from .cones import Cone  # local import to avoid cycle at module load

    cones_aug = ConeSpec(problem.cones.cones + (Cone(NONNEG, 1),))
    aug = ConicProblem(c=c_aug, A=A_aug, b=b_aug, cones=cones_aug)
    sol = solve(aug, settings)
    if sol.status == PRIMAL_INFEASIBLE:
        return InteriorResult("infeasible", None, -np.inf, sol)
    if sol.status != OPTIMAL:
        return InteriorResult(sol.status, None, np.nan, sol)
    margin = float(sol.x[n])
    if margin < min_margin:
        return InteriorResult("infeasible", None, margin, sol)
    return InteriorResult("interior", sol.x[:n].copy(), margin, sol)
