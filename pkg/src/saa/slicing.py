"""Recovery of a binary selection from a fractional one.

Entries of the relaxed selection vector are sorted in decreasing order;
the smallest activation count s compatible with the logistic rows is
found, and s is increased until the fixed-selection synthesis SDP is
feasible and the closed loop A - B_u Pi Z S^{-1} has negative spectral
abscissa.  The accepted selection yields an upper bound
f_final = (eta+1) zeta + alpha_pi' pi on the exact problem.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from .conic import SolverSettings
from .lmi import (
    closed_loop_abscissa,
    evaluate_objective,
    performance_index,
    solve_linf_fixed_pi,
)
from .linalg import spectral_abscissa
from .model import CpsSystem, LogisticConstraints, SelectionWeights

# Exhaustive subset search stays exact up to this many selection entries.
ENUMERATION_LIMIT = 20


class InfeasibleSelectionError(RuntimeError):
    """No binary selection satisfies the logistic constraints."""


class RecoveryFailedError(RuntimeError):
    """Every admissible activation count failed the stability check."""


@dataclass
class SelectionOutcome:
    pi: np.ndarray              # binary, one entry per node
    K: np.ndarray               # feedback gain Z* S*^{-1}
    lambda_m: float             # spectral abscissa of the closed loop
    zeta: float
    f_final: float
    s: int                      # activated count
    gain_bound: float           # sqrt((eta+1) zeta)
    S: np.ndarray
    Z: np.ndarray
    wall_time: float = 0.0

    @property
    def upper_bound(self) -> float:
        return self.f_final


def _pattern_for_count(
    order: np.ndarray, s: int, logistics: LogisticConstraints
) -> np.ndarray | None:
    """Best-ranked s-subset satisfying H pi <= h, or None.

    Tries the greedy top-s first; general rows fall back to exhaustive
    subset search in rank-preference order (exact up to
    ENUMERATION_LIMIT entries, greedy-only beyond)."""
    N = order.shape[0]
    pattern = np.zeros(N)
    pattern[order[:s]] = 1.0
    if logistics.admits(pattern):
        return pattern
    if N > ENUMERATION_LIMIT:
        return None
    for combo in itertools.combinations(range(N), s):
        pattern = np.zeros(N)
        pattern[order[list(combo)]] = 1.0
        if logistics.admits(pattern):
            return pattern
    return None


def selection_order(pi_real: np.ndarray) -> np.ndarray:
    """Indices sorted by decreasing relaxed value, ties to smaller index."""
    pi_real = np.asarray(pi_real, dtype=float)
    return np.argsort(-pi_real, kind="stable")


def min_activation_count(
    order: np.ndarray, logistics: LogisticConstraints
) -> int:
    """Smallest s whose best-ranked s-subset satisfies the logistic rows."""
    N = order.shape[0]
    if logistics.admits(np.zeros(N)):
        return 0
    for s in range(1, N + 1):
        if _pattern_for_count(order, s, logistics) is not None:
            return s
    raise InfeasibleSelectionError("no binary selection satisfies H pi <= h")


def slice_selection(
    pi_real: np.ndarray,
    system: CpsSystem,
    logistics: LogisticConstraints,
    weights: SelectionWeights,
    settings: SolverSettings | None = None,
    max_lambda_m: float = 0.0,
    min_zeta: float | None = None,
) -> SelectionOutcome:
    """Algorithm: sort, start from the minimum admissible count, and grow
    the selection until the fixed-selection SDP stabilizes the loop.

    ``max_lambda_m`` and ``min_zeta`` are optional user acceptance
    thresholds on top of the plain stability requirement.
    """
    t0 = time.perf_counter()
    pi_real = np.asarray(pi_real, dtype=float)
    if pi_real.shape != (system.N,):
        raise ValueError("pi_real must have one entry per node")
    if not np.all(np.isfinite(pi_real)):
        raise ValueError("pi_real must be finite")
    if not np.all((pi_real >= -1e-9) & (pi_real <= 1.0 + 1e-9)):
        raise ValueError("pi_real entries must lie in [0, 1]")
    if not logistics.admits(np.ones(system.N)):
        raise InfeasibleSelectionError(
            "logistics exclude the all-ones selection"
        )
    order = selection_order(pi_real)
    warm = None
    for s in range(min_activation_count(order, logistics), system.N + 1):
        pattern = _pattern_for_count(order, s, logistics)
        if pattern is None:
            continue
        fixed = solve_linf_fixed_pi(system, pattern, weights, settings, warm)
        if not fixed.feasible:
            continue  # treated like an unstable candidate: grow s
        warm = fixed.solution
        lam, K = closed_loop_abscissa(system, pattern, fixed.S, fixed.Z)
        if lam >= max_lambda_m:
            continue
        if min_zeta is not None and fixed.zeta < min_zeta:
            continue
        return SelectionOutcome(
            pi=pattern.astype(int).astype(float),
            K=K,
            lambda_m=lam,
            zeta=fixed.zeta,
            f_final=evaluate_objective(pattern, fixed.zeta, weights),
            s=int(pattern.sum()),
            gain_bound=performance_index(fixed.zeta, weights),
            S=fixed.S,
            Z=fixed.Z,
            wall_time=time.perf_counter() - t0,
        )
    raise RecoveryFailedError(
        "no activation count produced a stabilizing selection"
    )


def verify_outcome(
    outcome: SelectionOutcome,
    system: CpsSystem,
    logistics: LogisticConstraints,
) -> bool:
    """Independent re-check of the certificate: logistic rows hold in
    integer arithmetic and the closed loop is Hurwitz."""
    if not logistics.admits(outcome.pi, tol=0.0):
        return False
    B_hat = system.B_u * system.expand_pi(outcome.pi)[None, :]
    lam = spectral_abscissa(system.A - B_hat @ outcome.K)
    return lam < 0.0


def slice_multiperiod(
    pi_real_stacked: np.ndarray,
    stacked,
    settings: SolverSettings | None = None,
    max_lambda_m: float = 0.0,
) -> tuple[list[SelectionOutcome], float]:
    """Per-period recovery under jointly enforced cross-period rows.

    Grows the total activation count; at each count the best-ranked
    stacked pattern satisfying the full H pi <= h is split per period and
    every period must stabilize.  Returns the outcomes and the summed
    objective.  ``stacked`` is a model.StackedProblem.
    """
    spec = stacked.spec
    N, T_f = spec.N, spec.T_f
    pi_real_stacked = np.asarray(pi_real_stacked, dtype=float)
    if pi_real_stacked.shape != (N * T_f,):
        raise ValueError("stacked pi must have N*T_f entries")
    logistics = spec.logistics
    order = selection_order(pi_real_stacked)
    weights = spec.weights
    for s in range(min_activation_count(order, logistics), N * T_f + 1):
        pattern = _pattern_for_count(order, s, logistics)
        if pattern is None:
            continue
        outcomes = []
        for j in range(1, T_f + 1):
            sub = pattern[spec.period_slice(j)]
            system = spec.systems[j - 1]
            fixed = solve_linf_fixed_pi(system, sub, weights, settings)
            if not fixed.feasible:
                break
            lam, K = closed_loop_abscissa(system, sub, fixed.S, fixed.Z)
            if lam >= max_lambda_m:
                break
            outcomes.append(
                SelectionOutcome(
                    pi=sub.copy(), K=K, lambda_m=lam, zeta=fixed.zeta,
                    f_final=float(
                        (weights.eta + 1.0) * fixed.zeta
                        + stacked.alpha_pi[spec.period_slice(j)] @ sub
                    ),
                    s=int(sub.sum()),
                    gain_bound=performance_index(fixed.zeta, weights),
                    S=fixed.S, Z=fixed.Z,
                )
            )
        if len(outcomes) == T_f:
            return outcomes, float(sum(o.f_final for o in outcomes))
    raise RecoveryFailedError("no stacked activation count stabilizes all periods")
