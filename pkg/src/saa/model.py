"""System data model, logistic constraints, and the benchmark generator.

A :class:`CpsSystem` holds one period's state-space data

    xdot = A x + B_u Pi u + B_w w,     z = C_z x + D_wz w

with the per-node input partition that gives the selection matrix
Pi = blkdiag(pi_i * I_{n_ui}).  Optional observer data (C, beta) enables
the Lipschitz sensor-selection variant.

Logistic constraints are linear rows H pi <= h over the stacked
(period-major) binary selection vector; builders cover activation fixing,
precedence, exclusion and per-period count bounds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np


def _as_matrix(M, name: str) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError(f"{name} must be a matrix")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


@dataclass(frozen=True)
class CpsSystem:
    A: np.ndarray
    B_u: np.ndarray
    B_w: np.ndarray
    C_z: np.ndarray
    D_wz: np.ndarray
    partition: tuple[int, ...]
    C: np.ndarray | None = None
    beta: float | None = None
    y_partition: tuple[int, ...] | None = None
    positions: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "A", _as_matrix(self.A, "A"))
        object.__setattr__(self, "B_u", _as_matrix(self.B_u, "B_u"))
        object.__setattr__(self, "B_w", _as_matrix(self.B_w, "B_w"))
        object.__setattr__(self, "C_z", _as_matrix(self.C_z, "C_z"))
        object.__setattr__(self, "D_wz", _as_matrix(self.D_wz, "D_wz"))
        object.__setattr__(self, "partition", tuple(int(p) for p in self.partition))
        n_x = self.A.shape[0]
        if self.A.shape != (n_x, n_x):
            raise ValueError("A must be square")
        if self.B_u.shape[0] != n_x or self.B_w.shape[0] != n_x:
            raise ValueError("B_u/B_w row count must match A")
        if self.C_z.shape[1] != n_x:
            raise ValueError("C_z column count must match A")
        if self.D_wz.shape != (self.C_z.shape[0], self.B_w.shape[1]):
            raise ValueError("D_wz must be n_z x n_w")
        if any(p < 1 for p in self.partition):
            raise ValueError("partition entries must be >= 1")
        if sum(self.partition) != self.B_u.shape[1]:
            raise ValueError("partition must sum to n_u")
        if self.C is not None:
            C = _as_matrix(self.C, "C")
            object.__setattr__(self, "C", C)
            if C.shape[1] != n_x:
                raise ValueError("C column count must match A")
            if self.y_partition is None:
                if C.shape[0] % self.N:
                    raise ValueError(
                        "y_partition required when n_y is not a multiple of N"
                    )
                object.__setattr__(
                    self, "y_partition", (C.shape[0] // self.N,) * self.N
                )
            elif sum(self.y_partition) != C.shape[0]:
                raise ValueError("y_partition must sum to n_y")
            if self.beta is None or self.beta <= 0:
                raise ValueError("observer systems need a Lipschitz beta > 0")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B_u.shape[1]

    @property
    def n_w(self) -> int:
        return self.B_w.shape[1]

    @property
    def n_z(self) -> int:
        return self.C_z.shape[0]

    @property
    def N(self) -> int:
        return len(self.partition)

    def expand_pi(self, pi: np.ndarray) -> np.ndarray:
        """Diagonal of Pi = blkdiag(pi_i I_{n_ui}) as a length-n_u vector."""
        pi = np.asarray(pi, dtype=float)
        if pi.shape != (self.N,):
            raise ValueError("pi must have one entry per node")
        return np.repeat(pi, self.partition)

    def expand_gamma(self, gamma: np.ndarray) -> np.ndarray:
        if self.y_partition is None:
            raise ValueError("system has no sensor partition")
        gamma = np.asarray(gamma, dtype=float)
        if gamma.shape != (self.N,):
            raise ValueError("gamma must have one entry per node")
        return np.repeat(gamma, self.y_partition)


@dataclass(frozen=True)
class SelectionWeights:
    alpha_pi: np.ndarray
    alpha: float = 1.0
    eta: float = 1.0

    def __post_init__(self):
        object.__setattr__(
            self, "alpha_pi", np.atleast_1d(np.asarray(self.alpha_pi, float))
        )
        if np.any(self.alpha_pi < 0):
            raise ValueError("alpha_pi must be nonnegative")
        if self.alpha <= 0 or self.eta <= 0:
            raise ValueError("alpha and eta must be positive")

    @classmethod
    def uniform(cls, N: int, alpha: float = 1.0, eta: float = 1.0):
        return cls(alpha_pi=np.ones(N), alpha=alpha, eta=eta)


@dataclass(frozen=True)
class LogisticConstraints:
    H: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        if H.ndim != 2:
            H = H.reshape(0 if H.size == 0 else 1, -1)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "h", np.atleast_1d(np.asarray(self.h, float)))
        if self.H.shape[0] != self.h.shape[0]:
            raise ValueError("H and h row counts differ")

    @classmethod
    def empty(cls, n_cols: int) -> "LogisticConstraints":
        return cls(H=np.zeros((0, n_cols)), h=np.zeros(0))

    @property
    def n_rows(self) -> int:
        return self.H.shape[0]

    @property
    def n_cols(self) -> int:
        return self.H.shape[1]

    def admits(self, pi: np.ndarray, tol: float = 1e-9) -> bool:
        pi = np.asarray(pi, dtype=float)
        if self.n_rows == 0:
            return True
        return bool(np.all(self.H @ pi <= self.h + tol))

    def stack(self, other: "LogisticConstraints") -> "LogisticConstraints":
        if self.n_cols != other.n_cols:
            raise ValueError("column counts differ")
        return LogisticConstraints(
            H=np.vstack([self.H, other.H]), h=np.concatenate([self.h, other.h])
        )


def _stacked_index(N: int, T_f: int, i: int, j: int) -> int:
    """Period-major position of node i (1-based) in period j (1-based)."""
    if not 1 <= i <= N:
        raise IndexError(f"node index {i} out of range 1..{N}")
    if not 1 <= j <= T_f:
        raise IndexError(f"period index {j} out of range 1..{T_f}")
    return (j - 1) * N + (i - 1)


def min_count_constraint(N: int, T_f: int, lower: int) -> LogisticConstraints:
    """Per period: sum_i pi_i^j >= lower, encoded as -1' pi^j <= -lower."""
    if lower < 0 or lower > N:
        raise ValueError(f"lower bound {lower} infeasible for N={N}")
    H = np.zeros((T_f, N * T_f))
    h = np.zeros(T_f)
    for j in range(T_f):
        if lower > 0:
            H[j, j * N: (j + 1) * N] = -1.0
        h[j] = -float(lower) if lower > 0 else 0.0
    return LogisticConstraints(H=H, h=h)


def precedence_constraint(
    N: int, T_f: int, k: int, i: int, j: int
) -> LogisticConstraints:
    """Actuator k may be selected at period j+1 only if i was selected at j."""
    row = np.zeros((1, N * T_f))
    row[0, _stacked_index(N, T_f, k, j + 1)] = 1.0
    row[0, _stacked_index(N, T_f, i, j)] = -1.0
    return LogisticConstraints(H=row, h=np.zeros(1))


def exclusion_constraint(
    N: int, T_f: int, k: int, i: int, j: int
) -> LogisticConstraints:
    """Actuator k must be deselected at period j+1 if i was selected at j."""
    row = np.zeros((1, N * T_f))
    row[0, _stacked_index(N, T_f, k, j + 1)] = 1.0
    row[0, _stacked_index(N, T_f, i, j)] = 1.0
    return LogisticConstraints(H=row, h=np.ones(1))


def fix_constraint(
    N: int, T_f: int, i: int, j: int, value: int
) -> LogisticConstraints:
    """Force pi_i^j <= 0 (value 0) or pi_i^j >= 1 (value 1)."""
    row = np.zeros((1, N * T_f))
    idx = _stacked_index(N, T_f, i, j)
    if value == 0:
        row[0, idx] = 1.0
        return LogisticConstraints(H=row, h=np.zeros(1))
    if value == 1:
        row[0, idx] = -1.0
        return LogisticConstraints(H=row, h=-np.ones(1))
    raise ValueError("value must be 0 or 1")


def combine_constraints(*parts: LogisticConstraints) -> LogisticConstraints:
    out = parts[0]
    for p in parts[1:]:
        out = out.stack(p)
    return out


# Per-node dynamics of the random benchmark network: each node carries a
# stable 2-state block and a single input/noise channel on the second state.
_NODE_A = np.array([[-1.0, -1.0], [-1.0, -2.0]])
_NODE_B = np.array([[0.0], [1.0]])


def random_network(N: int, seed: int) -> CpsSystem:
    """Random dynamic network with distance-decaying coupling.

    Node positions are drawn uniformly in the square [0, N/5]^2; the
    coupling gain from node j into node i is exp(-d(i, j)) on both states.
    Deterministic for a fixed seed; positions are kept on the returned
    system for auditability.
    """
    if N < 2:
        raise ValueError("random_network needs N >= 2")
    rng = np.random.default_rng(seed)
    box = N / 5.0
    positions = rng.uniform(0.0, box, size=(N, 2))
    n_x = 2 * N
    A = np.zeros((n_x, n_x))
    for i in range(N):
        A[2 * i: 2 * i + 2, 2 * i: 2 * i + 2] = _NODE_A
        for j in range(N):
            if i == j:
                continue
            d = float(np.linalg.norm(positions[i] - positions[j]))
            A[2 * i: 2 * i + 2, 2 * j: 2 * j + 2] = np.exp(-d) * np.eye(2)
    B = np.zeros((n_x, N))
    for i in range(N):
        B[2 * i: 2 * i + 2, i: i + 1] = _NODE_B
    return CpsSystem(
        A=A,
        B_u=B,
        B_w=B.copy(),
        C_z=np.eye(n_x),
        D_wz=np.zeros((n_x, N)),
        partition=(1,) * N,
        positions=positions,
    )


def benchmark_instance(N: int, seed: int):
    """System plus the standard benchmark weights and count constraint."""
    system = random_network(N, seed)
    weights = SelectionWeights.uniform(N)
    logistics = min_count_constraint(N, 1, N // 4)
    return system, weights, logistics


@dataclass(frozen=True)
class MultiPeriodSpec:
    systems: tuple[CpsSystem, ...]
    weights: SelectionWeights
    logistics: LogisticConstraints

    def __post_init__(self):
        object.__setattr__(self, "systems", tuple(self.systems))
        if not self.systems:
            raise ValueError("need at least one period")
        first = self.systems[0]
        for s in self.systems[1:]:
            if (
                s.n_x != first.n_x
                or s.n_u != first.n_u
                or s.partition != first.partition
            ):
                raise ValueError("periods must be dimension-compatible")
        n_cols = first.N * self.T_f
        if self.logistics.n_cols != n_cols:
            raise ValueError("logistics must cover N*T_f stacked entries")
        if self.weights.alpha_pi.shape[0] not in (first.N, n_cols):
            raise ValueError("alpha_pi must have N or N*T_f entries")

    @property
    def T_f(self) -> int:
        return len(self.systems)

    @property
    def N(self) -> int:
        return self.systems[0].N

    def alpha_pi_stacked(self) -> np.ndarray:
        a = self.weights.alpha_pi
        if a.shape[0] == self.N * self.T_f:
            return a
        return np.tile(a, self.T_f)

    def period_slice(self, j: int) -> slice:
        """Stacked-pi indices of period j (1-based)."""
        if not 1 <= j <= self.T_f:
            raise IndexError("period out of range")
        return slice((j - 1) * self.N, j * self.N)


@dataclass(frozen=True)
class StackedProblem:
    """Multi-period data in stacked form: per-period blocks coupled only
    through the shared logistic rows."""

    spec: MultiPeriodSpec
    alpha_pi: np.ndarray
    cross_period_rows: int

    @property
    def T_f(self) -> int:
        return self.spec.T_f


def assemble_multiperiod(spec: MultiPeriodSpec) -> StackedProblem:
    H = spec.logistics.H
    cross = 0
    for r in range(H.shape[0]):
        hit = {
            j
            for j in range(spec.T_f)
            if np.any(H[r, j * spec.N: (j + 1) * spec.N] != 0.0)
        }
        if len(hit) > 1:
            cross += 1
    return StackedProblem(
        spec=spec, alpha_pi=spec.alpha_pi_stacked(), cross_period_rows=cross
    )


# -- JSON interchange --------------------------------------------------------

SCHEMA_VERSION = 1


def instance_to_dict(
    system_or_spec,
    weights: SelectionWeights,
    logistics: LogisticConstraints,
) -> dict:
    if isinstance(system_or_spec, MultiPeriodSpec):
        spec = system_or_spec
        systems = spec.systems
        T_f = spec.T_f
    else:
        systems = (system_or_spec,)
        T_f = 1
    first = systems[0]

    def mats(key):
        vals = [getattr(s, key).tolist() for s in systems]
        return vals[0] if T_f == 1 else vals

    out = {
        "version": SCHEMA_VERSION,
        "A": mats("A"),
        "B_u": mats("B_u"),
        "B_w": mats("B_w"),
        "C_z": mats("C_z"),
        "D_wz": mats("D_wz"),
        "partition": list(first.partition),
        "alpha": weights.alpha,
        "eta": weights.eta,
        "alpha_pi": weights.alpha_pi.tolist(),
        "H": logistics.H.tolist(),
        "h": logistics.h.tolist(),
        "T_f": T_f,
    }
    if first.positions is not None:
        out["positions"] = first.positions.tolist()
    if first.C is not None:
        out["C"] = first.C.tolist()
        out["beta"] = first.beta
        out["y_partition"] = list(first.y_partition)
    return out


def instance_from_dict(data: dict):
    """Returns (system-or-MultiPeriodSpec, weights, logistics)."""
    T_f = int(data.get("T_f", 1))
    partition = tuple(data["partition"])

    def mat_list(key):
        raw = data[key]
        if T_f == 1:
            return [np.asarray(raw, dtype=float)]
        if isinstance(raw[0][0], list):
            return [np.asarray(m, dtype=float) for m in raw]
        return [np.asarray(raw, dtype=float)] * T_f

    As, Bus, Bws, Czs, Dwzs = (
        mat_list("A"),
        mat_list("B_u"),
        mat_list("B_w"),
        mat_list("C_z"),
        mat_list("D_wz"),
    )
    extra = {}
    if "C" in data:
        extra = {
            "C": np.asarray(data["C"], dtype=float),
            "beta": float(data["beta"]),
            "y_partition": tuple(data["y_partition"]),
        }
    positions = (
        np.asarray(data["positions"], dtype=float)
        if "positions" in data
        else None
    )
    systems = [
        CpsSystem(
            A=As[j], B_u=Bus[j], B_w=Bws[j], C_z=Czs[j], D_wz=Dwzs[j],
            partition=partition, positions=positions, **extra,
        )
        for j in range(T_f)
    ]
    weights = SelectionWeights(
        alpha_pi=np.asarray(data["alpha_pi"], dtype=float),
        alpha=float(data["alpha"]),
        eta=float(data["eta"]),
    )
    logistics = LogisticConstraints(
        H=np.asarray(data["H"], dtype=float).reshape(-1, len(partition) * T_f),
        h=np.asarray(data["h"], dtype=float),
    )
    if T_f == 1:
        return systems[0], weights, logistics
    return MultiPeriodSpec(tuple(systems), weights, logistics), weights, logistics


def save_instance(path, system_or_spec, weights, logistics) -> None:
    with open(path, "w") as f:
        json.dump(instance_to_dict(system_or_spec, weights, logistics), f)
        f.write("\n")


def load_instance(path):
    with open(path) as f:
        return instance_from_dict(json.load(f))
