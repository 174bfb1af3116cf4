"""Cone descriptions and projection kernels for the conic solver.

A :class:`ConeSpec` is an ordered product of zero, nonnegative and PSD
cones.  PSD blocks live in scaled svec coordinates (length n(n+1)/2).
Projections are batched per matrix order so repeated small blocks (the
3x3/4x4 auxiliary blocks of the relaxations) cost one vectorized eigh.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import SQRT2, tri_dim

ZERO = "zero"
NONNEG = "nonneg"
PSD = "psd"


@dataclass(frozen=True)
class Cone:
    """One cone block: kind and its defining dimension.

    For zero/nonneg cones ``dim`` is the number of rows; for PSD cones it
    is the matrix order n (the block occupies n(n+1)/2 rows).
    """

    kind: str
    dim: int

    def __post_init__(self):
        if self.kind not in (ZERO, NONNEG, PSD):
            raise ValueError(f"unknown cone kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("cone dimension must be >= 1")

    @property
    def rows(self) -> int:
        return tri_dim(self.dim) if self.kind == PSD else self.dim


@dataclass(frozen=True)
class ConeSpec:
    cones: tuple[Cone, ...]

    def __post_init__(self):
        if not self.cones:
            raise ValueError("at least one cone is required")

    @property
    def total_rows(self) -> int:
        return sum(c.rows for c in self.cones)

    def row_slices(self) -> list[tuple[Cone, slice]]:
        out, at = [], 0
        for c in self.cones:
            out.append((c, slice(at, at + c.rows)))
            at += c.rows
        return out


class _PsdBatch:
    """Index maps to project all PSD blocks of one order in a single eigh."""

    def __init__(self, n: int, starts: list[int]):
        self.n = n
        self.L = tri_dim(n)
        self.starts = np.asarray(starts)
        self.single = len(starts) == 1
        cols, rows = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        mask = rows <= cols
        self.r = rows[mask]
        self.c = cols[mask]
        self.off = (self.r != self.c)
        # gather indices: (k blocks, tri rows)
        self.gather = self.starts[:, None] + np.arange(self.L)[None, :]

    def _project_single(self, v: np.ndarray, out: np.ndarray) -> None:
        n = self.n
        s0 = int(self.starts[0])
        vals = v[s0: s0 + self.L].copy()
        vals[self.off] /= SQRT2
        M = np.zeros((n, n))
        M[self.r, self.c] = vals
        M[self.c, self.r] = vals
        w, V = np.linalg.eigh(M)
        if w[0] >= 0.0:
            return  # already PSD; out holds a copy of v
        np.maximum(w, 0.0, out=w)
        P = (V * w) @ V.T
        res = P[self.r, self.c]
        res[self.off] *= SQRT2
        out[s0: s0 + self.L] = res

    def project(self, v: np.ndarray, out: np.ndarray) -> None:
        if self.single:
            self._project_single(v, out)
            return
        k, n = len(self.starts), self.n
        tri = v[self.gather]  # (k, L)
        vals = tri.copy()
        vals[:, self.off] /= SQRT2
        M = np.zeros((k, n, n))
        M[:, self.r, self.c] = vals
        M[:, self.c, self.r] = vals
        w, V = np.linalg.eigh(M)
        if w[:, 0].min() >= 0.0:
            return
        np.maximum(w, 0.0, out=w)
        P = np.einsum("kij,kj,klj->kil", V, w, V)
        res = P[:, self.r, self.c]
        res[:, self.off] *= SQRT2
        v_flat = res.ravel()
        out[self.gather.ravel()] = v_flat


class ConeProjector:
    """Precomputed projection plan for a ConeSpec.

    ``project_dual(v)`` projects onto the dual cone K* (zero blocks are
    free, nonneg and PSD are self-dual); ``project_primal(v)`` projects
    onto K itself.  Both return a new array.
    """

    def __init__(self, spec: ConeSpec):
        self.spec = spec
        self.m = spec.total_rows
        zero_idx, nonneg_idx = [], []
        psd_by_order: dict[int, list[int]] = {}
        for cone, sl in spec.row_slices():
            if cone.kind == ZERO:
                zero_idx.append(np.arange(sl.start, sl.stop))
            elif cone.kind == NONNEG:
                nonneg_idx.append(np.arange(sl.start, sl.stop))
            else:
                psd_by_order.setdefault(cone.dim, []).append(sl.start)
        self.zero_idx = (
            np.concatenate(zero_idx) if zero_idx else np.empty(0, dtype=int)
        )
        self.nonneg_idx = (
            np.concatenate(nonneg_idx) if nonneg_idx else np.empty(0, dtype=int)
        )
        self.psd_batches = [
            _PsdBatch(n, starts) for n, starts in sorted(psd_by_order.items())
        ]

    def _project(self, v: np.ndarray, dual: bool) -> np.ndarray:
        out = v.copy()
        if self.zero_idx.size:
            if dual:
                pass  # dual of {0} is everything: leave untouched
            else:
                out[self.zero_idx] = 0.0
        if self.nonneg_idx.size:
            out[self.nonneg_idx] = np.maximum(out[self.nonneg_idx], 0.0)
        for batch in self.psd_batches:
            batch.project(v, out)
        return out

    def project_dual(self, v: np.ndarray) -> np.ndarray:
        return self._project(v, dual=True)

    def project_primal(self, v: np.ndarray) -> np.ndarray:
        return self._project(v, dual=False)

    def margin_vector(self) -> np.ndarray:
        """Unit interior direction per cone: 1 on nonneg rows, svec(I) on
        PSD blocks, 0 on zero rows.  Used by the strict-interior solve."""
        e = np.zeros(self.m)
        if self.nonneg_idx.size:
            e[self.nonneg_idx] = 1.0
        for cone, sl in self.spec.row_slices():
            if cone.kind == PSD:
                n = cone.dim
                block = np.zeros(tri_dim(n))
                # diagonal positions in column-scan order: 0, 2, 5, ...
                diag = np.cumsum(np.arange(1, n + 1)) - 1
                block[diag] = 1.0
                e[sl] = block
        return e

    def min_margin(self, s: np.ndarray) -> float:
        """Distance of s from the boundary of K: min over nonneg entries
        and PSD block eigenvalues (zero rows are ignored)."""
        worst = np.inf
        if self.nonneg_idx.size:
            worst = min(worst, float(s[self.nonneg_idx].min()))
        for batch in self.psd_batches:
            k, n = len(batch.starts), batch.n
            tri = s[batch.gather]
            vals = tri.copy()
            vals[:, batch.off] /= SQRT2
            M = np.zeros((k, n, n))
            M[:, batch.r, batch.c] = vals
            M[:, batch.c, batch.r] = vals
            w = np.linalg.eigvalsh(M)
            worst = min(worst, float(w[:, 0].min()))
        return worst
