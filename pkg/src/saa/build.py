"""Assembly of conic problems from named variable blocks and LMIs.

Matrix inequalities are described by their constant part plus, per
variable block, a linear map evaluated on the block's basis elements.
Symmetric blocks are stored in scaled svec coordinates so PSD slack
blocks line up with the solver's cone layout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .cones import Cone, ConeSpec, NONNEG, PSD, ZERO
from .conic import ConicProblem
from .linalg import smat, svec, tri_dim


@dataclass(frozen=True)
class VarBlock:
    name: str
    offset: int
    size: int
    kind: str            # "scalar" | "vec" | "mat" | "sym"
    shape: tuple

    def extract(self, x: np.ndarray):
        """Pull this block's value out of a solver x vector."""
        v = x[self.offset: self.offset + self.size]
        if self.kind == "scalar":
            return float(v[0])
        if self.kind == "vec":
            return v.copy()
        if self.kind == "mat":
            return v.reshape(self.shape).copy()
        return smat(v)

    def basis(self, j: int):
        """j-th basis element in the block's natural representation."""
        if self.kind == "scalar":
            return 1.0
        if self.kind == "vec":
            e = np.zeros(self.shape[0])
            e[j] = 1.0
            return e
        if self.kind == "mat":
            E = np.zeros(self.shape)
            E[np.unravel_index(j, self.shape)] = 1.0
            return E
        e = np.zeros(self.size)
        e[j] = 1.0
        return smat(e)


class ConicBuilder:
    def __init__(self):
        self._blocks: dict[str, VarBlock] = {}
        self._n = 0
        self._cost: list[tuple[int, float]] = []
        self._cones: list[Cone] = []
        self._rows = 0
        self._trip_r: list[np.ndarray] = []
        self._trip_c: list[np.ndarray] = []
        self._trip_v: list[np.ndarray] = []
        self._b: list[np.ndarray] = []

    # -- variables ---------------------------------------------------------
    def _add_block(self, name, size, kind, shape) -> VarBlock:
        if name in self._blocks:
            raise ValueError(f"duplicate variable block {name!r}")
        blk = VarBlock(name, self._n, size, kind, shape)
        self._blocks[name] = blk
        self._n += size
        return blk

    def scalar(self, name: str) -> VarBlock:
        return self._add_block(name, 1, "scalar", ())

    def vec(self, name: str, k: int) -> VarBlock:
        return self._add_block(name, k, "vec", (k,))

    def mat(self, name: str, r: int, c: int) -> VarBlock:
        return self._add_block(name, r * c, "mat", (r, c))

    def sym(self, name: str, n: int) -> VarBlock:
        return self._add_block(name, tri_dim(n), "sym", (n, n))

    @property
    def blocks(self) -> dict[str, VarBlock]:
        return dict(self._blocks)

    # -- objective ---------------------------------------------------------
    def add_cost(self, block: VarBlock, coefs) -> None:
        coefs = np.atleast_1d(np.asarray(coefs, dtype=float)).ravel()
        if block.kind == "sym":
            coefs = svec(coefs.reshape(block.shape))
        if coefs.size != block.size:
            raise ValueError("cost coefficients do not match block size")
        for j, cj in enumerate(coefs):
            if cj != 0.0:
                self._cost.append((block.offset + j, float(cj)))

    # -- scalar rows ---------------------------------------------------------
    def _append_rows(self, kind, rows, rhs):
        nr = len(rhs)
        r_idx, c_idx, vals = [], [], []
        for i, row in enumerate(rows):
            for blk, j, coef in row:
                if coef != 0.0:
                    r_idx.append(self._rows + i)
                    c_idx.append(blk.offset + j)
                    vals.append(float(coef))
        self._trip_r.append(np.asarray(r_idx, dtype=int))
        self._trip_c.append(np.asarray(c_idx, dtype=int))
        self._trip_v.append(np.asarray(vals, dtype=float))
        self._b.append(np.asarray(rhs, dtype=float))
        self._cones.append(Cone(kind, nr))
        self._rows += nr

    def add_ineq(self, rows, rhs) -> None:
        """Rows sum_j coef*x_j <= rhs (one nonneg cone block)."""
        self._append_rows(NONNEG, rows, rhs)

    def add_eq(self, rows, rhs) -> None:
        self._append_rows(ZERO, rows, rhs)

    def add_box(self, block: VarBlock, lo, hi) -> None:
        """Elementwise lo <= x <= hi on a vector block."""
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (block.size,))
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (block.size,))
        rows, rhs = [], []
        for j in range(block.size):
            rows.append([(block, j, 1.0)])
            rhs.append(hi[j])
            rows.append([(block, j, -1.0)])
            rhs.append(-lo[j])
        self.add_ineq(rows, rhs)

    # -- matrix inequalities -------------------------------------------------
    def add_lmi(
        self,
        order: int,
        constant: np.ndarray,
        terms: list[tuple[VarBlock, Callable]] = (),
        entry_terms: list[tuple[VarBlock, int, np.ndarray]] = (),
    ) -> None:
        """Constraint F(x) = F0 + sum_j x_j F_j <= 0 (negative semidefinite).

        ``terms`` holds (block, linmap) pairs; linmap receives a basis
        element of the block and must return that element's symmetric
        contribution to F.  ``entry_terms`` lists (block, local index,
        contribution matrix) for single scalar coordinates, which avoids
        sweeping a whole block's basis when only one entry participates.
        """
        L = tri_dim(order)
        r_idx, c_idx, vals = [], [], []
        for blk, linmap in terms:
            for j in range(blk.size):
                Fj = linmap(blk.basis(j))
                col = svec(np.asarray(Fj, dtype=float))
                nz = np.nonzero(col)[0]
                if nz.size:
                    r_idx.append(self._rows + nz)
                    c_idx.append(np.full(nz.size, blk.offset + j))
                    vals.append(col[nz])
        for blk, j, Fj in entry_terms:
            col = svec(np.asarray(Fj, dtype=float))
            nz = np.nonzero(col)[0]
            if nz.size:
                r_idx.append(self._rows + nz)
                c_idx.append(np.full(nz.size, blk.offset + j))
                vals.append(col[nz])
        self._trip_r.append(
            np.concatenate(r_idx) if r_idx else np.empty(0, dtype=int)
        )
        self._trip_c.append(
            np.concatenate(c_idx) if c_idx else np.empty(0, dtype=int)
        )
        self._trip_v.append(
            np.concatenate(vals) if vals else np.empty(0, dtype=float)
        )
        self._b.append(-svec(np.asarray(constant, dtype=float)))
        self._cones.append(Cone(PSD, order))
        self._rows += L

    def add_psd(
        self,
        order: int,
        constant: np.ndarray,
        terms: list[tuple[VarBlock, Callable]] = (),
        entry_terms: list[tuple[VarBlock, int, np.ndarray]] = (),
    ) -> None:
        """Constraint M(x) = M0 + sum_j x_j M_j >= 0 (positive semidefinite)."""
        neg_terms = [
            (blk, (lambda f: (lambda B: -np.asarray(f(B))))(linmap))
            for blk, linmap in terms
        ]
        neg_entries = [
            (blk, j, -np.asarray(Fj, dtype=float))
            for blk, j, Fj in entry_terms
        ]
        self.add_lmi(
            order, -np.asarray(constant, dtype=float), neg_terms, neg_entries
        )

    # -- assembly ------------------------------------------------------------
    def build(self) -> tuple[ConicProblem, dict[str, VarBlock]]:
        if not self._cones:
            raise ValueError("no constraints were added")
        rows = np.concatenate(self._trip_r) if self._trip_r else np.empty(0, int)
        cols = np.concatenate(self._trip_c) if self._trip_c else np.empty(0, int)
        vals = np.concatenate(self._trip_v) if self._trip_v else np.empty(0)
        A = sp.csr_matrix(
            (vals, (rows, cols)), shape=(self._rows, self._n)
        )
        b = np.concatenate(self._b)
        c = np.zeros(self._n)
        for j, cj in self._cost:
            c[j] += cj
        problem = ConicProblem(c=c, A=A, b=b, cones=ConeSpec(tuple(self._cones)))
        return problem, self.blocks
