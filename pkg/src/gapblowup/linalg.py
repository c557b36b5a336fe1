"""Deterministic sparse linear algebra: CSR storage, Thomas solve, PCG, BiCGSTAB.

Reductions go through :func:`vdot`, which uses numpy's pairwise summation
on a fixed element order, so iterate sequences do not depend on BLAS
threading.  Sparse products use scipy's serial CSR kernel.
"""

from __future__ import annotations

import math
import re
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve_triangular


class DimensionError(ValueError):
    pass


class SingularMatrixError(ArithmeticError):
    pass


class ContractError(ValueError):
    """An input violates a solver precondition (e.g. symmetry for PCG)."""


def vdot(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.add.reduce(x * y))


def vnorm(x: np.ndarray) -> float:
    return math.sqrt(vdot(x, x))


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    """Compressed sparse row matrix with sorted, unique column indices per row."""

    shape: tuple[int, int]
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    _view: sp.csr_matrix = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rows, cols = self.shape
        if len(self.indptr) != rows + 1:
            raise DimensionError("indptr length must equal rows + 1")
        if np.any(np.diff(self.indptr) < 0):
            raise ValueError("row offsets must be monotone")
        if len(self.indices) != len(self.data) or self.indptr[-1] != len(self.data):
            raise DimensionError("indices/data length inconsistent with indptr")
        if len(self.indices) and (self.indices.min() < 0 or self.indices.max() >= cols):
            raise DimensionError("column index out of range")
        view = sp.csr_matrix((self.data, self.indices, self.indptr), shape=self.shape, copy=False)
        if not view.has_sorted_indices or not _strictly_increasing_rows(self.indptr, self.indices):
            raise ValueError("column indices must be strictly increasing within each row")
        object.__setattr__(self, "_view", view)

    @classmethod
    def from_coo(cls, rows, cols, vals, shape) -> "CsrMatrix":
        """Build from triplets; duplicate entries are summed in input order."""
        m = sp.coo_matrix((np.asarray(vals, float), (np.asarray(rows), np.asarray(cols))), shape=shape)
        m = m.tocsr()
        m.sum_duplicates()
        m.sort_indices()
        return cls(tuple(shape), m.indptr.astype(np.int64), m.indices.astype(np.int64), m.data.astype(float))

    @classmethod
    def from_dense(cls, a) -> "CsrMatrix":
        a = np.asarray(a, float)
        r, c = np.nonzero(a)
        return cls.from_coo(r, c, a[r, c], a.shape)

    @classmethod
    def identity(cls, n: int) -> "CsrMatrix":
        idx = np.arange(n)
        return cls((n, n), np.arange(n + 1, dtype=np.int64), idx.astype(np.int64), np.ones(n))

    @property
    def nnz(self) -> int:
        return len(self.data)

    def to_scipy(self) -> sp.csr_matrix:
        return self._view

    def toarray(self) -> np.ndarray:
        return self._view.toarray()

    def diagonal(self) -> np.ndarray:
        return self._view.diagonal()

    def transpose(self) -> "CsrMatrix":
        t = self._view.transpose().tocsr()
        t.sort_indices()
        return CsrMatrix(t.shape, t.indptr.astype(np.int64), t.indices.astype(np.int64), t.data.copy())

    def asymmetry(self) -> float:
        """max |A - A^T| relative to max |A|."""
        d = abs(self._view - self._view.T)
        big = abs(self.data).max() if self.nnz else 0.0
        return float(d.max() / big) if big > 0 and d.nnz else 0.0

    def __matmul__(self, x):
        return spmv(self, x)


def _strictly_increasing_rows(indptr, indices) -> bool:
    if len(indices) < 2:
        return True
    step = np.diff(indices)
    # positions where consecutive entries belong to the same row
    same_row = np.ones(len(indices) - 1, dtype=bool)
    starts = indptr[1:-1]
    starts = starts[(starts > 0) & (starts < len(indices))]
    same_row[starts - 1] = False
    return bool(np.all(step[same_row] > 0))


def spmv(a: CsrMatrix, x: np.ndarray) -> np.ndarray:
    """y = A x, accumulating each row left to right in stored column order."""
    x = np.asarray(x, float)
    if x.shape != (a.shape[1],):
        raise DimensionError(f"matrix has {a.shape[1]} columns, vector has shape {x.shape}")
    return a.to_scipy() @ x


@dataclass(frozen=True)
class Tridiagonal:
    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        m = len(self.diag)
        if len(self.lower) != m - 1 or len(self.upper) != m - 1:
            raise DimensionError("sub/super diagonals must have length m - 1")

    @property
    def size(self) -> int:
        return len(self.diag)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        y = self.diag * x
        y[1:] += self.lower * x[:-1]
        y[:-1] += self.upper * x[1:]
        return y

    def toarray(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.lower, -1) + np.diag(self.upper, 1)


def thomas_solve(t: Tridiagonal, rhs) -> np.ndarray:
    """Tridiagonal elimination without pivoting."""
    m = t.size
    d = np.asarray(rhs, float)
    if d.shape != (m,):
        raise DimensionError(f"rhs must have length {m}")
    a = t.lower.tolist()
    b = t.diag.tolist()
    c = t.upper.tolist()
    d = d.tolist()
    cp = [0.0] * m
    dp = [0.0] * m
    # pivots are compared with their own row, since row scales may differ wildly
    if abs(b[0]) <= 1e-300 + 1e-15 * (abs(b[0]) + (abs(c[0]) if m > 1 else 0.0)):
        raise SingularMatrixError("zero pivot in row 0")
    cp[0] = c[0] / b[0] if m > 1 else 0.0
    dp[0] = d[0] / b[0]
    for i in range(1, m):
        piv = b[i] - a[i - 1] * cp[i - 1]
        row = abs(b[i]) + abs(a[i - 1]) + (abs(c[i]) if i < m - 1 else 0.0)
        if abs(piv) <= 1e-300 + 1e-15 * row:
            raise SingularMatrixError(f"zero pivot in row {i}")
        if i < m - 1:
            cp[i] = c[i] / piv
        dp[i] = (d[i] - a[i - 1] * dp[i - 1]) / piv
    x = [0.0] * m
    x[-1] = dp[-1]
    for i in range(m - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return np.array(x)


@dataclass
class SolveReport:
    solver: str
    preconditioner: str
    iterations: int
    relative_residual: float
    converged: bool
    tolerance: float

    def as_dict(self) -> dict:
        return {
            "solver": self.solver,
            "preconditioner": self.preconditioner,
            "iterations": self.iterations,
            "relative_residual": self.relative_residual,
            "converged": self.converged,
            "tolerance": self.tolerance,
        }


@dataclass
class Preconditioner:
    name: str
    apply: Callable[[np.ndarray], np.ndarray]


def _ssor(a: CsrMatrix, omega: float) -> Callable[[np.ndarray], np.ndarray]:
    s = a.to_scipy()
    dvals = s.diagonal()
    if np.any(dvals == 0):
        raise SingularMatrixError("SSOR needs a nonzero diagonal")
    dw = sp.diags(dvals / omega)
    lower = (sp.tril(s, k=-1) + dw).tocsr()
    upper = (sp.triu(s, k=1) + dw).tocsr()
    factor = (2.0 - omega) / omega

    def apply(r):
        y = spsolve_triangular(lower, r, lower=True)
        y = y * (dvals / omega)
        z = spsolve_triangular(upper, y, lower=False)
        return factor * z

    return apply


_AMG_LOCK = threading.Lock()


def _amg(a: CsrMatrix, symmetric: bool) -> Callable[[np.ndarray], np.ndarray]:
    import pyamg

    # the setup estimates spectral radii from numpy's global random stream;
    # pin it so that identical inputs give identical hierarchies
    with _AMG_LOCK:
        state = np.random.get_state()
        np.random.seed(20240101)
        try:
            ml = pyamg.smoothed_aggregation_solver(
                a.to_scipy(), symmetry="symmetric" if symmetric else "nonsymmetric", max_coarse=500
            )
        finally:
            np.random.set_state(state)
    m = ml.aspreconditioner(cycle="V")
    return lambda r: m @ r


def make_preconditioner(a: CsrMatrix, spec: str = "none", symmetric: bool = True) -> Preconditioner:
    """Parse ``none``, ``jacobi``, ``ssor`` / ``ssor(omega)`` or ``amg``."""
    spec = spec.strip().lower()
    if spec == "none":
        return Preconditioner("none", lambda r: r.copy())
    if spec == "jacobi":
        d = a.diagonal()
        if np.any(d == 0):
            raise SingularMatrixError("Jacobi preconditioner needs a nonzero diagonal")
        inv = 1.0 / d
        return Preconditioner("jacobi", lambda r: inv * r)
    m = re.fullmatch(r"ssor(?:\(([-+0-9.eE]+)\))?", spec)
    if m:
        omega = float(m.group(1)) if m.group(1) else 1.5
        if not 0.0 < omega < 2.0:
            raise ValueError(f"SSOR relaxation must lie in (0, 2), got {omega}")
        return Preconditioner(f"ssor({omega:g})", _ssor(a, omega))
    if spec == "amg":
        return Preconditioner("amg", _amg(a, symmetric))
    raise ValueError(f"unknown preconditioner {spec!r}")


def _true_residual(a, x, rhs, bnorm):
    return vnorm(rhs - spmv(a, x)) / bnorm


def pcg_solve(
    a: CsrMatrix,
    rhs,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    preconditioner: str | Preconditioner = "none",
    x0=None,
    check_symmetry: bool = True,
    callback: Optional[Callable[[np.ndarray], None]] = None,
):
    """Preconditioned conjugate gradients for symmetric positive definite A.

    Returns ``(x, SolveReport)``; running out of iterations is reported, not raised.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    rhs = np.asarray(rhs, float)
    if rhs.shape != (a.shape[0],) or a.shape[0] != a.shape[1]:
        raise DimensionError("PCG needs a square matrix and matching rhs")
    if check_symmetry and a.asymmetry() > 1e-12:
        raise ContractError(f"matrix is not symmetric (relative asymmetry {a.asymmetry():.3e})")
    pc = preconditioner if isinstance(preconditioner, Preconditioner) else make_preconditioner(a, preconditioner)
    x = np.zeros_like(rhs) if x0 is None else np.array(x0, float)
    bnorm = vnorm(rhs)
    if bnorm == 0.0:
        return np.zeros_like(rhs), SolveReport("pcg", pc.name, 0, 0.0, True, tol)

    r = rhs - spmv(a, x)
    rel = vnorm(r) / bnorm
    it = 0
    while rel > tol and it < max_iter:
        z = pc.apply(r)
        p = z.copy()
        rz = vdot(r, z)
        while it < max_iter:
            ap = spmv(a, p)
            pap = vdot(p, ap)
            if pap <= 0:
                raise ContractError("matrix is not positive definite along the search direction")
            step = rz / pap
            x += step * p
            r -= step * ap
            it += 1
            if callback is not None:
                callback(x)
            if vnorm(r) / bnorm <= tol:
                break
            z = pc.apply(r)
            rz_new = vdot(r, z)
            p = z + (rz_new / rz) * p
            rz = rz_new
        # the recursive residual drifts; restart from the true one if needed
        r = rhs - spmv(a, x)
        rel = vnorm(r) / bnorm
    rel = _true_residual(a, x, rhs, bnorm)
    return x, SolveReport("pcg", pc.name, it, rel, rel <= tol, tol)


def bicgstab_solve(
    a: CsrMatrix,
    rhs,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    preconditioner: str | Preconditioner = "none",
    x0=None,
):
    """Right-preconditioned BiCGSTAB for general square A."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    rhs = np.asarray(rhs, float)
    if rhs.shape != (a.shape[0],) or a.shape[0] != a.shape[1]:
        raise DimensionError("BiCGSTAB needs a square matrix and matching rhs")
    pc = (
        preconditioner
        if isinstance(preconditioner, Preconditioner)
        else make_preconditioner(a, preconditioner, symmetric=False)
    )
    x = np.zeros_like(rhs) if x0 is None else np.array(x0, float)
    bnorm = vnorm(rhs)
    if bnorm == 0.0:
        return np.zeros_like(rhs), SolveReport("bicgstab", pc.name, 0, 0.0, True, tol)

    it = 0
    r = rhs - spmv(a, x)
    rel = vnorm(r) / bnorm
    while rel > tol and it < max_iter:
        r_hat = r.copy()
        rho = alpha = omega = 1.0
        v = np.zeros_like(rhs)
        p = np.zeros_like(rhs)
        breakdown = False
        while it < max_iter:
            rho_new = vdot(r_hat, r)
            if rho_new == 0.0 or omega == 0.0:
                breakdown = True
                break
            beta = (rho_new / rho) * (alpha / omega)
            p = r + beta * (p - omega * v)
            p_hat = pc.apply(p)
            v = spmv(a, p_hat)
            denom = vdot(r_hat, v)
            if denom == 0.0:
                breakdown = True
                break
            alpha = rho_new / denom
            s = r - alpha * v
            it += 1
            if vnorm(s) / bnorm <= tol:
                x += alpha * p_hat
                break
            s_hat = pc.apply(s)
            t = spmv(a, s_hat)
            tt = vdot(t, t)
            omega = vdot(t, s) / tt if tt > 0 else 0.0
            x += alpha * p_hat + omega * s_hat
            r = s - omega * t
            rho = rho_new
            if vnorm(r) / bnorm <= tol:
                break
        r = rhs - spmv(a, x)
        new_rel = vnorm(r) / bnorm
        if breakdown and new_rel >= rel:
            rel = new_rel
            break
        rel = new_rel
    rel = _true_residual(a, x, rhs, bnorm)
    return x, SolveReport("bicgstab", pc.name, it, rel, rel <= tol, tol)
