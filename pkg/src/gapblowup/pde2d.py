"""Vertex-centred finite volumes for div(K grad u) - q u = div F + G on mapped grids.

Unknowns sit at grid nodes; each node owns the dual cell bounded by the
mid-lines of its neighbouring cells.  The discrete operator is assembled
from an energy, so it is symmetric by construction:

* diagonal fluxes use K11 / K22 sampled at edge midpoints (5-point part);
* K12 enters through a cell-wise constant gradient (adds the 9-point part);
* q u and G are lumped onto the dual cells.

Neumann data are outward logical conormal fluxes (K grad u - F) . n per unit
logical boundary length.  Dirichlet nodes are eliminated into the right-hand
side.  ``natural_degenerate`` marks an edge whose flux weight vanishes
identically (the symmetry axis), where no condition is imposed at all.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from . import geometry as geo
from .geometry import BipolarMap, CoefficientField, CurvilinearGrid, Grading
from .linalg import CsrMatrix, SolveReport, bicgstab_solve, make_preconditioner, pcg_solve, Preconditioner
from .rates import check_dimension, mode_eigenvalue

EDGES = ("s1_lo", "s1_hi", "s2_lo", "s2_hi")


class AssemblyError(ValueError):
    pass


class InvariantViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class BC:
    kind: str
    data: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann", "natural_degenerate"):
            raise ValueError(f"unknown boundary condition {self.kind!r}")
        if self.kind != "natural_degenerate" and self.data is None:
            raise ValueError(f"{self.kind} condition needs a data function")


def dirichlet(data=0.0) -> BC:
    return BC("dirichlet", data if callable(data) else (lambda s1, s2, v=float(data): np.full(np.shape(s1), v)))


def neumann(data=0.0) -> BC:
    return BC("neumann", data if callable(data) else (lambda s1, s2, v=float(data): np.full(np.shape(s1), v)))


NATURAL = BC("natural_degenerate")


@dataclass
class BoundarySpec:
    s1_lo: BC
    s1_hi: BC
    s2_lo: BC
    s2_hi: BC

    def edges(self):
        return {e: getattr(self, e) for e in EDGES}


@dataclass
class DiscreteProblem:
    grid: CurvilinearGrid
    coefficients: CoefficientField
    bcs: BoundarySpec
    G: Optional[np.ndarray] = None  # node samples
    F1: Optional[np.ndarray] = None  # cell samples of the logical vector field F
    F2: Optional[np.ndarray] = None

    def __post_init__(self):
        n1, n2 = self.grid.shape
        c = self.coefficients
        expected = {
            "k11_f1": (n1 - 1, n2),
            "k22_f2": (n1, n2 - 1),
            "k12_c": (n1 - 1, n2 - 1),
            "q": (n1, n2),
        }
        for name, shp in expected.items():
            if getattr(c, name).shape != shp:
                raise ValueError(f"coefficient {name} has shape {getattr(c, name).shape}, expected {shp}")
        if self.G is not None and np.shape(self.G) != (n1, n2):
            raise ValueError("G must be sampled at nodes")
        for name in ("F1", "F2"):
            v = getattr(self, name)
            if v is not None and np.shape(v) != (n1 - 1, n2 - 1):
                raise ValueError(f"{name} must be sampled at cell centres")


@dataclass
class FieldSolution:
    """Nodal field u = values + lift(r, x_n) on a grid."""

    grid: CurvilinearGrid
    values: np.ndarray
    report: SolveReport
    n: int = 3
    k: int = 1
    lift: Optional[Callable] = None
    gradient: Optional[dict] = None

    @property
    def u(self) -> np.ndarray:
        if self.lift is None:
            return self.values
        out = self.values.copy()
        finite = np.isfinite(self.grid.r)
        out[finite] += self.lift(self.grid.r[finite], self.grid.xn[finite])
        return out


# ---------------------------------------------------------------- assembly


def _check_coefficients(grid, c: CoefficientField):
    scale = max(float(np.nanmax(np.abs(c.k11_c))), float(np.nanmax(np.abs(c.k22_c))), 1e-300)
    det = c.k11_c * c.k22_c - c.k12_c**2
    bad = (c.k11_c < 0) | (c.k22_c < 0) | (det < -1e-12 * scale * scale) | ~np.isfinite(det)
    if np.any(bad):
        i, j = map(int, np.argwhere(bad)[0])
        raise AssemblyError(f"coefficient tensor is not positive semidefinite in cell ({i}, {j})")
    if np.any(c.q < 0) or not np.all(np.isfinite(c.q)):
        i, j = map(int, np.argwhere((c.q < 0) | ~np.isfinite(c.q))[0])
        raise AssemblyError(f"zeroth-order coefficient invalid at node ({i}, {j})")


def _boundary_masks(shape):
    n1, n2 = shape
    masks = {}
    for e in EDGES:
        m = np.zeros(shape, dtype=bool)
        if e == "s1_lo":
            m[0, :] = True
        elif e == "s1_hi":
            m[-1, :] = True
        elif e == "s2_lo":
            m[:, 0] = True
        else:
            m[:, -1] = True
        masks[e] = m
    return masks


def stiffness(grid: CurvilinearGrid, c: CoefficientField) -> sp.csr_matrix:
    """Full nodal matrix of the energy form (no boundary treatment)."""
    n1, n2 = grid.shape
    idx = np.arange(n1 * n2).reshape(n1, n2)
    d1, d2 = grid.node_dual_widths()
    h1, h2 = grid.ds1, grid.ds2
    rows, cols, vals = [], [], []

    def pair(a, b, t):
        rows.extend((a.ravel(), b.ravel(), a.ravel(), b.ravel()))
        cols.extend((a.ravel(), b.ravel(), b.ravel(), a.ravel()))
        t = t.ravel()
        vals.extend((t, t, -t, -t))

    t1 = c.k11_f1 * d2[None, :] / h1[:, None]
    pair(idx[:-1, :], idx[1:, :], t1)
    t2 = c.k22_f2 * d1[:, None] / h2[None, :]
    pair(idx[:, :-1], idx[:, 1:], t2)

    if np.any(c.k12_c != 0.0):
        # cell gradient g1 = a . u_cell, g2 = b . u_cell over corners (00, 10, 01, 11)
        corners = [idx[:-1, :-1], idx[1:, :-1], idx[:-1, 1:], idx[1:, 1:]]
        a = [-0.5 / h1, 0.5 / h1, -0.5 / h1, 0.5 / h1]
        b = [-0.5 / h2, -0.5 / h2, 0.5 / h2, 0.5 / h2]
        w = c.k12_c * np.outer(h1, h2)
        for p in range(4):
            for q in range(4):
                coef = w * (a[p][:, None] * b[q][None, :] + a[q][:, None] * b[p][None, :])
                rows.append(corners[p].ravel())
                cols.append(corners[q].ravel())
                vals.append(coef.ravel())

    mass = c.q * np.outer(d1, d2)
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(mass.ravel())

    m = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n1 * n2, n1 * n2)
    ).tocsr()
    m.sum_duplicates()
    m.sort_indices()
    return m


def load_vector(problem: DiscreteProblem) -> np.ndarray:
    grid = problem.grid
    n1, n2 = grid.shape
    d1, d2 = grid.node_dual_widths()
    b = np.zeros((n1, n2))
    if problem.G is not None:
        b -= problem.G * np.outer(d1, d2)
    if problem.F1 is not None or problem.F2 is not None:
        h1, h2 = grid.ds1, grid.ds2
        area = np.outer(h1, h2)
        f1 = np.zeros((n1 - 1, n2 - 1)) if problem.F1 is None else problem.F1
        f2 = np.zeros((n1 - 1, n2 - 1)) if problem.F2 is None else problem.F2
        g1 = 0.5 * f1 * area / h1[:, None]
        g2 = 0.5 * f2 * area / h2[None, :]
        b[:-1, :-1] += -g1 - g2
        b[1:, :-1] += g1 - g2
        b[:-1, 1:] += -g1 + g2
        b[1:, 1:] += g1 + g2
    for name, bc in problem.bcs.edges().items():
        if bc.kind != "neumann":
            continue
        if name in ("s1_lo", "s1_hi"):
            i = 0 if name == "s1_lo" else -1
            g = np.asarray(bc.data(np.full(n2, grid.s1[i]), grid.s2), float)
            b[i, :] += g * d2
        else:
            j = 0 if name == "s2_lo" else -1
            g = np.asarray(bc.data(grid.s1, np.full(n1, grid.s2[j])), float)
            b[:, j] += g * d1
    return b


def dirichlet_values(problem: DiscreteProblem):
    """Boolean mask of Dirichlet nodes and their prescribed values."""
    grid = problem.grid
    n1, n2 = grid.shape
    masks = _boundary_masks(grid.shape)
    fixed = np.zeros((n1, n2), dtype=bool)
    vals = np.zeros((n1, n2))
    c = problem.coefficients
    for name, bc in problem.bcs.edges().items():
        if bc.kind == "natural_degenerate":
            if name in ("s1_lo", "s1_hi"):
                edge_w = c.k22_f2[0 if name == "s1_lo" else -1, :]
            else:
                edge_w = c.k11_f1[:, 0 if name == "s2_lo" else -1]
            if np.any(edge_w != 0.0):
                raise AssemblyError(f"natural_degenerate on {name}, but the face weight does not vanish there")
        if bc.kind != "dirichlet":
            continue
        m = masks[name]
        fixed |= m
        if name in ("s1_lo", "s1_hi"):
            i = 0 if name == "s1_lo" else -1
            vals[i, :] = bc.data(np.full(n2, grid.s1[i]), grid.s2)
        else:
            j = 0 if name == "s2_lo" else -1
            vals[:, j] = bc.data(grid.s1, np.full(n1, grid.s2[j]))
    return fixed, vals


@dataclass
class AssembledSystem:
    matrix: CsrMatrix
    rhs: np.ndarray
    free: np.ndarray  # flat indices of unknown nodes
    fixed_mask: np.ndarray
    fixed_values: np.ndarray
    full_matrix: sp.csr_matrix
    full_load: np.ndarray


def assemble(problem: DiscreteProblem) -> AssembledSystem:
    """Return the reduced (free-node) system and bookkeeping for reconstruction."""
    _check_coefficients(problem.grid, problem.coefficients)
    full = stiffness(problem.grid, problem.coefficients)
    load = load_vector(problem).ravel()
    fixed, vals = dirichlet_values(problem)
    fixed_flat = fixed.ravel()
    free = np.flatnonzero(~fixed_flat)
    fix = np.flatnonzero(fixed_flat)
    a_ff = full[free][:, free]
    a_fd = full[free][:, fix]
    rhs = load[free] - a_fd @ vals.ravel()[fix]
    a_ff.sort_indices()
    mat = CsrMatrix(a_ff.shape, a_ff.indptr.astype(np.int64), a_ff.indices.astype(np.int64), a_ff.data.copy())
    return AssembledSystem(mat, rhs, free, fixed, vals, full, load)


def _scaled_amg(mat: CsrMatrix) -> Preconditioner:
    d = mat.diagonal()
    s = 1.0 / np.sqrt(d)
    scaled = CsrMatrix.from_coo(*_coo(sp.diags(s) @ mat.to_scipy() @ sp.diags(s)), mat.shape)
    inner = make_preconditioner(scaled, "amg")
    return Preconditioner("amg", lambda r: s * inner.apply(s * r))


def _coo(m):
    m = m.tocoo()
    return m.row, m.col, m.data


def solve_system(system: AssembledSystem, tol=1e-10, max_iter=5000, preconditioner="auto"):
    mat = system.matrix
    symmetric = mat.asymmetry() <= 1e-12
    if preconditioner == "auto":
        preconditioner = "amg" if mat.shape[0] > 2000 else "jacobi"
    if preconditioner == "amg":
        pc = _scaled_amg(mat)
    else:
        pc = make_preconditioner(mat, preconditioner, symmetric=symmetric)
    if symmetric:
        x, rep = pcg_solve(mat, system.rhs, tol=tol, max_iter=max_iter, preconditioner=pc, check_symmetry=False)
    else:
        x, rep = bicgstab_solve(mat, system.rhs, tol=tol, max_iter=max_iter, preconditioner=pc)
    full = system.fixed_values.ravel().copy()
    full[system.free] = x
    return full.reshape(system.fixed_mask.shape), rep


def solve(problem: DiscreteProblem, tol=1e-10, max_iter=5000, preconditioner="auto", n=3, k=1, lift=None):
    system = assemble(problem)
    values, rep = solve_system(system, tol=tol, max_iter=max_iter, preconditioner=preconditioner)
    return FieldSolution(problem.grid, values, rep, n=n, k=k, lift=lift)


# ---------------------------------------------------------------- two-sphere benchmark


def _sphere_flux(bmap: BipolarMap, n: int, sign: int):
    # outward logical flux of w = u_hat - r: K d_n(w) = r^{n-2} * h * r
    def data(s1, s2):
        r, _, h = bmap.forward(s1, s2)
        r = np.where(np.isfinite(r), r, 0.0)
        h = np.where(np.isfinite(h), h, 0.0)
        return r ** (n - 1) * h

    return data


def sphere_problem(n: int, eps: float, n_sigma: int, n_tau: int, grading: Optional[Grading] = None):
    n = check_dimension(n)
    bmap = BipolarMap(eps)
    grid = geo.build_bipolar_grid(bmap, n_sigma, n_tau, grading)
    coeffs = geo.bipolar_coefficients(grid, n, k=1)
    bcs = BoundarySpec(
        s1_lo=dirichlet(0.0),
        s1_hi=dirichlet(0.0),
        s2_lo=neumann(_sphere_flux(bmap, n, -1)),
        s2_hi=neumann(_sphere_flux(bmap, n, +1)),
    )
    return DiscreteProblem(grid, coeffs, bcs)


def _identity_r(r, xn):
    return np.asarray(r, float) + 0.0 * np.asarray(xn, float)


def solve_reduced_sphere_problem(
    n: int,
    eps: float,
    n_sigma: int = 513,
    n_tau: int = 65,
    grading: Optional[Grading] = None,
    tol: float = 1e-10,
    preconditioner: str = "auto",
    check: bool = True,
) -> FieldSolution:
    """First-harmonic potential u_hat around two unit spheres at distance eps.

    Solves for w = u_hat - r, which vanishes on the axis and at infinity and
    has Neumann data d_n w = -d_n r on the spheres.  ``values`` holds w and
    ``u`` gives u_hat.
    """
    if not 0 < eps < 0.25:
        raise ValueError("eps must lie in (0, 1/4)")
    problem = sphere_problem(n, eps, n_sigma, n_tau, grading)
    sol = solve(problem, tol=tol, preconditioner=preconditioner, n=n, k=1, lift=_identity_r)
    if check and sol.report.converged:
        w = sol.values
        scale = float(np.max(np.abs(w)))
        if float(w.min()) < -1e-8 * scale:
            raise InvariantViolation(
                f"u_hat < r somewhere: min(w) = {w.min():.3e} (scale {scale:.3e}), n={n}, eps={eps}"
            )
    return sol


def subsolution_margin(sol: FieldSolution) -> float:
    """min(w) / max|w| for a sphere solution (>= -1e-8 expected)."""
    w = sol.values
    scale = float(np.max(np.abs(w)))
    return float(w.min()) / scale if scale > 0 else 0.0


# ---------------------------------------------------------------- post-processing


def _d_nonuniform(u, s, axis):
    """Second-order first derivative along ``axis`` on a nonuniform node set."""
    u = np.moveaxis(u, axis, 0)
    h = np.diff(s)
    out = np.empty_like(u)
    hm, hp = h[:-1], h[1:]
    shape = (-1,) + (1,) * (u.ndim - 1)
    hm_, hp_ = hm.reshape(shape), hp.reshape(shape)
    out[1:-1] = (
        -hp_ / (hm_ * (hm_ + hp_)) * u[:-2]
        + (hp_ - hm_) / (hm_ * hp_) * u[1:-1]
        + hm_ / (hp_ * (hm_ + hp_)) * u[2:]
    )
    h0, h1 = h[0], h[1]
    out[0] = -(2 * h0 + h1) / (h0 * (h0 + h1)) * u[0] + (h0 + h1) / (h0 * h1) * u[1] - h0 / (h1 * (h0 + h1)) * u[2]
    h0, h1 = h[-1], h[-2]
    out[-1] = (2 * h0 + h1) / (h0 * (h0 + h1)) * u[-1] - (h0 + h1) / (h0 * h1) * u[-2] + h0 / (h1 * (h0 + h1)) * u[-3]
    return np.moveaxis(out, 0, axis)


def reconstruct_gradient(sol: FieldSolution, n: Optional[int] = None, k: Optional[int] = None) -> dict:
    """Physical gradient (u_r, u_n) and modal amplitude at every node.

    Amplitude is sqrt(u_r^2 + u_n^2 + mu_k u^2 / r^2); it is NaN where r = 0
    or at the point at infinity.
    """
    n = sol.n if n is None else n
    k = sol.k if k is None else k
    grid = sol.grid
    mu = mode_eigenvalue(n, k)
    vals = np.where(np.isfinite(sol.values), sol.values, 0.0)
    g1 = _d_nonuniform(vals, grid.s1, 0)
    g2 = _d_nonuniform(vals, grid.s2, 1)
    S1, S2 = np.meshgrid(grid.s1, grid.s2, indexing="ij")
    with np.errstate(all="ignore"):
        jac = grid.chart.jacobian(S1, S2)
        det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
        # [u_s1, u_s2] = J^T [u_r, u_n]
        ur = (jac[..., 1, 1] * g1 - jac[..., 1, 0] * g2) / det
        un = (-jac[..., 0, 1] * g1 + jac[..., 0, 0] * g2) / det
    r = grid.r
    if sol.lift is not None:
        # the lift is r itself in every use here; add its exact gradient
        ur = ur + 1.0
    u = sol.u
    valid = np.isfinite(r) & (r > 0) & np.isfinite(ur) & np.isfinite(un)
    amp = np.full(grid.shape, np.nan)
    with np.errstate(all="ignore"):
        amp[valid] = np.sqrt(ur[valid] ** 2 + un[valid] ** 2 + mu * (u[valid] / r[valid]) ** 2)
    out = {"ur": ur, "un": un, "amplitude": amp, "valid": valid}
    sol.gradient = out
    return out


def sup_gradient(sol: FieldSolution, radius: float, centre=(0.0, 0.0)) -> float:
    """Largest modal gradient amplitude over nodes with |(r, x_n) - centre| <= radius."""
    g = sol.gradient or reconstruct_gradient(sol)
    grid = sol.grid
    with np.errstate(invalid="ignore"):
        inside = (grid.r - centre[0]) ** 2 + (grid.xn - centre[1]) ** 2 <= radius * radius
    region = inside & g["valid"]
    if not np.any(region):
        raise ValueError("no grid nodes inside the requested region")
    return float(np.max(g["amplitude"][region]))


def sup_gradient_annulus(sol: FieldSolution, r_lo: float, r_hi: float) -> float:
    g = sol.gradient or reconstruct_gradient(sol)
    grid = sol.grid
    region = (grid.r >= r_lo) & (grid.r <= r_hi) & g["valid"]
    if not np.any(region):
        raise ValueError("no grid nodes inside the requested annulus")
    return float(np.max(g["amplitude"][region]))


def interpolate(sol: FieldSolution, s1q, s2q, values: Optional[np.ndarray] = None):
    """Bilinear interpolation of nodal values at logical points."""
    grid = sol.grid
    v = sol.values if values is None else values
    s1q = np.asarray(s1q, float)
    s2q = np.asarray(s2q, float)
    i = np.clip(np.searchsorted(grid.s1, s1q, side="right") - 1, 0, len(grid.s1) - 2)
    j = np.clip(np.searchsorted(grid.s2, s2q, side="right") - 1, 0, len(grid.s2) - 2)
    t = (s1q - grid.s1[i]) / (grid.s1[i + 1] - grid.s1[i])
    s = (s2q - grid.s2[j]) / (grid.s2[j + 1] - grid.s2[j])
    if np.any((t < -1e-9) | (t > 1 + 1e-9) | (s < -1e-9) | (s > 1 + 1e-9)):
        raise ValueError("interpolation point outside the grid")
    return (
        (1 - t) * (1 - s) * v[i, j]
        + t * (1 - s) * v[i + 1, j]
        + (1 - t) * s * v[i, j + 1]
        + t * s * v[i + 1, j + 1]
    )


def gap_segment(r_query: float, eps: float, shape: geo.InclusionShape, samples: int = 64):
    """Midpoint samples of x_n across the gap fibre at radius r_query."""
    with np.errstate(invalid="ignore"):
        lo = -0.5 * eps + float(shape.g(r_query))
        hi = 0.5 * eps + float(shape.f(r_query))
    if not (math.isfinite(lo) and math.isfinite(hi)) or r_query < 0:
        raise ValueError(f"no gap fibre at r={r_query}")
    t = (np.arange(samples) + 0.5) / samples
    return lo + t * (hi - lo)


def gap_average(
    sol: FieldSolution, r_query: float, eps: float, shape: Optional[geo.InclusionShape] = None, samples: int = 64
) -> float:
    """Average of u across the gap at radius r_query (U_{1,1}(r) for the benchmark)."""
    shape = shape or geo.InclusionShape.unit_ball(R0=0.999)
    xs = gap_segment(r_query, eps, shape, samples)
    rs = np.full_like(xs, r_query)
    try:
        s1, s2 = sol.grid.chart.to_logical(rs, xs)
    except geo.DomainError as exc:
        raise ValueError(f"gap segment at r={r_query} leaves the domain") from exc
    s1 = np.asarray(s1)
    s2 = np.asarray(s2)
    tol = 1e-12 * max(1.0, abs(sol.grid.s2[-1]))
    if np.any(s1 < sol.grid.s1[0] - tol) or np.any(s1 > sol.grid.s1[-1] + tol) or np.any(
        np.abs(s2) > sol.grid.s2[-1] + tol
    ):
        raise ValueError(f"gap segment at r={r_query} leaves the domain")
    s2 = np.clip(s2, sol.grid.s2[0], sol.grid.s2[-1])
    vals = interpolate(sol, s1, s2)
    if sol.lift is not None:
        vals = vals + sol.lift(rs, xs)
    return float(np.mean(vals))


def gap_profile(sol: FieldSolution, radii, eps: float, shape=None, samples: int = 64) -> np.ndarray:
    return np.array([gap_average(sol, float(r), eps, shape, samples) for r in radii])


# ---------------------------------------------------------------- manufactured solutions


def sample_coefficients(grid: CurvilinearGrid, tensor: Callable) -> CoefficientField:
    """Sample a continuous tensor(s1, s2) -> (k11, k12, k22, q) onto a grid."""
    m1 = 0.5 * (grid.s1[1:] + grid.s1[:-1])
    m2 = 0.5 * (grid.s2[1:] + grid.s2[:-1])
    f1 = tensor(*np.meshgrid(m1, grid.s2, indexing="ij"))
    f2 = tensor(*np.meshgrid(grid.s1, m2, indexing="ij"))
    cc = tensor(*np.meshgrid(m1, m2, indexing="ij"))
    nd = tensor(*np.meshgrid(grid.s1, grid.s2, indexing="ij"))
    return CoefficientField(
        k11_f1=np.asarray(f1[0], float),
        k22_f2=np.asarray(f2[2], float),
        k12_c=np.asarray(cc[1], float),
        k11_c=np.asarray(cc[0], float),
        k22_c=np.asarray(cc[2], float),
        q=np.asarray(nd[3], float),
    )


def bipolar_tensor(bmap: BipolarMap, n: int, k: int = 1) -> Callable:
    mu = mode_eigenvalue(n, k)

    def tensor(s1, s2):
        r, _, h = bmap.forward(s1, s2)
        w = geo._power(r, n - 2)
        q = mu * geo._power(r, n - 4) * h * h
        q = np.where(r > 0, q, 0.0)
        return w, np.zeros_like(w), w, q

    return tensor


def gap_tensor(gmap: geo.GapMap, n: int, k: int = 1) -> Callable:
    mu = mode_eigenvalue(n, k)

    def tensor(s1, s2):
        c = geo.gap_coefficients(gmap, s1, s2, check=False)
        w = geo._power(s1, n - 2)
        q = np.where(s1 > 0, mu * geo._power(s1, n - 4) * c.a_rr, 0.0)
        return w * c.a_rr, w * c.a_rn, w * c.a_nn, q

    return tensor


def constant_tensor(k11=1.0, k12=0.0, k22=1.0, q=0.0) -> Callable:
    def tensor(s1, s2):
        z = np.zeros(np.broadcast(np.asarray(s1), np.asarray(s2)).shape)
        return z + k11, z + k12, z + k22, z + q

    return tensor


def logical_exact(chart, u: Callable, grad: Callable) -> Callable:
    """Turn a physical u(r, x_n) with gradient (u_r, u_n) into (u, u_s1, u_s2)."""

    def exact(s1, s2):
        r, xn = chart.to_physical(s1, s2)
        jac = chart.jacobian(s1, s2)
        ur, un = grad(r, xn)
        return u(r, xn), jac[..., 0, 0] * ur + jac[..., 1, 0] * un, jac[..., 0, 1] * ur + jac[..., 1, 1] * un

    return exact


def _fd_derivative(fn, s1, s2, step, axis, lo, hi):
    """Second-order difference of fn along ``axis``, one-sided where the stencil would leave [lo, hi]."""
    s1 = np.asarray(s1, float)
    s2 = np.asarray(s2, float)
    x = s1 if axis == 1 else s2

    def at(offset, mask):
        a, b = s1[mask], s2[mask]
        return fn(a + offset, b) if axis == 1 else fn(a, b + offset)

    out = np.empty(np.broadcast(s1, s2).shape)
    low = x - step < lo
    high = (x + step > hi) & ~low
    mid = ~(low | high)
    out[mid] = (at(step, mid) - at(-step, mid)) / (2 * step)
    if np.any(low):
        out[low] = (-3 * at(0.0, low) + 4 * at(step, low) - at(2 * step, low)) / (2 * step)
    if np.any(high):
        out[high] = (3 * at(0.0, high) - 4 * at(-step, high) + at(-2 * step, high)) / (2 * step)
    return out


def manufactured_source(tensor: Callable, exact: Callable, s1, s2, h1: float, h2: float, box=None):
    """G = div(K grad u) - q u by differencing the exact flux.

    ``box`` = (lo1, hi1, lo2, hi2) keeps every evaluation point inside the
    logical domain (one-sided stencils at the edges).
    """
    box = box or (-np.inf, np.inf, -np.inf, np.inf)

    def flux1(a, b):
        k11, k12, _, _ = tensor(a, b)
        _, u1, u2 = exact(a, b)
        return k11 * u1 + k12 * u2

    def flux2(a, b):
        _, k12, k22, _ = tensor(a, b)
        _, u1, u2 = exact(a, b)
        return k12 * u1 + k22 * u2

    s1, s2 = np.broadcast_arrays(np.asarray(s1, float), np.asarray(s2, float))
    d1 = _fd_derivative(flux1, s1, s2, h1, 1, box[0], box[1])
    d2 = _fd_derivative(flux2, s1, s2, h2, 2, box[2], box[3])
    _, _, _, q = tensor(s1, s2)
    u, _, _ = exact(s1, s2)
    return d1 + d2 - q * u


@dataclass
class ConvergenceReport:
    sizes: list
    l2_errors: list
    max_errors: list
    orders: list  # observed L2 orders between successive sizes
    reports: list

    @property
    def min_order(self) -> float:
        finite = [o for o in self.orders if math.isfinite(o)]
        return min(finite) if finite else float("nan")

    def as_dict(self) -> dict:
        return {
            "sizes": self.sizes,
            "l2_errors": self.l2_errors,
            "max_errors": self.max_errors,
            "orders": self.orders,
        }


def manufactured_convergence(
    make_grid: Callable[[int], CurvilinearGrid],
    tensor: Callable,
    exact: Callable,
    sizes,
    neumann_edges=(),
    tol: float = 1e-12,
    preconditioner: str = "auto",
) -> ConvergenceReport:
    """Solve with the exact solution's data on each grid and measure errors.

    Edges listed in ``neumann_edges`` get the exact outward conormal flux;
    the others get exact Dirichlet values.  Errors are measured at the nodes,
    L2 with the logical dual-cell areas, and orders assume the grid spacing
    halves between successive sizes.
    """
    l2, mx, reps = [], [], []
    for size in sizes:
        grid = make_grid(int(size))
        coeffs = sample_coefficients(grid, tensor)
        S1, S2 = np.meshgrid(grid.s1, grid.s2, indexing="ij")
        span1 = grid.s1[-1] - grid.s1[0]
        span2 = grid.s2[-1] - grid.s2[0]
        box = (grid.s1[0], grid.s1[-1], grid.s2[0], grid.s2[-1])
        G = manufactured_source(tensor, exact, S1, S2, 1e-5 * span1, 1e-5 * span2, box)

        def dir_data(a, b):
            return exact(a, b)[0]

        def neu(sign, axis):
            def data(a, b):
                k11, k12, k22, _ = tensor(a, b)
                _, u1, u2 = exact(a, b)
                f = (k11 * u1 + k12 * u2) if axis == 1 else (k12 * u1 + k22 * u2)
                return sign * f

            return data

        signs = {"s1_lo": (-1, 1), "s1_hi": (1, 1), "s2_lo": (-1, 2), "s2_hi": (1, 2)}
        bcs = BoundarySpec(
            **{
                e: (neumann(neu(*signs[e])) if e in neumann_edges else dirichlet(dir_data))
                for e in EDGES
            }
        )
        sol = solve(DiscreteProblem(grid, coeffs, bcs, G=G), tol=tol, preconditioner=preconditioner)
        ue = exact(S1, S2)[0]
        err = sol.values - ue
        d1, d2 = grid.node_dual_widths()
        wgt = np.outer(d1, d2)
        l2.append(float(np.sqrt(np.sum(err * err * wgt) / np.sum(wgt))))
        mx.append(float(np.max(np.abs(err))))
        reps.append(sol.report)
    orders = []
    for a, b in zip(l2[:-1], l2[1:]):
        orders.append(math.log2(a / b) if a > 0 and b > 0 else float("nan"))
    return ConvergenceReport([int(s) for s in sizes], l2, mx, orders, reps)


# ---------------------------------------------------------------- local gap problem


def local_gap_problem(
    n: int,
    eps: float,
    shape: geo.InclusionShape,
    n_rho: int = 257,
    n_n: int = 17,
    grading: Optional[Grading] = None,
    k: int = 1,
    outer_value: Callable | float = 1.0,
) -> DiscreteProblem:
    """Mode-k problem in the flattened gap with insulated top and bottom.

    Dirichlet data ``outer_value`` on rho = R0 (the synthetic boundary data),
    u = 0 on the axis for k >= 1 and no condition there for k = 0.
    """
    n = check_dimension(n)
    gmap = geo.GapMap(shape, eps)
    if grading is None:
        grading = Grading.with_first_width(shape.R0, n_rho - 1, 0.05 * math.sqrt(eps) * 256.0 / (n_rho - 1))
    grid = geo.build_gap_grid(gmap, n_rho, n_n, grading)
    coeffs = geo.gap_field_coefficients(grid, n, k)
    axis = dirichlet(0.0) if k >= 1 else (NATURAL if n > 2 else neumann(0.0))
    bcs = BoundarySpec(s1_lo=axis, s1_hi=dirichlet(outer_value), s2_lo=neumann(0.0), s2_hi=neumann(0.0))
    return DiscreteProblem(grid, coeffs, bcs)


def solve_local_gap(n: int, eps: float, shape: geo.InclusionShape, n_rho=257, n_n=17, grading=None, k=1,
                    outer_value=1.0, tol=1e-10, preconditioner="auto") -> FieldSolution:
    problem = local_gap_problem(n, eps, shape, n_rho, n_n, grading, k, outer_value)
    return solve(problem, tol=tol, preconditioner=preconditioner, n=n, k=k)
