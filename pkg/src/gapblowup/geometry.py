"""Meridian charts, inclusion profiles and logically rectangular grids.

All shapes are rotationally symmetric in x', so every field lives on the
meridian half plane (r, x_n) with r = |x'| >= 0.  Two charts are provided:

* :class:`GapMap` flattens the thin region between the inclusions onto the
  slab |y_n| < eps (logical coordinates (rho, y_n)).
* :class:`BipolarMap` covers the whole exterior of two unit discs; the point
  at infinity becomes the corner (sigma, tau) = (0, 0) of the rectangle
  [0, pi] x [-tau0, tau0].

A chart exposes ``to_physical``, ``to_logical`` and ``jacobian`` (the matrix
d(r, x_n)/d(s1, s2), shape ``(..., 2, 2)``) and ``area_factor`` (the
meridian area density of the logical coordinates).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.optimize import brentq

from .rates import DomainError, check_dimension, mode_eigenvalue


# ---------------------------------------------------------------- shapes


@dataclass(frozen=True)
class InclusionShape:
    """Upper/lower boundary profiles x_n = eps/2 + f(r) and x_n = -eps/2 + g(r).

    ``unit_ball``: f = 1 - sqrt(1 - r^2), g = -f (two unit spheres).
    ``quadratic_perturbed``: f = a r^2/2 + b r^(2+gamma), g = -a r^2/2, so that
    f - g = a r^2 + b r^(2+gamma).
    """

    kind: str = "unit_ball"
    a: float = 1.0
    gamma: float = 0.5
    b: float = 0.0
    R0: float = 0.8

    def __post_init__(self):
        if self.kind not in ("unit_ball", "quadratic_perturbed"):
            raise ValueError(f"unknown inclusion kind {self.kind!r}")
        if self.kind == "unit_ball":
            if self.a != 1.0:
                raise ValueError("unit_ball has curvature a = 1")
            if not 0 < self.R0 < 1:
                raise ValueError("unit_ball needs 0 < R0 < 1")
        else:
            if self.a <= 0:
                raise ValueError("curvature a must be positive")
            if not 0 < self.gamma < 1:
                raise ValueError("gamma must lie in (0, 1)")
            if self.R0 <= 0:
                raise ValueError("R0 must be positive")
            rr = np.linspace(0, self.R0, 257)[1:]
            if np.any(self.a * rr**2 + self.b * rr ** (2 + self.gamma) <= 0):
                raise ValueError("perturbation closes the gap inside the patch")

    @classmethod
    def unit_ball(cls, R0: float = 0.8) -> "InclusionShape":
        return cls("unit_ball", R0=R0)

    @classmethod
    def quadratic_perturbed(cls, a=1.0, gamma=0.5, b=0.3, R0=0.8) -> "InclusionShape":
        return cls("quadratic_perturbed", a=a, gamma=gamma, b=b, R0=R0)

    def f(self, r):
        r = np.asarray(r, float)
        if self.kind == "unit_ball":
            return r * r / (1.0 + np.sqrt(1.0 - r * r))
        return 0.5 * self.a * r * r + self.b * r ** (2.0 + self.gamma)

    def g(self, r):
        r = np.asarray(r, float)
        if self.kind == "unit_ball":
            return -self.f(r)
        return -0.5 * self.a * r * r

    def df(self, r):
        r = np.asarray(r, float)
        if self.kind == "unit_ball":
            return r / np.sqrt(1.0 - r * r)
        return self.a * r + (2.0 + self.gamma) * self.b * r ** (1.0 + self.gamma)

    def dg(self, r):
        r = np.asarray(r, float)
        if self.kind == "unit_ball":
            return -self.df(r)
        return -self.a * r

    def width(self, r):
        """f - g."""
        return self.f(r) - self.g(r)

    def curvature_excess(self, r):
        """f - g - a r^2, the tangential correction e^rho."""
        r = np.asarray(r, float)
        return self.width(r) - self.a * r * r


# ---------------------------------------------------------------- gap map


class CoefficientSample(NamedTuple):
    a_rr: np.ndarray
    a_rn: np.ndarray
    a_nn: np.ndarray
    e_r: np.ndarray
    e_n: np.ndarray


@dataclass(frozen=True)
class GapMap:
    """x = (r, x_n) in the gap  <->  y = (rho, y_n) in [0, R0) x (-eps, eps)."""

    shape: InclusionShape
    eps: float

    def __post_init__(self):
        if self.eps <= 0:
            raise DomainError("gap width eps must be positive")

    def _height(self, r):
        return self.eps + self.shape.width(r)

    def contains_physical(self, r, xn):
        r = np.asarray(r, float)
        xn = np.asarray(xn, float)
        lo = -0.5 * self.eps + self.shape.g(np.minimum(r, self.shape.R0))
        hi = 0.5 * self.eps + self.shape.f(np.minimum(r, self.shape.R0))
        return (r >= 0) & (r < self.shape.R0) & (xn > lo) & (xn < hi)

    def forward(self, r, xn):
        r = np.asarray(r, float)
        xn = np.asarray(xn, float)
        if not np.all(self.contains_physical(r, xn)):
            raise DomainError("point lies outside the gap region")
        return self._forward(r, xn)

    def _forward(self, r, xn):
        eps = self.eps
        t = (xn - self.shape.g(r) + 0.5 * eps) / self._height(r)
        return r.copy(), 2.0 * eps * (t - 0.5)

    def inverse(self, rho, yn):
        rho = np.asarray(rho, float)
        yn = np.asarray(yn, float)
        if np.any((rho < 0) | (rho >= self.shape.R0) | (np.abs(yn) > self.eps)):
            raise DomainError("point lies outside the cylinder")
        t = yn / (2.0 * self.eps) + 0.5
        return rho.copy(), self.shape.g(rho) - 0.5 * self.eps + t * self._height(rho)

    # chart protocol: logical (rho, y_n) -> physical (r, x_n)
    def to_physical(self, rho, yn):
        return self.inverse(rho, yn)

    def to_logical(self, r, xn):
        return self.forward(r, xn)

    def forward_jacobian(self, rho, yn):
        """d(y)/d(x) as a function of the logical point, shape (..., 2, 2)."""
        rho = np.asarray(rho, float)
        yn = np.asarray(yn, float)
        eps = self.eps
        hgt = self._height(rho)
        dyn_dr = (-2.0 * eps * self.shape.dg(rho) - (yn + eps) * (self.shape.df(rho) - self.shape.dg(rho))) / hgt
        jac = np.zeros(np.broadcast(rho, yn).shape + (2, 2))
        jac[..., 0, 0] = 1.0
        jac[..., 1, 0] = dyn_dr
        jac[..., 1, 1] = 2.0 * eps / hgt
        return jac

    def jacobian(self, rho, yn):
        """d(x)/d(y), the inverse of :meth:`forward_jacobian`."""
        rho = np.asarray(rho, float)
        yn = np.asarray(yn, float)
        fj = self.forward_jacobian(rho, yn)
        jac = np.zeros_like(fj)
        jac[..., 0, 0] = 1.0
        jac[..., 1, 1] = 1.0 / fj[..., 1, 1]
        jac[..., 1, 0] = -fj[..., 1, 0] / fj[..., 1, 1]
        return jac

    def area_factor(self, rho, yn):
        """dx = (eps + f - g) / (2 eps) dy."""
        rho = np.asarray(rho, float)
        return self._height(rho) / (2.0 * self.eps) + 0.0 * np.asarray(yn, float)


def gap_coefficients(gmap: GapMap, rho, yn, check: bool = True) -> CoefficientSample:
    """Meridian block of 2 eps (d_x y)(d_x y)^T / det(d_x y), unweighted.

    ``a_rr`` is the tangential entry eps + f - g, ``a_rn`` the cross entry and
    ``a_nn`` the normal entry.  ``e_r`` and ``e_n`` are the departures from
    the model entries eps + a rho^2 and (4 eps^2 + a_rn^2) / (eps + a rho^2).
    ``check=False`` evaluates the (analytic) formulas slightly outside the
    cylinder, as finite-difference stencils need.
    """
    rho = np.asarray(rho, float)
    yn = np.asarray(yn, float)
    if check and np.any((rho < 0) | (rho >= gmap.shape.R0) | (np.abs(yn) > gmap.eps)):
        raise DomainError("coefficient sample outside the cylinder")
    j = gmap.forward_jacobian(rho, yn)
    det = j[..., 0, 0] * j[..., 1, 1] - j[..., 0, 1] * j[..., 1, 0]
    jjt = np.einsum("...ik,...jk->...ij", j, j)
    a = 2.0 * gmap.eps * jjt / det[..., None, None]
    a_rr, a_rn, a_nn = a[..., 0, 0], a[..., 0, 1], a[..., 1, 1]
    model = gmap.eps + gmap.shape.a * rho * rho
    e_r = a_rr - model
    e_n = a_nn - (4.0 * gmap.eps**2 + a_rn**2) / model
    return CoefficientSample(a_rr, a_rn, a_nn, e_r, e_n)


# ---------------------------------------------------------------- bipolar


@dataclass(frozen=True)
class BipolarMap:
    """Bipolar chart of the exterior of the discs centred at (0, +-(1 + eps/2)).

    r = c sin(sigma) / D,  x_n = c sinh(tau) / D,  D = cosh(tau) - cos(sigma),
    with cosh(tau0) = 1 + eps/2 and c = sinh(tau0).  The scale factor is
    h = c / D.  At (0, 0) the map sends the point to infinity and every
    returned coordinate is ``inf``.
    """

    eps: float
    tau0: float = field(init=False)
    c: float = field(init=False)

    def __post_init__(self):
        if self.eps <= 0:
            raise DomainError("gap width eps must be positive")
        tau0 = 2.0 * math.asinh(0.5 * math.sqrt(self.eps))
        object.__setattr__(self, "tau0", tau0)
        object.__setattr__(self, "c", math.sqrt(self.eps) * math.sqrt(1.0 + 0.25 * self.eps))

    @staticmethod
    def _denominator(sigma, tau):
        # cosh(tau) - cos(sigma) without cancellation near (0, 0)
        return 2.0 * (np.sinh(0.5 * tau) ** 2 + np.sin(0.5 * sigma) ** 2)

    def forward(self, sigma, tau):
        """Return (r, x_n, h)."""
        sigma = np.asarray(sigma, float)
        tau = np.asarray(tau, float)
        d = self._denominator(sigma, tau)
        at_inf = d == 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(at_inf, np.inf, self.c * np.sin(sigma) / d)
            xn = np.where(at_inf, np.inf, self.c * np.sinh(tau) / d)
            h = np.where(at_inf, np.inf, self.c / d)
        r = np.where(sigma == math.pi, 0.0, r)
        return r, xn, h

    def to_physical(self, sigma, tau):
        r, xn, _ = self.forward(sigma, tau)
        return r, xn

    def to_logical(self, r, xn):
        """Inverse chart; (r, x_n) must satisfy r >= 0."""
        r = np.asarray(r, float)
        xn = np.asarray(xn, float)
        if np.any(r < 0):
            raise DomainError("meridian points need r >= 0")
        c = self.c
        tau = 0.5 * np.log(((xn + c) ** 2 + r * r) / ((xn - c) ** 2 + r * r))
        sigma = np.arctan2(r, xn - c) - np.arctan2(r, xn + c)
        return sigma, tau

    def jacobian(self, sigma, tau):
        """d(r, x_n)/d(sigma, tau), shape (..., 2, 2)."""
        sigma = np.asarray(sigma, float)
        tau = np.asarray(tau, float)
        w = tau - 1j * sigma
        dz = -self.c / (2.0 * np.sinh(0.5 * w) ** 2)  # d(x_n + i r)/d(tau)
        jac = np.zeros(np.broadcast(sigma, tau).shape + (2, 2))
        jac[..., 0, 0] = -dz.real  # dr/dsigma
        jac[..., 0, 1] = dz.imag  # dr/dtau
        jac[..., 1, 0] = dz.imag  # dx_n/dsigma
        jac[..., 1, 1] = dz.real  # dx_n/dtau
        return jac

    def area_factor(self, sigma, tau):
        return self.forward(sigma, tau)[2] ** 2

    def sphere_circle_residual(self, sigma, sign=+1):
        """|x - centre|^2 - 1 along tau = sign * tau0."""
        r, xn, _ = self.forward(sigma, sign * self.tau0)
        return r * r + (xn - sign * (1.0 + 0.5 * self.eps)) ** 2 - 1.0

    def outward_normal_flux_of_r(self, sigma, sign=+1):
        """Logical conormal flux d_tau(r) * sign on tau = sign * tau0.

        The outward unit normal of the fluid region at a sphere points into
        the sphere, so d r / d n_out = -r there, and d/d n_out = (sign/h) d/d tau.
        """
        r, _, h = self.forward(sigma, sign * self.tau0)
        return -r * h


@dataclass(frozen=True)
class CartesianMap:
    """Identity chart (s1, s2) = (r, x_n); used for plain rectangles."""

    def to_physical(self, s1, s2):
        return np.asarray(s1, float).copy(), np.asarray(s2, float).copy()

    def to_logical(self, r, xn):
        return np.asarray(r, float).copy(), np.asarray(xn, float).copy()

    def jacobian(self, s1, s2):
        shape = np.broadcast(np.asarray(s1), np.asarray(s2)).shape
        jac = np.zeros(shape + (2, 2))
        jac[..., 0, 0] = 1.0
        jac[..., 1, 1] = 1.0
        return jac

    def area_factor(self, s1, s2):
        return np.ones(np.broadcast(np.asarray(s1), np.asarray(s2)).shape)


# ---------------------------------------------------------------- grids


@dataclass(frozen=True)
class Grading:
    """Geometric cell-width grading.

    ``cluster`` is ``none``, ``low``, ``high`` or ``both``; widths grow by
    ``ratio`` per cell away from the clustered end(s).
    """

    cluster: str = "both"
    ratio: float = 1.05

    def __post_init__(self):
        if self.cluster not in ("none", "low", "high", "both"):
            raise ValueError(f"unknown grading cluster {self.cluster!r}")
        if self.ratio < 1.0:
            raise ValueError("grading ratio must be >= 1")

    @classmethod
    def with_first_width(cls, span: float, ncells: int, first: float, cluster: str = "low") -> "Grading":
        """Geometric grading whose smallest cell has width ``first`` (uniform if that is not smaller)."""
        if first >= span / ncells:
            return cls(cluster, 1.0)
        half = ncells if cluster in ("low", "high") else max(1, ncells // 2)
        width = span if cluster in ("low", "high") else 0.5 * span
        upper = math.exp(min(math.log(4.0), 600.0 / half))  # keeps q**half finite
        q = brentq(lambda q: width * (q - 1.0) / (q**half - 1.0) - first, 1.0 + 1e-14, upper, xtol=1e-15)
        return cls(cluster, float(q))

    def refined(self) -> "Grading":
        """Grading for a grid with twice the cells covering the same stretch."""
        return Grading(self.cluster, math.sqrt(self.ratio))

    def nodes(self, lo: float, hi: float, ncells: int) -> np.ndarray:
        k = np.arange(ncells)
        if self.cluster == "none" or self.ratio == 1.0:
            expo = np.zeros(ncells)
        elif self.cluster == "low":
            expo = k.astype(float)
        elif self.cluster == "high":
            expo = (ncells - 1 - k).astype(float)
        else:
            expo = np.minimum(k, ncells - 1 - k).astype(float)
        w = self.ratio**expo
        x = np.concatenate([[0.0], np.cumsum(w)])
        x = lo + (hi - lo) * x / x[-1]
        x[0], x[-1] = lo, hi
        if self.cluster == "both":
            # exact mirror symmetry about the midpoint
            x = 0.5 * (x + (lo + hi - x[::-1]))
            x[0], x[-1] = lo, hi
        return x


@dataclass
class CurvilinearGrid:
    """Tensor grid s1 x s2 with nodes, faces and cells.

    Node arrays have shape (N1, N2).  ``*_f1`` arrays live at the midpoints of
    edges along direction 1, (s1_{i+1/2}, s2_j), shape (N1-1, N2); ``*_f2``
    arrays at (s1_i, s2_{j+1/2}), shape (N1, N2-1); ``*_c`` at cell centres.
    """

    kind: str
    chart: object
    s1: np.ndarray
    s2: np.ndarray
    grading: Grading
    r: np.ndarray
    xn: np.ndarray
    r_f1: np.ndarray
    r_f2: np.ndarray
    r_c: np.ndarray
    cell_volume: np.ndarray
    node_volume: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.s1), len(self.s2)

    @property
    def ds1(self):
        return np.diff(self.s1)

    @property
    def ds2(self):
        return np.diff(self.s2)

    def node_dual_widths(self):
        """Control-volume widths in each logical direction (half cells at edges)."""
        return _dual(self.s1), _dual(self.s2)

    def dump_csv(self, path) -> None:
        """Write one row per node: i, j, s1, s2, r, xn, cell_volume (control volume)."""
        names = {"bipolar": ("sigma", "tau"), "gap": ("rho", "yn")}.get(self.kind, ("s1", "s2"))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["i", "j", names[0], names[1], "r", "xn", "cell_volume"])
            n1, n2 = self.shape
            for i in range(n1):
                for j in range(n2):
                    w.writerow(
                        [i, j]
                        + [
                            f"{v:.12g}"
                            for v in (
                                self.s1[i],
                                self.s2[j],
                                self.r[i, j],
                                self.xn[i, j],
                                self.node_volume[i, j],
                            )
                        ]
                    )


def _dual(s):
    d = np.diff(s)
    out = np.empty(len(s))
    out[0] = 0.5 * d[0]
    out[-1] = 0.5 * d[-1]
    out[1:-1] = 0.5 * (d[:-1] + d[1:])
    return out


def _mid(s):
    return 0.5 * (s[:-1] + s[1:])


def _build(kind, chart, s1, s2, grading):
    S1, S2 = np.meshgrid(s1, s2, indexing="ij")
    r, xn = chart.to_physical(S1, S2)
    m1, m2 = _mid(s1), _mid(s2)
    F1a, F1b = np.meshgrid(m1, s2, indexing="ij")
    F2a, F2b = np.meshgrid(s1, m2, indexing="ij")
    Ca, Cb = np.meshgrid(m1, m2, indexing="ij")
    r_f1, _ = chart.to_physical(F1a, F1b)
    r_f2, _ = chart.to_physical(F2a, F2b)
    r_c, _ = chart.to_physical(Ca, Cb)
    cell_volume = chart.area_factor(Ca, Cb) * np.outer(np.diff(s1), np.diff(s2))
    d1, d2 = _dual(s1), _dual(s2)
    with np.errstate(invalid="ignore"):
        node_volume = chart.area_factor(S1, S2) * np.outer(d1, d2)
    return CurvilinearGrid(kind, chart, s1, s2, grading, r, xn, r_f1, r_f2, r_c, cell_volume, node_volume)


def build_bipolar_grid(
    bmap: BipolarMap, n_sigma: int, n_tau: int, grading: Optional[Grading] = None, sigma_range=(0.0, math.pi)
) -> CurvilinearGrid:
    """Node grid on [sigma_lo, sigma_hi] x [-tau0, tau0]; sigma nodes graded, tau uniform.

    The default grading clusters toward sigma = 0, where the unit-sphere scale
    sits at sigma ~ 2 sqrt(eps); its first cell is 0.1 sqrt(eps) at 512 cells.
    """
    if n_sigma < 8 or n_tau < 8:
        raise ValueError("bipolar grid needs at least 8 nodes per direction")
    grading = grading or default_sphere_grading(bmap.eps, n_sigma)
    s1 = grading.nodes(sigma_range[0], sigma_range[1], n_sigma - 1)
    s2 = np.linspace(-bmap.tau0, bmap.tau0, n_tau)
    s2[(n_tau - 1) // 2] = 0.0 if n_tau % 2 else s2[(n_tau - 1) // 2]
    grid = _build("bipolar", bmap, s1, s2, grading)
    if sigma_range[1] == math.pi:
        grid.r[-1, :] = 0.0
        grid.r_f2[-1, :] = 0.0
    if sigma_range[0] == 0.0:
        grid.r[0, :] = np.where(s2 == 0.0, np.inf, 0.0)
        grid.r_f2[0, :] = 0.0
    return grid


def build_cartesian_grid(n1: int, n2: int, box=(0.0, 1.0, 0.0, 1.0), grading: Optional[Grading] = None):
    if n1 < 3 or n2 < 3:
        raise ValueError("cartesian grid needs at least 3 nodes per direction")
    grading = grading or Grading("none", 1.0)
    s1 = grading.nodes(box[0], box[1], n1 - 1)
    s2 = np.linspace(box[2], box[3], n2)
    return _build("cartesian", CartesianMap(), s1, s2, grading)


def default_sphere_grading(eps: float, n_sigma: int) -> Grading:
    return Grading.with_first_width(math.pi, n_sigma - 1, 0.1 * math.sqrt(eps) * 512.0 / (n_sigma - 1))


def build_gap_grid(
    gmap: GapMap, n_rho: int, n_n: int, grading: Optional[Grading] = None
) -> CurvilinearGrid:
    """Node grid on [0, R0 * (1 - 1e-12)] x [-eps, eps], rho graded toward the axis."""
    if n_rho < 8 or n_n < 8:
        raise ValueError("gap grid needs at least 8 nodes per direction")
    grading = grading or Grading("low", 1.05)
    s1 = grading.nodes(0.0, gmap.shape.R0 * (1.0 - 1e-12), n_rho - 1)
    s2 = np.linspace(-gmap.eps, gmap.eps, n_n)
    return _build("gap", gmap, s1, s2, grading)


# ---------------------------------------------------------------- coefficient fields


@dataclass
class CoefficientField:
    """Weighted symmetric tensor K and zeroth-order coefficient q on a grid.

    The discrete operator is div(K grad u) - q u in logical coordinates.
    ``k11_f1``/``k22_f2`` feed the 5-point part, ``k12_c`` the cross stencil;
    ``k11_c``/``k22_c`` are kept for ellipticity checks.
    """

    k11_f1: np.ndarray
    k22_f2: np.ndarray
    k12_c: np.ndarray
    k11_c: np.ndarray
    k22_c: np.ndarray
    q: np.ndarray

    @property
    def has_cross_terms(self) -> bool:
        return bool(np.any(self.k12_c != 0.0))

    def min_eigenvalue_cells(self) -> np.ndarray:
        tr = self.k11_c + self.k22_c
        det = self.k11_c * self.k22_c - self.k12_c**2
        disc = np.sqrt(np.maximum(0.25 * tr * tr - det, 0.0))
        return 0.5 * tr - disc

    def ellipticity_ratio(self, mask=None) -> float:
        tr = self.k11_c + self.k22_c
        det = self.k11_c * self.k22_c - self.k12_c**2
        disc = np.sqrt(np.maximum(0.25 * tr * tr - det, 0.0))
        lo, hi = 0.5 * tr - disc, 0.5 * tr + disc
        if mask is not None:
            lo, hi = lo[mask], hi[mask]
        return float(np.max(hi / lo))


def _power(r, p):
    r = np.asarray(r, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(r > 0, np.abs(r) ** p, 0.0 if p > 0 else (1.0 if p == 0 else 0.0))
    return out


def bipolar_coefficients(grid: CurvilinearGrid, n: int, k: int = 1) -> CoefficientField:
    """Coefficients of r^{n-2} Lap_meridian u - mu_k r^{n-4} u in (sigma, tau).

    The chart is conformal, so K = r^{n-2} I and q = mu_k r^{n-4} h^2.
    Axis faces carry weight exactly zero; q is set to zero where r = 0 (those
    nodes are either Dirichlet or have mu_k = 0).
    """
    n = check_dimension(n)
    mu = mode_eigenvalue(n, k)
    w = n - 2
    _, _, h_node = grid.chart.forward(*np.meshgrid(grid.s1, grid.s2, indexing="ij"))
    finite = np.isfinite(grid.r)
    q = np.zeros(grid.shape)
    q[finite] = mu * _power(grid.r[finite], n - 4) * h_node[finite] ** 2
    q[grid.r == 0.0] = 0.0
    k_c = _power(grid.r_c, w)
    return CoefficientField(
        k11_f1=_power(grid.r_f1, w),
        k22_f2=_power(grid.r_f2, w),
        k12_c=np.zeros_like(grid.r_c),
        k11_c=k_c,
        k22_c=k_c.copy(),
        q=q,
    )


def gap_field_coefficients(grid: CurvilinearGrid, n: int, k: int = 1) -> CoefficientField:
    """rho^{n-2}-weighted meridian coefficients of the flattened gap problem."""
    n = check_dimension(n)
    gmap: GapMap = grid.chart
    mu = mode_eigenvalue(n, k)
    w = n - 2
    m1 = _mid(grid.s1)
    m2 = _mid(grid.s2)
    F1a, F1b = np.meshgrid(m1, grid.s2, indexing="ij")
    F2a, F2b = np.meshgrid(grid.s1, m2, indexing="ij")
    Ca, Cb = np.meshgrid(m1, m2, indexing="ij")
    Na, Nb = np.meshgrid(grid.s1, grid.s2, indexing="ij")
    c1 = gap_coefficients(gmap, F1a, F1b)
    c2 = gap_coefficients(gmap, F2a, F2b)
    cc = gap_coefficients(gmap, Ca, Cb)
    cn = gap_coefficients(gmap, Na, Nb)
    q = mu * _power(Na, n - 4) * cn.a_rr
    q[Na == 0.0] = 0.0
    wc = _power(Ca, w)
    return CoefficientField(
        k11_f1=_power(F1a, w) * c1.a_rr,
        k22_f2=_power(F2a, w) * c2.a_nn,
        k12_c=wc * cc.a_rn,
        k11_c=wc * cc.a_rr,
        k22_c=wc * cc.a_nn,
        q=q,
    )
