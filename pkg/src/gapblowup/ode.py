"""Radial modal operators L_k on (0, 1) and the h-function.

    L_k V = V'' + ((n-2)/r + 2r/(eps+r^2)) V' - mu/r^2 V,   mu = k(k+n-3).

With p(r) = r^{n-2}(eps+r^2) this is p L_k V = (p V')' - mu r^{n-4}(eps+r^2) V,
which is what gets discretized: a conservative three-point scheme on a
geometric grid, divided back by p at each node.  The resulting matrix is an
M-matrix for any spacing, so Thomas elimination is stable.

Geometric grids use the ratio q = 2^(1/m).  Nodes are r_j = q^-j counted from
r = 1, so the grids for a_cut, a_cut/2, a_cut/4 share their nodes bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .linalg import Tridiagonal, thomas_solve
from .rates import DomainError, alpha, alpha_k, beta_star, check_dimension, mode_eigenvalue, subsolution_condition


class InvariantViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class ModalOperatorParams:
    n: int
    eps: float
    k: int = 1

    def __post_init__(self):
        check_dimension(self.n)
        if not self.eps > 0:
            raise DomainError("eps must be positive")
        if isinstance(self.k, bool) or int(self.k) != self.k or self.k < 0:
            raise DomainError(f"mode index must be a non-negative integer, got {self.k!r}")

    @property
    def mu(self) -> int:
        return mode_eigenvalue(self.n, self.k)

    def weight(self, r):
        """p(r) = r^{n-2} (eps + r^2)."""
        r = np.asarray(r, float)
        return r ** (self.n - 2) * (self.eps + r * r)

    def drift(self, r):
        r = np.asarray(r, float)
        return (self.n - 2) / r + 2.0 * r / (self.eps + r * r)

    def apply_exact(self, r, v, dv, d2v):
        """L_k applied to a function given its value and first two derivatives."""
        r = np.asarray(r, float)
        return d2v + self.drift(r) * dv - self.mu * v / (r * r)


@dataclass(frozen=True)
class RadialGrid:
    nodes: np.ndarray
    per_octave: int = 0  # 0 for a grid that is not geometric
    grading: str = "geometric"

    def __post_init__(self):
        r = np.asarray(self.nodes, float)
        if r.ndim != 1 or len(r) < 3:
            raise ValueError("a radial grid needs at least three nodes")
        if not r[0] > 0:
            raise ValueError("a_cut must be positive")
        if np.any(np.diff(r) <= 0):
            raise ValueError("radial nodes must be strictly increasing")
        object.__setattr__(self, "nodes", r)

    @property
    def a_cut(self) -> float:
        return float(self.nodes[0])

    @property
    def ratio(self) -> float:
        return 2.0 ** (1.0 / self.per_octave) if self.per_octave else float("nan")

    @property
    def size(self) -> int:
        return len(self.nodes)

    @classmethod
    def geometric(cls, a_cut: float, per_octave: int) -> "RadialGrid":
        """r_j = 2^(-j/m) for j = 0..J with 2^(-J/m) the largest value <= a_cut."""
        if not 0 < a_cut < 1:
            raise ValueError("a_cut must lie in (0, 1)")
        m = int(per_octave)
        if m < 1:
            raise ValueError("per_octave must be positive")
        j_max = int(math.ceil(m * math.log2(1.0 / a_cut) - 1e-9))
        j = np.arange(j_max, -1, -1)
        return cls(2.0 ** (-j / m), m)

    def refined(self) -> "RadialGrid":
        """Twice the nodes per octave; every node of ``self`` is kept."""
        if not self.per_octave:
            raise ValueError("only geometric grids can be refined")
        j_max = 2 * round(-self.per_octave * math.log2(self.a_cut))
        j = np.arange(j_max, -1, -1)
        return RadialGrid(2.0 ** (-j / (2 * self.per_octave)), 2 * self.per_octave)

    def halved(self, times: int = 1) -> "RadialGrid":
        """Same ratio, extended by ``times`` octaves toward zero."""
        if not self.per_octave:
            raise ValueError("only geometric grids can be extended")
        j_max = round(-self.per_octave * math.log2(self.a_cut)) + times * self.per_octave
        j = np.arange(j_max, -1, -1)
        return RadialGrid(2.0 ** (-j / self.per_octave), self.per_octave)


def default_a_cut(eps: float) -> float:
    return max(1e-8, 1e-4 * eps)


def default_grid(eps: float, nodes: int = 2000, a_cut: Optional[float] = None) -> RadialGrid:
    a = default_a_cut(eps) if a_cut is None else a_cut
    octaves = math.log2(1.0 / a)
    return RadialGrid.geometric(a, max(16, int(math.ceil(nodes / octaves))))


@dataclass
class OdeSolution:
    grid: RadialGrid
    values: np.ndarray
    derivative: np.ndarray
    boundary: tuple
    params: Optional[ModalOperatorParams] = None
    extrapolation: dict = field(default_factory=dict)

    @property
    def r(self) -> np.ndarray:
        return self.grid.nodes

    def __call__(self, x):
        """Cubic interpolation in log r (values outside the grid are rejected)."""
        x = np.asarray(x, float)
        if np.any(x < self.r[0] * (1 - 1e-12)) or np.any(x > self.r[-1] * (1 + 1e-12)):
            raise ValueError("evaluation point outside the radial grid")
        spline = CubicSpline(np.log(self.r), self.values)
        return spline(np.log(np.clip(x, self.r[0], self.r[-1])))


@dataclass
class ForcingDecomposition:
    """Forcing H = A' + B sampled on radii."""

    r: np.ndarray
    A: np.ndarray
    B: np.ndarray
    bound_A: float = field(init=False)
    bound_B: float = field(init=False)

    def __post_init__(self):
        self.r = np.asarray(self.r, float)
        self.A = np.broadcast_to(np.asarray(self.A, float), self.r.shape).copy()
        self.B = np.broadcast_to(np.asarray(self.B, float), self.r.shape).copy()
        if np.any(self.r <= 0):
            raise ValueError("forcing samples need r > 0")
        self.bound_A = float(np.max(np.abs(self.A) / self.r))
        self.bound_B = float(np.max(np.abs(self.B)))
        if not (math.isfinite(self.bound_A) and math.isfinite(self.bound_B)):
            raise ValueError("forcing bounds are not finite")

    @classmethod
    def zero(cls, r) -> "ForcingDecomposition":
        return cls(r, 0.0, 0.0)

    def H(self) -> np.ndarray:
        return np.gradient(self.A, self.r, edge_order=2) + self.B


# ---------------------------------------------------------------- assembly


@dataclass
class ModalSystem:
    """Tridiagonal system for the interior nodes 1..M-1."""

    matrix: Tridiagonal
    rhs: np.ndarray
    diagonally_dominant: bool
    boundary: tuple


def _stencil(params: ModalOperatorParams, r: np.ndarray):
    """Three-point coefficients of L_k at interior nodes: (lower, diag, upper)."""
    hm = r[1:-1] - r[:-2]
    hp = r[2:] - r[1:-1]
    pm = params.weight(0.5 * (r[1:-1] + r[:-2]))
    pp = params.weight(0.5 * (r[2:] + r[1:-1]))
    ri = r[1:-1]
    pi = params.weight(ri)
    dual = 0.5 * (hm + hp)
    lo = pm / hm / (dual * pi)
    up = pp / hp / (dual * pi)
    diag = -(lo + up) - params.mu / (ri * ri)
    return lo, diag, up


def assemble_modal_bvp(
    params: ModalOperatorParams, grid: RadialGrid, left_bc: float, right_bc: float, forcing=None
) -> ModalSystem:
    """Discrete L_k V = forcing with V(r_0) = left_bc and V(1) = right_bc.

    ``forcing`` is an array on all nodes (only interior entries are used) or
    None for the homogeneous problem.
    """
    r = grid.nodes
    lo, diag, up = _stencil(params, r)
    rhs = np.zeros(len(r) - 2) if forcing is None else np.asarray(forcing, float)[1:-1].copy()
    rhs[0] -= lo[0] * left_bc
    rhs[-1] -= up[-1] * right_bc
    mat = Tridiagonal(lo[1:].copy(), diag, up[:-1].copy())
    dominant = bool(np.all(np.abs(diag) >= (lo + up) * (1 - 1e-14)))
    return ModalSystem(mat, rhs, dominant, (float(left_bc), float(right_bc)))


def apply_operator(params: ModalOperatorParams, grid: RadialGrid, v) -> np.ndarray:
    """Discrete L_k v at interior nodes."""
    v = np.asarray(v, float)
    lo, diag, up = _stencil(params, grid.nodes)
    return lo * v[:-2] + diag * v[1:-1] + up * v[2:]


def _solve(params, grid, left, right, forcing=None) -> np.ndarray:
    sys_ = assemble_modal_bvp(params, grid, left, right, forcing)
    out = np.empty(grid.size)
    out[0], out[-1] = left, right
    out[1:-1] = thomas_solve(sys_.matrix, sys_.rhs)
    return out


def _solve_extrapolated(params, grid, left, right) -> np.ndarray:
    """Solve on ``grid`` and on its refinement and remove the O(spacing^2) term.

    On a smoothly graded grid the scheme's leading error is c(r) dlog(r)^2,
    so (4 v_fine - v_coarse) / 3 on the shared nodes is fourth-order.
    """
    coarse = _solve(params, grid, left, right)
    if not grid.per_octave:
        return coarse
    fine = _solve(params, grid.refined(), left, right)[::2]
    return (4.0 * fine - coarse) / 3.0


def _derivative(r, v):
    return np.gradient(v, r, edge_order=2)


# ---------------------------------------------------------------- h-function


def solve_h(
    params: ModalOperatorParams,
    grid: Optional[RadialGrid] = None,
    nodes: int = 2000,
    check: bool = True,
) -> OdeSolution:
    """h with L h = 0, h(a) = a, h(1) = 1, extrapolated in a -> 0.

    Solves on the grids ending at a_cut, a_cut/2 and a_cut/4 (each level is
    itself extrapolated in the grid spacing) and applies Richardson
    extrapolation on the shared nodes.  The bounded branch near 0 differs
    from the anchored solution by a multiple of the singular branch
    r^{-(n-2)} whose size scales like a^{n-1}; that is the order used.  The
    spread between the two extrapolants is stored as the uncertainty.
    """
    if params.k != 1:
        raise DomainError("the h-function is defined for the k = 1 mode")
    grid = grid or default_grid(params.eps, nodes)
    m = len(grid.nodes)
    sols = []
    for times in (0, 1, 2):
        g = grid if times == 0 else grid.halved(times)
        v = _solve_extrapolated(params, g, g.a_cut, 1.0)
        sols.append(v[-m:])
    order = params.n - 1
    f = 2.0**order
    rich1 = (f * sols[1] - sols[0]) / (f - 1.0)
    rich2 = (f * sols[2] - sols[1]) / (f - 1.0)
    values = rich2
    spread = float(np.max(np.abs(rich2 - rich1) / np.abs(rich2)))
    r = grid.nodes
    probe = math.sqrt(params.eps)
    ip = int(np.argmin(np.abs(r - probe)))
    record = {
        "a_cut": grid.a_cut,
        "order": order,
        "probe_r": float(r[ip]),
        "h_a": float(sols[0][ip]),
        "h_a2": float(sols[1][ip]),
        "h_a4": float(sols[2][ip]),
        "richardson": float(values[ip]),
        "spread": spread,
    }
    sol = OdeSolution(grid, values, _derivative(r, values), (grid.a_cut, 1.0), params, record)
    if check and np.any(np.diff(values) <= 0):
        i = int(np.argmin(np.diff(values)))
        raise InvariantViolation(f"h is not increasing between r={r[i]:.3e} and r={r[i + 1]:.3e}")
    if not np.all(np.isfinite(values)):
        raise InvariantViolation("h has non-finite values")
    return sol


@dataclass
class HCertificate:
    n: int
    eps: float
    beta: float
    lower_ok: bool  # r < h
    upper_ok: bool  # h < r^alpha
    monotone: bool
    min_gap_lower: float  # min (h - r) / r over interior nodes
    min_gap_upper: float  # min (r^alpha - h) / r^alpha over interior nodes
    inf_ratio: float  # inf h / (r^beta (eps+r^2)^((alpha-beta)/2)), the fitted 1/C(beta)
    argmin_r: float
    max_ratio_h_over_r_alpha: float
    min_ratio_h_over_r: float
    spread: float
    slack: float = 1e-8

    @property
    def passed(self) -> bool:
        return self.lower_ok and self.upper_ok and self.monotone

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["passed"] = self.passed
        return d


def lower_envelope(r, n: int, eps: float, beta: float):
    a = alpha(n)
    r = np.asarray(r, float)
    return r**beta * (eps + r * r) ** (0.5 * (a - beta))


def verify_h_bounds(sol: OdeSolution, n: int, eps: float, beta: Optional[float] = None, slack: float = 1e-8):
    """Check r < h < r^alpha and measure inf h / lower envelope.

    The strict inequalities are tested at interior nodes with a relative
    one-sided slack.  ``beta`` defaults to beta_star(n); smaller values are
    rejected because the envelope is then not a subsolution.
    """
    beta = beta_star(n) if beta is None else float(beta)
    if not subsolution_condition(n, beta):
        raise DomainError(
            f"beta = {beta} is below beta_star({n}) = {beta_star(n)}: subsolution_condition fails"
        )
    r = sol.r
    h = sol.values
    a = alpha(n)
    ra = r**a
    inner = slice(1, -1)
    gap_lo = (h[inner] - r[inner]) / r[inner]
    gap_hi = (ra[inner] - h[inner]) / ra[inner]
    ratio = h / lower_envelope(r, n, eps, beta)
    i = int(np.argmin(ratio))
    return HCertificate(
        n=n,
        eps=eps,
        beta=beta,
        lower_ok=bool(np.all(gap_lo > -slack)),
        upper_ok=bool(np.all(gap_hi > -slack)),
        monotone=bool(np.all(np.diff(h) > 0)),
        min_gap_lower=float(gap_lo.min()),
        min_gap_upper=float(gap_hi.min()),
        inf_ratio=float(ratio[i]),
        argmin_r=float(r[i]),
        max_ratio_h_over_r_alpha=float(np.max(h / ra)),
        min_ratio_h_over_r=float(np.min(h / r)),
        spread=float(sol.extrapolation.get("spread", float("nan"))),
        slack=slack,
    )


# ---------------------------------------------------------------- modal decay


@dataclass
class DecayRecord:
    n: int
    k: int
    eps: float
    alpha_k: float
    max_ratio: float  # max |V| / (rho^alpha_k |V(1)|)
    worst_r: float
    passed: bool
    slope_outer: float  # log-slope of |V| on [0.5, 1]
    slope_inner: float  # log-slope of |V| on the lowest decade above 10 a_cut
    tolerance: float = 1e-6

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _loglog_slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def solve_mode(params: ModalOperatorParams, grid: Optional[RadialGrid] = None, V1: float = 1.0, nodes=2000):
    """Bounded-at-zero solution of L_k V = 0 with V(1) = V1 (V(a_cut) = 0)."""
    if params.k < 1:
        raise DomainError("modal decay needs k >= 1")
    grid = grid or default_grid(params.eps, nodes)
    v = _solve_extrapolated(params, grid, 0.0, V1)
    return OdeSolution(grid, v, _derivative(grid.nodes, v), (0.0, V1), params)


def modal_decay_check(
    params: ModalOperatorParams, grid: Optional[RadialGrid] = None, V1: float = 1.0, tol: float = 1e-6
) -> DecayRecord:
    sol = solve_mode(params, grid, V1)
    r = sol.r
    ak = alpha_k(params.n, params.k)
    bound = r**ak * abs(V1)
    ratio = np.abs(sol.values[1:]) / bound[1:]
    i = int(np.argmax(ratio))
    outer = r >= 0.5
    lo = 10.0 * r[0]
    inner = (r >= lo) & (r <= 10.0 * lo)
    av = np.abs(sol.values)
    return DecayRecord(
        n=params.n,
        k=params.k,
        eps=params.eps,
        alpha_k=ak,
        max_ratio=float(ratio[i]),
        worst_r=float(r[1 + i]),
        passed=bool(ratio[i] <= 1.0 + tol),
        slope_outer=_loglog_slope(r[outer], av[outer]),
        slope_inner=_loglog_slope(r[inner], av[inner]),
        tolerance=tol,
    )


# ---------------------------------------------------------------- particular solution


def _cumtrapz(x, y):
    out = np.zeros_like(y)
    inc = 0.5 * (y[1:] + y[:-1]) * np.diff(x)
    # Neumaier-compensated running sum
    s = 0.0
    c = 0.0
    for i, v in enumerate(inc.tolist()):
        t = s + v
        if abs(s) >= abs(v):
            c += (s - t) + v
        else:
            c += (v - t) + s
        s = t
        out[i + 1] = s + c
    return out


@dataclass
class ParticularSolution(OdeSolution):
    w: np.ndarray = None
    flux: np.ndarray = None  # G w'
    constant: float = float("nan")  # max |v| / r^{1+alpha}


def particular_solution(params: ModalOperatorParams, h: OdeSolution, forcing: ForcingDecomposition):
    """v = h w with (G w')' = h H p, G = h^2 p, p = r^{n-2}(eps+r^2), w(0) = w'(0) = 0.

    The inner integral of h p A' is taken by parts, so A is never
    differentiated:  int_0^s h p A' = h p A(s) - int_0^s (h p)' A.
    Integrals start at the first grid node; the piece on [0, a_cut] is
    estimated from the leading power of the integrand.
    """
    if params.k != 1:
        raise DomainError("particular_solution is defined for k = 1")
    r = h.r
    if len(forcing.r) != len(r) or not np.allclose(forcing.r, r, rtol=1e-13, atol=0):
        raise ValueError("forcing must be sampled on the nodes of h")
    n = params.n
    p = params.weight(r)
    dp = (n - 2) * r ** (n - 3) * (params.eps + r * r) + 2.0 * r ** (n - 1)
    hv, dh = h.values, h.derivative
    A, B = forcing.A, forcing.B
    integrand = -(dh * p + hv * dp) * A + hv * p * B
    a = r[0]
    # integrand ~ r^{n-1} near 0 (h ~ r, p ~ r^{n-2}, A ~ r, B ~ 1)
    head = a * integrand[0] / n
    inner = hv * p * A + head + _cumtrapz(r, integrand)
    G = hv * hv * p
    dw = inner / G
    if not np.all(np.isfinite(dw)):
        raise FloatingPointError(f"quadrature failed near r = {r[np.argmax(~np.isfinite(dw))]:.3e}")
    # dw is bounded near 0, so w ~ a dw(a)
    w = a * dw[0] + _cumtrapz(r, dw)
    v = hv * w
    alpha_n = alpha(n)
    const = float(np.max(np.abs(v) / r ** (1.0 + alpha_n)))
    return ParticularSolution(
        grid=h.grid,
        values=v,
        derivative=_derivative(r, v),
        boundary=(float(v[0]), float(v[-1])),
        params=params,
        extrapolation={},
        w=w,
        flux=inner,
        constant=const,
    )


def reduction_residual(params: ModalOperatorParams, h: OdeSolution, forcing: ForcingDecomposition, sol) -> float:
    """max |(G w')' - h H p| / max |h H p| at interior nodes."""
    r = h.r
    target = h.values * forcing.H() * params.weight(r)
    got = np.gradient(sol.flux, r, edge_order=2)
    scale = max(float(np.max(np.abs(target))), 1e-300)
    return float(np.max(np.abs(got - target)[1:-1]) / scale)


# ---------------------------------------------------------------- U_{1,1} decomposition


@dataclass
class U11Decomposition:
    C1: float
    D: float
    remainder_slope: Optional[float]
    remainder_max: float
    window: tuple
    condition: float


def u11_decompose(U, h: OdeSolution, fit_window: Sequence[float], n: Optional[int] = None) -> U11Decomposition:
    """Fit U ~ C1 h + D r^{1+alpha} on the window, then the slope of |U - C1 h|.

    ``U`` is an OdeSolution or a pair (radii, values).
    """
    if isinstance(U, OdeSolution):
        ru, uv = U.r, U.values
    else:
        ru, uv = (np.asarray(x, float) for x in U)
    n = n if n is not None else (h.params.n if h.params is not None else 3)
    lo, hi = fit_window
    if not 0 < lo < hi:
        raise ValueError("fit window must satisfy 0 < lo < hi")
    sel = (ru >= lo) & (ru <= hi)
    if sel.sum() < 4:
        raise ValueError("fit window holds fewer than four samples")
    r = ru[sel]
    u = uv[sel]
    hv = h(r)
    a = alpha(n)
    X = np.column_stack([hv, r ** (1.0 + a)])
    scale = np.linalg.norm(X, axis=0)
    cond = float(np.linalg.cond(X / scale))
    if not math.isfinite(cond) or cond > 1e8:
        raise ValueError(f"fit window is ill-conditioned (condition number {cond:.2e})")
    coef, *_ = np.linalg.lstsq(X / scale, u, rcond=None)
    C1, D = coef / scale
    rem = u - C1 * hv
    rem_max = float(np.max(np.abs(rem)))
    slope = None
    if rem_max > 1e-10 * float(np.max(np.abs(u))) and np.all(np.abs(rem) > 0):
        slope = _loglog_slope(r, np.abs(rem))
    return U11Decomposition(float(C1), float(D), slope, rem_max, (float(lo), float(hi)), cond)


# ---------------------------------------------------------------- norms and profiles


def weighted_norm(r, F, eps: float, gamma: float, s: float) -> float:
    """sup |F| / (r^gamma (eps + r^2)^(1-s)) over the samples."""
    r = np.asarray(r, float)
    F = np.asarray(F, float)
    if np.any(r <= 0):
        raise ValueError("weighted norm needs samples with r > 0")
    return float(np.max(np.abs(F) / (r**gamma * (eps + r * r) ** (1.0 - s))))


@dataclass
class DecayProfile:
    rho: np.ndarray
    omega: np.ndarray
    slope: float


def decay_profile(modes, rho, coefficients=None) -> DecayProfile:
    """omega(rho) = sqrt(sum_k (c_k V_k(rho))^2) and its log-slope over ``rho``.

    ``modes`` holds OdeSolutions, callables or (radii, values) pairs.
    """
    rho = np.asarray(rho, float)
    coefficients = [1.0] * len(modes) if coefficients is None else list(coefficients)
    if len(coefficients) != len(modes):
        raise ValueError("one coefficient per mode is required")
    total = np.zeros_like(rho)
    for c, m in zip(coefficients, modes):
        if isinstance(m, OdeSolution) or callable(m):
            vals = np.asarray(m(rho), float)
        else:
            rm, vm = (np.asarray(x, float) for x in m)
            vals = np.exp(np.interp(np.log(rho), np.log(rm), np.log(np.abs(vm))))
        total += (c * vals) ** 2
    omega = np.sqrt(total)
    slope = _loglog_slope(rho, omega) if np.all(omega > 0) else float("nan")
    return DecayProfile(rho, omega, slope)
