"""Closed-form blow-up exponents for the insulated two-inclusion problem.

Every quantity here is an explicit algebraic function of the ambient
dimension ``n``.  Quadratic roots are evaluated in the cancellation-free
form ``2c / (b + sqrt(b^2 + 4c))`` so that small exponents keep full
relative precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple


class DomainError(ValueError):
    """Raised when an argument lies outside the admissible range."""


def check_dimension(n) -> int:
    if isinstance(n, bool) or int(n) != n:
        raise DomainError(f"dimension must be an integer, got {n!r}")
    n = int(n)
    if n < 3:
        raise DomainError(f"dimension must satisfy n >= 3, got {n}")
    return n


def _positive_root(b: float, c: float) -> float:
    # root of x^2 + b x - c = 0 with b > 0, c >= 0
    return 2.0 * c / (b + math.sqrt(b * b + 4.0 * c))


def mode_eigenvalue(n: int, k: int) -> int:
    """Eigenvalue k(k+n-3) of minus the Laplacian on S^{n-2}."""
    return k * (k + n - 3)


def alpha(n: int) -> float:
    """Gradient exponent alpha(n), the positive root of a^2 + (n-1)a - (n-2) = 0."""
    n = check_dimension(n)
    return _positive_root(n - 1.0, n - 2.0)


def alpha_k(n: int, k: int) -> float:
    """Decay exponent of the k-th spherical harmonic mode."""
    n = check_dimension(n)
    if isinstance(k, bool) or int(k) != k or k < 0:
        raise DomainError(f"mode index must be a non-negative integer, got {k!r}")
    return _positive_root(n - 1.0, float(mode_eigenvalue(n, int(k))))


def euler_exponent(n: int, k: int) -> float:
    """Bounded Euler exponent of L_k when the 2r/(eps+r^2) drift is negligible.

    This is the positive root of c^2 + (n-3)c - k(k+n-3) = 0; it governs both
    r -> 0 at fixed eps and the eps -> infinity limit.
    """
    n = check_dimension(n)
    mu = float(mode_eigenvalue(n, k))
    if n == 3:
        return math.sqrt(mu)
    return _positive_root(n - 3.0, mu)


def beta_star(n: int) -> float:
    """Smallest beta for which r^beta (eps+r^2)^((alpha-beta)/2) is a subsolution.

    It is the root of p'(1) = 2 alpha^2 + (n-1) alpha - beta (n-3+2 alpha).
    """
    n = check_dimension(n)
    a = alpha(n)
    return (2.0 * a * a + a * (n - 1.0)) / (n - 3.0 + 2.0 * a)


def beta_loose(n: int) -> float:
    """The sufficient exponent (2 alpha^2 + alpha(n-1)) / (n-3+alpha) (>= beta_star)."""
    n = check_dimension(n)
    a = alpha(n)
    return (2.0 * a * a + a * (n - 1.0)) / (n - 3.0 + a)


@dataclass(frozen=True)
class SubsolutionPolynomial:
    """p(x) = c2 x^2 + c1 x + c0 on x = r^2/(eps+r^2) in [0, 1]."""

    n: int
    beta: float
    c2: float
    c1: float
    c0: float

    def __call__(self, x):
        return (self.c2 * x + self.c1) * x + self.c0

    def derivative(self, x):
        return 2.0 * self.c2 * x + self.c1

    @property
    def slope_at_one(self) -> float:
        return 2.0 * self.c2 + self.c1


def subsolution_polynomial(n: int, beta: float) -> SubsolutionPolynomial:
    n = check_dimension(n)
    a = alpha(n)
    c2 = (beta - a) ** 2
    c1 = (2.0 * beta + n - 1.0) * (a - beta) + 2.0 * beta
    c0 = (n - 2.0 + beta) * (beta - 1.0)
    return SubsolutionPolynomial(n, float(beta), c2, c1, c0)


def subsolution_condition(n: int, beta: float, rtol: float = 1e-12) -> bool:
    """True when p'(1) <= 0, i.e. the power-law envelope is a subsolution.

    A relative slack ``rtol`` (scaled by the size of the terms) keeps the
    boundary case beta = beta_star on the accepting side.
    """
    p = subsolution_polynomial(n, beta)
    scale = abs(2.0 * p.c2) + abs(p.c1) + 1.0
    return p.slope_at_one <= rtol * scale


class TildeAlpha(NamedTuple):
    value: float
    resonant: bool


def tilde_alpha(n: int, gamma: float, s: float, atol: float = 1e-12) -> TildeAlpha:
    """min(alpha, 1 + gamma - 2s) for forcing in the (eps, gamma, s) weighted class.

    The resonant case 1 + gamma - 2s == alpha is reported through the
    ``resonant`` flag rather than rejected.
    """
    a = alpha(n)
    if s < 0:
        raise DomainError(f"s must be non-negative, got {s}")
    forcing_exponent = 1.0 + gamma - 2.0 * s
    if forcing_exponent <= 0:
        raise DomainError(f"need 1 + gamma - 2s > 0, got {forcing_exponent}")
    return TildeAlpha(min(a, forcing_exponent), abs(forcing_exponent - a) <= atol)


@dataclass
class RateSet:
    n: int
    alpha: float
    alpha_k: list[float]
    beta_star: float
    beta_loose: float
    tilde_alpha: TildeAlpha | None = None
    gradient_exponent: float = field(init=False)
    potential_exponent: float = field(init=False)

    def __post_init__(self):
        self.gradient_exponent = 0.5 * (self.alpha - 1.0)
        self.potential_exponent = 0.5 * self.alpha


def rate_set(n: int, k_max: int = 6, gamma: float | None = None, s: float = 0.0) -> RateSet:
    n = check_dimension(n)
    ta = tilde_alpha(n, gamma, s) if gamma is not None else None
    return RateSet(
        n=n,
        alpha=alpha(n),
        alpha_k=[alpha_k(n, k) for k in range(k_max + 1)],
        beta_star=beta_star(n),
        beta_loose=beta_loose(n),
        tilde_alpha=ta,
    )


def rate_table(n_min: int, n_max: int, k_max: int = 6) -> list[dict]:
    rows = []
    for n in range(n_min, n_max + 1):
        rs = rate_set(n, k_max)
        row = {
            "n": n,
            "alpha": rs.alpha,
            "gradient_exponent": rs.gradient_exponent,
            "beta_star": rs.beta_star,
            "beta_loose": rs.beta_loose,
        }
        for k, ak in enumerate(rs.alpha_k):
            row[f"alpha_{k}"] = ak
        rows.append(row)
    return rows
