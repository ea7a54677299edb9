"""Problem parameters, collocation grid, scalar fields, and the norm family.

Everything lives on the inner-variable interval [0, L] with L = d/epsilon.
Fields are sampled on uniform collocation nodes of the Neumann cosine basis
cos(k*pi*z/L); quadrature uses trapezoid weights, which are exact for that
basis, so transforms and inner products are mutually consistent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.fft import dct, dst


class FchError(Exception):
    """Base class for all package errors."""


class InvalidFieldError(FchError):
    """Field contains non-finite values."""


class GridMismatchError(FchError):
    """Binary field operation on fields with different grids."""


class DomainError(FchError):
    """Input outside an operator's domain (e.g. nonzero mass)."""


class AdmissibilityError(FchError):
    """Pulse configuration violates the admissible spacing rules."""


class MassSplitError(FchError):
    """Total mass cannot be split as n*M_h + M1 with M1 in (0, M_h)."""


class WellError(FchError):
    """Double well violates a standing assumption."""


class NoHomoclinicError(FchError):
    """The well admits no homoclinic connection to b_minus."""


class ToleranceError(FchError):
    """A solver failed to reach its requested tolerance."""


class RefinementError(FchError):
    """Boundary/mass closure could not be verified after refinement."""


class ExtractionError(FchError):
    """Pulse-position extraction found the wrong number of maxima."""

    def __init__(self, message, found=None):
        super().__init__(message)
        self.found = found


class StiffnessError(FchError):
    """Time step underflowed while seeking an energy-decreasing step."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class ConfigError(FchError):
    """Malformed experiment configuration."""


class ValidationError(FchError):
    """Configuration violates a parameter invariant."""


@dataclass(frozen=True)
class SystemParams:
    """Scalar problem constants, validated once at construction.

    tail_scale is always derived as exp(-sqrt(alpha_minus)*min_spacing); it is
    the exponentially small pulse tail coupling that controls every smallness
    bound downstream. It is never set independently.
    """

    epsilon: float
    domain_d: float
    n_pulses: int
    total_mass: float
    min_spacing: float
    alpha_minus: float
    gradient_s: float = 0.0
    rho: float | None = None
    tail_scale: float = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValidationError(f"epsilon must lie in (0,1), got {self.epsilon}")
        if self.domain_d <= 0.0:
            raise ValidationError("domain_d must be positive")
        if self.n_pulses < 1:
            raise ValidationError("n_pulses must be >= 1")
        if self.min_spacing <= 0.0:
            raise ValidationError("min_spacing must be positive")
        if self.alpha_minus <= 0.0:
            raise ValidationError("alpha_minus must be positive")
        if self.domain_length < (self.n_pulses + 1) * self.min_spacing:
            raise ValidationError(
                "admissible set empty: d/epsilon = "
                f"{self.domain_length:g} < (n+1)*ell = "
                f"{(self.n_pulses + 1) * self.min_spacing:g}"
            )
        if not 0.0 <= self.gradient_s <= 1.0:
            raise ValidationError("gradient_s must lie in [0,1]")
        delta = float(np.exp(-np.sqrt(self.alpha_minus) * self.min_spacing))
        object.__setattr__(self, "tail_scale", delta)
        if self.rho is None:
            object.__setattr__(
                self, "rho", float(self.epsilon ** (-2.0 * self.gradient_s))
            )
        elif self.rho < 1.0:
            raise ValidationError("rho must be >= 1")

    @property
    def domain_length(self):
        """Inner-variable domain length L = d/epsilon."""
        return self.domain_d / self.epsilon

    def gap_rho(self, s=None):
        """Scaling epsilon**(-s) used by the symmetrized-gap diagnostics."""
        s = self.gradient_s if s is None else s
        return float(self.epsilon ** (-s))

    def gap_delta(self, s=None):
        """Rescaled smallness tail_scale * gap_rho**3 of the symmetrized flow."""
        return self.tail_scale * self.gap_rho(s) ** 3

    def require_srn_regime(self, s=None):
        dg = self.gap_delta(s)
        if dg >= 1.0:
            raise ValidationError(
                f"symmetrized-gap diagnostics need tail_scale*rho^3 < 1, got {dg:g}"
            )
        return dg


@dataclass(frozen=True)
class Grid:
    """Uniform collocation nodes z_j = j*h on [0, length], h = length/(N-1)."""

    length: float
    num_points: int
    h_max: float = 0.1

    def __post_init__(self):
        if self.num_points < 16:
            raise ValidationError("grid needs at least 16 points")
        if self.spacing > self.h_max:
            raise ValidationError(
                f"grid spacing {self.spacing:g} exceeds h_max {self.h_max:g}"
            )

    @property
    def spacing(self):
        return self.length / (self.num_points - 1)

    @cached_property
    def nodes(self):
        return np.linspace(0.0, self.length, self.num_points)

    @cached_property
    def quad_weights(self):
        """Trapezoid weights; exact for the cosine collocation basis."""
        w = np.full(self.num_points, self.spacing)
        w[0] *= 0.5
        w[-1] *= 0.5
        return w

    @cached_property
    def wavenumbers(self):
        """Physical wavenumbers kappa_k = k*pi/length of the cosine modes."""
        return np.arange(self.num_points) * np.pi / self.length

    def refine(self, factor=2):
        return Grid(self.length, factor * (self.num_points - 1) + 1, self.h_max)


@dataclass(frozen=True)
class ScalarField:
    """Samples of a scalar function on a Grid. Immutable."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if vals.shape != (self.grid.num_points,):
            raise InvalidFieldError(
                f"field has {vals.shape} values for a {self.grid.num_points}-point grid"
            )
        if not np.all(np.isfinite(vals)):
            raise InvalidFieldError("field contains non-finite values")

    def _check_same_grid(self, other):
        if self.grid != other.grid:
            raise GridMismatchError("fields live on different grids")

    def __add__(self, other):
        if isinstance(other, ScalarField):
            self._check_same_grid(other)
            return ScalarField(self.grid, self.values + other.values)
        return ScalarField(self.grid, self.values + other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, ScalarField):
            self._check_same_grid(other)
            return ScalarField(self.grid, self.values - other.values)
        return ScalarField(self.grid, self.values - other)

    def __rsub__(self, other):
        return ScalarField(self.grid, other - self.values)

    def __mul__(self, other):
        if isinstance(other, ScalarField):
            self._check_same_grid(other)
            return ScalarField(self.grid, self.values * other.values)
        return ScalarField(self.grid, self.values * other)

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)


def field_from_callable(grid, fn):
    return ScalarField(grid, np.asarray(fn(grid.nodes), dtype=float))


# ---------------------------------------------------------------------------
# Cosine-basis transforms. Coefficients a_k satisfy
#   u(z_j) = sum_{k=0}^{N-1} a_k cos(k*pi*z_j/L)
# exactly at the collocation nodes (DCT-I).
# ---------------------------------------------------------------------------


def cosine_coeffs(values):
    n = len(values)
    a = dct(values, type=1) / (n - 1)
    a[0] *= 0.5
    a[-1] *= 0.5
    return a


def cosine_synth(coeffs):
    y = np.asarray(coeffs, dtype=float).copy()
    y[1:-1] *= 0.5
    return dct(y, type=1)


def sine_synth(coeffs):
    """Evaluate sum_{k=1}^{N-2} b_k sin(k*pi*z_j/L) at the nodes."""
    n = len(coeffs)
    out = np.zeros(n)
    if n > 2:
        out[1:-1] = 0.5 * dst(np.asarray(coeffs[1:-1], dtype=float), type=1)
    return out


def spectral_derivative(field, order):
    """Differentiate in the cosine basis; odd orders come back as sine series."""
    if order == 0:
        return ScalarField(field.grid, field.values.copy())
    a = cosine_coeffs(field.values)
    kappa = field.grid.wavenumbers
    if order % 2 == 0:
        sign = (-1.0) ** (order // 2)
        return ScalarField(field.grid, cosine_synth(sign * a * kappa**order))
    sign = (-1.0) ** ((order + 1) // 2)
    return ScalarField(field.grid, sine_synth(sign * a * kappa**order))


# ---------------------------------------------------------------------------
# Norms and inner products.
# ---------------------------------------------------------------------------


def inner_product_x(u, v):
    """Quadrature approximation of the L2 pairing on [0, L]."""
    if u.grid != v.grid:
        raise GridMismatchError("inner product needs a shared grid")
    return float(np.sum(u.grid.quad_weights * u.values * v.values))


def integral(field):
    return float(np.sum(field.grid.quad_weights * field.values))


def mean_value(field):
    return integral(field) / field.grid.length


def norm(field, kind="l2", gradient=None):
    """Norm family: 'l2', 'h4' (orders 0..4), or 'hg1' (= h4 of G1*field)."""
    if not np.all(np.isfinite(field.values)):
        raise InvalidFieldError("field contains non-finite values")
    kind = kind.lower()
    if kind == "l2":
        return float(np.sqrt(max(inner_product_x(field, field), 0.0)))
    if kind == "h4":
        total = 0.0
        for m in range(5):
            d = spectral_derivative(field, m)
            total += inner_product_x(d, d)
        return float(np.sqrt(max(total, 0.0)))
    if kind == "hg1":
        if gradient is None:
            raise DomainError("hg1 norm needs a gradient family")
        scale = 1.0 + float(np.max(np.abs(field.values)))
        if abs(integral(field)) > 1e-8 * scale * field.grid.length:
            raise DomainError("hg1 norm requires a zero-mass field")
        return norm(gradient.apply(field, "G1"), "h4")
    raise DomainError(f"unknown norm kind {kind!r}")


def h_mode_multipliers(grid, max_order=4):
    """Diagonal Parseval weights sum_m kappa_k**(2m) of the Sobolev Gram."""
    kappa2 = grid.wavenumbers**2
    total = np.ones_like(kappa2)
    powers = np.ones_like(kappa2)
    for _ in range(max_order):
        powers = powers * kappa2
        total = total + powers
    return total
