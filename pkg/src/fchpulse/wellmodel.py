"""Double-well potential, homoclinic pulse, far-field data, and backgrounds.

The pulse is computed by inverting the first-integral quadrature
    z(phi) = int dphi / sqrt(2 W(phi)),
not by shooting: two substitutions remove both endpoint singularities, so
every sample is an independent root-find accurate to ~1e-12. Derivatives then
follow exactly from the chain rule through the first integral.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import chebyshev
from scipy.optimize import brentq

from .core import (
    DomainError,
    Grid,
    NoHomoclinicError,
    ToleranceError,
    WellError,
    cosine_coeffs,
)


@dataclass(frozen=True)
class DoubleWell:
    """Tilted quartic double well W(u) = (u^2-1)^2/4 + tau*(u - u^3/3 + 2/3).

    b_minus = -1 is the zero-energy well, b_plus = +1 the deep well with
    W(b_plus) = 4*tau/3 < 0 for tau in (-1, 0).
    """

    tau: float
    b_minus: float = -1.0
    b_plus: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.tau):
            raise WellError("tau must be finite")
        if abs(self.W(self.b_minus)) > 1e-14:
            raise WellError("W(b_minus) must vanish")
        if not self.W(self.b_plus) < 0.0:
            raise WellError("wells must have unequal depth: W(b_plus) < 0 fails")
        if self.alpha_minus <= 0.0 or self.alpha_plus <= 0.0:
            raise WellError("well minima must be non-degenerate")
        if abs(self.dW(self.b_minus)) > 1e-14 or abs(self.dW(self.b_plus)) > 1e-14:
            raise WellError("b_minus, b_plus must be critical points of W")

    @property
    def alpha_minus(self):
        return self.d2W(self.b_minus)

    @property
    def alpha_plus(self):
        return self.d2W(self.b_plus)

    def W(self, u):
        u = np.asarray(u, dtype=float)
        return 0.25 * (u * u - 1.0) ** 2 + self.tau * (u - u**3 / 3.0 + 2.0 / 3.0)

    def W_bar(self, e):
        """W(b_minus + e) in a cancellation-free algebraic form."""
        e = np.asarray(e, dtype=float)
        return 0.25 * e * e * (e - 2.0) ** 2 + self.tau * e * e * (1.0 - e / 3.0)

    def dW(self, u):
        u = np.asarray(u, dtype=float)
        return (u * u - 1.0) * (u - self.tau)

    def d2W(self, u):
        u = np.asarray(u, dtype=float)
        return 3.0 * u * u - 2.0 * self.tau * u - 1.0

    def d3W(self, u):
        u = np.asarray(u, dtype=float)
        return 6.0 * u - 2.0 * self.tau

    def d4W(self, u):
        u = np.asarray(u, dtype=float)
        return 6.0 * np.ones_like(u)


def default_well(tau):
    """Standard tilted quartic; tau must lie strictly inside (-1, 0)."""
    if not -1.0 < tau < 0.0:
        raise WellError(
            f"tau = {tau:g} outside (-1, 0): equal-depth or degenerate wells "
            "admit no admissible homoclinic"
        )
    return DoubleWell(tau)


# ---------------------------------------------------------------------------
# Homoclinic pulse.
# ---------------------------------------------------------------------------

@lru_cache(maxsize=16)
def _chain_derivative(order):
    """phi^(order) as a function of (u, phi', tau) for the quartic well.

    Built by repeated symbolic differentiation of the pulse equation
    phi'' = W'(phi); every derivative reduces to a polynomial in (u, phi').
    """
    import sympy as sp

    u, d1, tau = sp.symbols("u d1 tau")
    w1 = (u**2 - 1) * (u - tau)
    exprs = [sp.Integer(0), d1, w1]
    for _ in range(3, order + 1):
        prev = exprs[-1]
        nxt = sp.diff(prev, u) * d1 + sp.diff(prev, d1) * w1
        exprs.append(sp.expand(nxt))
    return sp.lambdify((u, d1, tau), exprs[order], "numpy")


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


def _gauss_panel(fn, a, b):
    if b <= a:
        return 0.0
    t = 0.5 * (b - a) * _GL_NODES + 0.5 * (a + b)
    return 0.5 * (b - a) * float(np.sum(_GL_WEIGHTS * fn(t)))


def _gauss_panels(fn, a, b, max_len=4.0):
    n = max(1, int(np.ceil((b - a) / max_len)))
    edges = np.linspace(a, b, n + 1)
    return sum(_gauss_panel(fn, lo, hi) for lo, hi in zip(edges[:-1], edges[1:]))


class _HomoclinicInverter:
    """Pointwise evaluation of phi_bar(z) = phi_h(z) - b_minus for z >= 0.

    Upper branch (phi near the turning point u*): substitute phi = u* - t^2,
    which makes the integrand smooth through the simple zero of W at u*.
    Lower branch (phi near b_minus): substitute phi = b_minus + e^v, which
    turns the logarithmic tail into a bounded integrand; root-finding in v
    keeps relative accuracy uniform down to phi_bar ~ 1e-300.
    """

    def __init__(self, well):
        self.well = well
        self.sqrt_am = float(np.sqrt(well.alpha_minus))
        self.e_star = self._find_turning_point()
        self.u_star = well.b_minus + self.e_star
        self.e_mid = 0.5 * self.e_star
        self.t_mid = float(np.sqrt(self.e_star - self.e_mid))
        self.v_mid = float(np.log(self.e_mid))
        self.z_mid = self._z_upper(self.t_mid)

    def _find_turning_point(self):
        well = self.well
        lo, hi = well.b_minus, well.b_plus
        us = np.linspace(lo + 1e-4 * (hi - lo), hi - 1e-12, 4001)
        w = well.W(us)
        positive = np.nonzero(w > 0.0)[0]
        if positive.size == 0:
            raise NoHomoclinicError("W has no positive region right of b_minus")
        idx = positive[-1]
        if idx + 1 >= us.size:
            raise NoHomoclinicError("W never returns to zero before b_plus")
        u_star = brentq(well.W, us[idx], us[idx + 1], xtol=1e-15, rtol=1e-15)
        return float(u_star - well.b_minus)

    # integrands -----------------------------------------------------------
    def _upper_integrand(self, t):
        e = self.e_star - t * t
        w = self.well.W_bar(e)
        out = np.empty_like(t)
        small = np.abs(t) < 1e-13
        out[~small] = 2.0 * t[~small] / np.sqrt(2.0 * w[~small])
        if np.any(small):
            dws = -float(self.well.dW(self.u_star))
            out[small] = 2.0 / np.sqrt(2.0 * dws)
        return out

    def _lower_integrand(self, v):
        e = np.exp(v)
        return e / np.sqrt(2.0 * self.well.W_bar(e))

    def _z_upper(self, t_hi):
        return _gauss_panels(self._upper_integrand, 0.0, t_hi, max_len=0.25)

    def _z_lower(self, v):
        return self.z_mid + _gauss_panels(self._lower_integrand, v, self.v_mid)

    # inversion ------------------------------------------------------------
    def phi_bar(self, z):
        """phi_bar at a single z >= 0."""
        if z <= 0.0:
            return self.e_star
        if z <= self.z_mid:
            t = brentq(
                lambda t: self._z_upper(t) - z, 0.0, self.t_mid,
                xtol=1e-14, rtol=8.9e-16,
            )
            return self.e_star - t * t
        v_lo = self.v_mid - self.sqrt_am * (z - self.z_mid) - 2.0
        while self._z_lower(v_lo) < z:
            v_lo -= 5.0
        v = brentq(
            lambda v: self._z_lower(v) - z, v_lo, self.v_mid,
            xtol=1e-13, rtol=8.9e-16,
        )
        return float(np.exp(v))

    def asymptotic_amplitude(self):
        """Exact tail coefficient lim e^{sqrt(alpha)*z} phi_bar(z).

        Computed from the regularized quadrature
        C = z_mid + v_mid/sqrt(alpha) + int_{-inf}^{v_mid} (q(v) - 1/sqrt(a)) dv,
        so that phi_bar ~ exp(sqrt(a) * (C - z)); independent of any fit.
        """
        reg = lambda v: self._lower_integrand(v) - 1.0 / self.sqrt_am
        tail = _gauss_panels(reg, self.v_mid - 60.0, self.v_mid)
        c = self.z_mid + self.v_mid / self.sqrt_am + tail
        return float(np.exp(self.sqrt_am * c))


@dataclass(frozen=True)
class PulseProfile:
    """Homoclinic pulse phi_h with evaluators for arbitrary translates."""

    well: DoubleWell
    z: np.ndarray
    values: np.ndarray
    deriv_values: np.ndarray
    u_star: float
    half_width: float
    phi_max: float
    decay_rate: float
    mass_h: float
    kernel_norm: float
    _cheb: chebyshev.Chebyshev

    @property
    def peak_height(self):
        """Max of phi_bar = u_star - b_minus."""
        return self.u_star - self.well.b_minus

    def pulse_bar(self, x):
        """phi_bar(|x|), vectorized over arbitrary offsets x."""
        x = np.abs(np.asarray(x, dtype=float))
        out = np.empty_like(x)
        inside = x <= self.half_width
        if np.any(inside):
            out[inside] = self._cheb(x[inside])
        if np.any(~inside):
            out[~inside] = self.phi_max * np.exp(
                -np.sqrt(self.well.alpha_minus) * x[~inside]
            )
        return out

    def pulse_bar_deriv(self, x, order):
        """d^order/dx^order of phi_bar(x) via the first integral, orders 0..8.

        Orders through 4 are the hand-derived chain formulas; higher orders
        come from the same recursion generated symbolically once per module.
        """
        x = np.asarray(x, dtype=float)
        e = self.pulse_bar(x)
        if order == 0:
            return e
        well = self.well
        u = well.b_minus + e
        dphi = -np.sign(x) * np.sqrt(np.maximum(2.0 * well.W_bar(e), 0.0))
        if order == 1:
            return dphi
        if order == 2:
            return well.dW(u)
        if order == 3:
            return well.d2W(u) * dphi
        if order == 4:
            return well.d3W(u) * dphi**2 + well.d2W(u) * well.dW(u)
        if order <= 8:
            return _chain_derivative(order)(u, dphi, well.tau)
        raise DomainError("pulse derivatives available for orders 0..8")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["z", "value"])
            for zi, vi in zip(self.z, self.values):
                writer.writerow([f"{zi:.17g}", f"{vi:.17g}"])


@dataclass(frozen=True)
class FarFieldFit:
    phi_max: float
    decay_rate: float
    max_log_dev: float


def far_field_params(profile_or_samples, window=(1e-10, 1e-4)):
    """Least-squares fit of log phi_bar against -rate*z over the tail window.

    Accepts a PulseProfile or a (z, phi_bar) pair. The window selects samples
    with phi_bar inside [window[0], window[1]]; all of them must be positive.
    """
    if isinstance(profile_or_samples, PulseProfile):
        z = profile_or_samples.z
        bar = profile_or_samples.values - profile_or_samples.well.b_minus
        keep = z > 0
        z, bar = z[keep], bar[keep]
    else:
        z, bar = profile_or_samples
        z = np.asarray(z, dtype=float)
        bar = np.asarray(bar, dtype=float)
    # the window is selected in z: from the first sample below the upper
    # cutoff until the magnitude drops through the lower cutoff
    below = np.nonzero(np.abs(bar) <= window[1])[0]
    if below.size == 0:
        raise DomainError("far-field fit window is empty")
    z_start = z[below[0]]
    sel = (z >= z_start) & (np.abs(bar) >= window[0])
    if np.count_nonzero(sel) < 8:
        raise DomainError("far-field fit window contains too few samples")
    if np.any(bar[sel] <= 0.0):
        raise DomainError("far-field fit window contains non-positive tail values")
    zs, ls = z[sel], np.log(bar[sel])
    slope, intercept = np.polyfit(zs, ls, 1)
    resid = ls - (slope * zs + intercept)
    return FarFieldFit(
        phi_max=float(np.exp(intercept)),
        decay_rate=float(-slope),
        max_log_dev=float(np.max(np.abs(resid))),
    )


def _fd_residual(z, values, well, stencil_width=4):
    """Sup-norm of phi'' - W'(phi) using an 8th-order finite-difference stencil.

    Deliberately independent of the first-integral construction: it only sees
    the sampled values.
    """
    h = z[1] - z[0]
    c = np.array([-1.0 / 560, 8.0 / 315, -1.0 / 5, 8.0 / 5, -205.0 / 72,
                  8.0 / 5, -1.0 / 5, 8.0 / 315, -1.0 / 560])
    w = stencil_width
    second = np.zeros(len(values) - 2 * w)
    for i, ci in enumerate(c):
        second += ci * values[i : i + len(second)]
    second /= h * h
    interior = values[w:-w]
    return float(np.max(np.abs(second - well.dW(interior))))


def solve_homoclinic(well, tol=1e-8, half_width=None, spacing=0.05,
                     cheb_degree=220):
    """Construct the homoclinic pulse of u'' = W'(u) by quadrature inversion.

    Centered so that phi'(0) = 0, phi(0) = u*. Raises ToleranceError when the
    finite-difference residual on the sampled window exceeds tol.
    """
    inv = _HomoclinicInverter(well)
    sqrt_am = inv.sqrt_am
    if half_width is None:
        half_width = max(20.0 / sqrt_am, 24.0)

    cheb = chebyshev.Chebyshev.interpolate(
        lambda xs: np.array([inv.phi_bar(float(x)) for x in np.atleast_1d(xs)]),
        cheb_degree,
        domain=[0.0, half_width],
    )
    check = np.linspace(0.0, half_width, 173)
    cheb_err = max(abs(cheb(float(x)) - inv.phi_bar(float(x))) for x in check)
    if cheb_err > 1e-11:
        raise ToleranceError(
            f"pulse interpolant error {cheb_err:.2e} exceeds 1e-11; "
            "raise cheb_degree"
        )

    # provisional profile for the tail fit
    z_half = np.arange(0.0, half_width + 0.5 * spacing, spacing)
    bar_half = cheb(z_half)
    fit = far_field_params((z_half, bar_half))
    phi_max = fit.phi_max

    z = np.concatenate([-z_half[:0:-1], z_half])
    bar = np.concatenate([bar_half[:0:-1], bar_half])
    values = well.b_minus + bar
    dphi = -np.sign(z) * np.sqrt(np.maximum(2.0 * well.W_bar(bar), 0.0))

    mass_core = float(cheb.integ()(half_width) - cheb.integ()(0.0))
    mass_h = 2.0 * (mass_core + phi_max * np.exp(-sqrt_am * half_width) / sqrt_am)

    dsq = lambda t: 2.0 * well.W_bar(cheb(t))
    kin_core = _gauss_panels(dsq, 0.0, half_width, max_len=0.5)
    kin_tail = (
        0.5 * sqrt_am * phi_max**2 * np.exp(-2.0 * sqrt_am * half_width)
    )
    kernel_norm = float(np.sqrt(2.0 * (kin_core + kin_tail)))

    residual = _fd_residual(z, values, well)
    if residual > tol:
        raise ToleranceError(
            f"homoclinic residual {residual:.2e} exceeds tol {tol:.2e}"
        )

    return PulseProfile(
        well=well,
        z=z,
        values=values,
        deriv_values=dphi,
        u_star=inv.u_star,
        half_width=float(half_width),
        phi_max=phi_max,
        decay_rate=fit.decay_rate,
        mass_h=mass_h,
        kernel_norm=kernel_norm,
        _cheb=cheb,
    )


def exact_tail_amplitude(well):
    """Fit-free tail coefficient; test oracle for PulseProfile.phi_max."""
    return _HomoclinicInverter(well).asymptotic_amplitude()


# ---------------------------------------------------------------------------
# Background solutions L^j B_j = 1.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BackgroundProfile:
    """Solution of L^j B_j = 1 orthogonal to the kernel of L.

    B_j is even, so it is computed in the even sector (cosine basis on the
    half-window [0, window]); the odd kernel phi_h' is excluded by parity,
    which realizes the kernel-orthogonal solve exactly.
    """

    j: int
    window: float
    z: np.ndarray
    values: np.ndarray
    bar_values: np.ndarray
    b_inf: float
    mass_bar: float
    residual_norm: float
    _coeffs: np.ndarray

    def bar_at(self, x, order=0):
        """Evaluate d^order B_bar_j at arbitrary offsets (zero beyond window)."""
        x = np.asarray(x, dtype=float)
        ax = np.abs(x)
        out = np.zeros_like(ax)
        inside = ax < self.window
        if np.any(inside):
            kap = np.arange(len(self._coeffs)) * np.pi / self.window
            phase = np.outer(ax[inside], kap)
            if order % 2 == 0:
                sign = (-1.0) ** (order // 2)
                out[inside] = np.cos(phase) @ (sign * self._coeffs * kap**order)
            else:
                sign = (-1.0) ** ((order + 1) // 2)
                out[inside] = np.sin(phase) @ (sign * self._coeffs * kap**order)
                out[inside] *= np.sign(x[inside])
        return out

    def at(self, x, order=0):
        base = self.b_inf if order == 0 else 0.0
        return base + self.bar_at(x, order)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["z", "value"])
            for zi, vi in zip(self.z, self.values):
                writer.writerow([f"{zi:.17g}", f"{vi:.17g}"])


def _lu_factor(a):
    from scipy.linalg import lu_factor

    return lu_factor(a)


def _refined_solve(a, lu_piv, rhs):
    """LU solve with one step of iterative refinement."""
    from scipy.linalg import lu_solve

    x = lu_solve(lu_piv, rhs)
    x += lu_solve(lu_piv, rhs - a @ x)
    return x


@lru_cache(maxsize=8)
def _half_line_second_derivative(window, num_points):
    from scipy.fft import dct

    kap = np.arange(num_points) * np.pi / window
    eye = np.eye(num_points)
    coeffs = dct(eye, type=1, axis=0) / (num_points - 1)
    coeffs[0] *= 0.5
    coeffs[-1] *= 0.5
    block = -(kap[:, None] ** 2) * coeffs
    block[1:-1] *= 0.5
    return dct(block, type=1, axis=0)


def solve_background(well, profile, j, num_points=512, window_factor=2.0):
    """Solve L^j B_j = 1 on a window 2x the pulse window via the even sector.

    The default resolution (h ~ 0.1) is deliberately moderate: B_j varies on
    the O(1) pulse scale, and a finer grid only inflates the round-off of the
    composed residual L^2 B_2 - 1 through the operator norm.
    """
    if j not in (1, 2):
        raise DomainError("background order j must be 1 or 2")
    window = window_factor * profile.half_width
    grid = Grid(window, num_points, h_max=0.2)
    z = grid.nodes
    q = well.d2W(well.b_minus + profile.pulse_bar(z))
    lmat = _half_line_second_derivative(window, num_points) - np.diag(q)

    lu_piv = _lu_factor(lmat)
    rhs = np.ones(num_points)
    b = _refined_solve(lmat, lu_piv, rhs)
    if j == 2:
        b = _refined_solve(lmat, lu_piv, b)

    # residual of the composed operator L^j B_j - 1
    comp = b.copy()
    for _ in range(j):
        comp = lmat @ comp
    resid_vec = comp - rhs
    core = z <= 0.5 * window
    w = grid.quad_weights
    residual_norm = float(np.sqrt(2.0 * np.sum(w[core] * resid_vec[core] ** 2)))
    if not np.isfinite(b).all() or np.max(np.abs(b)) > 1e6:
        raise ToleranceError("background solve is near-singular")

    far = z >= 0.9 * window
    b_inf = float(np.mean(b[far]))
    bar = b - b_inf
    mass_bar = 2.0 * float(np.sum(w * bar))

    coeffs = cosine_coeffs(bar)
    keep = np.max(np.nonzero(np.abs(coeffs) > 1e-15 * np.max(np.abs(coeffs)))[0])
    coeffs = coeffs[: keep + 1]

    return BackgroundProfile(
        j=j,
        window=window,
        z=z,
        values=b,
        bar_values=bar,
        b_inf=b_inf,
        mass_bar=mass_bar,
        residual_norm=residual_norm,
        _coeffs=coeffs,
    )


def single_pulse_point_spectrum(well, profile, num_points=1600, tol_zero=1e-4):
    """Discrete eigenvalues of L = d^2/dz^2 - W''(phi_h) above -alpha_minus.

    Solved on the symmetric window [-2*half_width, 2*half_width] in the full
    cosine basis (both parities). Returns eigenvalues sorted descending.
    """
    window = 2.0 * profile.half_width
    length = 2.0 * window
    grid = Grid(length, num_points, h_max=0.2)
    z = grid.nodes - window
    q = well.d2W(well.b_minus + profile.pulse_bar(z))
    lmat = _half_line_second_derivative(length, num_points) - np.diag(q)
    # symmetrize in the quadrature inner product before eigensolving
    w = grid.quad_weights
    sw = np.sqrt(w)
    lsym = (sw[:, None] * lmat) / sw[None, :]
    lsym = 0.5 * (lsym + lsym.T)
    evals = np.linalg.eigvalsh(lsym)
    edge = -well.alpha_minus
    point = evals[evals > edge + 1e-3 * abs(edge)]
    return np.sort(point)[::-1], float(tol_zero)


def stable_edge_floor(well, profile, num_points=1600):
    """min over the nonzero single-pulse spectrum of lambda^2, vs alpha_minus^2.

    This is the squared distance of the nonzero spectrum of L from zero: the
    translation eigenvalue at zero is excluded, every other discrete
    eigenvalue and the essential-spectrum edge -alpha_minus compete.
    """
    point, tol_zero = single_pulse_point_spectrum(well, profile, num_points)
    nonzero = point[np.abs(point) > tol_zero]
    candidates = [well.alpha_minus**2]
    candidates.extend(nonzero**2)
    return float(min(candidates)), point
