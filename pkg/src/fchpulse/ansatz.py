"""Construction of the quasi-steady n-pulse manifold.

A manifold point is assembled as
    Phi(z; p) = u_n(z; p) + lambda * B_{2,n}(z; p) + E(z; p),
where u_n superposes pulse translates over the background state b_minus,
lambda * B_{2,n} carries the excess mass M1 = M - n*M_h, and E is the
boundary correction built from shadow-pulse tails. The five internal
parameters (p0, p_{n+1}, e0, e_{n+1}, lambda) are seeded by closed-form
leading-order values and refined by a damped Newton iteration enforcing the
four no-flux boundary conditions and the discrete mass constraint.

Smallness measurements in the H^4 norm are assembled from analytic component
derivatives (chain rule through the pulse first integral, termwise series
for the backgrounds, closed forms for E): spectral differentiation of sampled
fields would amplify interpolation round-off by kappa_max^4 and bury the
exponentially small quantities being measured.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from scipy.stats import qmc

from .core import (
    AdmissibilityError,
    MassSplitError,
    RefinementError,
    ScalarField,
    integral,
)

BC_TOL = 1e-8
MASS_RTOL = 1e-10
NEWTON_MAX_ITER = 50


@dataclass(frozen=True)
class PulseConfiguration:
    """Ordered pulse centers with the admissibility rules baked in.

    The boundary gaps are measured against the mirror shadow pulses
    p_0 = -p_1 and p_{n+1} = 2L - p_n, so admissibility reads
    min(2 p_1, p_2-p_1, ..., 2(L - p_n)) >= ell.
    """

    positions: np.ndarray
    min_spacing: float
    domain_length: float

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.positions, dtype=float))
        object.__setattr__(self, "positions", p)
        if p.ndim != 1 or p.size < 1:
            raise AdmissibilityError("need at least one pulse position")
        if np.any(np.diff(p) <= 0.0):
            raise AdmissibilityError("pulse positions must be strictly increasing")
        if p[0] <= 0.0 or p[-1] >= self.domain_length:
            raise AdmissibilityError("pulse positions must lie inside (0, L)")
        if self.min_gap < self.min_spacing - 1e-12:
            raise AdmissibilityError(
                f"minimum gap {self.min_gap:.6g} below spacing floor "
                f"{self.min_spacing:g}"
            )

    @property
    def n(self):
        return self.positions.size

    @property
    def min_gap(self):
        p = self.positions
        gaps = [2.0 * p[0], 2.0 * (self.domain_length - p[-1])]
        if p.size > 1:
            gaps.extend(np.diff(p))
        return float(min(gaps))

    @property
    def midpoints(self):
        """Interval midpoints m_0 = 0 < m_1 < ... < m_n = L."""
        p = self.positions
        inner = 0.5 * (p[:-1] + p[1:])
        return np.concatenate([[0.0], inner, [self.domain_length]])

    def shifted(self, i, delta):
        q = self.positions.copy()
        q[i] += delta
        return PulseConfiguration(q, self.min_spacing, self.domain_length)


@dataclass(frozen=True)
class InternalParams:
    """Shadow-pulse locations, boundary slopes, and the mass multiplier."""

    p0: float
    p_np1: float
    e0: float
    e_np1: float
    lam: float
    lam_seed: float
    converged: bool
    residual: float

    def as_dict(self):
        return asdict(self)

    def as_vector(self):
        return np.array([self.p0, self.p_np1, self.e0, self.e_np1, self.lam])


@dataclass(frozen=True)
class AnsatzProfile:
    """A manifold point with its components and closure diagnostics."""

    config: PulseConfiguration
    internal: InternalParams
    phi: ScalarField
    u_n: ScalarField
    mass_correction: ScalarField
    boundary_correction: ScalarField
    mass_value: float
    bc_residuals: np.ndarray

    def export_csv(self, path):
        grid = self.phi.grid
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["z", "phi", "u_n", "correction"])
            corr = self.mass_correction.values + self.boundary_correction.values
            for row in zip(grid.nodes, self.phi.values, self.u_n.values, corr):
                writer.writerow([f"{v:.17g}" for v in row])

    def export_internal_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.internal.as_dict(), fh, indent=2, sort_keys=True)


def mass(field, b_minus):
    """Scaled mass: quadrature of (field - b_minus)."""
    return integral(field) - b_minus * field.grid.length


def _boundary_term(z, amplitude, slope, p_ref, rate, sign, order):
    """d^order/dz^order of amplitude*(1 + slope*z)*exp(sign*rate*(z - p_ref))."""
    s = sign * rate
    base = amplitude * np.exp(s * (z - p_ref))
    if order == 0:
        return base * (1.0 + slope * z)
    return base * (s**order * (1.0 + slope * z) + order * s ** (order - 1) * slope)


@lru_cache(maxsize=8)
def _el_gradient_lambdas(max_order=4):
    """Symbolic z-derivatives of grad J for the quartic well family.

    Returns callables g_m(phi0, ..., phi_{4+m}, tau) for m = 0..max_order,
    where grad J = phi'''' - 2 W''(phi) phi'' - W'''(phi) (phi')^2
                   + W''(phi) W'(phi).
    """
    import sympy as sp

    z, tau = sp.symbols("z tau")
    phi = sp.Function("phi")(z)
    w1 = (phi**2 - 1) * (phi - tau)
    w2 = 3 * phi**2 - 2 * tau * phi - 1
    w3 = 6 * phi - 2 * tau
    grad = (
        sp.diff(phi, z, 4)
        - 2 * w2 * sp.diff(phi, z, 2)
        - w3 * sp.diff(phi, z) ** 2
        + w2 * w1
    )
    top = 4 + max_order
    symbols = sp.symbols(f"d0:{top + 1}")
    lambdas = []
    expr = grad
    for m in range(max_order + 1):
        if m > 0:
            expr = sp.diff(expr, z)
        sub = expr
        for j in range(top, -1, -1):
            sub = sub.subs(sp.diff(phi, z, j) if j else phi, symbols[j])
        lambdas.append(sp.lambdify(list(symbols) + [tau], sub, "numpy"))
    return lambdas


def h4_norm_from_stack(grid, stack):
    """H^4 norm from exact derivative samples (orders 0..4)."""
    w = grid.quad_weights
    total = 0.0
    for m in range(5):
        total += float(np.sum(w * stack[m] ** 2))
    return float(np.sqrt(max(total, 0.0)))


class PulseManifold:
    """Factory for manifold points sharing one well, one pulse, one grid."""

    def __init__(self, well, pulse, bg1, bg2, params, grid):
        self.well = well
        self.pulse = pulse
        self.bg1 = bg1
        self.bg2 = bg2
        self.params = params
        self.grid = grid
        self.n = params.n_pulses
        self.sqrt_am = float(np.sqrt(well.alpha_minus))
        self.mass_excess = params.total_mass - self.n * pulse.mass_h
        if not 0.0 < self.mass_excess < pulse.mass_h:
            raise MassSplitError(
                f"total mass must split as n*M_h + M1 with M1 in (0, M_h); "
                f"got M1 = {self.mass_excess:.6g}, M_h = {pulse.mass_h:.6g}"
            )
        if abs(grid.length - params.domain_length) > 1e-9 * params.domain_length:
            raise AdmissibilityError("grid length differs from d/epsilon")

    # -- configuration helpers ------------------------------------------------

    def configuration(self, positions):
        return PulseConfiguration(
            np.asarray(positions, dtype=float),
            self.params.min_spacing,
            self.params.domain_length,
        )

    def equispaced(self):
        length = self.params.domain_length
        idx = np.arange(1, self.n + 1)
        return self.configuration((2.0 * idx - 1.0) * length / (2.0 * self.n))

    def sample_configurations(self, count=32, seed=0, include_equispaced=True):
        """Latin-hypercube sample of the admissible set plus the equispaced point."""
        length = self.params.domain_length
        ell = self.params.min_spacing
        budget = length - self.n * ell
        sampler = qmc.LatinHypercube(d=self.n + 1, seed=seed)
        raw = sampler.random(count)
        configs = []
        margin = 1e-3
        for row in raw:
            extra = row * budget / (self.n + 1)
            p = np.empty(self.n)
            p[0] = 0.5 * ell + 0.5 * extra[0] + margin
            for i in range(1, self.n):
                p[i] = p[i - 1] + ell + extra[i] + margin
            configs.append(self.configuration(p))
        if include_equispaced:
            configs.append(self.equispaced())
        return configs

    # -- component evaluation --------------------------------------------------

    def lambda_seed(self, config=None):
        """Leading-order mass multiplier M1 / (L*B_{2,inf} + n*M_bar)."""
        denom = (
            self.params.domain_length * self.bg2.b_inf + self.n * self.bg2.mass_bar
        )
        return self.mass_excess / denom

    def n_pulse(self, config):
        """Raw superposition b_minus + sum_j pulse_bar(z - p_j)."""
        z = self.grid.nodes
        total = np.full(z.shape, self.well.b_minus)
        for p in config.positions:
            total += self.pulse.pulse_bar(z - p)
        return ScalarField(self.grid, total)

    def _pulse_sum_deriv(self, x, config, order):
        x = np.asarray(x, dtype=float)
        total = np.zeros_like(x)
        for p in config.positions:
            total += self.pulse.pulse_bar_deriv(x - p, order)
        return total

    def _background_sum(self, x, config, order=0):
        x = np.asarray(x, dtype=float)
        total = np.zeros_like(x)
        for p in config.positions:
            total += self.bg2.bar_at(x - p, order)
        if order == 0:
            total += self.bg2.b_inf
        return total

    def _e_term(self, z, x, order=0):
        """Boundary correction and its z-derivatives for parameters x."""
        rate = self.sqrt_am
        amp = self.pulse.phi_max
        left = _boundary_term(z, amp, x[2], x[0], rate, -1.0, order)
        right = _boundary_term(z, amp, x[3], x[1], rate, +1.0, order)
        return left + right

    # -- internal parameter closure ---------------------------------------------

    def _seed(self, config):
        """Leading-order internal parameters.

        Slopes come from the ratio of first and third boundary derivatives;
        shadow locations from matching the residual boundary amplitude with a
        pulse tail phi_max*exp(-sqrt(alpha)*(z - p0)), which puts p0 within
        tail corrections of the mirror image -p_1.
        """
        lam = self.lambda_seed(config)
        length = self.params.domain_length
        rate = self.sqrt_am
        am = self.well.alpha_minus
        amp = self.pulse.phi_max
        p = config.positions
        ends = np.array([0.0, length])
        d1_pair = self._pulse_sum_deriv(ends, config, 1) + lam * self._background_sum(
            ends, config, 1
        )
        d3_pair = self._pulse_sum_deriv(ends, config, 3) + lam * self._background_sum(
            ends, config, 3
        )

        # left end
        d1, d3 = float(d1_pair[0]), float(d3_pair[0])
        denom = d3 - 3.0 * am * d1
        e0 = rate * (d3 - am * d1) / denom if abs(denom) > 1e-280 else 0.0
        amp_left = -d1 / (amp * (e0 - rate)) if abs(d1) > 1e-280 else 0.0
        p0 = np.log(amp_left) / rate if amp_left > 0.0 else -p[0]

        # right end, in the mirrored frame
        d1r, d3r = -float(d1_pair[1]), -float(d3_pair[1])
        denom_r = d3r - 3.0 * am * d1r
        beta = rate * (d3r - am * d1r) / denom_r if abs(denom_r) > 1e-280 else 0.0
        e_np1 = -beta / (1.0 + beta * length) if abs(1.0 + beta * length) > 1e-12 else 0.0
        scale_r = 1.0 + e_np1 * length
        slope_term = e_np1 + rate * scale_r
        amp_right = -d1_pair[1] / (amp * slope_term) if abs(slope_term) > 1e-280 else 0.0
        if amp_right > 0.0:
            p_np1 = length - np.log(amp_right) / rate
        else:
            p_np1 = 2.0 * length - p[-1]
        return np.array([p0, p_np1, e0, e_np1, lam])

    def _closure_residual(self, x, config, cached):
        """(Phi_z(0), Phi_zzz(0), Phi_z(L), Phi_zzz(L), mass - M)."""
        length = self.params.domain_length
        lam = x[4]
        ends = np.array([0.0, length])
        r = np.empty(5)
        for k, order in enumerate((1, 3)):
            vals = (
                cached["pulse_ends"][order]
                + lam * cached["bg_ends"][order]
                + self._e_term(ends, x, order)
            )
            r[k] = vals[0]
            r[2 + k] = vals[1]
        e_grid = self._e_term(self.grid.nodes, x)
        total_mass = (
            cached["mass_pulse"]
            + lam * cached["mass_bg"]
            + float(np.sum(self.grid.quad_weights * e_grid))
        )
        r[4] = total_mass - self.params.total_mass
        return r

    def internal_parameters(self, config):
        """Closed-form seeds plus damped Newton on the 5-parameter closure."""
        length = self.params.domain_length
        z = self.grid.nodes
        ends = np.array([0.0, length])
        bar_bg = self._background_sum(z, config)
        cached = {
            "pulse_ends": {
                order: self._pulse_sum_deriv(ends, config, order) for order in (1, 3)
            },
            "bg_ends": {
                order: self._background_sum(ends, config, order) for order in (1, 3)
            },
            "mass_pulse": float(
                np.sum(
                    self.grid.quad_weights
                    * (self.n_pulse(config).values - self.well.b_minus)
                )
            ),
            "mass_bg": float(np.sum(self.grid.quad_weights * bar_bg)),
        }

        x = self._seed(config)
        lam_seed = x[4]
        fx = self._closure_residual(x, config, cached)
        tol_bc = 1e-12
        tol_mass = 1e-13 * max(1.0, abs(self.params.total_mass))

        def converged(r):
            return bool(np.all(np.abs(r[:4]) <= tol_bc) and abs(r[4]) <= tol_mass)

        ok = converged(fx)
        it = 0
        while not ok and it < NEWTON_MAX_ITER:
            jac = np.empty((5, 5))
            for j in range(5):
                step = 1e-7 * max(1.0, abs(x[j]))
                xp, xm = x.copy(), x.copy()
                xp[j] += step
                xm[j] -= step
                jac[:, j] = (
                    self._closure_residual(xp, config, cached)
                    - self._closure_residual(xm, config, cached)
                ) / (2.0 * step)
            try:
                dx = np.linalg.lstsq(jac, -fx, rcond=None)[0]
            except np.linalg.LinAlgError:
                break
            lam_damp = 1.0
            improved = False
            for _ in range(12):
                x_new = x + lam_damp * dx
                f_new = self._closure_residual(x_new, config, cached)
                if np.linalg.norm(f_new) < np.linalg.norm(fx) or converged(f_new):
                    x, fx = x_new, f_new
                    improved = True
                    break
                lam_damp *= 0.5
            if not improved:
                break
            ok = converged(fx)
            it += 1

        return InternalParams(
            p0=float(x[0]),
            p_np1=float(x[1]),
            e0=float(x[2]),
            e_np1=float(x[3]),
            lam=float(x[4]),
            lam_seed=float(lam_seed),
            converged=ok,
            residual=float(np.linalg.norm(fx)),
        )

    # -- assembly ---------------------------------------------------------------

    def build(self, config):
        """Assemble Phi and verify the closure invariants."""
        internal = self.internal_parameters(config)
        z = self.grid.nodes
        u_n = self.n_pulse(config)
        bg = self._background_sum(z, config)
        x = internal.as_vector()
        e_vals = self._e_term(z, x)
        phi = ScalarField(self.grid, u_n.values + internal.lam * bg + e_vals)

        length = self.params.domain_length
        ends = np.array([0.0, length])
        bc = np.empty(4)
        for k, order in enumerate((1, 3)):
            vals = (
                self._pulse_sum_deriv(ends, config, order)
                + internal.lam * self._background_sum(ends, config, order)
                + self._e_term(ends, x, order)
            )
            bc[k] = vals[0]
            bc[2 + k] = vals[1]
        mass_value = mass(phi, self.well.b_minus)

        if np.max(np.abs(bc)) > BC_TOL:
            raise RefinementError(
                f"boundary residuals {np.max(np.abs(bc)):.2e} exceed {BC_TOL:g} "
                f"(newton converged: {internal.converged})"
            )
        if abs(mass_value - self.params.total_mass) > MASS_RTOL * abs(
            self.params.total_mass
        ):
            raise RefinementError(
                f"mass error {abs(mass_value - self.params.total_mass):.2e} "
                "exceeds tolerance"
            )

        return AnsatzProfile(
            config=config,
            internal=internal,
            phi=phi,
            u_n=u_n,
            mass_correction=ScalarField(self.grid, internal.lam * bg),
            boundary_correction=ScalarField(self.grid, e_vals),
            mass_value=mass_value,
            bc_residuals=bc,
        )

    # -- analytic derivative stacks ----------------------------------------------

    def derivative_stack(self, profile, max_order=4, component="phi"):
        """Exact derivative samples of Phi or its components, orders 0..max_order.

        component: 'phi', 'u_n', or 'correction' (Phi - u_n).
        """
        z = self.grid.nodes
        x = profile.internal.as_vector()
        lam = profile.internal.lam
        stack = np.empty((max_order + 1, z.size))
        for m in range(max_order + 1):
            corr = lam * self._background_sum(z, profile.config, m) + self._e_term(
                z, x, m
            )
            if component == "correction":
                stack[m] = corr
                continue
            pulse_part = self._pulse_sum_deriv(z, profile.config, m)
            if m == 0:
                pulse_part += self.well.b_minus
            stack[m] = pulse_part if component == "u_n" else pulse_part + corr
        return stack

    def gradient_stack(self, profile, max_order=4):
        """Exact derivative samples of grad J(Phi), orders 0..max_order."""
        phi_stack = self.derivative_stack(profile, max_order=4 + max_order)
        lambdas = _el_gradient_lambdas(max_order)
        out = np.empty((max_order + 1, self.grid.num_points))
        for m in range(max_order + 1):
            args = [phi_stack[j] for j in range(4 + max_order + 1)]
            out[m] = lambdas[m](*args, self.well.tau)
        return out

    def residual_h4(self, profile):
        """(R field, ||R||_H4, ||R||_L2) with R = -Pi_0 grad J(Phi), assembled
        from analytic derivatives."""
        g = self.gradient_stack(profile, max_order=4)
        w = self.grid.quad_weights
        mean = float(np.sum(w * g[0])) / self.grid.length
        r0 = -(g[0] - mean)
        stack = np.vstack([r0[None, :], -g[1:]])
        r_field = ScalarField(self.grid, r0)
        h4 = h4_norm_from_stack(self.grid, stack)
        l2 = float(np.sqrt(np.sum(w * r0**2)))
        return r_field, h4, l2

    def energy_value(self, profile):
        """J(Phi) from analytic component derivatives."""
        stack = self.derivative_stack(profile, max_order=2)
        w1 = stack[2] - self.well.dW(stack[0])
        return 0.5 * float(np.sum(self.grid.quad_weights * w1 * w1))

    def correction_h4(self, profile):
        """||Phi - u_n||_H4 from analytic component derivatives."""
        stack = self.derivative_stack(profile, max_order=4, component="correction")
        return h4_norm_from_stack(self.grid, stack)

    # -- tangents -----------------------------------------------------------------

    def tangent_basis(self, config, rel_step=1e-5, with_stacks=False, max_order=4):
        """Central-difference tangents dPhi/dp_i with full internal re-solves."""
        step = rel_step * self.params.min_spacing
        tangents, stacks = [], []
        for i in range(config.n):
            plus = self.build(config.shifted(i, +step))
            minus = self.build(config.shifted(i, -step))
            tangents.append(
                ScalarField(
                    self.grid, (plus.phi.values - minus.phi.values) / (2.0 * step)
                )
            )
            if with_stacks:
                sp_ = self.derivative_stack(plus, max_order=max_order)
                sm_ = self.derivative_stack(minus, max_order=max_order)
                stacks.append((sp_ - sm_) / (2.0 * step))
        if with_stacks:
            return tangents, stacks
        return tangents

    def analytic_tangent_leading(self, config, i):
        """Leading-order tangent -phi_h'(z - p_i) for cross-checks."""
        z = self.grid.nodes
        return ScalarField(
            self.grid, -self.pulse.pulse_bar_deriv(z - config.positions[i], 1)
        )
