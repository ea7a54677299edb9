"""Time integration of the gradient flow and the reduced pulse-position ODE.

The PDE stepper is linearly implicit: the stiff constant-coefficient part
G(d^4/dz^4 + kappa) is inverted diagonally in the cosine basis, the remainder
is explicit, and a step is accepted only if the energy did not increase beyond
a fixed slack. The reduced model is the nearest-neighbour tail-interaction
ODE with mirror shadow pulses closing the boundary terms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .core import (
    AdmissibilityError,
    ExtractionError,
    FchError,
    ScalarField,
    StiffnessError,
    cosine_coeffs,
    cosine_synth,
    inner_product_x,
    norm,
)
from .ansatz import mass as field_mass
from .operators import variational_derivative, zero_mass_projection

DT_MIN = 1e-12
ENERGY_SLACK = 1e-10


@dataclass(frozen=True)
class StepControls:
    """Stabilization constant and step-size policy for the semi-implicit stepper."""

    kappa: float
    dt_max: float = 0.02
    growth_patience: int = 5

    @classmethod
    def for_initial_state(cls, u, well, dt_max=0.02):
        kappa = 2.0 * float(np.max(np.abs(well.d2W(u.values)))) ** 2
        return cls(kappa=kappa, dt_max=dt_max)


@dataclass(frozen=True)
class SimulationState:
    """One accepted point of a gradient-flow trajectory."""

    time: float
    u: ScalarField
    dt: float
    step_index: int = 0
    accept_streak: int = 0
    energy: float = np.nan
    dissipation: float = np.nan


def _energy(u, well):
    from .operators import energy

    return energy(u, well)


def dissipation_rate(u, well, family):
    """||G1 grad J||_X^2 = <G grad J, grad J>, the instantaneous energy decay."""
    g = variational_derivative(u, well)
    return inner_product_x(family.apply(g, "G"), g)


def step(state, well, family, controls):
    """One accepted semi-implicit step; halves dt until the energy decreases.

    The update reads, mode by mode,
        u_hat_new = u_hat - dt * (G grad J)_hat / (1 + dt * g_k (kappa_k^4 + kappa)),
    which treats G(d^4 + kappa)(u_new - u_old) implicitly.
    """
    grid = state.u.grid
    kap4 = grid.wavenumbers**4
    gmult = family.multipliers("G")
    denom_base = gmult * (kap4 + controls.kappa)

    g = variational_derivative(state.u, well)
    flow_hat = gmult * cosine_coeffs(g.values)
    u_hat = cosine_coeffs(state.u.values)

    e_old = state.energy
    if not np.isfinite(e_old):
        e_old = _energy(state.u, well)

    dt = state.dt
    while True:
        new_hat = u_hat - dt * flow_hat / (1.0 + dt * denom_base)
        u_new = ScalarField(grid, cosine_synth(new_hat))
        e_new = _energy(u_new, well)
        if e_new <= e_old + ENERGY_SLACK:
            break
        dt *= 0.5
        if dt < DT_MIN:
            raise StiffnessError(
                f"dt underflow at t = {state.time:g}: no energy-decreasing step",
                state=state,
            )

    first_try = dt == state.dt
    streak = state.accept_streak + 1 if first_try else 0
    dt_next = dt
    if streak >= controls.growth_patience:
        dt_next = min(2.0 * dt, controls.dt_max)
        streak = 0
    diss = dissipation_rate(u_new, well, family)
    return SimulationState(
        time=state.time + dt,
        u=u_new,
        dt=dt_next,
        step_index=state.step_index + 1,
        accept_streak=streak,
        energy=e_new,
        dissipation=diss,
    )


def extract_pulse_positions(u, n_expected, well, pulse):
    """Sub-grid pulse centers from 3-point parabolic fits around each maximum."""
    vals = u.values
    threshold = well.b_minus + 0.5 * pulse.peak_height
    interior = vals[1:-1]
    is_max = (interior > vals[:-2]) & (interior >= vals[2:]) & (
        interior > threshold
    )
    idx = np.nonzero(is_max)[0] + 1
    if idx.size != n_expected:
        raise ExtractionError(
            f"expected {n_expected} pulses, found {idx.size}", found=int(idx.size)
        )
    h = u.grid.spacing
    z = u.grid.nodes
    pos = []
    for i in idx:
        denom = vals[i - 1] - 2.0 * vals[i] + vals[i + 1]
        shift = 0.5 * (vals[i - 1] - vals[i + 1]) / denom if denom != 0.0 else 0.0
        pos.append(z[i] + h * shift)
    return np.asarray(pos)


@dataclass
class Trajectory:
    """Output record of a PDE run."""

    times: list = field(default_factory=list)
    positions: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    masses: list = field(default_factory=list)
    w_norms: list = field(default_factory=list)
    dissipations: list = field(default_factory=list)
    t_exit: float | None = None
    exit_reason: str = ""
    final_state: SimulationState | None = None

    def as_arrays(self):
        return (
            np.asarray(self.times),
            np.asarray(self.positions),
            np.asarray(self.energies),
            np.asarray(self.masses),
            np.asarray(self.w_norms),
        )

    def write_csv(self, path):
        import csv

        n = len(self.positions[0]) if self.positions else 0
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["t"] + [f"p_{i + 1}" for i in range(n)] + ["energy", "mass", "w_norm"]
            )
            for k in range(len(self.times)):
                row = [self.times[k], *self.positions[k], self.energies[k],
                       self.masses[k], self.w_norms[k]]
                writer.writerow([f"{v:.17g}" for v in row])


def write_checkpoint(path_prefix, state, params_doc):
    header = {
        "time": state.time,
        "dt": state.dt,
        "step_index": state.step_index,
        "num_points": state.u.grid.num_points,
        "length": state.u.grid.length,
        "params": params_doc,
    }
    with open(f"{path_prefix}.json", "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
    state.u.values.astype("<f8").tofile(f"{path_prefix}.bin")


def read_checkpoint(path_prefix, grid):
    with open(f"{path_prefix}.json") as fh:
        header = json.load(fh)
    vals = np.fromfile(f"{path_prefix}.bin", dtype="<f8")
    if vals.size != grid.num_points:
        raise ExtractionError("checkpoint resolution mismatch")
    state = SimulationState(
        time=header["time"], u=ScalarField(grid, vals), dt=header["dt"],
        step_index=header["step_index"],
    )
    return state, header


def run(
    manifold,
    family,
    u0,
    t_final,
    dt0=None,
    output_every=50,
    controls=None,
    checkpoint_prefix=None,
    checkpoint_stride=0,
    max_steps=2_000_000,
):
    """Evolve u_t = -G grad J(u) from u0, recording pulse diagnostics.

    Exits early (recording t_exit) when pulse extraction fails or the minimum
    gap falls below half the admissible spacing.
    """
    well = manifold.well
    params = manifold.params
    grid = u0.grid
    if dt0 is None:
        dt0 = 0.1 * grid.spacing**2
    if controls is None:
        controls = StepControls.for_initial_state(u0, well)

    state = SimulationState(
        time=0.0, u=u0, dt=dt0, energy=_energy(u0, well),
        dissipation=dissipation_rate(u0, well, family),
    )
    traj = Trajectory()
    n = params.n_pulses

    def record(st):
        try:
            pos = extract_pulse_positions(st.u, n, well, manifold.pulse)
        except ExtractionError:
            return None
        traj.times.append(st.time)
        traj.positions.append(pos)
        traj.energies.append(st.energy)
        traj.masses.append(field_mass(st.u, well.b_minus))
        traj.dissipations.append(st.dissipation)
        w_norm = np.nan
        try:
            ref = manifold.build(manifold.configuration(pos))
            w_norm = norm(st.u - ref.phi, "h4")
        except FchError:
            pass
        traj.w_norms.append(w_norm)
        return pos

    pos = record(state)
    if pos is None:
        raise ExtractionError("initial state has no recognizable pulse train")

    outputs = 0
    while state.time < t_final and state.step_index < max_steps:
        state = step(state, well, family, controls)
        if state.step_index % output_every == 0 or state.time >= t_final:
            pos = record(state)
            outputs += 1
            if pos is None:
                traj.t_exit = state.time
                traj.exit_reason = "pulse extraction failed (collision/merger)"
                break
            gaps = [2.0 * pos[0], 2.0 * (grid.length - pos[-1])]
            if n > 1:
                gaps.extend(np.diff(pos))
            if min(gaps) < 0.5 * params.min_spacing:
                traj.t_exit = state.time
                traj.exit_reason = "minimum gap fell below ell/2"
                break
            if checkpoint_prefix and checkpoint_stride and outputs % checkpoint_stride == 0:
                write_checkpoint(
                    f"{checkpoint_prefix}_{state.step_index:09d}", state,
                    {"s": family.s},
                )
    traj.final_state = state
    return traj


# ---------------------------------------------------------------------------
# Reduced pulse-position model.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReducedModel:
    """Nearest-neighbour tail-interaction ODE for the pulse positions.

    velocity_i = -gamma_hat * (exp(-r*(p_{i+1}-p_i)) - exp(-r*(p_i-p_{i-1}))),
    r = sqrt(alpha_minus), gamma_hat = 2*alpha_minus*phi_max^2/||phi_h'||^2,
    with mirror shadow pulses p_0 = -p_1 and p_{n+1} = 2L - p_n.
    """

    gamma_hat: float
    rate: float
    domain_length: float
    min_spacing: float

    @classmethod
    def from_pulse(cls, pulse, params):
        gamma_hat = (
            2.0
            * pulse.well.alpha_minus
            * pulse.phi_max**2
            / pulse.kernel_norm**2
        )
        return cls(
            gamma_hat=gamma_hat,
            rate=float(np.sqrt(pulse.well.alpha_minus)),
            domain_length=params.domain_length,
            min_spacing=params.min_spacing,
        )

    def _check(self, p):
        gaps = self.gaps(p)
        if np.min(gaps) < self.min_spacing - 1e-9:
            raise AdmissibilityError(
                f"reduced model evaluated outside the admissible set "
                f"(min gap {np.min(gaps):.6g})"
            )

    def gaps(self, p):
        p = np.asarray(p, dtype=float)
        ext = np.concatenate([[-p[0]], p, [2.0 * self.domain_length - p[-1]]])
        return np.diff(ext)

    def velocity(self, p, check=True):
        p = np.asarray(p, dtype=float)
        if check:
            self._check(p)
        gaps = self.gaps(p)
        tails = np.exp(-self.rate * gaps)
        return -self.gamma_hat * (tails[1:] - tails[:-1])

    def equispaced(self, n):
        spacing = self.domain_length / n
        return (np.arange(1, n + 1) - 0.5) * spacing

    def jacobian_at_equispaced(self, n):
        """Tridiagonal Jacobian, its eigenvalues, and the closed-form set.

        gamma = gamma_hat * exp(-rate * spacing) with the equispaced spacing;
        the closed-form eigenvalues are -gamma*(1 + cos(k*pi/(n+1))).
        """
        spacing = self.domain_length / n
        gamma = self.gamma_hat * float(np.exp(-self.rate * spacing))
        mat = -gamma * np.eye(n)
        for i in range(n - 1):
            mat[i, i + 1] = 0.5 * gamma
            mat[i + 1, i] = 0.5 * gamma
        eigs = np.linalg.eigvalsh(mat)
        k = np.arange(1, n + 1)
        closed = -gamma * (1.0 + np.cos(k * np.pi / (n + 1)))
        return mat, np.sort(eigs), np.sort(closed)


def pulse_velocity(model, p):
    """Closed-form reduced velocity (module-level alias)."""
    return model.velocity(p)


def pulse_velocity_projection(manifold, config):
    """Velocity from projecting the quasi-steady residual onto the tangents.

    Solves Gram * pdot = <R, dPhi/dp_i> with the full tangent Gram matrix.
    """
    profile = manifold.build(config)
    r_field, _, _ = manifold.residual_h4(profile)
    tangents = manifold.tangent_basis(config)
    proj = np.array([inner_product_x(r_field, t) for t in tangents])
    gram = np.array(
        [[inner_product_x(a, b) for b in tangents] for a in tangents]
    )
    return np.linalg.solve(gram, proj)


def alpha_scaling(s, grid, pulse, center=None):
    """alpha(s) = ||G1^{-1} Pi_0 phi_h'||_{L2} for a centered pulse."""
    from .operators import GradientFamily

    if center is None:
        center = 0.5 * grid.length
    dphi = ScalarField(grid, pulse.pulse_bar_deriv(grid.nodes - center, 1))
    fam = GradientFamily(grid, s)
    return norm(fam.apply(zero_mass_projection(dphi), "G1_inv"), "l2")


def integrate_reduced(
    model, p0, t_final, s=0.0, velocity_scale=1.0, rtol=1e-10, atol=1e-12,
    t_eval=None,
):
    """Adaptive RK45 integration of pdot = velocity_scale * velocity(p).

    velocity_scale carries the alpha(0)^2/alpha(s)^2 gradient rescaling; at
    s = 0 the caller passes exactly 1.0 so the integrator path is identical
    to the unscaled flow. Integration stops at the admissibility boundary.
    """
    p0 = np.asarray(p0, dtype=float)
    model._check(p0)

    def rhs(_t, p):
        return velocity_scale * model.velocity(p, check=False)

    def exit_event(_t, p):
        return float(np.min(model.gaps(p)) - model.min_spacing)

    exit_event.terminal = True
    exit_event.direction = -1.0

    sol = solve_ivp(
        rhs,
        (0.0, t_final),
        p0,
        method="RK45",
        rtol=rtol,
        atol=atol,
        t_eval=t_eval,
        events=exit_event,
        dense_output=True,
    )
    t_exit = sol.t_events[0][0] if sol.t_events[0].size else None
    return sol, t_exit
