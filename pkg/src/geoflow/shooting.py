"""Geodesic shooting for template matching.

Forward system (image transport, momentum transport, kernel smoothing):

    dI/dt = -grad(I) . u
    dP/dt = -div(P u)
    u     = -K(P grad(I))

This is a canonical Hamiltonian system in (I, P) with
H = <P grad(I), K(P grad(I))>/2, so the kinetic energy is a conserved
quantity of the space-discretized flow and any drift observed in practice is
pure time-integration error (4th order here, RK4).

The backward system transports the terminal residual sensitivity:

    w_hat   = K(P grad(Phat) - Ihat grad(I))
    dIhat/dt = -div(Ihat u) - div(P w_hat)
    dPhat/dt = -u . grad(Phat) + w_hat . grad(I)

integrated from Ihat(1) = -(I(1) - I1), Phat(1) = 0; the data-cost gradient
with respect to the initial momentum is -Phat(0). Both integrators use
centered differences, whose gradient/divergence pair is an exact
negative-transpose pair on the periodic grid.
"""

from dataclasses import dataclass

import numpy as np

from .errors import BlowUpError, DomainError
from .flow import TimeVaryingVelocity, integrate_flow
from .grid import (
    ScalarField,
    Transform,
    VectorField,
    _require_same_grid,
    gradient,
    l2_inner,
)
from .kernel import KernelSpec, _filtered


def _grad(vals: np.ndarray, h: float):
    gx = (np.roll(vals, -1, axis=1) - np.roll(vals, 1, axis=1)) / (2.0 * h)
    gy = (np.roll(vals, -1, axis=0) - np.roll(vals, 1, axis=0)) / (2.0 * h)
    return gx, gy


def _div(vx: np.ndarray, vy: np.ndarray, h: float):
    return (np.roll(vx, -1, axis=1) - np.roll(vx, 1, axis=1)) / (2.0 * h) \
        + (np.roll(vy, -1, axis=0) - np.roll(vy, 1, axis=0)) / (2.0 * h)


def _velocity(I, P, khat, h):
    gx, gy = _grad(I, h)
    m = np.stack([P * gx, P * gy], axis=-1)
    u = -_filtered(m, khat)
    return u, gx, gy


def _forward_rhs(I, P, khat, h):
    u, gx, gy = _velocity(I, P, khat, h)
    dI = -(gx * u[:, :, 0] + gy * u[:, :, 1])
    dP = -_div(P * u[:, :, 0], P * u[:, :, 1], h)
    return dI, dP


def _rk4_forward(I, P, dt, khat, h):
    k1I, k1P = _forward_rhs(I, P, khat, h)
    k2I, k2P = _forward_rhs(I + 0.5 * dt * k1I, P + 0.5 * dt * k1P, khat, h)
    k3I, k3P = _forward_rhs(I + 0.5 * dt * k2I, P + 0.5 * dt * k2P, khat, h)
    k4I, k4P = _forward_rhs(I + dt * k3I, P + dt * k3P, khat, h)
    In = I + dt / 6.0 * (k1I + 2.0 * k2I + 2.0 * k3I + k4I)
    Pn = P + dt / 6.0 * (k1P + 2.0 * k2P + 2.0 * k3P + k4P)
    return In, Pn


@dataclass(frozen=True)
class ShootingState:
    """Forward trajectory at the step nodes, with adjoint fields once filled.

    ``I[j]``, ``P[j]``, ``u[j]`` sit at time j/T for j = 0..T. ``Ihat``/``Phat``
    are None until :func:`adjoint_advect` produces a completed copy.
    """

    kernel: KernelSpec
    steps: int
    I: tuple
    P: tuple
    u: tuple
    Ihat: tuple = None
    Phat: tuple = None

    @property
    def grid(self):
        return self.kernel.grid

    def kinetic_energy(self, j: int) -> float:
        # <u,u>_V = <m, K m> with m = P grad(I) and u = -K(m); pairing m
        # against the stored velocity avoids dividing by the transfer, which
        # would amplify FFT roundoff once the transfer tail is tiny.
        h = self.grid.spacing
        gx, gy = _grad(self.I[j].values, h)
        u = self.u[j].values
        m_dot_u = self.P[j].values * (gx * u[:, :, 0] + gy * u[:, :, 1])
        return -float(np.sum(m_dot_u)) * h ** 2


def shoot(I0: ScalarField, P0: ScalarField, k: KernelSpec, T: int) -> ShootingState:
    """Integrate the forward system with RK4 from (I0, P0) over T steps."""
    _require_same_grid(I0, P0, "shoot")
    _require_same_grid(I0, k.grid, "shoot")
    if T < 2:
        raise DomainError(f"need at least 2 time steps, got {T}")
    grid = I0.grid
    h = grid.spacing
    dt = 1.0 / T
    I = I0.values.copy()
    P = P0.values.copy()
    Is, Ps, us = [I], [P], []
    # overflow is the detected failure mode here: it surfaces as a typed
    # error after the finiteness check, not as a raw numpy warning
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(T):
            u, _, _ = _velocity(I, P, k.transfer, h)
            us.append(u)
            I, P = _rk4_forward(I, P, dt, k.transfer, h)
            if not (np.all(np.isfinite(I)) and np.all(np.isfinite(P))):
                raise BlowUpError(f"forward shooting blew up at step {j + 1} of {T}", step=j + 1)
            Is.append(I)
            Ps.append(P)
        u, _, _ = _velocity(I, P, k.transfer, h)
        us.append(u)
    return ShootingState(
        kernel=k,
        steps=T,
        I=tuple(ScalarField(grid, a) for a in Is),
        P=tuple(ScalarField(grid, a) for a in Ps),
        u=tuple(VectorField(grid, a) for a in us),
    )


def _adjoint_rhs(Ihat, Phat, I, P, khat, h):
    u, gx, gy = _velocity(I, P, khat, h)
    pgx, pgy = _grad(Phat, h)
    w = _filtered(np.stack([P * pgx - Ihat * gx, P * pgy - Ihat * gy], axis=-1), khat)
    dIhat = -_div(Ihat * u[:, :, 0], Ihat * u[:, :, 1], h) \
        - _div(P * w[:, :, 0], P * w[:, :, 1], h)
    dPhat = -(u[:, :, 0] * pgx + u[:, :, 1] * pgy) + w[:, :, 0] * gx + w[:, :, 1] * gy
    return dIhat, dPhat


def adjoint_advect(s: ShootingState, I1: ScalarField) -> ShootingState:
    """Integrate the adjoint system backward; returns a copy with it filled.

    The backward RK4 needs the forward state between nodes; each interval's
    midpoint state is recomputed by a half-step of the forward integrator from
    the stored left node, which preserves the 4th-order accuracy of the pair.
    """
    _require_same_grid(s.I[0], I1, "adjoint_advect")
    grid = s.grid
    khat = s.kernel.transfer
    h = grid.spacing
    T = s.steps
    dt = 1.0 / T
    Ihat = -(s.I[T].values - I1.values)
    Phat = np.zeros_like(Ihat)
    Ihats = [None] * (T + 1)
    Phats = [None] * (T + 1)
    Ihats[T] = Ihat
    Phats[T] = Phat
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(T - 1, -1, -1):
            I_l, P_l = s.I[j].values, s.P[j].values
            I_r, P_r = s.I[j + 1].values, s.P[j + 1].values
            I_m, P_m = _rk4_forward(I_l, P_l, 0.5 * dt, khat, h)
            k1I, k1P = _adjoint_rhs(Ihat, Phat, I_r, P_r, khat, h)
            k2I, k2P = _adjoint_rhs(Ihat - 0.5 * dt * k1I, Phat - 0.5 * dt * k1P, I_m, P_m, khat, h)
            k3I, k3P = _adjoint_rhs(Ihat - 0.5 * dt * k2I, Phat - 0.5 * dt * k2P, I_m, P_m, khat, h)
            k4I, k4P = _adjoint_rhs(Ihat - dt * k3I, Phat - dt * k3P, I_l, P_l, khat, h)
            Ihat = Ihat - dt / 6.0 * (k1I + 2.0 * k2I + 2.0 * k3I + k4I)
            Phat = Phat - dt / 6.0 * (k1P + 2.0 * k2P + 2.0 * k3P + k4P)
            if not (np.all(np.isfinite(Ihat)) and np.all(np.isfinite(Phat))):
                raise BlowUpError(f"adjoint integration blew up at step {j} of {T}", step=j)
            Ihats[j] = Ihat
            Phats[j] = Phat
    return ShootingState(
        kernel=s.kernel,
        steps=T,
        I=s.I,
        P=s.P,
        u=s.u,
        Ihat=tuple(ScalarField(grid, a) for a in Ihats),
        Phat=tuple(ScalarField(grid, a) for a in Phats),
    )


def data_cost(s: ShootingState, I1: ScalarField) -> float:
    """Terminal mismatch C = ||I(1) - I1||^2 / 2."""
    r = ScalarField(s.grid, s.I[s.steps].values - I1.values)
    return 0.5 * l2_inner(r, r)


def shooting_gradient(
    I0: ScalarField, P0: ScalarField, I1: ScalarField, k: KernelSpec, T: int
) -> ScalarField:
    """Gradient of the terminal mismatch with respect to the initial momentum."""
    s = shoot(I0, P0, k, T)
    s = adjoint_advect(s, I1)
    return ScalarField(s.grid, -s.Phat[0].values)


@dataclass(frozen=True)
class ShootingMatchResult:
    """Outcome of initial-momentum matching."""

    P0: ScalarField
    state: ShootingState
    objective: float
    kinetic: float
    data: float
    trace: tuple  # rows (iter, objective, kinetic, data, step)
    converged: bool
    stalled: bool
    iterations: int


def _match_terms(I0, P0, I1, k, T):
    s = shoot(I0, P0, k, T)
    kinetic = s.kinetic_energy(0)
    data = 2.0 * data_cost(s, I1)
    return s, kinetic, data


def match_by_shooting(
    I0: ScalarField,
    I1: ScalarField,
    k: KernelSpec,
    weight: float,
    T: int = 32,
    max_iters: int = 300,
    tol: float = 1e-6,
    step0: float = 1.0,
    armijo_c: float = 1e-4,
    P0_init: ScalarField = None,
    precondition: bool = True,
) -> ShootingMatchResult:
    """Minimize <u(0),u(0)>_V + weight * ||I(1) - I1||^2 over initial momentum.

    Gradient descent with Armijo backtracking, optionally preconditioned by
    the scalar smoothing kernel (pure change of descent direction; the line
    search keeps the trace monotone either way).
    """
    _require_same_grid(I0, I1, "match_by_shooting")
    if not (np.isfinite(weight) and weight > 0):
        raise DomainError(f"weight must be positive, got {weight}")
    grid = I0.grid
    h = grid.spacing
    P0 = P0_init if P0_init is not None else ScalarField.zeros(grid)
    _require_same_grid(I0, P0, "match_by_shooting")

    gI0 = gradient(I0)
    state, kinetic, data = _match_terms(I0, P0, I1, k, T)
    obj = kinetic + weight * data
    trace = [(0, obj, kinetic, data, 0.0)]
    step = step0
    stalled = False
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        # d/dP0 of <u0,u0>_V is -2 grad(I0).u0; the data part is the adjoint
        # gradient scaled by 2*weight (data = 2*C).
        u0 = state.u[0].values
        g_kin = -2.0 * (gI0.values[:, :, 0] * u0[:, :, 0] + gI0.values[:, :, 1] * u0[:, :, 1])
        g_data = shooting_gradient(I0, P0, I1, k, T).values
        grad_arr = g_kin + 2.0 * weight * g_data
        direction = -_filtered(grad_arr, k.transfer) if precondition else -grad_arr
        slope = -float(np.sum(grad_arr * direction)) * h ** 2
        if slope <= 1e-30:
            converged = True
            it -= 1
            break
        step = min(step0, 2.0 * step)
        accepted = False
        while step >= 1e-12:
            trial = ScalarField(grid, P0.values + step * direction)
            s_new, k_new, d_new = _match_terms(I0, trial, I1, k, T)
            o_new = k_new + weight * d_new
            if o_new <= obj - armijo_c * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            stalled = True
            break
        rel_drop = (obj - o_new) / max(abs(obj), 1e-30)
        P0, state, obj, kinetic, data = trial, s_new, o_new, k_new, d_new
        trace.append((it, obj, kinetic, data, step))
        if rel_drop < tol:
            converged = True
            break

    return ShootingMatchResult(
        P0=P0,
        state=state,
        objective=obj,
        kinetic=kinetic,
        data=data,
        trace=tuple(trace),
        converged=converged,
        stalled=stalled,
        iterations=it,
    )


def flow_transform(s: ShootingState) -> Transform:
    """Integrate the nodal velocities into the time-1 -> time-0 pullback map.

    Consecutive node velocities are averaged per interval before feeding the
    semi-Lagrangian integrator; warping the template by the result reproduces
    the advected endpoint image up to the transport discretization error.
    """
    grid = s.grid
    nodes = s.u
    fields = tuple(
        VectorField(grid, 0.5 * (nodes[j].values + nodes[j + 1].values))
        for j in range(len(nodes) - 1)
    )
    return integrate_flow(TimeVaryingVelocity(fields), 1.0, 0.0)


def momentum_from_velocity(u0: VectorField, I0: ScalarField, k: KernelSpec) -> ScalarField:
    """Project a vector momentum onto the scalar-momentum form P grad(I0).

    Used to hand an initial velocity from a path-based solve to the shooting
    parameterization: m = K^{-1} u0 is reduced to the scalar P satisfying
    -K(P grad I0) = u0, i.e. P = -(m . grad I0)/|grad I0|^2, with the
    denominator floored where the template is flat (there m vanishes too).
    """
    _require_same_grid(u0, I0, "momentum_from_velocity")
    m = _filtered(u0.values, k.transfer, inverse=True)
    g = gradient(I0).values
    g2 = g[:, :, 0] ** 2 + g[:, :, 1] ** 2
    floor = 1e-6 * float(np.max(g2)) if float(np.max(g2)) > 0 else 1.0
    P = -(m[:, :, 0] * g[:, :, 0] + m[:, :, 1] * g[:, :, 1]) / np.maximum(g2, floor)
    return ScalarField(I0.grid, P)
