"""Image matching energy: independent oracles, exact gradient, descent."""

import numpy as np
import pytest

from geoflow import (
    DomainError,
    Grid,
    GridMismatchError,
    KernelSpec,
    LddmmProblem,
    ScalarField,
    TimeVaryingVelocity,
    Transform,
    VectorField,
    apply_K,
    blob_pair,
    compose,
    l2_inner,
    lddmm_energy,
    lddmm_gradient,
    lddmm_trajectory,
    register_lddmm,
    rng_for,
    v_inner,
    warp,
)


def smooth_vector(grid, k, rng, amplitude):
    raw = VectorField(grid, rng.standard_normal((grid.ny, grid.nx, 2)))
    s = apply_K(raw, k).values
    peak = float(np.max(np.hypot(s[:, :, 0], s[:, :, 1])))
    return VectorField(grid, s * (amplitude / peak))


def random_velocity(grid, k, rng, steps, amplitude):
    return TimeVaryingVelocity(
        tuple(smooth_vector(grid, k, rng, amplitude) for _ in range(steps))
    )


def backward_map(u):
    """Independent reconstruction of the time-1 -> time-0 map from public ops."""
    g = Transform.identity(u.grid)
    for f in u.fields:
        step = Transform(u.grid, VectorField(u.grid, -u.dt * f.values))
        g = compose(g, step)
    return g


def test_energy_matches_independent_summation():
    I0, I1 = blob_pair(16, 2.0, 2.0)
    k = KernelSpec(I0.grid, 2.0)
    p = LddmmProblem(I0, I1, k, sigma=0.2, steps=8)
    u = random_velocity(I0.grid, k, rng_for(0, "lddmm-energy"), 8, 0.6)

    kinetic = u.dt * sum(v_inner(f, f, k) for f in u.fields)
    g10 = backward_map(u)
    r = ScalarField(I0.grid, I1.values - warp(I0, g10).values)
    data = l2_inner(r, r) / 0.2 ** 2

    got = lddmm_energy(p, u)
    assert abs(got - (kinetic + data)) <= 1e-12 * abs(got)


def test_energy_closed_form_at_zero_velocity():
    I0, I1 = blob_pair(16, 2.0, 2.0)
    k = KernelSpec(I0.grid, 2.0)
    sigma = 0.2
    p = LddmmProblem(I0, I1, k, sigma=sigma, steps=8)
    got = lddmm_energy(p, p.zero_velocity())
    h2 = I0.grid.spacing ** 2
    expected = h2 * float(np.sum((I0.values - I1.values) ** 2)) / sigma ** 2
    assert abs(got - expected) <= 1e-12 * expected


def test_gradient_matches_finite_differences():
    I0, I1 = blob_pair(16, 2.0, 2.0)
    k = KernelSpec(I0.grid, 2.0)
    p = LddmmProblem(I0, I1, k, sigma=0.2, steps=8)
    eps = 1e-5
    for seed in range(10):
        rng = rng_for(seed, "lddmm-grad")
        u = random_velocity(I0.grid, k, rng, 8, 0.6)
        w = random_velocity(I0.grid, k, rng, 8, 1.0)
        grads = lddmm_gradient(p, u)
        analytic = u.dt * sum(v_inner(g, f, k) for g, f in zip(grads, w.fields))
        plus = TimeVaryingVelocity(
            tuple(VectorField(u.grid, a.values + eps * b.values) for a, b in zip(u.fields, w.fields))
        )
        minus = TimeVaryingVelocity(
            tuple(VectorField(u.grid, a.values - eps * b.values) for a, b in zip(u.fields, w.fields))
        )
        numeric = (lddmm_energy(p, plus) - lddmm_energy(p, minus)) / (2.0 * eps)
        assert abs(analytic - numeric) <= 1e-3 * max(abs(numeric), 1e-12), (
            f"seed {seed}: analytic {analytic:.8e} vs numeric {numeric:.8e}"
        )


def test_gradient_at_zero_velocity_matches_closed_form():
    # at u = 0 the reverse sweep collapses to K applied to the residual force
    I0, I1 = blob_pair(16, 2.0, 2.0)
    k = KernelSpec(I0.grid, 2.0)
    sigma = 0.2
    p = LddmmProblem(I0, I1, k, sigma=sigma, steps=4)
    grads = lddmm_gradient(p, p.zero_velocity())

    # centered periodic differences, matching the sampling stencil at nodes
    gx = 0.5 * (np.roll(I0.values, -1, axis=1) - np.roll(I0.values, 1, axis=1))
    gy = 0.5 * (np.roll(I0.values, -1, axis=0) - np.roll(I0.values, 1, axis=0))
    force = (2.0 / sigma ** 2) * (I1.values - I0.values)
    expected = apply_K(
        VectorField(I0.grid, np.stack([force * gx, force * gy], axis=-1)), k
    )
    for g in grads:
        gap = float(np.max(np.abs(g.values - expected.values)))
        assert gap < 1e-10


def test_registration_pulls_blobs_together():
    I0, I1 = blob_pair(32, 3.0, 3.0, peak=3.0)
    k = KernelSpec(I0.grid, 2.0)
    p = LddmmProblem(I0, I1, k, sigma=0.1, steps=16)
    res = register_lddmm(p, max_iters=200, tol=1e-6)

    norm1 = np.sqrt(l2_inner(I1, I1))
    r = ScalarField(I0.grid, I1.values - res.warped.values)
    frac = np.sqrt(l2_inner(r, r)) / norm1
    assert frac <= 0.10, f"residual fraction {frac:.4f}"
    assert res.iterations <= 200
    assert res.converged
    assert not res.stalled
    assert res.diffeomorphic

    energies = [row[1] for row in res.trace]
    assert all(b <= a + 1e-12 for a, b in zip(energies, energies[1:]))
    assert res.energy == energies[-1]
    assert abs(res.energy - (res.kinetic + res.data)) <= 1e-12 * res.energy
    # the returned warp reproduces the reported residual
    assert np.array_equal(res.warped.values, warp(I0, res.g10).values)


def test_trajectory_endpoints_and_jacobians():
    I0, I1 = blob_pair(16, 2.0, 2.0)
    k = KernelSpec(I0.grid, 2.0)
    p = LddmmProblem(I0, I1, k, sigma=0.2, steps=4)
    traj = lddmm_trajectory(p, p.zero_velocity())
    assert len(traj.J0) == 5 and len(traj.J1) == 5 and len(traj.jacdet) == 5
    assert np.array_equal(traj.J0[0].values, I0.values)
    assert np.array_equal(traj.J1[-1].values, I1.values)
    for d in traj.jacdet:
        assert np.max(np.abs(d.values - 1.0)) < 1e-14
    assert traj.diffeomorphic

    u = random_velocity(I0.grid, k, rng_for(1, "lddmm-traj"), 4, 0.5)
    traj = lddmm_trajectory(p, u)
    assert np.array_equal(traj.J0[0].values, I0.values)
    assert np.array_equal(traj.J1[-1].values, I1.values)


def test_problem_validation():
    I0, I1 = blob_pair(16, 2.0, 2.0)
    k = KernelSpec(I0.grid, 2.0)
    with pytest.raises(DomainError):
        LddmmProblem(I0, I1, k, sigma=0.0)
    with pytest.raises(DomainError):
        LddmmProblem(I0, I1, k, sigma=0.2, steps=0)
    other = ScalarField.zeros(Grid(8, 8))
    with pytest.raises(GridMismatchError):
        LddmmProblem(I0, other, k, sigma=0.2)
    with pytest.raises(GridMismatchError):
        LddmmProblem(I0, I1, KernelSpec(Grid(8, 8), 2.0), sigma=0.2)

    p = LddmmProblem(I0, I1, k, sigma=0.2, steps=8)
    wrong_steps = TimeVaryingVelocity(tuple(VectorField.zeros(I0.grid) for _ in range(4)))
    with pytest.raises(DomainError):
        lddmm_energy(p, wrong_steps)
    wrong_grid = TimeVaryingVelocity(tuple(VectorField.zeros(Grid(8, 8)) for _ in range(8)))
    with pytest.raises(GridMismatchError):
        lddmm_energy(p, wrong_grid)
