"""Penalty metrics on qubit unitaries: geodesics, distances, curvature."""

import math
from types import SimpleNamespace

import numpy as np
import pytest
from scipy.linalg import expm

from geoflow import (
    DomainError,
    PauliHamiltonian,
    PenaltyMetric,
    UnitaryPoint,
    bracket,
    curvature_census,
    euler_arnold_shoot,
    geodesic_distance,
    metric_inner,
    pauli_labels,
    pauli_weights,
    phase_aligned_gap,
    rng_for,
    sectional_curvature,
)


def test_pauli_basis_basics():
    assert pauli_labels(1) == ("I", "X", "Y", "Z")
    labels2 = pauli_labels(2)
    assert len(labels2) == 16
    assert labels2[0] == "II"
    assert labels2[1] == "IX"
    assert labels2[4] == "XI"
    w = pauli_weights(2)
    assert w[labels2.index("II")] == 0
    assert w[labels2.index("XI")] == 1
    assert w[labels2.index("XY")] == 2

    H = PauliHamiltonian.from_terms(2, {"XZ": 0.7, "YI": -0.2})
    X = np.array([[0, 1], [1, 0]], dtype=complex)
    Y = np.array([[0, -1j], [1j, 0]])
    Z = np.array([[1, 0], [0, -1]], dtype=complex)
    I = np.eye(2)
    expected = 0.7 * np.kron(X, Z) - 0.2 * np.kron(Y, I)
    assert np.max(np.abs(H.to_matrix() - expected)) < 1e-14
    back = PauliHamiltonian.from_matrix(2, expected)
    assert np.max(np.abs(back.coeffs - H.coeffs)) < 1e-14
    profile = H.weight_profile()
    assert profile[1] == pytest.approx(0.04)
    assert profile[2] == pytest.approx(0.49)


def test_construction_validation():
    with pytest.raises(DomainError):
        PauliHamiltonian(4, np.zeros(256))  # beyond the supported sizes
    with pytest.raises(DomainError):
        PauliHamiltonian(2, np.zeros(4))  # wrong coefficient count
    with pytest.raises(DomainError):
        PauliHamiltonian.from_terms(1, {"XX": 1.0})
    with pytest.raises(DomainError):
        PauliHamiltonian.from_matrix(1, np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(DomainError):
        UnitaryPoint(1, np.array([[1.0, 1.0], [0.0, 1.0]]))
    with pytest.raises(DomainError):
        PenaltyMetric(1, 0.5)  # penalty below 1
    with pytest.raises(DomainError):
        metric_inner(
            PauliHamiltonian.zero(1), PauliHamiltonian.zero(2), PenaltyMetric(1, 1.0)
        )


def test_metric_inner_charges_nonlocal_strings():
    g1 = PenaltyMetric(1, 7.0)
    X = PauliHamiltonian.from_terms(1, {"X": 1.0})
    Y = PauliHamiltonian.from_terms(1, {"Y": 1.0})
    assert metric_inner(X, X, g1) == 1.0  # single-qubit strings are never charged
    assert metric_inner(X, Y, g1) == 0.0

    g3 = PenaltyMetric(3, 7.0)
    XXX = PauliHamiltonian.from_terms(3, {"XXX": 1.0})
    XXI = PauliHamiltonian.from_terms(3, {"XXI": 1.0})
    assert metric_inner(XXX, XXX, g3) == 7.0  # weight 3: penalized
    assert metric_inner(XXI, XXI, g3) == 1.0  # weight 2: local
    assert g3.local_weight_max == 2


def test_bracket_closed_form_and_antisymmetry():
    X = PauliHamiltonian.from_terms(1, {"X": 1.0})
    Y = PauliHamiltonian.from_terms(1, {"Y": 1.0})
    b = bracket(X, Y)
    assert np.max(np.abs(b.coeffs - PauliHamiltonian.from_terms(1, {"Z": 2.0}).coeffs)) < 1e-14
    assert np.max(np.abs(bracket(X, X).coeffs)) == 0.0
    rng = rng_for(0, "bracket-antisym")
    for _ in range(3):
        H = PauliHamiltonian(2, rng.standard_normal(16))
        J = PauliHamiltonian(2, rng.standard_normal(16))
        assert np.max(np.abs(bracket(H, J).coeffs + bracket(J, H).coeffs)) < 1e-12


def test_unit_penalty_geodesics_are_one_parameter_subgroups():
    for n, label in ((1, "unitary-q1-a"), (2, "unitary-q1-b")):
        rng = rng_for(0, label)
        coeffs = np.zeros(4 ** n)
        coeffs[1:] = rng.standard_normal(4 ** n - 1)
        coeffs /= np.linalg.norm(coeffs)
        H0 = PauliHamiltonian(n, coeffs)
        path = euler_arnold_shoot(H0, PenaltyMetric(n, 1.0), 64)
        target = expm(-1j * H0.to_matrix())
        gap = float(np.linalg.norm(path.U[-1] - target))
        assert gap < 1e-6, f"n={n}: endpoint vs exponential {gap:.2e}"
        # the generator never rotates at unit penalty
        for Hj in path.H:
            assert np.max(np.abs(Hj.coeffs - H0.coeffs)) < 1e-12


def test_geodesic_speed_is_conserved():
    rng = rng_for(0, "unitary-speed")
    raw = np.zeros(64)
    raw[1:] = rng.standard_normal(63)
    for q in (1.0, 10.0, 100.0):
        g = PenaltyMetric(3, q)
        H = PauliHamiltonian(3, raw)
        nrm = math.sqrt(metric_inner(H, H, g))
        H0 = PauliHamiltonian(3, raw * (0.5 / nrm))
        path = euler_arnold_shoot(H0, g, 128)
        s0 = path.speed(0)
        assert s0 == pytest.approx(0.25, rel=1e-12)
        drift = max(abs(path.speed(j) - s0) for j in range(129)) / s0
        assert drift < 1e-3, f"q={q}: speed drift {drift:.3e}"


def test_local_generators_flow_freely_at_any_penalty():
    # a Hamiltonian with no penalized strings keeps its momentum exactly and
    # follows the same one-parameter subgroup it would at unit penalty
    H0 = PauliHamiltonian.from_terms(3, {"XXI": 0.3, "IZX": 0.4, "ZII": -0.2})
    path = euler_arnold_shoot(H0, PenaltyMetric(3, 100.0), 64)
    s0 = path.speed(0)
    assert max(abs(path.speed(j) - s0) for j in range(65)) / s0 < 1e-12
    gap = phase_aligned_gap(path.U[-1], expm(-1j * H0.to_matrix()))
    assert gap < 1e-6


def test_shoot_validation():
    H0 = PauliHamiltonian.from_terms(1, {"X": 1.0})
    with pytest.raises(DomainError):
        euler_arnold_shoot(H0, PenaltyMetric(1, 1.0), 1)
    with pytest.raises(DomainError):
        euler_arnold_shoot(H0, PenaltyMetric(2, 1.0), 16)


def test_distance_to_quarter_pi_rotation():
    target = UnitaryPoint.from_exponential(
        PauliHamiltonian.from_terms(1, {"X": math.pi / 4.0})
    )
    res = geodesic_distance(
        target, PenaltyMetric(1, 1.0), restarts=2, T=32, seed=0, maxiter=200
    )
    assert res.converged
    assert res.gap < 1e-3
    assert abs(res.d_est - math.pi / 4.0) < 1e-3


def test_distance_to_identity_is_zero():
    res = geodesic_distance(
        UnitaryPoint.identity(1), PenaltyMetric(1, 1.0), restarts=1, T=8, seed=0,
        maxiter=50,
    )
    assert res.converged
    assert res.d_est < 1e-6


def test_distance_never_exceeds_generator_length():
    H0 = PauliHamiltonian.from_terms(1, {"X": 0.9, "Z": 0.3})
    g = PenaltyMetric(1, 1.0)
    res = geodesic_distance(
        UnitaryPoint.from_exponential(H0), g, restarts=2, T=16, seed=0, maxiter=100
    )
    assert res.converged
    assert res.d_est <= math.sqrt(metric_inner(H0, H0, g)) + 1e-3


def test_two_qubit_distance_ignores_the_penalty():
    # every 2-qubit string is local, so the metric is the same for every q and
    # the whole search (draws included) must reproduce bit for bit
    target = UnitaryPoint.from_exponential(
        PauliHamiltonian.from_terms(2, {"XX": 0.6})
    )
    results = [
        geodesic_distance(
            target, PenaltyMetric(2, q), restarts=2, T=32, seed=0, maxiter=200
        )
        for q in (1.0, 64.0)
    ]
    a, b = results
    assert a.d_est == b.d_est
    assert a.gap == b.gap
    assert a.lengths == b.lengths
    assert a.gaps == b.gaps
    assert np.array_equal(a.H0_best.coeffs, b.H0_best.coeffs)
    assert a.converged and b.converged


def test_berger_sphere_closed_forms():
    # su(2) with weights (1, 1, lam) is the classical squashed sphere:
    # K(X, Y) = 4 - 3 lam and K(X, Z/sqrt(lam)) = lam
    X = PauliHamiltonian.from_terms(1, {"X": 1.0})
    Y = PauliHamiltonian.from_terms(1, {"Y": 1.0})
    for lam in (0.25, 1.0, 4.0):
        g = SimpleNamespace(n=1, weights=np.array([1.0, 1.0, 1.0, lam]))
        Zs = PauliHamiltonian(1, np.array([0.0, 0.0, 0.0, 1.0 / math.sqrt(lam)]))
        assert sectional_curvature(X, Y, g) == pytest.approx(4.0 - 3.0 * lam, abs=1e-10)
        assert sectional_curvature(X, Zs, g) == pytest.approx(lam, abs=1e-10)


def test_three_qubit_plane_turns_negative_with_penalty():
    # the commutator of these two local strings is a weight-3 string, so the
    # plane's curvature follows the squashed-sphere law in q
    x = PauliHamiltonian.from_terms(3, {"XXI": 1.0})
    y = PauliHamiltonian.from_terms(3, {"IZX": 1.0})
    b = bracket(x, y)
    expected_b = PauliHamiltonian.from_terms(3, {"XYX": -2.0})
    assert np.max(np.abs(b.coeffs - expected_b.coeffs)) < 1e-12
    for q in (1.0, 2.0, 4.0, 100.0):
        K = sectional_curvature(x, y, PenaltyMetric(3, q))
        assert K == pytest.approx(4.0 - 3.0 * q, abs=1e-9)


def test_commuting_plane_is_flat():
    x = PauliHamiltonian.from_terms(3, {"XII": 1.0})
    y = PauliHamiltonian.from_terms(3, {"IXI": 1.0})
    assert abs(sectional_curvature(x, y, PenaltyMetric(3, 100.0))) < 1e-10


def test_unit_penalty_curvature_is_quarter_bracket_norm():
    g = PenaltyMetric(2, 1.0)
    rng = rng_for(0, "biinvariant-planes")
    for _ in range(5):
        a = np.zeros(16)
        b = np.zeros(16)
        a[1:] = rng.standard_normal(15)
        b[1:] = rng.standard_normal(15)
        a /= np.linalg.norm(a)
        b -= (b @ a) * a
        b /= np.linalg.norm(b)
        x = PauliHamiltonian(2, a)
        y = PauliHamiltonian(2, b)
        K = sectional_curvature(x, y, g)
        br = bracket(x, y)
        assert K == pytest.approx(0.25 * metric_inner(br, br, g), abs=1e-10)
        assert K >= -1e-10


def test_sectional_curvature_requires_orthonormal_pair():
    g = PenaltyMetric(1, 1.0)
    X = PauliHamiltonian.from_terms(1, {"X": 1.0})
    Y2 = PauliHamiltonian.from_terms(1, {"Y": 2.0})
    with pytest.raises(DomainError):
        sectional_curvature(X, Y2, g)
    with pytest.raises(DomainError):
        sectional_curvature(X, X, g)


def test_census_is_deterministic_and_clean_at_unit_penalty():
    a = curvature_census(2, PenaltyMetric(2, 1.0), 100, seed=3)
    b = curvature_census(2, PenaltyMetric(2, 1.0), 100, seed=3)
    assert np.array_equal(a.curvatures, b.curvatures)
    assert a.fraction_negative == 0.0
    assert a.summary()["min"] >= -1e-10
    assert a.samples == 100
    assert len(a.curvatures) == 100
    assert int(np.sum(a.histogram_counts)) == 100


def test_two_qubit_census_ignores_the_penalty():
    a = curvature_census(2, PenaltyMetric(2, 1.0), 100, seed=5)
    b = curvature_census(2, PenaltyMetric(2, 64.0), 100, seed=5)
    assert np.array_equal(a.curvatures, b.curvatures)
    assert a.fraction_negative == b.fraction_negative == 0.0


def test_three_qubit_census_shows_negative_planes_only_when_penalized():
    hard = curvature_census(3, PenaltyMetric(3, 64.0), 500, seed=0)
    free = curvature_census(3, PenaltyMetric(3, 1.0), 500, seed=0)
    assert free.fraction_negative == 0.0
    assert hard.fraction_negative > 0.0
    assert hard.fraction_negative > free.fraction_negative
    assert free.summary()["min"] >= -1e-10
    assert hard.summary()["min"] < -1e-10


def test_census_validation():
    with pytest.raises(DomainError):
        curvature_census(2, PenaltyMetric(2, 1.0), 99, seed=0)
    with pytest.raises(DomainError):
        curvature_census(2, PenaltyMetric(3, 1.0), 100, seed=0)
    with pytest.raises(DomainError):
        geodesic_distance(UnitaryPoint.identity(1), PenaltyMetric(1, 1.0), restarts=0)
