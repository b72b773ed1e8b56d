"""Penalty-metric geometry on n-qubit unitary groups.

Hamiltonians live in the real Pauli-product basis (4^n strings, orthogonal
under tr(s_w s_w')/2^n). The metric charges "non-local" strings — Pauli
weight above a per-n locality cutoff — a factor q >= 1:

    <H, J> = sum_w p_w c_w d_w,   p_w = 1 (local) or q (penalized).

Geodesics of the right-invariant metric follow the Euler–Arnold equation in
momentum coordinates M = p*H: dM/dt = b(H, M) with b the Hermitian bracket
coefficients of -i[.,.]; dU/dt = -iHU. At q = 1 the metric is bi-invariant,
H is constant, and geodesics are one-parameter subgroups exp(-iH t) — the
closed forms the tests pin against. Sectional curvature uses the standard
invariant-metric connection

    nabla_x y = (b(x,y) - adT_x y - adT_y x) / 2,

with adT the metric transpose of ad = b(x, .); at q = 1 it collapses to the
bi-invariant value |b(x,y)|^2/4 >= 0.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import BlowUpError, DomainError
from .seeding import rng_for

_PAULI = {
    "I": np.array([[1, 0], [0, 1]], dtype=np.complex128),
    "X": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    "Z": np.array([[1, 0], [0, -1]], dtype=np.complex128),
}
_LETTERS = "IXYZ"


def _check_n(n: int):
    if not (isinstance(n, (int, np.integer)) and 1 <= n <= 3):
        raise DomainError(f"qubit count must be 1, 2, or 3, got {n}")


@lru_cache(maxsize=None)
def pauli_labels(n: int) -> tuple:
    """All length-n Pauli strings, ordered as base-4 numbers (I=0,X=1,Y=2,Z=3)."""
    _check_n(n)
    labels = [""]
    for _ in range(n):
        labels = [lab + ch for lab in labels for ch in _LETTERS]
    return tuple(labels)


@lru_cache(maxsize=None)
def _basis(n: int) -> np.ndarray:
    mats = []
    for label in pauli_labels(n):
        m = np.array([[1.0]], dtype=np.complex128)
        for ch in label:
            m = np.kron(m, _PAULI[ch])
        mats.append(m)
    out = np.stack(mats)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def pauli_weights(n: int) -> np.ndarray:
    w = np.array([sum(ch != "I" for ch in lab) for lab in pauli_labels(n)], dtype=np.int64)
    w.setflags(write=False)
    return w


@lru_cache(maxsize=None)
def _structure_tensor(n: int) -> np.ndarray:
    """Real tensor F with -i[s_a, s_b] = sum_c F[a,b,c] s_c."""
    B = _basis(n)
    prod = np.einsum("aij,bjk->abik", B, B)
    comm = -1j * (prod - prod.transpose(1, 0, 2, 3))
    F = np.einsum("cij,abji->abc", B, comm) / 2 ** n
    assert float(np.max(np.abs(F.imag))) < 1e-12
    F = np.ascontiguousarray(F.real)
    F.setflags(write=False)
    return F


@dataclass(frozen=True)
class PauliHamiltonian:
    """Hermitian operator H = sum_w c_w s_w given by its real coefficients."""

    n: int
    coeffs: np.ndarray

    def __post_init__(self):
        _check_n(self.n)
        c = np.array(self.coeffs, dtype=np.float64, copy=True).reshape(-1)
        if c.shape != (4 ** self.n,):
            raise DomainError(
                f"need {4 ** self.n} coefficients for n={self.n}, got {c.shape[0]}"
            )
        if not np.all(np.isfinite(c)):
            raise DomainError("Hamiltonian coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zero(cls, n: int) -> "PauliHamiltonian":
        _check_n(n)
        return cls(n, np.zeros(4 ** n))

    @classmethod
    def from_terms(cls, n: int, terms: dict) -> "PauliHamiltonian":
        _check_n(n)
        labels = pauli_labels(n)
        index = {lab: i for i, lab in enumerate(labels)}
        c = np.zeros(4 ** n)
        for lab, val in terms.items():
            if lab not in index:
                raise DomainError(f"unknown Pauli string {lab!r} for n={n}")
            c[index[lab]] += float(val)
        return cls(n, c)

    @classmethod
    def from_matrix(cls, n: int, H: np.ndarray) -> "PauliHamiltonian":
        _check_n(n)
        H = np.asarray(H, dtype=np.complex128)
        if H.shape != (2 ** n, 2 ** n):
            raise DomainError(f"matrix shape {H.shape} does not match n={n}")
        if float(np.linalg.norm(H - H.conj().T)) > 1e-8 * max(1.0, float(np.linalg.norm(H))):
            raise DomainError("matrix is not Hermitian")
        B = _basis(n)
        c = np.einsum("aij,ji->a", B, H).real / 2 ** n
        return cls(n, c)

    def to_matrix(self) -> np.ndarray:
        return np.einsum("a,aij->ij", self.coeffs, _basis(self.n))

    def weight_profile(self) -> dict:
        w = pauli_weights(self.n)
        return {int(k): float(np.sum(self.coeffs[w == k] ** 2)) for k in range(self.n + 1)}


@dataclass(frozen=True)
class UnitaryPoint:
    """A point of U(2^n), stored as its matrix."""

    n: int
    matrix: np.ndarray

    def __post_init__(self):
        _check_n(self.n)
        m = np.array(self.matrix, dtype=np.complex128, copy=True)
        d = 2 ** self.n
        if m.shape != (d, d):
            raise DomainError(f"matrix shape {m.shape} does not match n={self.n}")
        if float(np.linalg.norm(m.conj().T @ m - np.eye(d))) > 1e-10:
            raise DomainError("matrix is not unitary (U†U deviates from identity)")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls, n: int) -> "UnitaryPoint":
        return cls(n, np.eye(2 ** n, dtype=np.complex128))

    @classmethod
    def from_exponential(cls, H: PauliHamiltonian) -> "UnitaryPoint":
        return cls(H.n, scipy.linalg.expm(-1j * H.to_matrix()))


@dataclass(frozen=True)
class PenaltyMetric:
    """Diagonal metric in the Pauli basis: one- and two-body strings cost 1,
    everything of weight >= 3 costs q. For n <= 2 every string is local, so
    the metric is bi-invariant regardless of q; the penalty first bites at
    n = 3, which is also where negatively curved 2-planes appear (the free
    sector stops being closed under commutators there)."""

    n: int
    q: float = 100.0

    def __post_init__(self):
        _check_n(self.n)
        if not (np.isfinite(self.q) and self.q >= 1.0):
            raise DomainError(f"penalty factor q must be >= 1, got {self.q}")
        object.__setattr__(self, "q", float(self.q))

    @property
    def local_weight_max(self) -> int:
        return 2

    @property
    def weights(self) -> np.ndarray:
        w = pauli_weights(self.n)
        return np.where(w <= self.local_weight_max, 1.0, self.q)


def _require_same_n(a, b, op):
    if a.n != b.n:
        raise DomainError(f"{op}: operands have different qubit counts ({a.n} vs {b.n})")


def metric_inner(H: PauliHamiltonian, J: PauliHamiltonian, g: PenaltyMetric) -> float:
    """Penalty inner product in Pauli coordinates."""
    _require_same_n(H, J, "metric_inner")
    _require_same_n(H, g, "metric_inner")
    return float(np.sum(g.weights * H.coeffs * J.coeffs))


def bracket(H: PauliHamiltonian, J: PauliHamiltonian) -> PauliHamiltonian:
    """Hermitian bracket b(H, J) = -i[H, J] in coefficients."""
    _require_same_n(H, J, "bracket")
    F = _structure_tensor(H.n)
    return PauliHamiltonian(H.n, np.einsum("abc,a,b->c", F, H.coeffs, J.coeffs))


def _bracket_c(F, x, y):
    return np.einsum("abc,a,b->c", F, x, y)


def _ad_transpose_c(F, p, x, y):
    # <adT_x y, z>_P = <y, b(x, z)>_P  =>  adT_x y = P^{-1} A_x^T P y
    return np.einsum("abc,a,c->b", F, x, p * y) / p


@dataclass(frozen=True)
class EulerArnoldPath:
    """Geodesic sample: U and H at the step nodes t = j/T."""

    metric: PenaltyMetric
    U: tuple
    H: tuple

    @property
    def steps(self) -> int:
        return len(self.U) - 1

    def speed(self, j: int) -> float:
        return metric_inner(self.H[j], self.H[j], self.metric)


def euler_arnold_shoot(H0: PauliHamiltonian, g: PenaltyMetric, T: int) -> EulerArnoldPath:
    """Integrate the geodesic with initial velocity H0 over unit time.

    RK4 on the pair (U, M) with M = p*H the momentum coefficients:
    dU/dt = -iHU, dM/dt = b(H, M). U is snapped back to the unitary group by
    polar projection after every step.
    """
    _require_same_n(H0, g, "euler_arnold_shoot")
    if T < 2:
        raise DomainError(f"need at least 2 time steps, got {T}")
    n = H0.n
    F = _structure_tensor(n)
    B = _basis(n)
    p = g.weights
    dt = 1.0 / T

    def rhs(U, M):
        Hc = M / p
        Hmat = np.einsum("a,aij->ij", Hc, B)
        return -1j * (Hmat @ U), _bracket_c(F, Hc, M)

    U = np.eye(2 ** n, dtype=np.complex128)
    M = p * H0.coeffs
    Us = [U]
    Hs = [PauliHamiltonian(n, H0.coeffs)]
    for j in range(T):
        k1U, k1M = rhs(U, M)
        k2U, k2M = rhs(U + 0.5 * dt * k1U, M + 0.5 * dt * k1M)
        k3U, k3M = rhs(U + 0.5 * dt * k2U, M + 0.5 * dt * k2M)
        k4U, k4M = rhs(U + dt * k3U, M + dt * k3M)
        U = U + dt / 6.0 * (k1U + 2 * k2U + 2 * k3U + k4U)
        M = M + dt / 6.0 * (k1M + 2 * k2M + 2 * k3M + k4M)
        if not (np.all(np.isfinite(M)) and np.all(np.isfinite(U.view(np.float64)))):
            raise BlowUpError(f"geodesic integration blew up at step {j + 1} of {T}", step=j + 1)
        W, _, Vh = np.linalg.svd(U)
        U = W @ Vh
        Us.append(U)
        Hs.append(PauliHamiltonian(n, M / p))
    return EulerArnoldPath(metric=g, U=tuple(Us), H=tuple(Hs))


def phase_aligned_gap(U: np.ndarray, V: np.ndarray) -> float:
    """Frobenius distance between unitaries minimized over a global phase."""
    d = U.shape[0]
    t = abs(np.trace(U.conj().T @ V))
    return math.sqrt(max(2.0 * d - 2.0 * t, 0.0))


@dataclass(frozen=True)
class DistanceResult:
    d_est: float
    H0_best: PauliHamiltonian
    gap: float
    converged: bool
    lengths: tuple
    gaps: tuple


def geodesic_distance(
    U_target,
    g: PenaltyMetric,
    restarts: int = 4,
    T: int = 64,
    seed: int = 0,
    gap_tol: float = 1e-3,
    maxiter: int = 400,
) -> DistanceResult:
    """Search initial velocities whose geodesic hits the target unitary.

    Multi-start local optimization of the phase-aligned endpoint gap over the
    non-identity Pauli coefficients of H0 (the identity string only shifts
    global phase). Among restarts that land within ``gap_tol`` the shortest
    length sqrt(<H0, H0>) is reported — an upper bound on the true distance.
    The first start is the matrix-log pullback of the target; the rest are
    seeded random.
    """
    if not isinstance(U_target, UnitaryPoint):
        U_target = UnitaryPoint(g.n, U_target)
    _require_same_n(U_target, g, "geodesic_distance")
    if restarts < 1:
        raise DomainError("need at least one restart")
    n = g.n
    N = 4 ** n
    V = U_target.matrix
    p = g.weights

    def unpack(x):
        c = np.zeros(N)
        c[1:] = x
        return c

    def objective(x):
        path = euler_arnold_shoot(PauliHamiltonian(n, unpack(x)), g, T)
        gp = phase_aligned_gap(path.U[-1], V)
        return gp * gp

    inits = []
    logU = scipy.linalg.logm(V)
    Hlog = PauliHamiltonian.from_matrix(n, (1j * logU + (1j * logU).conj().T) / 2.0)
    inits.append(Hlog.coeffs[1:])
    rng = rng_for(seed, f"geodesic-distance-n{n}")
    for _ in range(restarts - 1):
        inits.append(0.5 * rng.standard_normal(N - 1))

    lengths, gaps, solutions = [], [], []
    best = None
    for x0 in inits:
        res = scipy.optimize.minimize(
            objective, x0, method="L-BFGS-B", options={"maxiter": maxiter, "ftol": 1e-14, "gtol": 1e-12}
        )
        c = unpack(res.x)
        gap = math.sqrt(max(float(res.fun), 0.0))
        length = math.sqrt(max(float(np.sum(p * c * c)), 0.0))
        lengths.append(length)
        gaps.append(gap)
        solutions.append(c)
        if gap < gap_tol and (best is None or length < best[0]):
            best = (length, c, gap)
    if best is None:
        i = int(np.argmin(gaps))
        return DistanceResult(
            d_est=math.inf,
            H0_best=PauliHamiltonian(n, solutions[i]),
            gap=float(gaps[i]),
            converged=False,
            lengths=tuple(lengths),
            gaps=tuple(gaps),
        )
    return DistanceResult(
        d_est=best[0],
        H0_best=PauliHamiltonian(n, best[1]),
        gap=best[2],
        converged=True,
        lengths=tuple(lengths),
        gaps=tuple(gaps),
    )


def sectional_curvature(x: PauliHamiltonian, y: PauliHamiltonian, g: PenaltyMetric) -> float:
    """Curvature of the 2-plane spanned by a metric-orthonormal pair.

    Evaluates <R(x,y)y, x> with the invariant-metric connection
    nabla_x y = (b(x,y) - adT_x y - adT_y x)/2 — closed-form algebra, no
    integration. The pair must be orthonormal under the penalty metric.
    """
    _require_same_n(x, y, "sectional_curvature")
    _require_same_n(x, g, "sectional_curvature")
    if (
        abs(metric_inner(x, x, g) - 1.0) > 1e-8
        or abs(metric_inner(y, y, g) - 1.0) > 1e-8
        or abs(metric_inner(x, y, g)) > 1e-8
    ):
        raise DomainError("sectional_curvature needs a metric-orthonormal pair")
    F = _structure_tensor(x.n)
    p = g.weights
    xc, yc = x.coeffs, y.coeffs

    def nabla(a, b):
        return 0.5 * (
            _bracket_c(F, a, b)
            - _ad_transpose_c(F, p, a, b)
            - _ad_transpose_c(F, p, b, a)
        )

    r = nabla(xc, nabla(yc, yc)) - nabla(yc, nabla(xc, yc)) - nabla(_bracket_c(F, xc, yc), yc)
    return float(np.sum(p * r * xc))


@dataclass(frozen=True)
class CensusResult:
    n: int
    q: float
    samples: int
    seed: int
    curvatures: np.ndarray
    fraction_negative: float
    histogram_counts: np.ndarray
    histogram_edges: np.ndarray

    def summary(self) -> dict:
        c = self.curvatures
        return {
            "fraction_negative": self.fraction_negative,
            "min": float(np.min(c)),
            "max": float(np.max(c)),
            "mean": float(np.mean(c)),
            "median": float(np.median(c)),
        }


# Roundoff guard: a curvature is counted negative only below this, so the
# exactly-nonnegative bi-invariant case reports a clean zero fraction.
_NEGATIVE_TOL = 1e-10


def curvature_census(n: int, g: PenaltyMetric, samples: int, seed: int) -> CensusResult:
    """Sample random 2-planes of the algebra and report curvature statistics.

    Raw plane draws depend only on (n, seed), not on q, so censuses at
    different penalties compare the same planes. The identity direction is
    excluded (it is central and only pads planes with flat directions).
    """
    _check_n(n)
    if g.n != n:
        raise DomainError("census metric has a different qubit count")
    if samples < 100:
        raise DomainError(f"need at least 100 samples, got {samples}")
    N = 4 ** n
    rng = rng_for(seed, f"curvature-census-n{n}")
    curvatures = np.zeros(samples)
    got = 0
    while got < samples:
        raw = rng.standard_normal((2, N - 1))
        a = np.zeros(N)
        b = np.zeros(N)
        a[1:] = raw[0]
        b[1:] = raw[1]
        pa = PauliHamiltonian(n, a)
        na = math.sqrt(metric_inner(pa, pa, g))
        if na < 1e-12:
            continue
        a = a / na
        pa = PauliHamiltonian(n, a)
        pb = PauliHamiltonian(n, b)
        proj = metric_inner(pa, pb, g)
        b = b - proj * a
        pb = PauliHamiltonian(n, b)
        nb = math.sqrt(max(metric_inner(pb, pb, g), 0.0))
        if nb < 1e-8:
            continue
        pb = PauliHamiltonian(n, b / nb)
        curvatures[got] = sectional_curvature(pa, pb, g)
        got += 1
    counts, edges = np.histogram(curvatures, bins=10)
    frac = float(np.mean(curvatures < -_NEGATIVE_TOL))
    return CensusResult(
        n=n,
        q=g.q,
        samples=samples,
        seed=seed,
        curvatures=curvatures,
        fraction_negative=frac,
        histogram_counts=counts,
        histogram_edges=edges,
    )
