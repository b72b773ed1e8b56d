"""Equilibrium propagation over explicit energy models.

The engine works on any model exposing a scalar energy F(theta, beta, s, v)
and its first derivatives. Learning proceeds in two relaxations: settle the
state s to a fixed point of F at the base nudge beta, settle again at
beta + xi*delta seeded from the first fixed point, and difference the
parameter statistics dF/dtheta between the phases. As xi -> 0 the
(1/xi)-scaled difference converges to the gradient of the nudge-directional
cost C = delta . dF/dbeta at the fixed point, which this module can also
compute exactly through the Lagrangian adjoint system for verification.

Three models are bundled: a scalar toy with a hand-derivable gradient, a
strongly convex quadratic teacher, and a desk-scale wrapper around geodesic
shooting in which the relaxing state is a momentum copy — running the two
EP phases on it reproduces the shooting adjoint gradient, which is the
correspondence the report functions quantify.
"""

import abc
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFixedPointError, DomainError, RelaxationError
from .grid import ScalarField, _require_same_grid
from .kernel import KernelSpec
from .seeding import rng_for
from .shooting import data_cost, shoot, shooting_gradient


class EnergyModel(abc.ABC):
    """Scalar energy with first-derivative evaluators.

    Evaluators must be deterministic and mutually consistent; ``fd_tolerance``
    is the relative slack :func:`validate_model` allows between analytic
    derivatives and central differences of F (models whose derivatives come
    from a discretized adjoint rather than exact calculus widen it).
    """

    dim_theta: int
    dim_s: int
    dim_beta: int
    dim_v: int
    fd_tolerance: float = 1e-5

    @abc.abstractmethod
    def F(self, theta, beta, s, v) -> float: ...

    @abc.abstractmethod
    def dF_ds(self, theta, beta, s, v) -> np.ndarray: ...

    @abc.abstractmethod
    def dF_dtheta(self, theta, beta, s, v) -> np.ndarray: ...

    @abc.abstractmethod
    def dF_dbeta(self, theta, beta, s, v) -> np.ndarray: ...


def _as_vec(x, dim, name):
    arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if arr.shape != (dim,):
        raise DomainError(f"{name} has shape {arr.shape}, expected ({dim},)")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    return arr


def validate_model(
    m: EnergyModel, seed: int = 0, points: int = 10, directional: bool = False
) -> float:
    """Check the analytic derivatives against central differences of F.

    Coordinatewise by default; ``directional=True`` instead probes one random
    unit direction per derivative block (two F evaluations), which is the
    affordable variant when the state is a whole field. Returns the worst
    relative error seen; raises if it exceeds the model's ``fd_tolerance``.
    """
    rng = rng_for(seed, "validate-model")
    worst = 0.0
    for _ in range(points):
        theta = rng.standard_normal(m.dim_theta)
        beta = 0.1 * rng.standard_normal(m.dim_beta)
        s = rng.standard_normal(m.dim_s)
        v = rng.standard_normal(m.dim_v)
        for dim, x, ev in (
            (m.dim_s, s, "s"),
            (m.dim_theta, theta, "theta"),
            (m.dim_beta, beta, "beta"),
        ):
            analytic = {
                "s": m.dF_ds,
                "theta": m.dF_dtheta,
                "beta": m.dF_dbeta,
            }[ev](theta, beta, s, v)

            def f_at(xx, which=ev):
                args = {
                    "s": (theta, beta, xx, v),
                    "theta": (xx, beta, s, v),
                    "beta": (theta, xx, s, v),
                }[which]
                return m.F(*args)

            if directional:
                d = rng.standard_normal(dim)
                d /= np.linalg.norm(d)
                h = 1e-6 * (1.0 + float(np.max(np.abs(x))))
                slope_fd = (f_at(x + h * d) - f_at(x - h * d)) / (2.0 * h)
                slope_an = float(analytic @ d)
                scale = max(float(np.linalg.norm(analytic)), 1e-12)
                err = abs(slope_fd - slope_an) / scale
            else:
                fd = np.zeros(dim)
                for i in range(dim):
                    h = 1e-6 * (1.0 + abs(x[i]))
                    xp = x.copy()
                    xm = x.copy()
                    xp[i] += h
                    xm[i] -= h
                    fd[i] = (f_at(xp) - f_at(xm)) / (2.0 * h)
                scale = max(float(np.linalg.norm(analytic)), 1e-12)
                err = float(np.linalg.norm(fd - analytic)) / scale
            worst = max(worst, err)
    if worst > m.fd_tolerance:
        raise DomainError(
            f"model derivatives disagree with finite differences: "
            f"relative error {worst:.3e} > {m.fd_tolerance:.1e}"
        )
    return worst


@dataclass(frozen=True)
class EpConfig:
    """Nudge direction and relaxation controls."""

    delta: np.ndarray
    xi: float
    relax_tol: float = 1e-8
    relax_max_iters: int = 10000
    relax_step: float = 0.1

    def __post_init__(self):
        d = np.asarray(self.delta, dtype=np.float64).reshape(-1).copy()
        if d.size < 1 or not np.all(np.isfinite(d)):
            raise DomainError("delta must be a finite vector")
        if abs(float(np.linalg.norm(d)) - 1.0) > 1e-9:
            raise DomainError("delta must be normalized to unit length")
        d.setflags(write=False)
        object.__setattr__(self, "delta", d)
        if not (np.isfinite(self.xi) and self.xi != 0.0):
            raise DomainError(f"xi must be finite and nonzero, got {self.xi}")
        if not (self.relax_tol > 0 and self.relax_step > 0 and self.relax_max_iters >= 1):
            raise DomainError("relaxation controls must be positive")


@dataclass(frozen=True)
class RelaxResult:
    s: np.ndarray
    residual: float
    iterations: int


def relax(m: EnergyModel, theta, beta, v, s_init, cfg: EpConfig) -> RelaxResult:
    """Damped gradient flow on s until the energy gradient is below tolerance."""
    theta = _as_vec(theta, m.dim_theta, "theta")
    beta = _as_vec(beta, m.dim_beta, "beta")
    v = _as_vec(v, m.dim_v, "v") if m.dim_v else np.zeros(0)
    s = _as_vec(s_init, m.dim_s, "s_init").copy()
    best = np.inf
    # divergence surfaces as a typed error after the finiteness check, not as
    # a raw numpy overflow warning
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(cfg.relax_max_iters + 1):
            g = m.dF_ds(theta, beta, s, v)
            res = float(np.max(np.abs(g)))
            best = min(best, res)
            if res < cfg.relax_tol:
                return RelaxResult(s=s, residual=res, iterations=it)
            if it == cfg.relax_max_iters:
                break
            s = s - cfg.relax_step * g
            if not np.all(np.isfinite(s)):
                raise RelaxationError(
                    f"relaxation diverged after {it + 1} iterations", residual=best
                )
    raise RelaxationError(
        f"relaxation did not reach tolerance {cfg.relax_tol:.1e} in "
        f"{cfg.relax_max_iters} iterations (best residual {best:.3e})",
        residual=best,
    )


def ep_cost(m: EnergyModel, theta, beta, delta, s, v) -> float:
    """Directional derivative of F along delta in beta: the nudged cost."""
    delta = np.asarray(delta, dtype=np.float64).reshape(-1)
    return float(delta @ m.dF_dbeta(theta, beta, s, v))


@dataclass(frozen=True)
class EpUpdate:
    delta_theta: np.ndarray
    s_free: np.ndarray
    s_nudged: np.ndarray
    free: RelaxResult
    nudged: RelaxResult


def _phase_relax(m, theta, beta, v, s_init, cfg, phase):
    try:
        return relax(m, theta, beta, v, s_init, cfg)
    except RelaxationError as e:
        raise RelaxationError(f"{phase} phase: {e}", residual=e.residual) from e


def ep_update(m: EnergyModel, theta, beta, v, cfg: EpConfig, s_init=None) -> EpUpdate:
    """Two-phase estimate of the (negated) cost gradient in theta.

    Free phase relaxes at beta, the nudged phase relaxes at beta + xi*delta
    seeded from the free fixed point, and the parameter statistic dF/dtheta is
    differenced: delta_theta = -(1/xi) (dF/dtheta|nudged - dF/dtheta|free).
    """
    theta = _as_vec(theta, m.dim_theta, "theta")
    beta = _as_vec(beta, m.dim_beta, "beta")
    v = _as_vec(v, m.dim_v, "v") if m.dim_v else np.zeros(0)
    if s_init is None:
        s_init = np.zeros(m.dim_s)
    free = _phase_relax(m, theta, beta, v, s_init, cfg, "free")
    g_free = m.dF_dtheta(theta, beta, free.s, v)
    beta_n = beta + cfg.xi * cfg.delta
    nudged = _phase_relax(m, theta, beta_n, v, free.s, cfg, "nudged")
    g_nudged = m.dF_dtheta(theta, beta_n, nudged.s, v)
    dtheta = -(g_nudged - g_free) / cfg.xi
    return EpUpdate(
        delta_theta=dtheta, s_free=free.s, s_nudged=nudged.s, free=free, nudged=nudged
    )


@dataclass(frozen=True)
class EpUpdateSymmetric:
    delta_theta: np.ndarray
    s_free: np.ndarray
    s_plus: np.ndarray
    s_minus: np.ndarray


def ep_update_symmetric(
    m: EnergyModel, theta, beta, v, cfg: EpConfig, s_init=None
) -> EpUpdateSymmetric:
    """Average of the +xi and -xi two-phase estimates (second-order in xi)."""
    theta = _as_vec(theta, m.dim_theta, "theta")
    beta = _as_vec(beta, m.dim_beta, "beta")
    v = _as_vec(v, m.dim_v, "v") if m.dim_v else np.zeros(0)
    if s_init is None:
        s_init = np.zeros(m.dim_s)
    free = _phase_relax(m, theta, beta, v, s_init, cfg, "free")
    estimates = []
    states = []
    for sgn in (1.0, -1.0):
        beta_n = beta + sgn * cfg.xi * cfg.delta
        nudged = _phase_relax(m, theta, beta_n, v, free.s, cfg, f"nudged({sgn:+.0f}xi)")
        g_n = m.dF_dtheta(theta, beta_n, nudged.s, v)
        estimates.append(-(g_n - m.dF_dtheta(theta, beta, free.s, v)) / (sgn * cfg.xi))
        states.append(nudged.s)
    dtheta = 0.5 * (estimates[0] + estimates[1])
    return EpUpdateSymmetric(
        delta_theta=dtheta, s_free=free.s, s_plus=states[0], s_minus=states[1]
    )


@dataclass(frozen=True)
class AdjointSolution:
    s_star: np.ndarray
    lambda_star: np.ndarray
    stationarity_residual: float


def exact_gradient(
    m: EnergyModel, theta, beta, delta, v, cfg: EpConfig, s_init=None, fd_step: float = 1e-5
):
    """Ground-truth dC/dtheta through the Lagrangian adjoint system.

    Relaxes to s*, solves (d2F/ds2) lambda = -d/ds (delta . dF/dbeta), and
    assembles dC/dtheta = d/dtheta (delta . dF/dbeta) + lambda . d2F/ds dtheta.
    Second derivatives are built by central differences of the first-derivative
    evaluators, exact for the quadratic models.
    """
    theta = _as_vec(theta, m.dim_theta, "theta")
    beta = _as_vec(beta, m.dim_beta, "beta")
    delta = _as_vec(delta, m.dim_beta, "delta")
    v = _as_vec(v, m.dim_v, "v") if m.dim_v else np.zeros(0)
    if s_init is None:
        s_init = np.zeros(m.dim_s)
    star = relax(m, theta, beta, v, s_init, cfg)
    s = star.s
    n = m.dim_s
    h0 = fd_step * (1.0 + float(np.max(np.abs(s))))

    def cost_at(ss):
        return float(delta @ m.dF_dbeta(theta, beta, ss, v))

    rhs = np.zeros(n)
    hess = np.zeros((n, n))
    for i in range(n):
        sp = s.copy()
        sm = s.copy()
        sp[i] += h0
        sm[i] -= h0
        rhs[i] = (cost_at(sp) - cost_at(sm)) / (2.0 * h0)
        hess[:, i] = (m.dF_ds(theta, beta, sp, v) - m.dF_ds(theta, beta, sm, v)) / (2.0 * h0)
    hess = 0.5 * (hess + hess.T)
    try:
        cond = np.linalg.cond(hess)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > 1e12:
        raise DegenerateFixedPointError(
            f"curvature of F at the fixed point is singular (cond {cond:.3e})"
        )
    lam = np.linalg.solve(hess, -rhs)
    residual = float(np.max(np.abs(hess @ lam + rhs)))

    # d/dtheta of the nudged cost at fixed s.
    grad = np.zeros(m.dim_theta)
    for i in range(m.dim_theta):
        tp = theta.copy()
        tm = theta.copy()
        ht = fd_step * (1.0 + abs(theta[i]))
        tp[i] += ht
        tm[i] -= ht
        grad[i] = (
            float(delta @ m.dF_dbeta(tp, beta, s, v))
            - float(delta @ m.dF_dbeta(tm, beta, s, v))
        ) / (2.0 * ht)
    # lambda-weighted mixed partial, evaluated as one directional difference.
    lam_norm = float(np.linalg.norm(lam))
    if lam_norm > 0:
        direction = lam / lam_norm
        sp = s + h0 * direction
        sm = s - h0 * direction
        mixed = (m.dF_dtheta(theta, beta, sp, v) - m.dF_dtheta(theta, beta, sm, v)) / (2.0 * h0)
        grad = grad + lam_norm * mixed
    return grad, AdjointSolution(s_star=s, lambda_star=lam, stationarity_residual=residual)


# ---------------------------------------------------------------------------
# Bundled models.
# ---------------------------------------------------------------------------

class ScalarToyModel(EnergyModel):
    """F = (s - theta)^2 / 2 + beta (s - v)^2, everything one-dimensional."""

    dim_theta = 1
    dim_s = 1
    dim_beta = 1
    dim_v = 1

    def F(self, theta, beta, s, v):
        return float(0.5 * (s[0] - theta[0]) ** 2 + beta[0] * (s[0] - v[0]) ** 2)

    def dF_ds(self, theta, beta, s, v):
        return np.array([(s[0] - theta[0]) + 2.0 * beta[0] * (s[0] - v[0])])

    def dF_dtheta(self, theta, beta, s, v):
        return np.array([theta[0] - s[0]])

    def dF_dbeta(self, theta, beta, s, v):
        return np.array([(s[0] - v[0]) ** 2])


class QuadraticTeacherModel(EnergyModel):
    """F = s'As/2 - theta's + beta ||M s - v||^2 / 2 with A symmetric PD.

    The relaxed state is the solution of a linear system, so every quantity
    the EP estimator approximates has a closed linear-algebra form — the
    model used to measure the estimator's order in xi.
    """

    dim_beta = 1

    def __init__(self, A: np.ndarray, M: np.ndarray):
        A = np.asarray(A, dtype=np.float64)
        M = np.asarray(M, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DomainError("A must be square")
        if not np.allclose(A, A.T, atol=1e-12):
            raise DomainError("A must be symmetric")
        if float(np.min(np.linalg.eigvalsh(A))) <= 0:
            raise DomainError("A must be positive definite")
        if M.ndim != 2 or M.shape[1] != A.shape[0]:
            raise DomainError("M must map the state space")
        self.A = A
        self.M = M
        self.dim_s = A.shape[0]
        self.dim_theta = A.shape[0]
        self.dim_v = M.shape[0]

    @classmethod
    def random(cls, n: int, m: int, seed: int) -> "QuadraticTeacherModel":
        rng = rng_for(seed, "quadratic-teacher")
        Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        eigs = rng.uniform(0.5, 2.0, size=n)
        A = Q @ np.diag(eigs) @ Q.T
        A = 0.5 * (A + A.T)
        M = rng.standard_normal((m, n)) / np.sqrt(n)
        return cls(A, M)

    def F(self, theta, beta, s, v):
        r = self.M @ s - v
        return float(0.5 * s @ self.A @ s - theta @ s + 0.5 * beta[0] * (r @ r))

    def dF_ds(self, theta, beta, s, v):
        return self.A @ s - theta + beta[0] * (self.M.T @ (self.M @ s - v))

    def dF_dtheta(self, theta, beta, s, v):
        return -s

    def dF_dbeta(self, theta, beta, s, v):
        r = self.M @ s - v
        return np.array([0.5 * float(r @ r)])

    def exact_cost_gradient(self, theta, beta, v):
        """Closed-form dC/dtheta by implicit differentiation, for oracles."""
        theta = _as_vec(theta, self.dim_theta, "theta")
        beta = _as_vec(beta, 1, "beta")
        v = _as_vec(v, self.dim_v, "v")
        H = self.A + beta[0] * self.M.T @ self.M
        s = np.linalg.solve(H, theta + beta[0] * self.M.T @ v)
        return np.linalg.solve(H, self.M.T @ (self.M @ s - v))


class ShootingMatchModel(EnergyModel):
    """Geodesic-shooting data term wrapped as a relaxing energy.

    The state is a momentum field tied to the parameter by a quadratic well,
    F = ||s - theta||^2 / 2 + beta * C(s) with C the terminal image mismatch
    of shooting from momentum s. At beta = 0 the free fixed point is s = theta
    exactly, so the two-phase difference of dF/dtheta recovers beta-scaled
    mismatch gradients — i.e. EP on this model reproduces the adjoint
    shooting gradient up to O(xi).

    The mismatch derivative comes from the discretized adjoint system, so
    ``fd_tolerance`` reflects that integration error rather than roundoff.
    """

    dim_beta = 1
    dim_v = 0
    fd_tolerance = 1e-2

    def __init__(self, I0: ScalarField, I1: ScalarField, kernel: KernelSpec, T: int):
        _require_same_grid(I0, I1, "ShootingMatchModel")
        _require_same_grid(I0, kernel.grid, "ShootingMatchModel")
        self.I0 = I0
        self.I1 = I1
        self.kernel = kernel
        self.T = int(T)
        self.grid = I0.grid
        n = self.grid.nx * self.grid.ny
        self.dim_s = n
        self.dim_theta = n

    def _field(self, flat) -> ScalarField:
        return ScalarField(self.grid, np.asarray(flat).reshape(self.grid.shape))

    def _mismatch(self, flat) -> float:
        state = shoot(self.I0, self._field(flat), self.kernel, self.T)
        return data_cost(state, self.I1)

    def F(self, theta, beta, s, v):
        d = s - theta
        return float(0.5 * d @ d + beta[0] * self._mismatch(s))

    def dF_ds(self, theta, beta, s, v):
        g = s - theta
        if beta[0] != 0.0:
            gc = shooting_gradient(self.I0, self._field(s), self.I1, self.kernel, self.T)
            g = g + beta[0] * self.grid.spacing ** 2 * gc.values.reshape(-1)
        return g

    def dF_dtheta(self, theta, beta, s, v):
        return theta - s

    def dF_dbeta(self, theta, beta, s, v):
        return np.array([self._mismatch(s)])


def shooting_as_ep(
    I0: ScalarField,
    I1: ScalarField,
    P0: ScalarField,
    k: KernelSpec,
    T: int,
    xi: float,
    relax_tol: float = 1e-12,
    relax_max_iters: int = 60,
) -> dict:
    """Run the two EP phases on the shooting energy and compare the estimate
    against the adjoint gradient of the same mismatch.

    Returns a report with the cosine similarity and relative magnitude error
    between the EP update direction and the adjoint gradient at theta = P0.
    """
    model = ShootingMatchModel(I0, I1, k, T)
    theta = P0.values.reshape(-1)
    cfg = EpConfig(
        delta=np.array([1.0]),
        xi=xi,
        relax_tol=relax_tol,
        relax_max_iters=relax_max_iters,
        relax_step=1.0,
    )
    upd = ep_update(model, theta, np.array([0.0]), np.zeros(0), cfg, s_init=theta)
    ep_grad = -upd.delta_theta  # EP estimate of dC/dtheta
    h2 = I0.grid.spacing ** 2
    adj = h2 * shooting_gradient(I0, P0, I1, k, T).values.reshape(-1)
    na = float(np.linalg.norm(ep_grad))
    nb = float(np.linalg.norm(adj))
    if na < 1e-14 and nb < 1e-14:
        cosine, rel_mag, abs_err = 1.0, 0.0, 0.0
    else:
        cosine = float(ep_grad @ adj) / max(na * nb, 1e-300)
        rel_mag = abs(na - nb) / max(nb, 1e-300)
        abs_err = float(np.linalg.norm(ep_grad - adj))
    return {
        "xi": xi,
        "cosine": cosine,
        "rel_magnitude_error": rel_mag,
        "error_norm": abs_err,
        "ep_norm": na,
        "adjoint_norm": nb,
        "free_iterations": upd.free.iterations,
        "nudged_iterations": upd.nudged.iterations,
    }
