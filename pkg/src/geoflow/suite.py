"""Deterministic check suites behind ``geoflow suite``.

Each suite runs a handful of fast end-to-end checks on its module family,
writes the artifacts an offline plotting pipeline would consume (CSV, PGM,
GFLD), and records one PASS/FAIL line per check in ``manifest.txt``.  Runs are
fully deterministic for a fixed seed: no timestamps, fixed float formatting,
and one seeded generator per sub-experiment split by a stable label, so adding
a check never perturbs the randomness of existing ones.

Exit codes: 0 when every check passes, 1 when any check fails or a module
raises, 2 when a named input image file does not exist.
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import metadata

import numpy as np
import scipy

from .config import ExperimentConfig, render_config
from .ep import (
    EpConfig,
    QuadraticTeacherModel,
    ep_update,
    ep_update_symmetric,
    shooting_as_ep,
)
from .errors import GeoflowError
from .flow import TimeVaryingVelocity
from .grid import Grid, ScalarField, VectorField
from .io import read_pgm, write_csv, write_gfld, write_pgm
from .kernel import KernelSpec, apply_K, v_inner
from .lddmm import LddmmProblem, lddmm_energy, lddmm_gradient, register_lddmm
from .seeding import rng_for
from .shooting import (
    data_cost,
    flow_transform,
    match_by_shooting,
    shoot,
    shooting_gradient,
)
from .unitary import (
    PauliHamiltonian,
    PenaltyMetric,
    UnitaryPoint,
    curvature_census,
    euler_arnold_shoot,
    geodesic_distance,
)


def _version() -> str:
    try:
        return metadata.version("geoflow")
    except metadata.PackageNotFoundError:
        return "0+unknown"


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


def _run_check(checks: list, name: str, fn) -> None:
    try:
        passed, detail = fn()
    except GeoflowError as e:
        checks.append(Check(name, False, f"error: {e}"))
    else:
        checks.append(Check(name, bool(passed), detail))


# ---------------------------------------------------------------------------
# Synthetic inputs.
# ---------------------------------------------------------------------------

def gaussian_blob(
    grid: Grid, cx: float, cy: float, width: float = 3.0, peak: float = 1.0
) -> ScalarField:
    """Periodic Gaussian bump (minimum-image distance, so it wraps smoothly)."""
    X, Y = grid.mesh()
    dx = (X - cx + grid.nx / 2.0) % grid.nx - grid.nx / 2.0
    dy = (Y - cy + grid.ny / 2.0) % grid.ny - grid.ny / 2.0
    return ScalarField(grid, peak * np.exp(-(dx ** 2 + dy ** 2) / (2.0 * width ** 2)))


def blob_pair(n: int = 32, shift: float = 3.0, width: float = 3.0, peak: float = 1.0):
    """A template and the same blob translated ``shift`` cells along x.

    ``peak`` scales the intensity; matching demos use 3.0 so the mismatch term
    (quadratic in intensity) outweighs the kinetic cost of the 3-cell move and
    the optimum sits at a near-complete correction rather than a partial one.
    """
    grid = Grid(n, n)
    cx, cy = n / 2.0, n / 2.0
    return (
        gaussian_blob(grid, cx - shift / 2.0, cy, width, peak),
        gaussian_blob(grid, cx + shift / 2.0, cy, width, peak),
    )


def _smooth_noise_vector(grid: Grid, k: KernelSpec, rng, amplitude: float) -> VectorField:
    raw = VectorField(grid, rng.standard_normal((grid.ny, grid.nx, 2)))
    smooth = apply_K(raw, k).values
    peak = float(np.max(np.hypot(smooth[:, :, 0], smooth[:, :, 1])))
    return VectorField(grid, smooth * (amplitude / max(peak, 1e-12)))


def _smooth_noise_scalar(grid: Grid, k: KernelSpec, rng, amplitude: float) -> ScalarField:
    from .kernel import _filtered

    smooth = _filtered(rng.standard_normal(grid.shape), k.transfer)
    peak = float(np.max(np.abs(smooth)))
    return ScalarField(grid, smooth * (amplitude / max(peak, 1e-12)))


def _loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log10(np.asarray(xs)), np.log10(np.asarray(ys)), 1)[0])


# ---------------------------------------------------------------------------
# Suite bodies.
# ---------------------------------------------------------------------------

def _suite_lddmm(cfg: ExperimentConfig, out: str, images):
    checks = []
    if images is None:
        I0, I1 = blob_pair(32, shift=3.0, width=3.0, peak=3.0)
        inputs = ["i0 = synthetic blob pair 32x32, shift 3.0 cells, peak 3.0 (moving half)",
                  "i1 = synthetic blob pair 32x32, shift 3.0 cells, peak 3.0 (target half)"]
    else:
        (I0, I1), inputs = images

    def gradient_check():
        grid = Grid(16, 16)
        k = KernelSpec(grid, cfg.kernel_sigma)
        J0, J1 = blob_pair(16, shift=2.0, width=2.0)
        p = LddmmProblem(J0, J1, k, sigma=0.2, steps=8)
        rng = rng_for(cfg.seed, "suite-lddmm-grad")
        u = TimeVaryingVelocity(
            tuple(_smooth_noise_vector(grid, k, rng, 0.6) for _ in range(8))
        )
        w = tuple(_smooth_noise_vector(grid, k, rng, 1.0) for _ in range(8))
        grads = lddmm_gradient(p, u)
        analytic = u.dt * sum(v_inner(g, d, k) for g, d in zip(grads, w))
        eps = 1e-5

        def shifted(sign):
            return TimeVaryingVelocity(
                tuple(
                    VectorField(grid, f.values + sign * eps * d.values)
                    for f, d in zip(u.fields, w)
                )
            )

        fd = (lddmm_energy(p, shifted(+1)) - lddmm_energy(p, shifted(-1))) / (2.0 * eps)
        rel = abs(analytic - fd) / max(abs(fd), 1e-30)
        return rel < 1e-3, f"directional derivative rel_err = {rel:.3e} (tol 1e-3)"

    _run_check(checks, "gradient-vs-fd", gradient_check)

    sigma = 1.0 / math.sqrt(cfg.match_weight)
    k = KernelSpec(I0.grid, cfg.kernel_sigma)
    p = LddmmProblem(I0, I1, k, sigma=sigma, steps=cfg.flow_steps)
    res = register_lddmm(
        p, max_iters=min(cfg.optimizer_max_iters, 200), tol=cfg.optimizer_tol
    )
    write_csv(
        os.path.join(out, "trace.csv"),
        ("iter", "energy", "kinetic", "data", "step"),
        res.trace,
    )
    write_pgm(os.path.join(out, "i0.pgm"), I0)
    write_pgm(os.path.join(out, "i1.pgm"), I1)
    write_pgm(os.path.join(out, "warped.pgm"), res.warped)
    write_gfld(os.path.join(out, "displacement.gfld"), res.g10.displacement)

    def reduction():
        data0 = res.trace[0][3]
        frac = res.data / max(data0, 1e-30)
        return frac <= 0.10, f"data term reduced to {frac:.3f} of initial (tol 0.10)"

    def monotone():
        energies = [row[1] for row in res.trace]
        drops = all(b <= a + 1e-12 for a, b in zip(energies, energies[1:]))
        return drops, f"energy trace over {len(energies)} rows nonincreasing"

    def diffeo():
        return res.diffeomorphic, "Jacobian determinants positive along the flow"

    _run_check(checks, "blob-data-reduction", reduction)
    _run_check(checks, "trace-monotone", monotone)
    _run_check(checks, "diffeomorphic", diffeo)
    return checks, inputs


def _suite_shooting(cfg: ExperimentConfig, out: str, images):
    checks = []
    if images is None:
        I0, I1 = blob_pair(32, shift=3.0, width=3.0, peak=3.0)
        inputs = ["i0 = synthetic blob pair 32x32, shift 3.0 cells, peak 3.0 (moving half)",
                  "i1 = synthetic blob pair 32x32, shift 3.0 cells, peak 3.0 (target half)"]
    else:
        (I0, I1), inputs = images
    grid = I0.grid
    k = KernelSpec(grid, cfg.kernel_sigma)

    def conservation():
        rng = rng_for(cfg.seed, "suite-shooting-p0")
        P0 = _smooth_noise_scalar(grid, k, rng, 50.0)
        state = shoot(I0, P0, k, 32)
        ke = [state.kinetic_energy(j) for j in range(33)]
        write_csv(
            os.path.join(out, "kinetic.csv"),
            ("t", "kinetic_energy"),
            [(j / 32.0, v) for j, v in enumerate(ke)],
        )
        drift = max(abs(v - ke[0]) for v in ke) / max(abs(ke[0]), 1e-30)
        return drift < 0.02, f"kinetic drift {drift:.2e} over T=32 (tol 2e-2)"

    def adjoint_fd():
        J0, J1 = blob_pair(16, shift=2.0, width=2.0)
        kk = KernelSpec(J0.grid, cfg.kernel_sigma)
        rng = rng_for(cfg.seed, "suite-shooting-fd")
        P0 = _smooth_noise_scalar(J0.grid, kk, rng, 0.8)
        T = 8
        g = shooting_gradient(J0, P0, J1, kk, T)
        h2 = J0.grid.spacing ** 2
        eps = 1e-4
        an, fd = [], []
        for _ in range(4):
            w = _smooth_noise_scalar(J0.grid, kk, rng, 1.0)
            an.append(h2 * float(np.sum(g.values * w.values)))
            cp = data_cost(
                shoot(J0, ScalarField(J0.grid, P0.values + eps * w.values), kk, T), J1
            )
            cm = data_cost(
                shoot(J0, ScalarField(J0.grid, P0.values - eps * w.values), kk, T), J1
            )
            fd.append((cp - cm) / (2.0 * eps))
        an = np.array(an)
        fd = np.array(fd)
        cosine = float(an @ fd) / max(np.linalg.norm(an) * np.linalg.norm(fd), 1e-300)
        mag = abs(np.linalg.norm(an) - np.linalg.norm(fd)) / max(np.linalg.norm(fd), 1e-300)
        ok = cosine >= 0.999 and mag < 0.01
        return ok, f"4 probes: cosine = {cosine:.6f}, magnitude err = {mag:.2e}"

    _run_check(checks, "conservation", conservation)
    _run_check(checks, "adjoint-vs-fd", adjoint_fd)

    res = match_by_shooting(
        I0, I1, k, cfg.match_weight, T=cfg.flow_steps,
        max_iters=min(cfg.optimizer_max_iters, 15), tol=cfg.optimizer_tol,
    )
    write_csv(
        os.path.join(out, "trace.csv"),
        ("iter", "objective", "kinetic", "data", "step"),
        res.trace,
    )
    write_csv(
        os.path.join(out, "kinetic_final.csv"),
        ("t", "kinetic_energy"),
        [(j / res.state.steps, res.state.kinetic_energy(j)) for j in range(res.state.steps + 1)],
    )
    write_pgm(os.path.join(out, "warped.pgm"), res.state.I[-1])
    write_gfld(os.path.join(out, "momentum.gfld"), res.P0)
    g10 = flow_transform(res.state)
    write_gfld(os.path.join(out, "displacement.gfld"), g10.displacement)

    def reduction():
        data0 = res.trace[0][3]
        frac = res.data / max(data0, 1e-30)
        return frac <= 0.10, f"data term reduced to {frac:.3f} of initial (tol 0.10)"

    _run_check(checks, "blob-data-reduction", reduction)
    return checks, inputs


def _suite_ep(cfg: ExperimentConfig, out: str, images):
    checks = []
    inputs = ["quadratic teacher model (n=6, m=4), seeded synthetic",
              "shooting blob pair 16x16, shift 2.0 cells"]
    model = QuadraticTeacherModel.random(6, 4, cfg.seed)
    rng = rng_for(cfg.seed, "suite-ep")
    theta = rng.standard_normal(6)
    v = rng.standard_normal(4)
    beta = np.array([0.3])
    delta = np.array([1.0])
    exact = model.exact_cost_gradient(theta, beta, v)

    def sweep_cfg(xi):
        return EpConfig(
            delta=delta, xi=xi, relax_tol=1e-13, relax_max_iters=500000,
            relax_step=cfg.ep_relax_step,
        )

    xis = (1e-1, 1e-2, 1e-3, 1e-4)
    errors, cosines, rows = [], [], []
    for xi in xis:
        upd = ep_update(model, theta, beta, v, sweep_cfg(xi))
        est = -upd.delta_theta
        err = float(np.linalg.norm(est - exact))
        cosine = float(est @ exact) / max(
            np.linalg.norm(est) * np.linalg.norm(exact), 1e-300
        )
        errors.append(err)
        cosines.append(cosine)
        rows.append((xi, err, cosine))
    write_csv(os.path.join(out, "sweep.csv"), ("xi", "ep_error", "cosine"), rows)

    sym_errors = []
    for xi in xis:
        upd = ep_update_symmetric(model, theta, beta, v, sweep_cfg(xi))
        sym_errors.append(float(np.linalg.norm(-upd.delta_theta - exact)))
    write_csv(
        os.path.join(out, "sweep_symmetric.csv"),
        ("xi", "ep_error"),
        list(zip(xis, sym_errors)),
    )

    def plain_slope():
        slope = _loglog_slope(xis, errors)
        detail = (
            f"slope = {slope:.3f} (want 1.0 +- 0.15); "
            f"cosines = {', '.join(f'{c:.6f}' for c in cosines)}"
        )
        return abs(slope - 1.0) <= 0.15, detail

    def symmetric_slope():
        slope = _loglog_slope(xis, sym_errors)
        return abs(slope - 2.0) <= 0.2, f"slope = {slope:.3f} (want 2.0 +- 0.2)"

    def shooting_ep():
        I0, I1 = blob_pair(16, shift=2.0, width=2.0)
        k = KernelSpec(I0.grid, cfg.kernel_sigma)
        P0 = _smooth_noise_scalar(
            I0.grid, k, rng_for(cfg.seed, "suite-ep-shooting"), 0.8
        )
        report = shooting_as_ep(I0, I1, P0, k, T=8, xi=cfg.ep_xi)
        write_csv(
            os.path.join(out, "shooting_ep.csv"),
            ("xi", "ep_error", "cosine"),
            [(report["xi"], report["error_norm"], report["cosine"])],
        )
        ok = report["cosine"] >= 0.99
        return ok, (
            f"xi = {report['xi']:g}: cosine = {report['cosine']:.6f}, "
            f"rel magnitude err = {report['rel_magnitude_error']:.2e}"
        )

    _run_check(checks, "xi-sweep-slope", plain_slope)
    _run_check(checks, "xi-sweep-symmetric-slope", symmetric_slope)
    _run_check(checks, "shooting-as-ep", shooting_ep)
    return checks, inputs


def _suite_unitary(cfg: ExperimentConfig, out: str, images):
    checks = []
    inputs = ["seeded random generator directions on the Pauli basis (n = 1, 2, 3)"]

    def q1_exponential():
        from scipy.linalg import expm

        rng = rng_for(cfg.seed, "suite-unitary-h0")
        coeffs = np.zeros(16)
        coeffs[1:] = rng.standard_normal(15)
        coeffs *= 1.0 / np.linalg.norm(coeffs)
        H0 = PauliHamiltonian(2, coeffs)
        path = euler_arnold_shoot(H0, PenaltyMetric(2, 1.0), cfg.unitary_steps)
        target = expm(-1j * H0.to_matrix())
        gap = float(np.linalg.norm(path.U[-1] - target))
        return gap < 1e-6, f"endpoint vs matrix exponential: {gap:.2e} (tol 1e-6)"

    def distance_quarter_pi():
        H = PauliHamiltonian.from_terms(1, {"X": math.pi / 4.0})
        target = UnitaryPoint.from_exponential(H)
        res = geodesic_distance(
            target,
            PenaltyMetric(1, 1.0),
            restarts=cfg.unitary_restarts,
            T=cfg.unitary_steps,
            seed=cfg.seed,
        )
        err = abs(res.d_est - math.pi / 4.0)
        return (
            res.converged and err < 1e-3,
            f"d = {res.d_est:.6f} vs pi/4 (err {err:.2e}, gap {res.gap:.2e})",
        )

    censuses = {}

    def census(n, q):
        key = (n, q)
        if key not in censuses:
            result = curvature_census(n, PenaltyMetric(n, q), cfg.unitary_samples, cfg.seed)
            write_csv(
                os.path.join(out, f"census_n{n}_q{q:g}.csv"),
                ("plane_id", "curvature"),
                list(enumerate(result.curvatures)),
            )
            censuses[key] = result
        return censuses[key]

    def census_q1_nonnegative():
        result = census(2, 1.0)
        cmin = min(result.curvatures)
        ok = result.fraction_negative == 0.0
        return ok, (
            f"fraction_negative = {result.fraction_negative:.4f}, "
            f"min curvature = {cmin:.4f} (unit costs: want none below -1e-10)"
        )

    def census_two_qubit_q64():
        r1 = census(2, 1.0)
        r64 = census(2, 64.0)
        same = np.array_equal(np.array(r64.curvatures), np.array(r1.curvatures))
        return same, (
            f"fraction_negative = {r64.fraction_negative:.4f} at n=2, q=64; "
            f"curvatures bitwise equal to q=1: {same} (every 2-qubit string is "
            f"local, so the penalty never engages below 3 qubits)"
        )

    def census_penalty_negativity():
        r1 = census(3, 1.0)
        r64 = census(3, 64.0)
        ok = r1.fraction_negative == 0.0 and r64.fraction_negative > 0.0
        return ok, (
            f"n=3: fraction_negative = {r64.fraction_negative:.4f} at q=64 vs "
            f"{r1.fraction_negative:.4f} at q=1 (min {min(r64.curvatures):.3f} "
            f"vs {min(r1.curvatures):.3f})"
        )

    _run_check(checks, "q1-matches-exponential", q1_exponential)
    _run_check(checks, "distance-pi-over-4", distance_quarter_pi)
    _run_check(checks, "census-q1-nonnegative", census_q1_nonnegative)
    _run_check(checks, "census-two-qubit-q64", census_two_qubit_q64)
    _run_check(checks, "census-penalty-negativity", census_penalty_negativity)
    return checks, inputs


_SUITES = {
    "lddmm": _suite_lddmm,
    "shooting": _suite_shooting,
    "ep": _suite_ep,
    "unitary": _suite_unitary,
}

SUITE_NAMES = tuple(_SUITES) + ("all",)


# ---------------------------------------------------------------------------
# Manifest and driver.
# ---------------------------------------------------------------------------

def _manifest_text(suite: str, cfg: ExperimentConfig, inputs, checks) -> str:
    lines = [
        "geoflow suite manifest",
        f"suite = {suite}",
        f"seed = {cfg.seed}",
        f"geoflow = {_version()}",
        f"numpy = {np.__version__}",
        f"scipy = {scipy.__version__}",
        "config:",
    ]
    lines += [f"  {line}" for line in render_config(cfg).strip().splitlines()]
    lines.append("inputs:")
    lines += [f"  {line}" for line in inputs]
    lines.append("checks:")
    for c in checks:
        lines.append(f"  {'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    n_pass = sum(1 for c in checks if c.passed)
    verdict = "PASS" if n_pass == len(checks) else "FAIL"
    lines.append(f"result = {verdict} ({n_pass}/{len(checks)} checks)")
    return "\n".join(lines) + "\n"


def _missing_inputs(i0_path, i1_path):
    return [p for p in (i0_path, i1_path) if p is not None and not os.path.exists(p)]


def _load_images(i0_path, i1_path):
    if i0_path is None or i1_path is None:
        return None
    return (
        (read_pgm(i0_path), read_pgm(i1_path)),
        [f"i0 = {i0_path}", f"i1 = {i1_path}"],
    )


def _run_single(name, cfg, out_dir, images):
    os.makedirs(out_dir, exist_ok=True)
    try:
        checks, inputs = _SUITES[name](cfg, out_dir, images)
    except GeoflowError as e:
        checks = [Check("suite-body", False, f"error: {e}")]
        inputs = []
    with open(os.path.join(out_dir, "manifest.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_manifest_text(name, cfg, inputs, checks))
    return checks


def run_suite(
    name: str,
    config: ExperimentConfig = None,
    out_dir: str = None,
    i0_path: str = None,
    i1_path: str = None,
    parallel: bool = False,
):
    """Run one named suite (or ``all``); returns ``(exit_code, out_dir)``."""
    if name not in SUITE_NAMES:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITE_NAMES)}")
    cfg = config if config is not None else ExperimentConfig()
    out_dir = out_dir if out_dir is not None else f"suite-{name}"
    os.makedirs(out_dir, exist_ok=True)

    missing = _missing_inputs(i0_path, i1_path)
    if missing:
        lines = ["geoflow suite manifest", f"suite = {name}", f"seed = {cfg.seed}", "checks:"]
        lines += [f"  FAIL missing-input: input image file not found: {p}" for p in missing]
        lines.append("result = FAIL (missing input)")
        with open(os.path.join(out_dir, "manifest.txt"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
        return 2, out_dir

    images = _load_images(i0_path, i1_path)

    if name != "all":
        checks = _run_single(name, cfg, out_dir, images)
        return (0 if all(c.passed for c in checks) else 1), out_dir

    subnames = tuple(_SUITES)
    subdirs = {sub: os.path.join(out_dir, sub) for sub in subnames}
    if parallel:
        with ThreadPoolExecutor(max_workers=len(subnames)) as pool:
            futures = {
                sub: pool.submit(_run_single, sub, cfg, subdirs[sub], images)
                for sub in subnames
            }
            results = {sub: futures[sub].result() for sub in subnames}
    else:
        results = {sub: _run_single(sub, cfg, subdirs[sub], images) for sub in subnames}

    lines = [
        "geoflow suite manifest",
        "suite = all",
        f"seed = {cfg.seed}",
        f"geoflow = {_version()}",
        f"numpy = {np.__version__}",
        f"scipy = {scipy.__version__}",
        "suites:",
    ]
    total = passed = 0
    for sub in subnames:
        checks = results[sub]
        n_pass = sum(1 for c in checks if c.passed)
        total += len(checks)
        passed += n_pass
        verdict = "PASS" if n_pass == len(checks) else "FAIL"
        lines.append(f"  {verdict} {sub} ({n_pass}/{len(checks)} checks, see {sub}/manifest.txt)")
    verdict = "PASS" if passed == total else "FAIL"
    lines.append(f"result = {verdict} ({passed}/{total} checks)")
    with open(os.path.join(out_dir, "manifest.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return (0 if passed == total else 1), out_dir
