"""Command-line front door: parse configs, dispatch runs, serialize artifacts.

Every command writes its outputs (CSV/PGM/GFLD) into an artifact directory:
``--out`` if given, else the ``GEOFLOW_OUT`` environment variable, else the
working directory.  Output is deterministic for a fixed seed.  Exit codes:
0 success, 1 failure (including failed suite checks), 2 missing input file.
"""

import functools
import math
import os
import sys
from dataclasses import replace

import click
import numpy as np

from .config import ExperimentConfig, parse_config
from .ep import (
    EpConfig,
    QuadraticTeacherModel,
    ScalarToyModel,
    ep_update,
    exact_gradient,
    shooting_as_ep,
)
from .errors import GeoflowError
from .flow import svf_exp
from .grid import VectorField, warp
from .io import read_pgm, write_csv, write_gfld, write_pgm
from .kernel import KernelSpec
from .lddmm import LddmmProblem, register_lddmm
from .seeding import rng_for
from .shooting import flow_transform, match_by_shooting
from .suite import SUITE_NAMES, _smooth_noise_scalar, blob_pair, run_suite
from .svf import register_svf
from .unitary import (
    PauliHamiltonian,
    PenaltyMetric,
    UnitaryPoint,
    curvature_census,
    geodesic_distance,
)


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except GeoflowError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(1)

    return wrapper


def _require_file(path: str) -> None:
    if not os.path.exists(path):
        click.echo(f"error: input file not found: {path}", err=True)
        sys.exit(2)


def _load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    _require_file(path)
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def _resolve_out(out) -> str:
    base = out if out is not None else os.environ.get("GEOFLOW_OUT", ".")
    os.makedirs(base, exist_ok=True)
    return base


@click.group()
def main():
    """Geodesic flows on images and unitaries, with an equilibrium-propagation bridge."""


# ---------------------------------------------------------------------------
# geoflow register ...
# ---------------------------------------------------------------------------

@main.group()
def register():
    """Pairwise image registration (moving --i0 onto target --i1)."""


def _register_inputs(i0, i1, config_path):
    cfg = _load_config(config_path)
    _require_file(i0)
    _require_file(i1)
    return cfg, read_pgm(i0), read_pgm(i1)


_register_options = [
    click.option("--i0", required=True, type=click.Path(), help="Moving image (PGM)."),
    click.option("--i1", required=True, type=click.Path(), help="Target image (PGM)."),
    click.option("--config", "config_path", type=click.Path(), default=None),
    click.option("--out", type=click.Path(), default=None),
]


def _with_register_options(fn):
    for opt in reversed(_register_options):
        fn = opt(fn)
    return fn


def _echo_fit(res, outd, names):
    kin = getattr(res, "kinetic")
    data = getattr(res, "data")
    total = getattr(res, "energy", None)
    if total is None:
        total = res.objective
    click.echo(
        f"energy = {total:.6g} (kinetic {kin:.6g}, data {data:.6g}) "
        f"after {res.iterations} iterations, converged = {res.converged}"
    )
    click.echo(f"artifacts in {outd}: {', '.join(names)}")


@register.command("lddmm")
@_with_register_options
@_guarded
def register_lddmm_cmd(i0, i1, config_path, out):
    """Time-varying velocity registration."""
    cfg, I0, I1 = _register_inputs(i0, i1, config_path)
    outd = _resolve_out(out)
    k = KernelSpec(I0.grid, cfg.kernel_sigma)
    sigma = 1.0 / math.sqrt(cfg.match_weight)
    problem = LddmmProblem(I0, I1, k, sigma, cfg.flow_steps)
    res = register_lddmm(
        problem,
        max_iters=cfg.optimizer_max_iters,
        tol=cfg.optimizer_tol,
        step0=cfg.optimizer_step0,
    )
    write_csv(
        os.path.join(outd, "trace.csv"),
        ("iter", "energy", "kinetic", "data", "step"),
        res.trace,
    )
    write_pgm(os.path.join(outd, "warped.pgm"), res.warped)
    write_gfld(os.path.join(outd, "displacement.gfld"), res.g10.displacement)
    _echo_fit(res, outd, ("trace.csv", "warped.pgm", "displacement.gfld"))
    click.echo(f"diffeomorphic = {res.diffeomorphic}")


@register.command("shooting")
@_with_register_options
@_guarded
def register_shooting_cmd(i0, i1, config_path, out):
    """Initial-momentum registration (geodesic shooting)."""
    cfg, I0, I1 = _register_inputs(i0, i1, config_path)
    outd = _resolve_out(out)
    k = KernelSpec(I0.grid, cfg.kernel_sigma)
    res = match_by_shooting(
        I0,
        I1,
        k,
        cfg.match_weight,
        T=cfg.flow_steps,
        max_iters=cfg.optimizer_max_iters,
        tol=cfg.optimizer_tol,
        step0=cfg.optimizer_step0,
    )
    write_csv(
        os.path.join(outd, "trace.csv"),
        ("iter", "energy", "kinetic", "data", "step"),
        res.trace,
    )
    T = res.state.steps
    write_csv(
        os.path.join(outd, "kinetic.csv"),
        ("t", "kinetic_energy"),
        [(j / T, res.state.kinetic_energy(j)) for j in range(T + 1)],
    )
    write_pgm(os.path.join(outd, "warped.pgm"), res.state.I[-1])
    write_gfld(os.path.join(outd, "momentum.gfld"), res.P0)
    write_gfld(
        os.path.join(outd, "displacement.gfld"), flow_transform(res.state).displacement
    )
    _echo_fit(
        res, outd, ("trace.csv", "kinetic.csv", "warped.pgm", "momentum.gfld", "displacement.gfld")
    )


@register.command("svf")
@_with_register_options
@_guarded
def register_svf_cmd(i0, i1, config_path, out):
    """Stationary velocity field registration."""
    cfg, I0, I1 = _register_inputs(i0, i1, config_path)
    outd = _resolve_out(out)
    k = KernelSpec(I0.grid, cfg.kernel_sigma)
    res = register_svf(
        I0,
        I1,
        k,
        cfg.match_weight,
        max_iters=cfg.optimizer_max_iters,
        tol=cfg.optimizer_tol,
        step0=cfg.optimizer_step0,
    )
    if cfg.svf_squarings == 0:
        g10, warped = res.g10, res.warped
    else:
        g10 = svf_exp(VectorField(I0.grid, -res.v.values), cfg.svf_squarings)
        warped = warp(I0, g10)
    write_csv(
        os.path.join(outd, "trace.csv"),
        ("iter", "energy", "kinetic", "data", "step"),
        res.trace,
    )
    write_pgm(os.path.join(outd, "warped.pgm"), warped)
    write_gfld(os.path.join(outd, "displacement.gfld"), g10.displacement)
    write_gfld(os.path.join(outd, "velocity.gfld"), res.v)
    _echo_fit(res, outd, ("trace.csv", "warped.pgm", "displacement.gfld", "velocity.gfld"))


# ---------------------------------------------------------------------------
# geoflow ep ...
# ---------------------------------------------------------------------------

@main.group()
def ep():
    """Equilibrium-propagation demonstrations."""


@ep.command("demo")
@click.option(
    "--model",
    "model_name",
    type=click.Choice(["scalar", "quadratic", "shooting"]),
    default="quadratic",
    show_default=True,
)
@click.option(
    "--xi",
    "xis",
    multiple=True,
    type=float,
    help="Nudge size; repeat for a sweep (default 1e-1 1e-2 1e-3).",
)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None)
@_guarded
def ep_demo(model_name, xis, seed, out):
    """Two-phase EP estimates against the exact adjoint gradient."""
    outd = _resolve_out(out)
    xis = tuple(xis) if xis else (1e-1, 1e-2, 1e-3)
    rows = []
    if model_name == "shooting":
        I0, I1 = blob_pair(16, shift=2.0, width=2.0)
        k = KernelSpec(I0.grid, 2.0)
        P0 = _smooth_noise_scalar(I0.grid, k, rng_for(seed, "ep-demo-shooting"), 0.8)
        for xi in xis:
            report = shooting_as_ep(I0, I1, P0, k, T=8, xi=xi)
            rows.append((xi, report["error_norm"], report["cosine"]))
    else:
        delta = np.array([1.0])
        if model_name == "scalar":
            model = ScalarToyModel()
            rng = rng_for(seed, "ep-demo-scalar")
            theta = rng.standard_normal(1)
            v = rng.standard_normal(1)
            beta = np.array([0.25])
        else:
            model = QuadraticTeacherModel.random(6, 4, seed)
            rng = rng_for(seed, "ep-demo-quadratic")
            theta = rng.standard_normal(6)
            v = rng.standard_normal(4)
            beta = np.array([0.3])

        def cfg_for(xi):
            return EpConfig(
                delta=delta, xi=xi, relax_tol=1e-13, relax_max_iters=500000, relax_step=0.1
            )

        if model_name == "quadratic":
            exact = model.exact_cost_gradient(theta, beta, v)
        else:
            exact, _ = exact_gradient(model, theta, beta, delta, v, cfg_for(xis[0]))
        for xi in xis:
            upd = ep_update(model, theta, beta, v, cfg_for(xi))
            est = -upd.delta_theta
            err = float(np.linalg.norm(est - exact))
            cosine = float(est @ exact) / max(
                float(np.linalg.norm(est) * np.linalg.norm(exact)), 1e-300
            )
            rows.append((xi, err, cosine))
    write_csv(os.path.join(outd, "ep_demo.csv"), ("xi", "ep_error", "cosine"), rows)
    for xi, err, cosine in rows:
        click.echo(f"xi = {xi:g}: ep_error = {err:.6e}, cosine = {cosine:.6f}")
    click.echo(f"artifacts in {outd}: ep_demo.csv")


# ---------------------------------------------------------------------------
# geoflow unitary ...
# ---------------------------------------------------------------------------

@main.group()
def unitary():
    """Penalty-metric geometry on the unitary group."""


def _parse_complex(token: str) -> complex:
    return complex(token.replace("i", "j"))


def _load_target(target: str, n_opt):
    """Accept ``exp:<pauli-string>:<angle>`` or a text file of a+bi entries."""
    if target.startswith("exp:"):
        parts = target.split(":")
        if len(parts) != 3:
            click.echo(f"error: malformed target {target!r}; want exp:<paulis>:<angle>", err=True)
            sys.exit(1)
        label = parts[1].upper()
        try:
            angle = float(parts[2])
        except ValueError:
            click.echo(f"error: malformed angle in target {target!r}", err=True)
            sys.exit(1)
        n = len(label)
        if n_opt is not None and n_opt != n:
            click.echo(f"error: --n {n_opt} does not match target on {n} qubits", err=True)
            sys.exit(1)
        H = PauliHamiltonian.from_terms(n, {label: angle})
        return n, UnitaryPoint.from_exponential(H)
    _require_file(target)
    rows = []
    with open(target, "r", encoding="utf-8") as fh:
        for line in fh:
            tokens = line.split()
            if tokens:
                try:
                    rows.append([_parse_complex(t) for t in tokens])
                except ValueError:
                    click.echo(f"error: {target}: malformed complex entry in {line!r}", err=True)
                    sys.exit(1)
    M = np.array(rows, dtype=np.complex128)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 2:
        click.echo(f"error: {target}: expected a square complex matrix, got shape {M.shape}", err=True)
        sys.exit(1)
    n = int(round(math.log2(M.shape[0])))
    if 2 ** n != M.shape[0]:
        click.echo(f"error: {target}: matrix dimension {M.shape[0]} is not a power of 2", err=True)
        sys.exit(1)
    if n_opt is not None and n_opt != n:
        click.echo(f"error: --n {n_opt} does not match target on {n} qubits", err=True)
        sys.exit(1)
    return n, UnitaryPoint(n, M)


@unitary.command("distance")
@click.option("--target", required=True, help="exp:<paulis>:<angle> or a matrix file of a+bi rows.")
@click.option("--n", type=int, default=None, help="Qubit count (inferred from the target if omitted).")
@click.option("--q", type=float, default=100.0, show_default=True)
@click.option("--restarts", type=int, default=4, show_default=True)
@click.option("--steps", type=int, default=64, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None)
@_guarded
def unitary_distance(target, n, q, restarts, steps, seed, out):
    """Geodesic distance from the identity to a target unitary."""
    outd = _resolve_out(out)
    n, U = _load_target(target, n)
    res = geodesic_distance(
        U, PenaltyMetric(n, q), restarts=restarts, T=steps, seed=seed
    )
    write_csv(
        os.path.join(outd, "distance.csv"),
        ("restart", "length", "gap"),
        [(i, L, G) for i, (L, G) in enumerate(zip(res.lengths, res.gaps))],
    )
    click.echo(f"artifacts in {outd}: distance.csv")
    if not res.converged:
        click.echo(
            f"error: no restart reached the target (best endpoint gap {res.gap:.3e})",
            err=True,
        )
        sys.exit(1)
    click.echo(f"distance = {res.d_est:.12g} (endpoint gap {res.gap:.3e}, n={n}, q={q:g})")


@unitary.command("curvature")
@click.option("--n", type=int, default=2, show_default=True)
@click.option("--q", type=float, default=100.0, show_default=True)
@click.option("--samples", type=int, default=500, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None)
@_guarded
def unitary_curvature(n, q, samples, seed, out):
    """Sectional-curvature census over random tangent planes."""
    outd = _resolve_out(out)
    result = curvature_census(n, PenaltyMetric(n, q), samples, seed)
    write_csv(
        os.path.join(outd, "curvature.csv"),
        ("plane_id", "curvature"),
        list(enumerate(result.curvatures)),
    )
    click.echo(
        f"{samples} planes at n={n}, q={q:g}: fraction_negative = "
        f"{result.fraction_negative:.4f}, range [{result.curvatures.min():.6g}, "
        f"{result.curvatures.max():.6g}]"
    )
    click.echo(f"artifacts in {outd}: curvature.csv")


# ---------------------------------------------------------------------------
# geoflow suite ...
# ---------------------------------------------------------------------------

@main.command("suite")
@click.argument("name", type=click.Choice(SUITE_NAMES))
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", type=click.Path(), default=None)
@click.option("--i0", type=click.Path(), default=None, help="Optional input pair for the registration suites.")
@click.option("--i1", type=click.Path(), default=None)
@click.option("--parallel", is_flag=True, help="Run independent suite entries concurrently.")
@_guarded
def suite_cmd(name, seed, config_path, out, i0, i1, parallel):
    """Run a named check suite; exit 0 only if every check passes."""
    cfg = _load_config(config_path)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    out_dir = (
        out
        if out is not None
        else os.path.join(os.environ.get("GEOFLOW_OUT", "."), f"suite-{name}")
    )
    code, where = run_suite(
        name, cfg, out_dir, i0_path=i0, i1_path=i1, parallel=parallel
    )
    manifest = os.path.join(where, "manifest.txt")
    with open(manifest, "r", encoding="utf-8") as fh:
        result_line = fh.read().strip().splitlines()[-1]
    click.echo(f"{result_line}  [{manifest}]")
    sys.exit(code)


if __name__ == "__main__":
    main()
