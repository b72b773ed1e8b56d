"""Command-line interface: exit codes, artifacts, output format."""

import csv
import math

import numpy as np
import pytest
from click.testing import CliRunner

from geoflow import blob_pair, write_pgm
from geoflow.cli import main


def read_csv(path):
    with open(path, newline="", encoding="ascii") as fh:
        rows = list(csv.reader(fh))
    return tuple(rows[0]), [tuple(float(c) for c in row) for row in rows[1:]]


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def image_pair(tmp_path):
    I0, I1 = blob_pair(16, 2.0, 2.0, peak=3.0)
    p0 = str(tmp_path / "i0.pgm")
    p1 = str(tmp_path / "i1.pgm")
    write_pgm(p0, I0)
    write_pgm(p1, I1)
    return p0, p1


def combined(result):
    text = result.output
    try:
        text += result.stderr
    except (ValueError, AttributeError):
        pass
    return text


def write_config(tmp_path, body):
    path = tmp_path / "run.cfg"
    path.write_text(body, encoding="utf-8")
    return str(path)


def test_help_lists_commands(runner):
    res = runner.invoke(main, ["--help"])
    assert res.exit_code == 0
    for name in ("register", "ep", "unitary", "suite"):
        assert name in res.output


def test_register_lddmm_writes_artifacts(runner, tmp_path, image_pair):
    p0, p1 = image_pair
    cfg = write_config(tmp_path, "flow.steps = 8\noptimizer.max_iters = 30\n")
    out = tmp_path / "fit"
    res = runner.invoke(
        main,
        ["register", "lddmm", "--i0", p0, "--i1", p1, "--config", cfg, "--out", str(out)],
    )
    assert res.exit_code == 0, combined(res)
    assert "energy =" in res.output
    assert "diffeomorphic = True" in res.output
    for name in ("trace.csv", "warped.pgm", "displacement.gfld"):
        assert (out / name).exists()
    header, rows = read_csv(str(out / "trace.csv"))
    assert header == ("iter", "energy", "kinetic", "data", "step")
    energies = [r[1] for r in rows]
    assert energies == sorted(energies, reverse=True)


def test_register_shooting_writes_artifacts(runner, tmp_path, image_pair):
    p0, p1 = image_pair
    cfg = write_config(tmp_path, "flow.steps = 8\noptimizer.max_iters = 5\n")
    out = tmp_path / "fit"
    res = runner.invoke(
        main,
        ["register", "shooting", "--i0", p0, "--i1", p1, "--config", cfg, "--out", str(out)],
    )
    assert res.exit_code == 0, combined(res)
    names = ("trace.csv", "kinetic.csv", "warped.pgm", "momentum.gfld", "displacement.gfld")
    for name in names:
        assert (out / name).exists()
    header, rows = read_csv(str(out / "kinetic.csv"))
    assert header == ("t", "kinetic_energy")
    assert len(rows) == 9  # one row per time node
    assert rows[0][0] == 0.0 and rows[-1][0] == 1.0
    kinetics = np.array([r[1] for r in rows])
    # kinetic energy along the shot path is conserved to discretization error
    assert np.max(np.abs(kinetics - kinetics[0])) <= 0.05 * abs(kinetics[0])


def test_register_svf_writes_artifacts(runner, tmp_path, image_pair):
    p0, p1 = image_pair
    cfg = write_config(
        tmp_path, "optimizer.max_iters = 30\nsvf.squarings = 5\n"
    )
    out = tmp_path / "fit"
    res = runner.invoke(
        main,
        ["register", "svf", "--i0", p0, "--i1", p1, "--config", cfg, "--out", str(out)],
    )
    assert res.exit_code == 0, combined(res)
    for name in ("trace.csv", "warped.pgm", "displacement.gfld", "velocity.gfld"):
        assert (out / name).exists()


def test_register_missing_input_exits_2(runner, tmp_path, image_pair):
    _, p1 = image_pair
    res = runner.invoke(
        main,
        ["register", "lddmm", "--i0", str(tmp_path / "absent.pgm"), "--i1", p1],
    )
    assert res.exit_code == 2
    assert "not found" in combined(res)


def test_register_bad_config_exits_1(runner, tmp_path, image_pair):
    p0, p1 = image_pair
    cfg = write_config(tmp_path, "kernel.sigma = 0\n")
    res = runner.invoke(
        main, ["register", "lddmm", "--i0", p0, "--i1", p1, "--config", cfg]
    )
    assert res.exit_code == 1
    assert "error:" in combined(res)


def test_ep_demo_reports_sweep(runner, tmp_path):
    out = tmp_path / "demo"
    res = runner.invoke(
        main,
        ["ep", "demo", "--model", "scalar", "--xi", "1e-2", "--xi", "1e-3", "--out", str(out)],
    )
    assert res.exit_code == 0, combined(res)
    header, rows = read_csv(str(out / "ep_demo.csv"))
    assert header == ("xi", "ep_error", "cosine")
    assert [r[0] for r in rows] == [1e-2, 1e-3]
    assert rows[1][1] < rows[0][1]  # smaller nudge, smaller error
    assert all(r[2] > 0.99 for r in rows)


def test_unitary_distance_single_rotation(runner, tmp_path):
    out = tmp_path / "dist"
    res = runner.invoke(
        main,
        [
            "unitary", "distance",
            "--target", "exp:X:0.7853981633974483",
            "--q", "1", "--restarts", "2", "--steps", "16", "--out", str(out),
        ],
    )
    assert res.exit_code == 0, combined(res)
    line = next(l for l in res.output.splitlines() if l.startswith("distance ="))
    value = float(line.split()[2])
    assert abs(value - math.pi / 4.0) < 1e-3
    header, rows = read_csv(str(out / "distance.csv"))
    assert header == ("restart", "length", "gap")
    assert len(rows) == 2


def test_unitary_distance_matrix_file(runner, tmp_path):
    target = tmp_path / "target.txt"
    target.write_text("1+0i 0+0i\n0+0i 1+0i\n", encoding="utf-8")
    res = runner.invoke(
        main,
        [
            "unitary", "distance",
            "--target", str(target),
            "--q", "1", "--restarts", "1", "--steps", "8",
            "--out", str(tmp_path / "dist"),
        ],
    )
    assert res.exit_code == 0, combined(res)
    line = next(l for l in res.output.splitlines() if l.startswith("distance ="))
    assert float(line.split()[2]) < 1e-6


def test_unitary_distance_malformed_target_exits_1(runner, tmp_path):
    res = runner.invoke(
        main,
        ["unitary", "distance", "--target", "exp:X", "--out", str(tmp_path)],
    )
    assert res.exit_code == 1
    assert "malformed" in combined(res)


def test_unitary_curvature_census(runner, tmp_path):
    out = tmp_path / "census"
    res = runner.invoke(
        main,
        ["unitary", "curvature", "--n", "2", "--q", "1", "--samples", "100", "--out", str(out)],
    )
    assert res.exit_code == 0, combined(res)
    assert "fraction_negative = 0.0000" in res.output
    header, rows = read_csv(str(out / "curvature.csv"))
    assert header == ("plane_id", "curvature")
    assert len(rows) == 100
    assert min(r[1] for r in rows) >= -1e-10


def test_suite_command_passes_and_writes_manifest(runner, tmp_path):
    out = tmp_path / "suite"
    res = runner.invoke(main, ["suite", "lddmm", "--seed", "0", "--out", str(out)])
    assert res.exit_code == 0, combined(res)
    assert "result = PASS" in res.output
    manifest = (out / "manifest.txt").read_text(encoding="utf-8")
    assert manifest.strip().splitlines()[-1].startswith("result = PASS")


def test_suite_rejects_unknown_name(runner):
    res = runner.invoke(main, ["suite", "nonsense"])
    assert res.exit_code == 2
    assert "Invalid value" in combined(res)
