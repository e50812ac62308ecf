import json
import os
import subprocess
import sys

import numpy as np
import pytest

from cfm import io as cfm_io
from cfm.cli import main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def phantom(tmp_path):
    path = tmp_path / "ph.img"
    assert run("phantom", "--side", 16, "--beads", 3, "--flux", 500, "--out", path) == 0
    return path


def test_phantom_flux_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a.img", tmp_path / "b.img"
    assert run("phantom", "--side", 256, "--beads", 50, "--fwhm", 3, "--flux", 6400,
               "--out", a) == 0
    out = capsys.readouterr().out
    assert "total_flux=6400.000000" in out and "sha256=" in out
    assert cfm_io.read_image(a).sum() == pytest.approx(6400)
    run("phantom", "--side", 256, "--beads", 50, "--fwhm", 3, "--flux", 6400, "--out", b)
    assert a.read_bytes() == b.read_bytes()


def test_usage_errors(tmp_path):
    assert run("phantom", "--beads", 0, "--out", tmp_path / "x.img") == 1
    assert run("phantom", "--side", 16) == 1
    assert run("phantom", "--bogus") == 1
    assert run() == 1


def test_io_error_exit_code(tmp_path):
    assert run("phantom", "--side", 16, "--out", tmp_path / "no" / "dir" / "x.img") == 2
    assert run("acquire", "--image", tmp_path / "missing.img", "--strategy", "full",
               "--out", tmp_path / "m.csv", "--selection", tmp_path / "s.json") == 2


def test_acquire_full_and_halfhalf(tmp_path, phantom, capsys):
    m, s = tmp_path / "m.csv", tmp_path / "s.json"
    assert run("acquire", "--image", phantom, "--strategy", "full", "--out", m,
               "--selection", s) == 0
    assert "undersampling_ratio=1" in capsys.readouterr().out
    assert len(m.read_text().splitlines()) == 257
    assert run("acquire", "--image", phantom, "--strategy", "halfhalf", "--m", 7,
               "--out", m, "--selection", s) == 1
    assert run("acquire", "--image", phantom, "--ratio", 1000, "--out", m,
               "--selection", s) == 1
    assert run("acquire", "--image", phantom, "--out", m, "--selection", s) == 1


def test_acquire_is_reproducible(tmp_path, phantom):
    outs = []
    for tag in "ab":
        m, s = tmp_path / f"{tag}.csv", tmp_path / f"{tag}.json"
        run("acquire", "--image", phantom, "--ratio", 4, "--noise", "poisson", "--seed", 9,
            "--out", m, "--selection", s)
        outs.append((m.read_bytes(), s.read_bytes()))
    assert outs[0] == outs[1]


def test_round_trip_reports_infinite_psnr(tmp_path, phantom):
    m, s = tmp_path / "m.csv", tmp_path / "s.json"
    run("acquire", "--image", phantom, "--strategy", "full", "--noise", "none",
        "--out", m, "--selection", s)
    solve = ("reconstruct", "--measurements", m, "--selection", s, "--alpha", 1e9,
             "--rel-tol", 1e-14, "--max-iters", 5000)
    first, second = tmp_path / "a.img", tmp_path / "b.img"
    assert run(*solve, "--ref", phantom, "--out", first) == 0
    assert json.loads((tmp_path / "a.img.metrics.json").read_text())["psnr_db"] > 100
    # a rerun is bit-identical, so the error is exactly zero
    assert run(*solve, "--ref", first, "--out", second) == 0
    text = (tmp_path / "b.img.metrics.json").read_text()
    assert json.loads(text)["psnr_db"] == "inf"
    assert text.endswith("\n")


def test_reconstruct_echoes_basis_and_writes_trace(tmp_path, phantom):
    m, s, out = tmp_path / "m.csv", tmp_path / "s.json", tmp_path / "r.img"
    run("acquire", "--image", phantom, "--ratio", 2, "--out", m, "--selection", s)
    assert run("reconstruct", "--measurements", m, "--selection", s, "--basis", "wavelet",
               "--filter", "haar", "--levels", 3, "--max-iters", 50, "--out", out,
               "--figure", tmp_path / "r.png") == 0
    metrics = json.loads((tmp_path / "r.img.metrics.json").read_text())
    assert (metrics["basis"], metrics["filter"], metrics["levels"]) == ("wavelet", "haar", 3)
    trace = (tmp_path / "r.img.trace.csv").read_text()
    assert trace.startswith("iteration,objective\n") and trace.endswith("\n")
    assert (tmp_path / "r.png").stat().st_size > 0


def test_reconstruct_rejects_foreign_selection(tmp_path, phantom):
    m1, s1 = tmp_path / "m1.csv", tmp_path / "s1.json"
    m2, s2 = tmp_path / "m2.csv", tmp_path / "s2.json"
    run("acquire", "--image", phantom, "--ratio", 2, "--seed", 1, "--out", m1, "--selection", s1)
    run("acquire", "--image", phantom, "--ratio", 2, "--seed", 2, "--out", m2, "--selection", s2)
    assert run("reconstruct", "--measurements", m1, "--selection", s2,
               "--out", tmp_path / "r.img") == 3


def test_config_file_and_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"side": 16, "beads": 2, "flux": 100.0}))
    a = tmp_path / "a.img"
    assert run("--config", cfg, "phantom", "--out", a) == 0
    assert cfm_io.read_image(a).shape == (16, 16)
    assert cfm_io.read_image(a).sum() == pytest.approx(100.0)
    assert run("--config", cfg, "phantom", "--flux", 300, "--out", a) == 0
    assert cfm_io.read_image(a).sum() == pytest.approx(300.0)
    cfg.write_text(json.dumps({"sides": 16}))
    assert run("--config", cfg, "phantom", "--out", a) == 1


def test_hyper_pipeline(tmp_path, capsys):
    cube, m, s, out = (tmp_path / n for n in ("c.cube", "m.csv", "s.json", "r.cube"))
    assert run("hyper-phantom", "--side", 16, "--beads", 3, "--n-lambda", 16, "--out", cube) == 0
    assert run("hyper-acquire", "--cube", cube, "--ratio", 2, "--out", m, "--selection", s) == 0
    assert m.read_text().splitlines()[0].startswith("pattern_index,value_0,value_1")
    assert run("hyper-reconstruct", "--measurements", m, "--selection", s, "--levels", 2,
               "--max-iters", 100, "--ref", cube, "--out", out,
               "--figure", tmp_path / "bands.png") == 0
    rec = cfm_io.read_cube(out)
    np.testing.assert_allclose(rec.lambda_axis, cfm_io.read_cube(cube).lambda_axis)
    metrics = json.loads((tmp_path / "r.cube.metrics.json").read_text())
    assert set(metrics["band_psnr_db"]) == {"blue", "green", "red"}


def test_sweep_writes_csv_and_figure(tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    assert run("sweep", "--side", 16, "--beads", 3, "--flux", 200, "--ratios", 2, 4,
               "--scales", 1, 0.1, "--seeds", 2, "--max-iters", 50, "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "undersampling_ratio,illumination_scale,psnr_db,seed"
    assert len(lines) == 1 + 2 * 2 * 2
    assert (tmp_path / "sweep.png").stat().st_size > 0
    assert capsys.readouterr().out.count("median_psnr_db=") == 4


def test_noise_study_pass_scaling_background(tmp_path, capsys):
    a, b, c = (tmp_path / f"{n}.csv" for n in "abc")
    assert run("noise-study", "--side", 8, "--trials", 20000, "--out", a) == 0
    assert capsys.readouterr().out.strip().endswith("PASS")
    assert (tmp_path / "a.png").exists()
    run("noise-study", "--side", 8, "--trials", 2000, "--scale", 10, "--out", b, "--no-figure")
    run("noise-study", "--side", 8, "--trials", 2000, "--background", 2, "--out", c,
        "--no-figure")
    assert not (tmp_path / "b.png").exists()
    th = [np.array([float(r[3]) for r in cfm_io.read_csv(p)[1]]) for p in (a, b, c)]
    np.testing.assert_allclose(th[1], th[0] / 10)
    np.testing.assert_allclose(th[2][1:] - th[0][1:], 2 * 2 * (1 + 1 / 64))
    assert run("noise-study", "--side", 128, "--out", a) == 1


def test_console_script_help():
    env = dict(os.environ)
    proc = subprocess.run([sys.executable, "-m", "cfm.cli", "--help"], capture_output=True,
                          text=True, env=env)
    assert proc.returncode == 0 and "noise-study" in proc.stdout
