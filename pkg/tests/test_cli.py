import json

import numpy as np
import pytest

from gaussholo import io as hio
from gaussholo.cli import main
from gaussholo.field import ComplexField
from gaussholo.propagation import PropagationSpec, propagate


@pytest.fixture
def run_dir(tmp_path):
    rng = np.random.default_rng(0)
    hio.save_image(tmp_path / "img.png", rng.uniform(0.1, 0.9, (1, 24, 32)))
    (tmp_path / "run.toml").write_text(
        '[input]\nimage = "img.png"\n[image]\nchannels = 1\n[gaussians]\ncount = 15\n'
        '[planes]\nspacing = 2e-3\n[train]\nsteps = 50\noutput_dir = "out"\nlog_every = 1\n'
        '[convert]\nsteps = 2\n'
    )
    return tmp_path


def test_train_and_metrics(run_dir, capsys):
    assert main(["-q", "train", "--config", str(run_dir / "run.toml"), "--steps", "2", "--seed", "3"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert "mean_psnr" in report
    run = json.loads((run_dir / "out/run.json").read_text())
    assert run["config"]["seed"] == 3 and run["config"]["steps"] == 2
    assert main(["metrics", "--recon", str(run_dir / "out"), "--target", str(run_dir / "img.png")]) == 0
    m = json.loads(capsys.readouterr().out)
    assert m["files"] == ["recon_plane1.png", "recon_plane2.png"]


def test_convert_modes(run_dir, capsys):
    main(["-q", "train", "--config", str(run_dir / "run.toml"), "--steps", "1"])
    capsys.readouterr()
    field = str(run_dir / "out/field.cghf")
    assert main(["convert", "--mode", "smooth", "--input", field, "--output", str(run_dir / "s")]) == 0
    assert json.loads(capsys.readouterr().out)["kind"] == "smooth"
    assert (run_dir / "s/poh_smooth.png").exists()
    phase = hio.load_phase_png(run_dir / "s/poh_smooth.png")
    assert phase.shape == (1, 24, 32)
    assert main(["-q", "convert", "--mode", "random", "--input", field, "--output", str(run_dir / "r"),
                 "--config", str(run_dir / "run.toml")]) == 0
    assert json.loads(capsys.readouterr().out)["kind"] == "random"
    with pytest.raises(SystemExit):
        main(["convert", "--mode", "random", "--input", field, "--output", str(run_dir / "r")])


def test_propagate(tmp_path):
    u = ComplexField.from_complex(np.random.default_rng(1).normal(size=(1, 16, 16)) + 0j)
    hio.save_field(tmp_path / "u.cghf", u)
    assert main(["propagate", "--input", str(tmp_path / "u.cghf"), "--output", str(tmp_path / "v.cghf"),
                 "--distance", "2e-3", "--intensity-png", str(tmp_path / "v.png")]) == 0
    v = hio.load_field(tmp_path / "v.cghf")
    ref = propagate(u, PropagationSpec((532e-9,)), 2e-3)
    assert np.array_equal(v.real, ref.real)
    assert (tmp_path / "v.png").exists()


def test_errors_return_nonzero(tmp_path, capsys):
    assert main(["propagate", "--input", str(tmp_path / "nope.cghf"), "--output", str(tmp_path / "x"),
                 "--distance", "1e-3"]) == 1
    assert "error" in capsys.readouterr().err
    (tmp_path / "bad.cghf").write_bytes(b"CGHF\x02\x00")
    assert main(["convert", "--mode", "smooth", "--input", str(tmp_path / "bad.cghf"),
                 "--output", str(tmp_path / "o")]) == 1


def test_threads_beyond_limit(run_dir):
    assert main(["-q", "train", "--config", str(run_dir / "run.toml"), "--threads", "4096"]) == 1


def test_oracle_command(capsys):
    assert main(["oracle", "--trials", "2"]) == 0
    worst = json.loads(capsys.readouterr().out)["max_abs_error"]
    assert worst["raster"] <= 1e-6 and worst["propagation"] <= 1e-5
