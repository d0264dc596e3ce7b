import json
from pathlib import Path

import pytest

from errorcalc import cli

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run_json(capsys, *argv):
    code = cli.run(list(argv))
    out = capsys.readouterr().out
    return code, json.loads(out[out.index("{"):])


def test_fisher_normloc(capsys):
    code, rep = run_json(capsys, "fisher", "--config", str(CONFIGS / "normloc.cfg"))
    assert code == 0
    assert rep["J"] == pytest.approx(1.0, abs=1e-9)
    assert rep["method"] == "quadrature"
    assert rep["runtime_ms"] is None


def test_compare_bounds_at_quarter(capsys):
    code, rep = run_json(capsys, "compare-bounds", "--config", str(CONFIGS / "mixture.cfg"), "--a", "0.25")
    assert code == 0
    assert rep["gamma_psi"] == pytest.approx(1.0, abs=1e-12)
    assert rep["inv_fisher_Q"] > 1.0
    assert rep["strict"] is True


def test_image_closed_form(capsys):
    code, rep = run_json(capsys, "image", "--config", str(CONFIGS / "mixture.cfg"), "--a", "0.5")
    assert code == 0
    assert rep["estimate"] == pytest.approx(2.0, abs=1e-12)


def test_image_branch_config(capsys):
    code, rep = run_json(capsys, "image", "--config", str(CONFIGS / "branches.cfg"))
    assert code == 0
    assert rep["estimate"] == pytest.approx(1.0, abs=1e-8)


def test_jeffreys_and_propagate(capsys):
    code, _ = run_json(capsys, "jeffreys", "--config", str(CONFIGS / "scale.cfg"))
    assert code == 0
    code, _ = run_json(capsys, "propagate", "--config", str(CONFIGS / "scale.cfg"))
    assert code == 0


def test_product(capsys):
    code, _ = run_json(capsys, "product", "--config", str(CONFIGS / "product.cfg"))
    assert code == 0


def _write(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_missing_model_block_exit_1(tmp_path, capsys):
    code = cli.run(["fisher", "--config", _write(tmp_path, "prior.kind = uniform\n")])
    err = capsys.readouterr().err
    assert code == 1
    assert "model.family" in err and "exp.cfg" in err


def test_unknown_key_exit_1(tmp_path, capsys):
    code = cli.run(["fisher", "--config", _write(tmp_path, "model.family = normal-location\nmodel.colour = red\n")])
    assert code == 1
    assert "model.colour" in capsys.readouterr().err


def test_domain_error_exit_1(tmp_path, capsys):
    path = _write(tmp_path, "model.family = normal-location\nmodel.lower = -1\nmodel.upper = 1\nrun.theta = 3\n")
    assert cli.run(["fisher", "--config", path]) == 1


def test_numerical_error_exit_2(tmp_path, capsys):
    path = _write(tmp_path, "model.family = normal-location\nmodel.lower = -1\nmodel.upper = 1\npsi.map = square\n"
                            "run.a = 0.25\nrun.path = kernel-mc\nrun.n = 10000\nrun.bandwidth = 1e-7\n")
    assert cli.run(["image", "--config", path]) == 2


def test_bad_subcommand_exit_1(capsys):
    assert cli.run(["transmogrify"]) == 1


def test_config_required(capsys):
    assert cli.run(["fisher"]) == 1


def test_report_file_deterministic(tmp_path, capsys):
    cfg = _write(tmp_path, "model.family = normal-location\nrun.theta = 0.2\nrun.n = 200\nrun.reps = 300\n"
                           "run.seed = 5\nrun.kind = mle\n")
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert cli.run(["simulate", "--config", cfg, "--out", str(a)]) == 0
    assert cli.run(["simulate", "--config", cfg, "--out", str(b), "--workers", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()
    rep = json.loads(a.read_text())
    for key in ("target", "estimate", "std_err", "reference", "provenance", "seed", "runtime_ms"):
        assert key in rep


def test_csv_output(tmp_path, capsys):
    out = tmp_path / "grid.csv"
    assert cli.run(["compare-bounds", "--config", str(CONFIGS / "mixture.cfg"), "--format", "csv",
                    "--out", str(out)]) == 0
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 1 + 9
    assert "gamma_psi" in lines[0]


def test_timing_flag(capsys):
    code, rep = run_json(capsys, "fisher", "--config", str(CONFIGS / "normloc.cfg"), "--timing")
    assert code == 0 and rep["runtime_ms"] >= 0
