import json

import numpy as np
import pytest

from pclmi.cli import main
from pclmi.sysmodel import bundled_model


def run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


def read(tmp_path, name):
    return json.loads((tmp_path / name).read_text())


def test_max_alpha(tmp_path):
    assert run(tmp_path, "analyze", "scalar_stable", "--max-alpha", "--order", "1") == 0
    doc = read(tmp_path, "analysis.json")
    assert doc["alpha"] == pytest.approx(2 - 3**-0.5, abs=1e-4)
    assert doc["method"] == "pc" and doc["order"] == 1
    for key in ("version", "config", "seed", "tolerances"):
        assert key in doc


def test_analyze_infeasible_and_mc(tmp_path):
    assert run(tmp_path, "analyze", "scalar_growth", "--alpha", "0.1") == 2
    assert read(tmp_path, "analysis.json")["feasible"] is False
    assert run(tmp_path, "analyze", "scalar_stable", "--mc", "--samples", "50", "--alpha", "0.9") == 0
    assert read(tmp_path, "analysis.json")["samples"] == 50


def test_analyze_f16(tmp_path):
    assert run(tmp_path, "analyze", str(bundled_model("f16")), "--order", "3", "--alpha", "0.5") in (0, 2)
    assert (tmp_path / "analysis.json").exists()


def test_missing_file(tmp_path, capsys):
    assert run(tmp_path, "analyze", "does/not/exist.json") == 1
    assert "does/not/exist.json" in capsys.readouterr().err


def test_bad_flags(tmp_path):
    assert run(tmp_path, "analyze", "scalar_stable", "--order", "-1") == 1
    assert run(tmp_path, "bogus") == 1
    assert run(tmp_path, "synthesize", "scalar_stable", "--alpha", "0") == 1


def test_synthesize_optimal_scalar(tmp_path):
    assert run(tmp_path, "synthesize", "det_scalar", "--optimal") == 0
    doc = read(tmp_path, "gain.json")
    assert doc["K"][0][0] == pytest.approx(-1.0, abs=1e-4)
    assert doc["recertification"]["passed"] is True


def test_optimal_without_weights(tmp_path):
    path = tmp_path / "sys.json"
    path.write_text(json.dumps({"n": 1, "m": 1, "A": [{"matrix": [[-1]]}], "B": [{"matrix": [[1]]}]}))
    assert run(tmp_path, "synthesize", str(path), "--optimal") == 1


def test_synthesize_f16(tmp_path):
    assert run(tmp_path, "synthesize", "f16", "--order", "2", "--optimal") == 0
    doc = read(tmp_path, "gain.json")
    assert np.array(doc["K"]).shape == (2, 5) and doc["p_star_norm"] > 0


def test_convergence_single_order(tmp_path):
    code = run(tmp_path, "convergence", "f16", "--orders", "1..1", "--sizes", "5", "--repeats", "2", "--no-timing")
    assert code == 0
    rows = (tmp_path / "pc_sweep.csv").read_text().splitlines()
    assert rows[0] == "order,problem_size,p_star_norm,solve_seconds" and len(rows) == 2
    mc = (tmp_path / "mc_sweep.csv").read_text().splitlines()
    assert mc[0] == "samples,repeat,seed,p_star_norm,solve_seconds" and len(mc) == 3


def test_simulate_paths(tmp_path):
    assert run(tmp_path, "simulate", "scalar_growth", "--open-loop", "--horizon", "1", "--order", "2") == 0
    head = (tmp_path / "moments.csv").read_text().splitlines()[0]
    assert head == "t,empirical,pc,bound"
    assert run(tmp_path, "simulate", "scalar_growth", "--open-loop", "--dt", "0") == 1
    assert run(tmp_path, "synthesize", "det_scalar", "--optimal") == 0
    assert run(tmp_path, "simulate", "det_scalar", "--gain", str(tmp_path / "gain.json"), "--horizon", "2") == 0
    assert read(tmp_path, "simulation.json")["verification"]["passed"] is True


def test_simulate_missing_gain(tmp_path):
    assert run(tmp_path, "simulate", "det_scalar", "--gain", str(tmp_path / "none.json")) == 1
