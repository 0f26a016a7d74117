import json
import math

import numpy as np
import pytest

from fractalcover import cli
from fractalcover import experiments as ex


# ---------------------------------------------------------------- configuration

@pytest.mark.parametrize("kw", [
    {"dim": 0}, {"replicates": 0}, {"seed": -1}, {"probe": "magic"}, {"tau": 1.5},
    {"lam": -0.1}, {"lam_grid": (0.5, 0.2)}, {"lam_grid": (0.2, 0.2)}, {"bracket": (2.0, 1.0)},
])
def test_invalid_configs(kw):
    with pytest.raises(ex.ConfigError):
        ex.ExperimentConfig(**kw)


def test_unknown_family_is_a_config_error():
    with pytest.raises(ex.ConfigError):
        ex.ExperimentConfig(family="torus").build_measure()


def test_probe_depth_and_seeds():
    c = ex.ExperimentConfig(N=3, L=5, seed=2)
    assert c.probe_depth == 15
    assert len({ex.replicate_seed(c, r) for r in range(100)}) == 100


# ---------------------------------------------------------------- validation

def test_validate_balls():
    rep = ex.validate_measure(ex.ExperimentConfig())
    assert rep["mu_A1"]["value"] == pytest.approx(math.pi * math.log(2), abs=1e-12)
    assert rep["lambda_e"]["value"] == pytest.approx(2 / math.pi, abs=1e-12)
    assert rep["thin"]["value"] is True
    assert rep["passed"]
    json.dumps(rep, default=float)


def test_validate_snowflake():
    rep = ex.validate_measure(ex.ExperimentConfig(family="snowflake"), k_max=12)
    assert rep["lambda_e"]["value"] == pytest.approx(20 / (3 * math.sqrt(3)), abs=1e-12)
    assert rep["thin"]["value"] is True
    assert rep["extracond"]["verdict"] == "finite"


@pytest.mark.slow
def test_validate_sieve():
    rep = ex.validate_measure(ex.ExperimentConfig(family="sieve"), k_max=12)
    assert rep["extracond"]["verdict"] == "divergent trend"
    checks = {c["check"]: c["passed"] for c in rep["checks"]}
    assert checks["boundaries have zero volume"]
    assert rep["thin"]["value"] is False


def test_validate_rational_flags_fat_boundary():
    rep = ex.validate_measure(ex.ExperimentConfig(family="rational"), k_max=10)
    checks = {c["check"]: c["passed"] for c in rep["checks"]}
    assert checks["boundaries have zero volume"] is False
    assert rep["extracond"]["verdict"] == "finite"
    assert rep["thinness"]["verdict"] == "divergent trend"


# ---------------------------------------------------------------- sweeps and bisection

def test_scan_grid_is_coupled():
    le = 2 / math.pi
    c = ex.ExperimentConfig(lam_grid=(0.0, 0.5 * le, 1.0 * le, 1.5 * le), n_max=4, N=3, L=4, replicates=12)
    res = ex.scan_lambda(c)
    surv = [r["survival"] for r in res["survival"]]
    assert surv[0] == 1.0
    assert all(a >= b for a, b in zip(surv, surv[1:]))
    zero = [r for r in res["boxes"] if r["lambda"] == 0.0]
    assert all(r["mean_m"] == 4 ** r["n"] for r in zero)
    assert all(r["exact_m"] <= r["exact_M"] for r in res["boxes"])


def test_scan_needs_grid():
    with pytest.raises(ex.ConfigError):
        ex.scan_lambda(ex.ExperimentConfig())


def test_small_bisection():
    c = ex.ExperimentConfig(N=3, L=4, replicates=12, steps=5)
    est = ex.estimate_critical(c)
    assert est.lo <= est.lam_hat <= est.hi
    assert est.lo >= 0.5 * est.reference and est.hi <= 2 * est.reference
    assert est.evaluations <= 12 * len(est.frequencies)
    json.dumps(est.as_json())


def test_bracket_error():
    c = ex.ExperimentConfig(N=2, L=3, replicates=8, bracket=(0.01, 0.02))
    with pytest.raises(ex.BracketError) as info:
        ex.estimate_critical(c)
    assert len(info.value.frequencies) == 2


def test_compare_needs_balls():
    with pytest.raises(ex.ConfigError):
        ex.compare_open_closed(ex.ExperimentConfig(family="snowflake"))


# ---------------------------------------------------------------- command line

def run(args, tmp_path, name="out"):
    out = tmp_path / name
    code = cli.main(args + ["--out", str(out)])
    return code, out


def test_cli_validate(tmp_path, capsys):
    code, out = run(["validate-measure", "--family", "ball", "--check"], tmp_path)
    assert code == 0
    assert (out / "validate.json").exists() and (out / "sequences.csv").exists()
    assert (out / "trends.csv").read_text().startswith("integral,k,value,lower,upper,method")
    assert "PASS" in capsys.readouterr().out


def test_cli_failed_check_exit_code(tmp_path):
    code, _ = run(["validate-measure", "--family", "rational", "--check"], tmp_path)
    assert code == 3


def test_cli_config_errors(tmp_path):
    assert run(["scan", "--lambda-grid", "0.5,0.1"], tmp_path)[0] == 2
    assert run(["scan", "--dim", "two", "--lambda-grid", "0.1"], tmp_path)[0] == 2
    assert run(["validate-measure", "--family", "torus"], tmp_path)[0] == 2
    assert run(["dump-realization"], tmp_path)[0] == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    assert run(["scan", "--config", str(bad)], tmp_path)[0] == 2


def test_cli_scan_is_byte_deterministic(tmp_path):
    args = ["scan", "--lambda-grid", "0,0.3,0.6", "--n", "3", "--bigN", "2", "--depth", "3",
            "--replicates", "4", "--seed", "7"]
    names = ("scan_boxes.csv", "scan_survival.csv", "scan.json")
    code, out = run(args, tmp_path)
    first = [(out / n).read_bytes() for n in names]
    assert code == 0 and run(args, tmp_path)[0] == 0
    assert [(out / n).read_bytes() for n in names] == first


def test_cli_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# small scan\nlambda-grid = 0,0.4\nn = 2\nbigN = 2\ndepth = 2\nreplicates = 3\n"
                   "param.parametrization = radius\n")
    code, out = run(["scan", "--config", str(cfg), "--replicates", "2"], tmp_path)
    assert code == 0
    echo = json.loads((out / "scan.json").read_text())["config"]
    assert echo["replicates"] == 2 and echo["lam_grid"] == [0.0, 0.4] and echo["n_max"] == 2


def test_cli_dump(tmp_path):
    code, out = run(["dump-realization", "--lambda", "0.3", "--n", "3"], tmp_path)
    assert code == 0
    lines = (out / "realization.jsonl").read_text().splitlines()
    assert json.loads(lines[0])["intensity"] == 0.3
    assert {"family", "band", "rho", "theta", "x"} == set(json.loads(lines[1]))


def test_cli_estimate_critical(tmp_path):
    code, out = run(["estimate-critical", "--bigN", "3", "--depth", "4", "--replicates", "10",
                     "--steps", "4", "--check"], tmp_path)
    assert code in (0, 3)
    data = json.loads((out / "critical.json").read_text())
    assert data["estimate"]["reference"] == pytest.approx(2 / math.pi)
    assert (out / "critical_probes.csv").read_text().startswith("lambda,survival")


def test_module_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "fractalcover", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "validate-measure" in res.stdout
