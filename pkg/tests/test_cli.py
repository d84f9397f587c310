import csv
import json
import math
import subprocess
import sys

import pytest

from cwextrema.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), err


def test_regimes(capsys):
    code, doc, _ = run(capsys, "regimes", "--mu1", "1", "--mu2", "2", "--rho", "0.5")
    assert code == 0 and doc["verified"]
    assert doc["result"]["regime"] == "Between"
    assert doc["result"]["rho_hat2"] == 0.75
    assert doc["command"] == "regimes" and "version" in doc and doc["config"]["rho"] == 0.5


def test_regimes_equal_drift(capsys):
    _, doc, _ = run(capsys, "regimes", "--mu1", "1", "--mu2", "1", "--rho", "0")
    assert doc["result"]["regime"] == "EqualDriftZero"


def test_invalid_correlation_exit_code(capsys):
    code, doc, err = run(capsys, "regimes", "--mu1", "1", "--mu2", "2", "--rho", "2")
    assert code == 2 and doc is None
    assert json.loads(err)["error"] == "InvalidCorrelation"


def test_minimize_both(capsys):
    code, doc, _ = run(capsys, "minimize", "--mu1", "1", "--mu2", "2", "--rho", "-0.5", "--method", "both")
    assert code == 0
    res = doc["result"]
    assert res["closed"]["value"] == pytest.approx(16.0)
    assert res["numeric"]["value"] == pytest.approx(16.0, rel=1e-6)


def test_minimize_two_minimizers(capsys):
    _, doc, _ = run(capsys, "minimize", "--mu1", "1", "--mu2", "1", "--rho", "-0.5")
    assert len(doc["result"]["closed"]["minimizers"]) == 2


def test_minimize_curve(capsys):
    _, doc, _ = run(capsys, "minimize", "--mu1", "1", "--mu2", "2", "--rho", "0.9", "--method", "both")
    assert doc["result"]["closed"]["region"] == "Curve-g2"
    assert doc["result"]["numeric"]["region"] == "Curve-g2"
    assert doc["result"]["closed"]["value"] == 8.0


def test_asymptote(capsys):
    _, doc, _ = run(capsys, "asymptote", "--mu1", "1", "--mu2", "2", "--rho", "0", "--u", "1")
    res = doc["result"]
    assert (res["rate"], res["power"], res["constant"], res["exact"]) == (6.0, 0.0, 1.0, True)
    assert res["value"] == pytest.approx(0.00247875, rel=1e-5)


def test_asymptote_interval_and_injected(capsys):
    _, doc, _ = run(capsys, "asymptote", "--mu1", "1", "--mu2", "1", "--rho", "0.5", "--u", "2")
    assert doc["result"]["htilde_interval"][0] == pytest.approx(0.09375)
    _, doc, _ = run(capsys, "asymptote", "--mu1", "1", "--mu2", "1", "--rho", "0.5", "--u", "2", "--htilde", "2")
    assert "constant" in doc["result"]


def test_taylor_check(capsys, tmp_path):
    out = tmp_path / "t.csv"
    code, doc, _ = run(capsys, "taylor", "--mu1", "1", "--mu2", "2", "--rho", "0.5", "--check-fd", "--csv", str(out))
    # the CSV replaces the JSON document on stdout
    assert code == 0 and doc is None
    rows = list(csv.DictReader(out.open()))
    assert rows and rows[0]["config.rho"] == "0.5"


def test_constant_hmu(capsys):
    _, doc, _ = run(capsys, "constant", "hmu", "--mu", "1", "--T", "200")
    assert abs(doc["result"]["values"][0]["ratio"] - 1.0) < 0.05


def test_constant_htilde_small(capsys):
    code, doc, _ = run(
        capsys, "constant", "htilde", "--mu1", "1", "--mu2", "1", "--rho", "0.5",
        "--T", "2", "4", "--S", "1", "--n", "600", "--grid-step", "0.01", "--seed", "4",
    )
    assert doc["result"]["bound_check"]["lower"] == pytest.approx(0.09375)
    assert code == (0 if doc["result"]["bound_check"]["pass"] else 3)


def test_constant_wrong_regime(capsys):
    code, _, err = run(capsys, "constant", "hband", "--mu1", "1", "--mu2", "2", "--rho", "0", "--T", "1", "--n", "10")
    assert code == 2 and json.loads(err)["error"] == "UnsupportedRegime"


def test_simulate_tilt_reproducible(capsys):
    argv = ["simulate", "tilt", "--mu1", "1", "--mu2", "2", "--rho", "0", "--u", "1", "--n", "20000", "--seed", "7"]
    _, a, _ = run(capsys, *argv)
    _, b, _ = run(capsys, *argv, "--workers", "3")
    assert a["result"] == b["result"]
    est = a["result"]["estimates"][0]
    assert abs(est["mean"] - math.exp(-6)) < 4 * est["stderr"]


def test_config_file(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("mu1 = 1\nmu2 = 2\nrho = 0.75\n")
    _, doc, _ = run(capsys, "regimes", "--config", str(cfg))
    assert doc["result"]["regime"] == "AtRhoHat2"
    _, doc, _ = run(capsys, "regimes", "--config", str(cfg), "--rho", "0.9")
    assert doc["result"]["regime"] == "AboveRhoHat2"


def test_bad_config_key(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("nonsense = 1\n")
    code, _, _ = run(capsys, "regimes", "--config", str(cfg))
    assert code == 2


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "cwextrema", "regimes", "--mu1", "1", "--mu2", "3", "--rho", "0"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["result"]["rho_hat2"] == pytest.approx(2 / 3)
