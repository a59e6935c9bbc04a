import csv
import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from dynpanel.cli import main
from dynpanel.dgp import PanelData, read_panel_csv, write_panel_csv
from dynpanel.kernels import sample_orthogonal

ROOT = Path(__file__).parents[1]
CONFIGS = ROOT / "configs"
FIX = Path(__file__).parent / "fixtures"


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def sim_cfg(**dgp):
    base = {"rho_star": 0.5, "sigma2_star": 1.0, "N": 120, "T": 4, "seed": 5}
    base.update(dgp)
    return {"schema_version": 1, "dgp": base}


def test_simulate_shape_and_manifest(tmp_path, capsys):
    cfg = write(tmp_path, "s.json", sim_cfg())
    assert main(["simulate", cfg, "--output-dir", str(tmp_path / "o")]) == 0
    rows = list(csv.reader((tmp_path / "o" / "panel.csv").open()))
    assert len(rows) == 121 and len(rows[0]) == 4 + 2
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["command"] == "simulate" and man["master_seed"] == 5
    assert man["versions"]["config_schema"] == 1
    assert "panel.csv" in capsys.readouterr().out


def test_simulate_is_byte_identical(tmp_path):
    cfg = write(tmp_path, "s.json", sim_cfg())
    for d in ("a", "b"):
        main(["simulate", cfg, "--output-dir", str(tmp_path / d)])
    for name in ("panel.csv", "panel.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_flag_overrides(tmp_path):
    cfg = write(tmp_path, "s.json", sim_cfg())
    main(["simulate", cfg, "--output-dir", str(tmp_path / "a")])
    main(["--seed", "99", "simulate", cfg, "--output-dir", str(tmp_path / "b")])
    assert (tmp_path / "a" / "panel.csv").read_bytes() != (tmp_path / "b" / "panel.csv").read_bytes()
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["master_seed"] == 99


def test_stationary_unit_root_is_config_error(tmp_path, capsys):
    cfg = write(tmp_path, "s.json", sim_cfg(rho_star=1.0, init_regime={"kind": "stationary"}))
    assert main(["simulate", cfg, "--output-dir", str(tmp_path)]) == 2
    assert "|rho_star| < 1" in capsys.readouterr().err


@pytest.mark.parametrize("text,needle", [
    ('{"schema_version": 1,\n "dgp": {"rho_star": 0.5,, }}', "line 2"),
    ('{"schema_version": 1, "dgp": {"rho_star": 0.5, "sigma2_star": 1, "N": 10}}', "dgp.T"),
    ('{"schema_version": 2, "dgp": {}}', "schema_version"),
    ('{"schema_version": 1, "dgp": {"rho_star": 0.5, "sigma2_star": 1, "N": 10, "T": 3, "bogus": 1}}', "bogus"),
])
def test_config_diagnostics(tmp_path, capsys, text, needle):
    p = tmp_path / "bad.json"
    p.write_text(text)
    assert main(["simulate", str(p), "--output-dir", str(tmp_path)]) == 2
    assert needle in capsys.readouterr().err


def test_missing_file_exit_code(tmp_path):
    assert main(["simulate", str(tmp_path / "nope.json")]) == 2


def test_estimate_all_estimators(tmp_path, capsys):
    cfg = write(tmp_path, "s.json", sim_cfg(eta_law={"kind": "iid-normal", "mean": 0.9},
                                           init_regime={"kind": "fixed-constant", "k": 1.0}, N=400))
    main(["simulate", cfg, "--output-dir", str(tmp_path / "d")])
    capsys.readouterr()
    rc = main(["estimate", str(tmp_path / "d" / "panel.csv"), "--output-dir", str(tmp_path / "e")])
    assert rc == 0
    out = capsys.readouterr()
    assert "differenced" in out.err
    table = (tmp_path / "e" / "estimates.txt").read_text().splitlines()
    assert len(table) == 2 + 3
    res = json.loads((tmp_path / "e" / "estimates.json").read_text())
    assert set(res["results"]) == {"mile", "lancaster", "conditional"}
    assert res["results"]["lancaster"]["all_roots"]


def test_estimate_conditional_on_zero_y1(tmp_path, capsys):
    cfg = write(tmp_path, "s.json", sim_cfg())
    main(["simulate", cfg, "--output-dir", str(tmp_path / "d")])
    rc = main(["estimate", str(tmp_path / "d" / "panel.csv"), "--conditional", "--output-dir", str(tmp_path / "e")])
    assert rc == 2
    assert "--mile" in capsys.readouterr().err


def test_estimate_t2_warns(tmp_path, capsys):
    cfg = write(tmp_path, "s.json", sim_cfg(T=2, N=300))
    main(["simulate", cfg, "--output-dir", str(tmp_path / "d")])
    capsys.readouterr()
    assert main(["estimate", str(tmp_path / "d" / "panel.csv"), "--lancaster", "--output-dir", str(tmp_path / "e")]) == 0
    assert "T = 2" in capsys.readouterr().err


def test_estimate_rules_on_multimodal_fixture(tmp_path):
    golden = json.loads((FIX / "lancaster_multimodal_golden.json").read_text())
    lo, hi = golden["search"]["rho_bounds"]
    for rule in ("dhaene-jochmans", "kruiniger-hessian", "min-abs-sml"):
        out = tmp_path / rule
        rc = main(["estimate", str(FIX / "lancaster_multimodal.csv"), "--lancaster-rule", rule,
                   f"--rho-min={lo}", f"--rho-max={hi}", "--grid-points", str(golden["search"]["grid_points"]),
                   "--output-dir", str(out)])
        assert rc == 0
        r = json.loads((out / "estimates.json").read_text())["results"]["lancaster"]
        assert r["selection_rule"] == rule and r["n_local_maxima"] >= 2
        assert r["theta_hat"]["rho"] == pytest.approx(golden["rules"][rule]["rho_hat"], abs=1e-10)


def test_estimate_rotation_invariant(tmp_path):
    cfg = write(tmp_path, "s.json", sim_cfg(N=150))
    main(["simulate", cfg, "--output-dir", str(tmp_path / "d")])
    d = read_panel_csv(tmp_path / "d" / "panel.csv")
    g = sample_orthogonal(d.N, seed=3)
    write_panel_csv(PanelData(Y_full=g @ d.Y_full), tmp_path / "rot.csv")
    (tmp_path / "rot.csv").write_text((tmp_path / "rot.csv").read_text().replace("-0,", "0,"))
    main(["estimate", str(tmp_path / "d" / "panel.csv"), "--output-dir", str(tmp_path / "e1")])
    main(["estimate", str(tmp_path / "rot.csv"), "--output-dir", str(tmp_path / "e2")])
    a = json.loads((tmp_path / "e1" / "estimates.json").read_text())["results"]
    b = json.loads((tmp_path / "e2" / "estimates.json").read_text())["results"]
    for k in a:
        for p in ("rho", "sigma2", "omega2"):
            assert a[k]["theta_hat"][p] == pytest.approx(b[k]["theta_hat"][p], abs=1e-8)


def test_avar_equality_and_t2(tmp_path):
    p = write(tmp_path, "a.json", {"schema_version": 1, "point": {
        "T": 4, "rho": 0.5, "sigma2": 1.0, "delta": 0.5, "omega2_cond": 1.0, "y1_norm_bar2": 2.0}})
    assert main(["avar", p, "--output-dir", str(tmp_path / "a")]) == 0
    assert json.loads((tmp_path / "a" / "avar.json").read_text())["reports"][0]["conditional_gain_case"] == "equality"
    p2 = write(tmp_path, "b.json", {"schema_version": 1, "point": {"T": 2, "rho": 0.5, "sigma2": 1.0, "omega2": 1.0}})
    assert main(["avar", p2, "--output-dir", str(tmp_path / "b")]) == 0
    rep = json.loads((tmp_path / "b" / "avar.json").read_text())["reports"][0]
    assert any("T=2" in f for f in rep["singular_flags"])


def test_avar_sweep_rows(tmp_path):
    assert main(["avar", str(CONFIGS / "avar_sweep.json"), "--output-dir", str(tmp_path)]) == 0
    rows = list(csv.DictReader((tmp_path / "avar.csv").open()))
    assert len({r["point"] for r in rows}) == 4 * 4 * 3


def test_avar_invalid_point(tmp_path, capsys):
    p = write(tmp_path, "a.json", {"schema_version": 1, "point": {"T": 4, "rho": 0.5, "sigma2": 1.0, "omega2": 0.0}})
    assert main(["avar", p, "--output-dir", str(tmp_path)]) == 2
    assert "omega2 > 0" in capsys.readouterr().err


def test_mc_smoke_reproducible_across_threads(tmp_path):
    outs = []
    for t in ("1", "4", "1"):
        d = tmp_path / f"t{t}_{len(outs)}"
        assert main(["mc", str(CONFIGS / "mc_smoke.json"), "--threads", t, "--output-dir", str(d)]) == 0
        outs.append((d / "mc_summary.json").read_bytes())
    assert outs[0] == outs[1] == outs[2]
    assert outs[0] == (FIX / "mc_smoke_golden.json").read_bytes()


def test_mc_abort_exit_code(tmp_path, capsys):
    cfg = {"schema_version": 1, "dgp": {"rho_star": 0.5, "sigma2_star": 1.0, "N": 60, "T": 3, "seed": 1},
           "estimators": ["mile"], "replications": 4,
           "search": {"rho_bounds": [-0.9, -0.5], "grid_points": 101}}
    assert main(["mc", write(tmp_path, "m.json", cfg), "--threads", "1", "--output-dir", str(tmp_path)]) == 1
    assert "maximum at search bound" in capsys.readouterr().err


def test_console_script():
    exe = shutil.which("dynpanel")
    cmd = [exe] if exe else [sys.executable, "-m", "dynpanel"]
    r = subprocess.run(cmd + ["--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "0.1.0" in r.stdout
