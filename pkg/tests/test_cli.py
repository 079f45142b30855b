import json
import subprocess
import sys

import numpy as np
import pytest

from folialab.cli import DEFAULTS, SCHEMA, main, observed_orders


def _run(tmp_path, verb, toml, *extra):
    tmp_path.mkdir(parents=True, exist_ok=True)
    cfg = tmp_path / "scenario.toml"
    cfg.write_text(toml)
    out = tmp_path / "out"
    code = main([verb, "--config", str(cfg), "--out", str(out), *extra])
    return code, json.loads((out / "report.json").read_text()), out


FLAT_IDENTITIES = """
seed = 0
[source]
name = "product-flat-torus"
resolution = 32
[target]
name = "flat-torus"
[task]
kind = "identities"
"""


def test_check_flat_identities(tmp_path):
    code, rep, _ = _run(tmp_path, "check", FLAT_IDENTITIES)
    assert code == 0
    ids = rep["results"]["identities"]
    for name, r in ids.items():
        if name == "bochner":
            # the discrete Leibniz rule for ½Δ_B|Y|² is not exact, even on the flat torus
            assert r["class"] == "discretization"
        else:
            assert r["residual"] < 1e-10, name
    assert all(r["residual"] < 1e-10 for r in ids.values() if r["class"] == "exact")


def test_report_schema(tmp_path):
    code, rep, _ = _run(tmp_path, "check", FLAT_IDENTITIES, "--seed", "11")
    assert rep["schema"] == SCHEMA == 1
    assert rep["seed"] == 11 and rep["config"]["seed"] == 11
    assert rep["defaults"] == json.loads(json.dumps(DEFAULTS))
    assert rep["exit_code"] == code
    for v in rep["verdicts"]:
        assert {"name", "value", "tol", "passed"} <= set(v)


def test_rerun_is_bitwise_reproducible(tmp_path):
    toml = FLAT_IDENTITIES.replace('name = "flat-torus"\n',
                                   'name = "sphere-stereo"\n[map]\ninit = "seeded-random"\n')
    a = _run(tmp_path / "a", "check", toml)[1]
    b = _run(tmp_path / "b", "check", toml)[1]
    assert a["results"] == b["results"]


VARY = """
seed = 7
[source]
name = "warped-torus"
params = {eps = 0.3}
resolution = 32
[target]
name = "sphere-stereo"
params = {C = 1.0}
[map]
init = "seeded-random"
[task]
kind = "variation"
order = "second"
functional = "energy"
"""


def test_vary_warped_sphere(tmp_path):
    code, rep, _ = _run(tmp_path, "vary", VARY)
    assert code == 0
    v = rep["results"]["variation"]
    assert v["kind"] == "second" and v["functional"] == "energy"
    assert v["seed"] == 7 and v["resolution"] == 32
    assert np.isfinite(v["fd"]) and np.isfinite(v["formula"])
    assert v["t_order"] >= 1.9


def test_missing_target_is_config_error(tmp_path, capsys):
    toml = FLAT_IDENTITIES.replace('[target]\nname = "flat-torus"\n', "")
    code, rep, _ = _run(tmp_path, "check", toml)
    assert code == 2
    assert "target.name" in rep["error"]["message"]
    assert "target.name" in capsys.readouterr().err


@pytest.mark.parametrize("toml,needle", [
    ("[source\nname = 1", "parse error"),
    ('[source]\nname = "klein-bottle"\n[target]\nname = "flat-torus"\n[task]\nkind = "identities"\n', "klein"),
    ('[source]\nname = "product-flat-torus"\n[target]\nname = "flat-torus"\n[task]\nkind = "spectrum"\n', "verb"),
    ('[source]\nname = "product-flat-torus"\n[target]\nname = "flat-torus"\n[map]\ninit = "linear"\n'
     '[task]\nkind = "identities"\n', "map.matrix"),
])
def test_config_errors(tmp_path, toml, needle):
    code, rep, _ = _run(tmp_path, "check", toml)
    assert code == 2
    assert needle in rep["error"]["message"]


def test_missing_config_file(tmp_path):
    code = main(["check", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path)])
    assert code == 2


def test_tolerance_failure_exit_1(tmp_path):
    toml = VARY + "[tolerances]\nvariation_tol = 1e-12\n"
    code, rep, _ = _run(tmp_path, "vary", toml)
    assert code == 1
    assert not all(v["passed"] for v in rep["verdicts"])
    assert "variation" in rep["results"]


def test_chart_exit_is_numerical_abort(tmp_path):
    toml = """
[source]
name = "product-flat-torus"
resolution = 16
[target]
name = "sphere-stereo"
params = {C = 1.0, r_max = 1.3}
[map]
init = "circle"
radius = 1.05
[task]
kind = "flow"
flow = "harmonic"
max_steps = 5000
"""
    code, rep, out = _run(tmp_path, "flow", toml)
    assert code == 3
    assert rep["error"]["kind"] == "numerical"
    assert (out / "flow_trace.csv").exists()


def test_flow_writes_series(tmp_path):
    toml = """
[source]
name = "product-flat-torus"
resolution = 16
[target]
name = "flat-torus"
[map]
init = "seeded-random"
matrix = [[1, 0], [0, 1]]
[task]
kind = "flow"
flow = "harmonic"
stop_tol = 1e-9
max_steps = 20000
expect_converged = true
"""
    code, rep, out = _run(tmp_path, "flow", toml)
    assert code == 0
    f = rep["results"]["flow"]
    assert f["converged"] and f["monotone"] and f["winding"] == [[1, 0], [0, 1]]
    assert abs(f["final_energy"] - 4 * np.pi ** 2) < 1e-8
    assert (out / "flow_trace.csv").exists() and (out / "final_map.json").exists()


def test_spectrum_flat_identity(tmp_path):
    toml = """
[source]
name = "product-flat-torus"
resolution = 8
[target]
name = "flat-torus"
[task]
kind = "spectrum"
k = 6
expect = "stable"
kernel_dim = 2
"""
    code, rep, out = _run(tmp_path, "spectrum", toml)
    assert code == 0
    s = rep["results"]["spectrum"]
    assert s["kernel_dim"] == 2 and abs(s["lam_min"]) < 1e-10
    assert (out / "spectrum.csv").read_text().startswith("index,eigenvalue")


def test_hessian_breakdown_biharmonic_circle(tmp_path):
    toml = """
[source]
name = "warped-torus"
params = {eps = 0.3}
resolution = 32
order = 6
[target]
name = "sphere-stereo"
params = {C = 1.0}
[map]
init = "circle"
radius = 0.41421356237309503
[task]
kind = "hessian-breakdown"
direction = "tension"
"""
    code, rep, _ = _run(tmp_path, "vary", toml)
    assert code == 0
    hb = rep["results"]["hessian_breakdown"]
    assert hb["total"] == pytest.approx(hb["closed_form_const_curvature"], rel=1e-4)
    assert hb["terms"]["nabla_R_dphi"] == 0.0


def test_validate_verb(tmp_path):
    toml = '[source]\nname = "warped-torus"\nparams = {eps = 0.3}\nresolution = 16\n'
    code, rep, _ = _run(tmp_path, "validate", toml)
    assert code == 0
    assert rep["results"]["validation"]["ok"]


# --- sweeps ----------------------------------------------------------------


SWEEP = """
seed = 0
resolutions = [16, 32, 64]
[source]
name = "{src}"
params = {params}
[target]
name = "{tgt}"
[map]
init = "{init}"
bandlimit = 1
[task]
kind = "identities"
quantities = {quantities}
"""


def test_sweep_conservation_order(tmp_path):
    toml = SWEEP.format(src="warped-torus", params="{eps = 0.3}", tgt="sphere-stereo",
                        init="seeded-random", quantities='["conservation", "divergence_theorem"]')
    code, rep, out = _run(tmp_path, "sweep", toml)
    assert code == 0
    table = rep["results"]["sweep"]["table"]
    orders = table["conservation"]["orders"][1:]
    assert all(1.8 <= o <= 2.4 for o in orders)
    div = table["divergence_theorem"]["residuals"]
    assert div[0] > div[1] > div[2]
    assert (out / "sweep.csv").exists()


def test_sweep_flat_weitzenbock_at_roundoff(tmp_path):
    toml = SWEEP.format(src="product-flat-torus", params="{}", tgt="flat-torus",
                        init="identity", quantities='["weitzenbock"]')
    code, rep, _ = _run(tmp_path, "sweep", toml)
    assert code == 0
    row = rep["results"]["sweep"]["table"]["weitzenbock"]
    assert all(r < 1e-10 for r in row["residuals"])
    assert row["orders"][1:] == ["at roundoff", "at roundoff"]


def test_sweep_needs_two_resolutions(tmp_path):
    toml = SWEEP.format(src="product-flat-torus", params="{}", tgt="flat-torus",
                        init="identity", quantities='["weitzenbock"]').replace("[16, 32, 64]", "[16]")
    assert _run(tmp_path, "sweep", toml)[0] == 2


def test_observed_orders_helper():
    assert observed_orders([16, 32], [4e-3, 1e-3], 1e-10)[1] == pytest.approx(2.0)
    assert observed_orders([16, 32], [1e-14, 1e-15], 1e-10)[1] == "at roundoff"


def test_console_script(tmp_path):
    cfg = tmp_path / "s.toml"
    cfg.write_text(FLAT_IDENTITIES)
    p = subprocess.run([sys.executable, "-m", "folialab.cli", "check", "--config", str(cfg),
                        "--out", str(tmp_path / "o"), "--threads", "1"],
                       capture_output=True, text=True)
    assert p.returncode == 0
    assert "tension_identity" in p.stdout
