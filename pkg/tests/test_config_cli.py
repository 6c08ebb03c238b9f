import copy
import csv
import json
import math

import numpy as np
import pytest

from impdde.cli import main
from impdde.config import SCHEMA, SCENARIOS, ConfigError, bind, list_scenarios, load_config, read_document
from impdde.core import build_mesh, validate_spec
from impdde.evolution import build_cache
from impdde.io import read_trajectory
from impdde.solver import verify_solution


def _raw(name="paper_example"):
    return copy.deepcopy(read_document(name)[0])


def _write(tmp_path, raw, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return str(p)


def _run(tmp_path, *argv):
    out = tmp_path / "out"
    out.mkdir(exist_ok=True)
    return main([*argv, "--out", str(out)]), out


def _csv(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return rows


# ----------------------------------------------------------------- config

def test_paper_example_loads_clean():
    cfg = load_config("paper_example")
    assert validate_spec(cfg.spec) == []
    assert cfg.spec.n == 2 and cfg.spec.partition.q == 2 and cfg.spec.partition.N == 1
    assert cfg.constants.L == pytest.approx(abs(math.cos(1.0)) / 100)
    assert cfg.constants.N_q == pytest.approx(0.01)
    assert cfg.constants.Psi(3.0) == pytest.approx(0.09)
    assert cfg.constants.K(1.0, 2.0) == pytest.approx(0.03)


def test_every_scenario_loads():
    names = [s["name"] for s in list_scenarios()]
    assert sorted(names) == sorted(SCENARIOS) and len(names) == 5
    for name in names:
        assert validate_spec(load_config(name).spec) == []


@pytest.mark.parametrize("mutate, where, fragment", [
    (lambda r: r["impulses"][0].update(t=1.2), "impulses[0]", "ordering"),
    (lambda r: r.pop("g"), "g", "g is missing"),
    (lambda r: r.pop("theta"), "theta", None),
    (lambda r: r.update(bogus=1), "<root>", "bogus"),
    (lambda r: r["impulses"][0].update(extra=2), "impulses[0]", "extra"),
    (lambda r: r["impulses"][0].update(G=["sin(", "0"]), "impulses[0].G[0]", "column 5"),
    (lambda r: r["impulses"][0].update(G=["z(3)", "0"]), "impulses[0].G[0]", "out of range"),
    (lambda r: r.update(params={"R": 100, "r": 1}), "params.r", "built-in"),
    (lambda r: r.update(f=["zd(1, 0.9)", "0"]), "f[0]", "outside"),
    (lambda r: r.update(n=3), "A", "expected 3"),
    (lambda r: r.update(r=-1.0), "r", None),
    (lambda r: r.update(f=["x", "0"]), "f[0]", "not allowed"),
])
def test_config_errors_name_their_field(mutate, where, fragment):
    raw = _raw()
    mutate(raw)
    with pytest.raises(ConfigError) as e:
        bind(raw, "test")
    assert e.value.where == where
    if fragment:
        assert fragment in str(e.value)


def test_schema_is_strict():
    assert SCHEMA["additionalProperties"] is False
    assert {"n", "r", "tau", "A", "f", "phi"} <= set(SCHEMA["required"])


def test_malformed_json_is_config_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{ not json")
    with pytest.raises(ConfigError):
        load_config(str(p))
    with pytest.raises(ConfigError):
        load_config("no_such_scenario")


# ------------------------------------------------------------------- solve

def test_cli_solve_pure_delay(tmp_path):
    code, out = _run(tmp_path, "solve", "--config", "pure_delay")
    assert code == 0
    rows = _csv(out / "trajectory.csv")
    assert list(rows[0]) == ["t", "z1", "side"]
    at_one = [r for r in rows if float(r["t"]) == 1.0]
    assert at_one and float(at_one[-1]["z1"]) == pytest.approx(2.0, abs=1e-6)
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["converged"]


def test_cli_solve_trivial_constant(tmp_path):
    raw = {"n": 1, "r": 0.5, "tau": 1.0, "A": [["0"]], "f": ["0"], "phi": ["3.25"],
           "solver": {"initial": "zero"}}
    code, out = _run(tmp_path, "solve", "--config", _write(tmp_path, raw))
    assert code == 0
    assert all(float(r["z1"]) == 3.25 for r in _csv(out / "trajectory.csv"))
    assert json.loads((out / "diagnostics.json").read_text())["iterations"] == 2


def test_cli_solve_example(tmp_path, capsys):
    code, out = _run(tmp_path, "--json", "solve", "--config", "paper_example")
    assert code == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["converged"] and doc["empirical_contraction"] < 0.5
    assert doc["characterization_residual"] < 1e-8


def test_cli_not_converged_exit(tmp_path):
    raw = _raw("paper_example")
    raw["solver"] = {"tol": 1e-14, "max_iters": 1}
    code, _ = _run(tmp_path, "solve", "--config", _write(tmp_path, raw))
    assert code == 3


def test_csv_round_trip_preserves_residuals(tmp_path):
    code, out = _run(tmp_path, "solve", "--config", "paper_example")
    assert code == 0
    cfg = load_config("paper_example")
    mesh = build_mesh(cfg.spec, cfg.grid_step)
    cache = build_cache(cfg.spec, mesh)
    z = read_trajectory(out / "trajectory.csv", mesh)
    ver = verify_solution(cfg.spec, cache, z).to_dict()
    saved = json.loads((out / "diagnostics.json").read_text())["verification"]
    for key, val in ver.items():
        if isinstance(val, float):
            assert val == pytest.approx(saved[key], abs=1e-12)


# ------------------------------------------------------------------- check

def test_cli_check_example_passes(tmp_path):
    code, out = _run(tmp_path, "check", "--config", "paper_example")
    assert code == 0
    doc = json.loads((out / "hypotheses.json").read_text())
    assert doc["checks"]["h1_ii"]["lhs"] <= 0.03 and doc["caveat"] is None


def test_cli_check_large_coupling_fails(tmp_path):
    raw = _raw()
    raw["params"]["R"] = 1
    code, out = _run(tmp_path, "check", "--config", _write(tmp_path, raw))
    assert code == 5
    doc = json.loads((out / "hypotheses.json").read_text())
    assert not doc["checks"]["h1_ii"]["pass"]


def test_cli_find_rho_closed_form(tmp_path, capsys):
    M, L, c = 1.2, 0.25, 1.0
    raw = {"n": 1, "r": 0.5, "tau": 2.0, "A": [["0"]], "f": ["0"], "phi": ["1"],
           "impulses": [{"t": 0.8, "s": 1.0, "G": ["z(1) / 4"]}],
           "constants": {"M": M, "L": L, "Psi": "0", "K": "0"}}
    code, _ = _run(tmp_path, "--json", "check", "--config", _write(tmp_path, raw), "--find-rho", "--rho-max", "10")
    assert code == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["search"]["rho"] == pytest.approx(c * L * M / (1 - L * M), rel=1e-8)


def test_cli_check_estimate_adds_caveat(tmp_path):
    code, out = _run(tmp_path, "check", "--config", "paper_example", "--estimate", "--samples", "300")
    assert code == 0
    doc = json.loads((out / "hypotheses.json").read_text())
    assert doc["caveat"] and "lower bounds" in doc["caveat"]


def test_cli_check_missing_constant(tmp_path):
    raw = _raw()
    del raw["constants"]["L"]
    code, _ = _run(tmp_path, "check", "--config", _write(tmp_path, raw))
    assert code == 2


# ------------------------------------------------------------------ extend

def test_cli_extend_pure_delay(tmp_path):
    code, out = _run(tmp_path, "extend", "--config", "pure_delay", "--to", "2")
    assert code == 0
    rows = _csv(out / "trajectory.csv")
    last = rows[-1]
    assert float(last["t"]) == 2.0 and float(last["z1"]) == pytest.approx(3.5, abs=1e-4)
    doc = json.loads((out / "extension.json").read_text())
    assert not doc["escaped"] and not doc["gronwall"]["exceeded"]


def test_cli_extend_zero_field_is_constant(tmp_path):
    raw = {"n": 2, "r": 0.5, "tau": 1.0, "A": [["0", "0"], ["0", "0"]], "f": ["0", "0"], "phi": ["1", "-2"]}
    code, out = _run(tmp_path, "extend", "--config", _write(tmp_path, raw), "--to", "3", "--growth", "0")
    assert code == 0
    rows = _csv(out / "trajectory.csv")
    assert all(float(r["z1"]) == 1.0 and float(r["z2"]) == -2.0 for r in rows)


def test_cli_extend_riccati_blowup(tmp_path):
    code, out = _run(tmp_path, "extend", "--config", "riccati_blowup", "--to", "1")
    assert code == 4
    doc = json.loads((out / "extension.json").read_text())
    assert doc["escaped"] and abs(doc["escape_time"] - 0.5) <= 2e-3


def test_cli_extend_requires_later_end(tmp_path):
    code, _ = _run(tmp_path, "extend", "--config", "pure_delay", "--to", "0.5")
    assert code == 2


# -------------------------------------------------------------- scenarios

def test_cli_scenarios(capsys):
    assert main(["scenarios"]) == 0
    lines = [ln for ln in capsys.readouterr().out.splitlines() if ln.strip()]
    assert len(lines) == 5
    assert main(["scenarios", "--json"]) == 0
    items = json.loads(capsys.readouterr().out)
    assert {s["name"] for s in items} == set(SCENARIOS)


def test_cli_unknown_config_and_missing_config(tmp_path):
    assert _run(tmp_path, "solve", "--config", "nope")[0] == 2
    assert _run(tmp_path, "solve")[0] == 2


def test_cli_deterministic_outputs(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    for d in (a, b):
        d.mkdir()
        assert main(["check", "--config", "paper_example", "--estimate", "--samples", "200",
                     "--seed", "3", "--out", str(d)]) == 0
    assert (a / "hypotheses.json").read_text() == (b / "hypotheses.json").read_text()
    for d in (a, b):
        assert main(["solve", "--config", "rotation_matrix", "--out", str(d)]) == 0
    assert (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()
    assert np.isfinite([float(r["z1"]) for r in _csv(a / "trajectory.csv")]).all()
