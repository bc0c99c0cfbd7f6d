"""Command-line front end: validation, artifacts, determinism and exit codes."""
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from nonconvex_hj.cli import CONFIG_SCHEMA, ConfigError, RunConfig, main, validate

DOCS_SCHEMA = Path(__file__).resolve().parents[1] / "docs" / "config_schema.json"

W_SPEC = {
    "branches": [
        {"kind": "affine", "domain": [0.0, 1.0], "slope": 3.0, "value_at_left": 0.0},
        {"kind": "affine", "domain": [1.0, 2.0], "slope": -2.0, "value_at_left": 3.0},
    ],
    "tail_slope_left": -3,
    "tail_slope_right": 1,
}


def write(tmp_path, doc, name="cfg.json"):
    f = tmp_path / name
    f.write_text(json.dumps(doc))
    return f


def cfg(mbar=1.0, **params):
    doc = {"hamiltonian": W_SPEC, "potential": {"variant": "cosine", "mbar": mbar}}
    if params:
        doc["params"] = params
    return doc


def artifacts(out, command):
    return sorted(p for p in out.iterdir() if p.name.startswith(command + "_"))


def test_shipped_schema_matches_code():
    assert json.loads(DOCS_SCHEMA.read_text()) == CONFIG_SCHEMA


def test_schema_agrees_with_jsonschema():
    jsonschema = pytest.importorskip("jsonschema")
    good = cfg(params={"p": [0.5]})
    jsonschema.validate(good, CONFIG_SCHEMA)
    validate(good)
    bad = cfg()
    bad["potential"]["mbar"] = -1.0
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(bad, CONFIG_SCHEMA)
    with pytest.raises(ConfigError):
        validate(bad)


def test_effective_breakpoints(tmp_path, capsys):
    f = write(tmp_path, cfg())
    assert main(["effective", "--config", str(f), "--out", str(tmp_path / "o")]) == 0
    out = tmp_path / "o"
    js = [p for p in artifacts(out, "effective") if p.suffix == ".json"]
    doc = json.loads(js[0].read_text())
    np.testing.assert_allclose(doc["result"]["breakpoints"], [-1 / 6, 1 / 6, 5 / 6, 1.25, 1.75, 2.5], atol=1e-10)
    assert doc["config"]["command"] == "effective" and doc["seed"] == 0
    csv = [p for p in artifacts(out, "effective") if p.suffix == ".csv"][0]
    assert csv.read_text().splitlines()[0] == "p,Hbar,segment_kind,provenance"
    assert {p.suffix for p in artifacts(out, "effective")} == {".csv", ".json", ".gp", ".log"}


def test_effective_output_is_reproducible(tmp_path):
    f = write(tmp_path, cfg())
    for d in ("a", "b"):
        assert main(["effective", "--config", str(f), "--out", str(tmp_path / d)]) == 0
    for ext in (".csv", ".json", ".gp"):
        a = [p for p in artifacts(tmp_path / "a", "effective") if p.suffix == ext][0]
        b = [p for p in artifacts(tmp_path / "b", "effective") if p.suffix == ext][0]
        assert a.name == b.name
        assert a.read_bytes() == b.read_bytes()


def test_malformed_hamiltonian_exit_2(tmp_path, capsys):
    doc = cfg()
    doc["hamiltonian"] = dict(W_SPEC, tail_slope_right=-1)
    f = write(tmp_path, doc)
    code = main(["effective", "--config", str(f), "--out", str(tmp_path / "o")])
    assert code == 2
    err = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert err["status"] == "error" and err["invariant"] == "coercivity"
    assert json.loads((tmp_path / "o" / "effective_error.json").read_text())["exit_code"] == 2


def test_schema_violation_exit_2(tmp_path, capsys):
    f = write(tmp_path, {"hamiltonian": W_SPEC})
    assert main(["cell", "--config", str(f), "--out", str(tmp_path)]) == 2
    err = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert err["invariant"] == "schema"


def test_missing_config_file_exit_2(tmp_path, capsys):
    assert main(["cell", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2


def test_compare_triples(tmp_path):
    f = write(tmp_path, cfg(p=[-1.0, 0.5, 3.0], lambdas=[0.01, 0.003]))
    assert main(["compare", "--config", str(f), "--out", str(tmp_path), "--workers", "2"]) == 0
    doc = json.loads([p for p in artifacts(tmp_path, "compare") if p.suffix == ".json"][0].read_text())
    for t in doc["result"]["triples"]:
        assert abs(t["formula"] - t["curve"]) < 1e-8
        assert abs(t["cell"] - t["curve"]) <= 0.05


def test_cell_and_corrector_and_evolve(tmp_path):
    f = write(tmp_path, cfg(p=[0.5], lambdas=[0.01, 0.003]), "c.json")
    assert main(["cell", "--config", str(f), "--out", str(tmp_path)]) == 0
    f = write(tmp_path, cfg(2.5, mu=[0.5, 1.5]), "k.json")
    assert main(["corrector", "--config", str(f), "--out", str(tmp_path)]) == 0
    doc = json.loads([p for p in artifacts(tmp_path, "corrector") if p.suffix == ".json"][0].read_text())
    assert doc["result"]["all_passed"]
    f = write(tmp_path, cfg(eps=0.2, T=0.3, tile=50), "e.json")
    assert main(["evolve", "--config", str(f), "--out", str(tmp_path)]) == 0
    assert any("_fields_tile" in p.name for p in tmp_path.iterdir())


def test_seed_is_embedded_for_random_potentials():
    raw = {"hamiltonian": W_SPEC, "potential": {"variant": "random_phase",
                                                "base": {"variant": "cosine", "mbar": 1.0}}}
    a = RunConfig.from_dict(raw, "effective", seed=3)
    b = RunConfig.from_dict(raw, "effective", seed=4)
    assert a.potential["seed"] == 3 and b.potential["seed"] == 4
    assert a.digest != b.digest
    assert RunConfig.from_dict(raw, "effective", seed=3).digest == a.digest


def test_module_entry_point(tmp_path):
    f = write(tmp_path, cfg())
    r = subprocess.run([sys.executable, "-m", "nonconvex_hj", "effective", "--config", str(f),
                        "--out", str(tmp_path / "m")], capture_output=True, text=True, timeout=300)
    assert r.returncode == 0, r.stderr
    assert json.loads(r.stdout)["status"] == "ok"
