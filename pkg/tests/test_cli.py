import csv
import json

import numpy as np
import pytest

from weakdarboux.cli import main, parse_levels
from weakdarboux.exceptions import InputError
from weakdarboux.loopspace import random_loop


def run(tmp_path, *args):
    return main([args[0], "--out", str(tmp_path), *args[1:]])


def load(tmp_path, name):
    return json.loads((tmp_path / f"{name}.json").read_text())


def test_parse_levels():
    assert parse_levels("1..6") == (1, 6) and parse_levels("3") == (3, 3)
    for bad in ("6..1", "0..3", "a..b", ""):
        with pytest.raises(InputError):
            parse_levels(bad)


def test_moser_default(tmp_path):
    assert run(tmp_path, "moser", "--grid", "20", "--steps", "40") == 0
    rep = load(tmp_path, "moser")
    assert rep["status"] == "ok" and rep["darboux_residual"] <= 1e-5
    kinds = {r["kind"] for r in rep["rows"]}
    assert kinds == {"moser", "darboux", "doubling"}


def test_moser_degenerate_exit_2(tmp_path):
    assert run(tmp_path, "moser", "--family", "degenerate_origin", "--grid", "5") == 2
    rep = load(tmp_path, "moser")
    assert rep["t"] == 0.0 and rep["x"] == [0.0, 0.0]


def test_moser_outside_region_exit_3(tmp_path):
    doc = {"field": {"kind": "named", "dim": 4, "name": "perturbed_canonical"},
           "x0": [5.0, 0, 0, 0], "sample_radius": 0.1}
    f = tmp_path / "in.json"
    f.write_text(json.dumps(doc))
    assert run(tmp_path, "moser", "--input", str(f), "--grid", "4") == 3


@pytest.mark.parametrize("text", ["{not json", "[1, 2]", '{"kind": "nope", "dim": 2}'])
def test_moser_malformed_input_exit_1(tmp_path, text):
    f = tmp_path / "in.json"
    f.write_text(text)
    assert run(tmp_path, "moser", "--input", str(f)) == 1


@pytest.mark.parametrize("args", [["moser", "--steps", "0"], ["moser", "--tol", "-1"],
                                  ["counterexample", "--levels", "3..1"], ["loop", "--p", "1"],
                                  ["moser", "--bogus"], ["nocommand"],
                                  ["moser", "--input", "/nonexistent.json"]])
def test_bad_arguments_exit_1(tmp_path, args):
    assert main([*args, "--out", str(tmp_path)]) == 1


def test_moser_deterministic_bytes(tmp_path):
    outputs = []
    for _ in range(2):
        assert run(tmp_path, "moser", "--grid", "8", "--steps", "20", "--seed", "3") == 0
        outputs.append((tmp_path / "moser.json").read_bytes())
    assert outputs[0] == outputs[1]


def test_csv_full_precision(tmp_path):
    assert run(tmp_path, "moser", "--grid", "8", "--steps", "20", "--format", "csv") == 0
    with open(tmp_path / "moser.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0].keys() == {"kind", "t", "steps", "residual"}
    val = next(r["residual"] for r in rows if r["kind"] == "darboux")
    assert float(val) == float(f"{float(val):.17g}") and "e" in val


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("WEAKDARBOUX_OUT", str(tmp_path / "env"))
    assert main(["odelimit", "--levels", "1..3", "--grid", "8"]) == 0
    assert (tmp_path / "env" / "odelimit.json").exists()


def test_odelimit_examples(tmp_path):
    assert run(tmp_path, "odelimit", "--levels", "1..5") == 0
    rep = load(tmp_path, "odelimit")
    assert rep["flags"] == {"A": True, "B": True, "C": True}
    assert run(tmp_path, "odelimit", "--family", "example4", "--levels", "1..20", "--grid", "8") == 0
    assert not load(tmp_path, "odelimit")["flags"]["B"]


def test_odelimit_family_file(tmp_path):
    f = tmp_path / "fam.json"
    f.write_text(json.dumps({"kind": "power", "power": 3}))
    assert run(tmp_path, "odelimit", "--family", "file", "--input", str(f), "--levels", "1..4") == 0
    f.write_text(json.dumps({"kind": "stabilizing", "matrix": [[0, 1], [0, 0]]}))
    assert run(tmp_path, "odelimit", "--family", "file", "--input", str(f), "--levels", "1..4") == 0
    f.write_text(json.dumps({"kind": "stabilizing", "matrix": [[0, 1]]}))
    assert run(tmp_path, "odelimit", "--family", "file", "--input", str(f)) == 1
    f.write_text(json.dumps({"power": 2}))
    assert run(tmp_path, "odelimit", "--family", "file", "--input", str(f)) == 1
    assert run(tmp_path, "odelimit", "--family", "file") == 1


def test_loop_default_and_warning(tmp_path, capsys):
    assert run(tmp_path, "loop", "--levels", "1..2") == 0
    rep = load(tmp_path, "loop")
    assert rep["status"] == "ok"
    with pytest.warns(RuntimeWarning):
        assert run(tmp_path, "loop", "--grid", "8", "--levels", "1..1") == 0


def test_loop_text_input(tmp_path):
    g = random_loop(np.random.default_rng(1), 32, 2, amplitude=0.2, n_fields=3)
    f = tmp_path / "loop.txt"
    f.write_text(g.to_text())
    assert run(tmp_path, "loop", "--input", str(f), "--levels", "1..1") == 0
    f.write_text("m 2\nN 5\n")
    assert run(tmp_path, "loop", "--input", str(f)) == 1


def test_counterexample_small_tower(tmp_path):
    f = tmp_path / "tower.json"
    f.write_text(json.dumps({"base_dim": 16, "n_levels": 3}))
    args = ["--input", str(f), "--margin", "1e-2", "--grid", "8"]
    assert run(tmp_path, "counterexample", *args) == 0
    rep = load(tmp_path, "counterexample")
    radii = [r["r_n"] for r in rep["rows"]]
    assert rep["note"] == "strictly decreasing" and radii[2] < radii[0]
    assert run(tmp_path, "counterexample", *args, "--fixed-e") == 0
    assert load(tmp_path, "counterexample")["note"] == "no shrinkage"
    assert run(tmp_path, "counterexample", *args, "--levels", "2..2") == 0
    assert run(tmp_path, "counterexample", *args, "--levels", "1..9") == 1
    f.write_text(json.dumps({"sigma": [1.0], "points": "x"}))
    assert run(tmp_path, "counterexample", "--input", str(f)) == 1
