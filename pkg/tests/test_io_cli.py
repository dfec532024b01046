import json

import numpy as np
import pytest

from foldedot.cli import main
from foldedot.errors import ParseError
from foldedot.io import read_cost, read_matrix, read_measure, to_jsonable, write_matrix


def _write(path, text):
    path.write_text(text)
    return path


def test_matrix_roundtrip(tmp_path):
    m = np.array([[0.6, 0.1 - 0.2j], [0.1 + 0.2j, 0.4]])
    write_matrix(tmp_path / "m.txt", m)
    assert np.array_equal(read_matrix(tmp_path / "m.txt"), m)


@pytest.mark.parametrize("text,needle", [
    ("", "empty"),
    ("size 2\n", "dim d"),
    ("dim 2\n0 0 1 0\n", "missing entry"),
    ("dim 1\n0 0 1 0\n0 0 1 0\n", "twice"),
    ("dim 1\n0 5 1 0\n", "outside"),
    ("dim 1\n0 0 x 0\n", "expected float"),
    ("dim 1\n0 0 1\n", "fields"),
])
def test_matrix_parse_errors(tmp_path, text, needle):
    with pytest.raises(ParseError) as err:
        read_matrix(_write(tmp_path / "bad.txt", text))
    assert needle in str(err.value)
    assert "bad.txt" in str(err.value)


def test_parse_error_names_line_and_field(tmp_path):
    with pytest.raises(ParseError) as err:
        read_matrix(_write(tmp_path / "bad.txt", "# header\ndim 1\n0 0 1 oops\n"))
    assert err.value.line == 3 and err.value.field == "im"


def test_measure_and_cost(tmp_path):
    w, x = read_measure(_write(tmp_path / "mu.txt", "0 0.25 0 0\n1 0.75 1 2\n"))
    assert np.allclose(w, [0.25, 0.75]) and x.shape == (2, 2)
    with pytest.raises(ParseError):
        read_measure(_write(tmp_path / "bad.txt", "1 1.0 0\n"))
    with pytest.raises(ParseError):
        read_measure(_write(tmp_path / "bad.txt", "0 0.5 0\n1 0.5 0 1\n"))
    c = read_cost(_write(tmp_path / "c.txt", "shape 1 2\n0 0 1.5\n0 1 2\n"))
    assert np.allclose(c, [[1.5, 2.0]])
    with pytest.raises(ParseError):
        read_cost(_write(tmp_path / "c.txt", "shape 1 2\n0 0 1.5\n"))


def test_to_jsonable():
    out = to_jsonable({"a": np.arange(2), "b": np.float64(1.5), "c": 1 + 2j, "d": (np.True_,)})
    assert json.loads(json.dumps(out)) == {"a": [0, 1], "b": 1.5, "c": [1.0, 2.0], "d": [True]}


@pytest.fixture
def states(tmp_path):
    write_matrix(tmp_path / "rho.txt", np.eye(2) / 2)
    write_matrix(tmp_path / "sigma.txt", np.diag([1.0, 0.0]))
    return tmp_path


def _run(argv, capsys):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr()


def test_cli_dist(states, capsys):
    code, out = _run(["dist", states / "rho.txt", states / "sigma.txt", "--restarts", 1,
                      "--trace", states / "trace.tsv"], capsys)
    assert code == 0
    env = json.loads(out.out)
    assert env["artifact"] == "foldedot" and env["command"] == "dist" and env["seed"] == 0
    assert env["result"]["value"] == pytest.approx(1 / np.sqrt(2), abs=1e-6)
    assert env["result"]["norm_lower_bound"] == pytest.approx(1 / np.sqrt(2), abs=1e-12)
    assert set(env["timing"]) == {"wall_clock_s", "finished_utc"}
    assert (states / "trace.tsv").read_text().startswith("restart\tvalue")


def test_cli_out_file(states, capsys):
    code, out = _run(["dist", states / "rho.txt", states / "rho.txt", "--out", states / "r.json"], capsys)
    assert code == 0 and out.out == ""
    assert json.loads((states / "r.json").read_text())["result"]["value"] == 0.0


def test_cli_chain_and_probe(states, capsys):
    code, out = _run(["chain", states / "rho.txt", states / "sigma.txt", "--n", "1,2",
                      "--trials", 2, "--restarts", 1], capsys)
    assert code == 0
    res = json.loads(out.out)["result"]
    assert res["chains"]["2"]["total"] <= res["chains"]["1"]["total"] + 1e-9
    code, out = _run(["probe", "--random", 2, "--restarts", 1], capsys)
    assert code == 0
    assert json.loads(out.out)["result"]["certified_violations"] == []


def test_cli_classical_and_gp(tmp_path, capsys):
    _write(tmp_path / "mu.txt", "0 1.0 0\n1 0.0 1\n")
    _write(tmp_path / "nu.txt", "0 0.5 0\n1 0.5 1\n")
    code, out = _run(["classical", tmp_path / "mu.txt", tmp_path / "nu.txt"], capsys)
    assert code == 0 and json.loads(out.out)["result"]["value"] == pytest.approx(0.5)

    g = np.zeros((8, 8))
    g[0, 0] = 1.0
    write_matrix(tmp_path / "g.txt", g)
    _write(tmp_path / "pt.txt", "0 1.0 0 0\n")
    code, out = _run(["gp", tmp_path / "g.txt", tmp_path / "pt.txt"], capsys)
    assert code == 0 and json.loads(out.out)["result"]["objective"] == pytest.approx(1.0, abs=1e-10)


def test_cli_exit_codes(states, tmp_path, capsys):
    write_matrix(tmp_path / "bad.txt", np.array([[0.5, 0.2], [0.0, 0.5]]))
    code, out = _run(["dist", tmp_path / "bad.txt", states / "sigma.txt"], capsys)
    assert code == 2 and "Hermitian within 1e-10" in out.err
    code, out = _run(["dist", tmp_path / "missing.txt", states / "sigma.txt"], capsys)
    assert code == 2
    code, out = _run(["suite", "nope"], capsys)
    assert code == 2
    code, out = _run(["probe"], capsys)
    assert code == 2


def test_cli_suites(capsys):
    for name in ("metrics", "classical", "simplex", "gp"):
        code, out = _run(["suite", name], capsys)
        assert code == 0, out.err
        assert json.loads(out.out)["result"]["passed"] is True
