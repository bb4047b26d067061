import hashlib
import json

import numpy as np
import pytest

from supfpca.cli import main
from supfpca.errors import DataError
from supfpca.fit import FitConfig, fit
from supfpca.io import (dumps_model, format_diagnostics, format_samples, load_model, loads_model, parse_samples,
                        save_model)
from supfpca.likelihood import nll_fast, prepare
from supfpca.model import FunctionalSample
from supfpca.sim import SimTruth, generate

SMALL = dict(l=6, p=4, m=6, q=5, t_domain=(0.0, 1.0), z_domain=(0.0, 1.0))


@pytest.fixture(scope="module")
def model():
    return fit(generate(SimTruth(n=120, m_tilde=15, seed=9)), FitConfig(r=2, max_outer=8, **SMALL))


def test_sample_round_trip():
    s = generate(SimTruth(n=5, m_tilde=7, seed=1))
    back = parse_samples(format_samples(s))
    assert [x.id for x in back] == [x.id for x in s]
    for a, b in zip(s, back):
        np.testing.assert_array_equal(a.values, b.values)
        assert a.covariate == b.covariate


def test_sd_column_and_sorting():
    text = "id,t,y,z,sd\na,0.5,1,0.2,0.1\na,0.1,2,0.2,0.3\nb,0.3,0,0.4,1\n"
    a, b = parse_samples(text)
    assert a.id == "a" and b.id == "b"
    np.testing.assert_array_equal(a.times, [0.1, 0.5])
    np.testing.assert_array_equal(a.noise_sd, [0.3, 0.1])
    assert format_samples([a, b]).splitlines()[0] == "id,t,y,z,sd"


@pytest.mark.parametrize("text,line,match", [
    ("", 1, "empty"),
    ("id,t,y\n1,0,0\n", 1, "header"),
    ("id,t,y,z\n1,0,0,0.5\n1,0.2,x,0.5\n", 3, "y is not a number"),
    ("id,t,y,z\n1,0,0,0.5\n1,0.2,1,0.6\n", 3, "covariate"),
    ("id,t,y,z,sd\n1,0,0,0.5,0\n", 2, "sd must be positive"),
    ("id,t,y,z\n1,0,0\n", 2, "expected 4 fields"),
    ("id,t,y,z\n1,nan,0,0.5\n", 2, "not finite"),
    ("id,t,y,z\n", 2, "no data"),
])
def test_data_errors_carry_line_numbers(text, line, match):
    with pytest.raises(DataError, match=match) as info:
        parse_samples(text)
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_model_round_trip_is_byte_identical(model, tmp_path):
    text = dumps_model(model)
    back = loads_model(text)
    assert dumps_model(back) == text
    np.testing.assert_array_equal(back.params.gamma, model.params.gamma)
    assert back.config == model.config
    p = tmp_path / "m.json"
    save_model(p, model)
    assert p.read_text() == text
    assert load_model(p).objective == model.objective


def test_checksum_detects_edits(model):
    d = json.loads(dumps_model(model))
    d["log_sigma2"] += 1.0
    with pytest.raises(DataError, match="checksum"):
        loads_model(json.dumps(d))
    body = {k: v for k, v in json.loads(dumps_model(model)).items() if k != "checksum"}
    canon = json.dumps(body, sort_keys=True, separators=(",", ":"))
    assert hashlib.sha256(canon.encode()).hexdigest() == json.loads(dumps_model(model))["checksum"]


@pytest.mark.parametrize("text,match", [("{", "JSON"), ("[]", "not a model"),
                                        ('{"format": "supfpca-model", "version": 9}', "version")])
def test_bad_model_files(text, match):
    with pytest.raises(DataError, match=match):
        loads_model(text)


def test_loaded_model_reproduces_likelihood(model):
    back = loads_model(dumps_model(model))
    s = generate(SimTruth(n=10, m_tilde=15, seed=2))
    assert nll_fast(prepare(s, back.bases), back.params) == nll_fast(prepare(s, model.bases), model.params)


def test_diagnostics_format(model):
    lines = format_diagnostics(model).splitlines()
    assert lines[0] == "step,block,objective"
    assert len(lines) == len(model.diagnostics.objective_trace) + 1
    assert lines[1].startswith("0,init,")


# --- command line -----------------------------------------------------------

def run(argv, capsys=None):
    return main([str(a) for a in argv])


def test_cli_pipeline(tmp_path, capsys):
    data = tmp_path / "d.csv"
    assert run(["simulate", "--n", 80, "--m-tilde", 12, "--seed", 3, "-o", data]) == 0
    assert data.read_text().splitlines()[0] == "id,t,y,z,sd"
    mdl, diag = tmp_path / "m.json", tmp_path / "diag.csv"
    assert run(["fit", data, "-o", mdl, "--r", 2, "--l", 6, "--p", 4, "--m", 6, "--q", 5, "--max-outer", 5,
                "--lambdas", "1e-3,1e-3,1e-3,1e-3", "--diagnostics", diag]) == 0
    assert "objective" in diag.read_text().splitlines()[0]
    pred = tmp_path / "p.csv"
    assert run(["predict", mdl, data, "-o", pred]) == 0
    lines = pred.read_text().splitlines()
    assert lines[0] == "id,t,mean,var" and len(lines) == 80 * 12 + 1
    assert run(["predict", mdl, data, "--grid", "0,1,5", "--latent", "-o", pred]) == 0
    assert len(pred.read_text().splitlines()) == 80 * 5 + 1
    eig = tmp_path / "e.csv"
    assert run(["eigen", mdl, "--z-grid", "0.1,0.9,3", "--t-grid", "0,1,4", "-o", eig]) == 0
    rows = eig.read_text().splitlines()
    assert rows[0] == "z,t,j,value,eigenvalue" and len(rows) == 3 * 2 * 4 + 1


def test_cli_fit_is_deterministic(tmp_path):
    data = tmp_path / "d.csv"
    run(["simulate", "--n", 60, "--m-tilde", 10, "-o", data])
    outs = []
    for k in range(2):
        m, p = tmp_path / f"m{k}.json", tmp_path / f"p{k}.csv"
        assert run(["fit", data, "-o", m, "--r", 1, "--l", 6, "--p", 4, "--m", 6, "--q", 5,
                    "--max-outer", 4]) == 0
        assert run(["predict", m, data, "-o", p]) == 0
        outs.append((m.read_bytes(), p.read_bytes()))
    assert outs[0] == outs[1]


def test_cli_cv(tmp_path):
    data, table = tmp_path / "d.csv", tmp_path / "cv.csv"
    run(["simulate", "--n", 60, "--m-tilde", 10, "--no-sd", "-o", data])
    assert "sd" not in data.read_text().splitlines()[0]
    assert run(["cv", data, "-o", table, "--r", 1, "--l", 6, "--p", 4, "--m", 6, "--q", 5, "--cv-folds", 2,
                "--max-outer", 3, "--mean-grid", "1e-3:1e-3", "--cov-grid", "1e-3:1e-3;1:1"]) == 0
    lines = table.read_text().splitlines()
    assert lines[0].startswith("stage,lambda_t") and len(lines) == 4


@pytest.mark.parametrize("argv", [
    [],
    ["bogus"],
    ["fit", "x.csv", "-o", "m.json", "--lambdas", "1,1,1,1", "--cv-grid"],
    ["fit", "x.csv", "-o", "m.json", "--lambdas", "1,1"],
    ["simulate", "--n", "0", "-o", "x.csv"],
    ["simulate", "--sigma2", "0", "-o", "x.csv"],
])
def test_usage_errors_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "x.csv").write_text("id,t,y,z\n1,0,0,0\n")
    assert main(argv) == 1


def test_data_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,t,y,z\n1,0,0,0.5\n1,0.5,oops,0.5\n")
    assert run(["fit", bad, "-o", tmp_path / "m.json"]) == 2
    assert "line 3" in capsys.readouterr().err
    assert run(["fit", tmp_path / "missing.csv", "-o", tmp_path / "m.json"]) == 2
    (tmp_path / "junk.json").write_text("{}")
    assert run(["predict", tmp_path / "junk.json", bad, "-o", tmp_path / "p.csv"]) == 2


def test_numerical_failure_exit_3(tmp_path, monkeypatch):
    import supfpca.cli as cli
    from supfpca.errors import NumericalError

    def boom(*a, **k):
        raise NumericalError("Sigma_n not positive definite")

    data = tmp_path / "d.csv"
    run(["simulate", "--n", 30, "--m-tilde", 8, "-o", data])
    monkeypatch.setattr(cli, "fit", boom)
    assert run(["fit", data, "-o", tmp_path / "m.json"]) == 3
