import json
import os
from fractions import Fraction

import pytest

from cml import map_core
from cml.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main
from cml.config import ExperimentConfig, ParseError, parse_config, parse_config_text


# ---------------------------------------------------------------- config


def test_minimal_defaults():
    cfg = parse_config_text("eta = 0.2\ndelta = 0.02\ngamma = 0.001\n")
    assert (cfg.eta, cfg.delta, cfg.gamma) == (Fraction(1, 5), Fraction(1, 50), Fraction(1, 1000))
    assert cfg.profile == "theorem1" and cfg.seed == 0 and cfg.k is None


def test_rational_strings():
    cfg = parse_config_text('eta = "1/5"\ndelta = "1/50"\ngamma = "1/200"\n')
    assert cfg.gamma == Fraction(1, 200)


def test_unknown_key():
    with pytest.raises(ParseError) as ei:
        parse_config_text("eta = 0.2\nbogus = 1\n")
    assert ei.value.key == "bogus" and ei.value.line == 2
    assert "bogus" in str(ei.value)


def test_bad_value_reports_line():
    with pytest.raises(ParseError) as ei:
        parse_config_text("eta = 0.2\nL = 2.5\n")
    assert ei.value.key == "L" and ei.value.line == 2


def test_invalid_toml():
    with pytest.raises(ParseError) as ei:
        parse_config_text("eta = \n")
    assert ei.value.line == 1


@pytest.mark.parametrize("alias", [map_core.ValidationError, map_core.ParameterError])
def test_validation_propagates(alias):
    with pytest.raises(alias):
        parse_config_text("eta = 0.3\ndelta = 0.02\n")


def test_round_trip(tmp_path):
    cfg = ExperimentConfig(eta=Fraction(1, 5), delta=Fraction(1, 50), gamma=Fraction(1, 300), k=7,
                           eps_grid=[0.01, 0.19], sigma=[0.1, 0.01], seed=5, out="x")
    path = tmp_path / "c.toml"
    path.write_text(cfg.to_toml())
    back = parse_config(path)
    assert back == cfg
    assert back.to_dict() == cfg.to_dict()


def test_missing_file(tmp_path):
    with pytest.raises(ParseError):
        parse_config(tmp_path / "none.toml")


# ------------------------------------------------------------------- CLI


def test_peierls(capsys):
    assert main(["peierls", "--delta-num", "1", "--delta-den", "4*48^8"]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "1/3"
    assert main(["peierls", "--delta-num", "1", "--delta-den", "48^8"]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "Divergent"


def test_certify_json(tmp_path, capsys):
    out = tmp_path / "cert.json"
    assert main(["certify", "--eta", "1/5", "--delta", "1/50", "--gamma", "1/1000", "--out", str(out)]) == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["meta"]["eps2"] == "14/75"
    assert doc["meta"]["config"]["eta"] == "1/5"
    assert "version" in doc["meta"]


def test_certify_below_eps2_fails(capsys):
    assert main(["certify", "--eps-lo", "1/10", "--eps-hi", "1/5"]) == EXIT_FAIL


def test_invalid_params_exit_2(capsys):
    assert main(["certify", "--eta", "0.3"]) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_bad_flag_exit_2(capsys):
    assert main(["certify", "--eta", "one-fifth"]) == EXIT_USAGE
    assert main(["nosuch"]) == EXIT_USAGE


def test_unknown_config_key_exit_2(tmp_path, capsys):
    p = tmp_path / "c.toml"
    p.write_text("eta = 0.2\nfoo = 3\n")
    assert main(["certify", "--config", str(p)]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "'foo'" in err and "line 2" in err


@pytest.mark.skipif(hasattr(os, "geteuid") and os.geteuid() == 0, reason="root ignores permissions")
def test_unwritable_dir(tmp_path, capsys):
    d = tmp_path / "ro"
    d.mkdir()
    d.chmod(0o500)
    try:
        assert main(["certify", "--out", str(d / "x.json")]) == EXIT_USAGE
    finally:
        d.chmod(0o700)


def test_unwritable_path(tmp_path, capsys):
    f = tmp_path / "file"
    f.write_text("")
    # a regular file cannot be used as a parent directory
    assert main(["certify", "--out", str(f / "x.json")]) == EXIT_USAGE


def test_map_select(capsys):
    assert main(["map", "select", "--gamma", "1/200"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["selection"]["k"] == 19


def test_map_build(tmp_path, capsys):
    out = tmp_path / "m.json"
    assert main(["map", "build", "--which", "tilde", "--out", str(out)]) == EXIT_OK
    m = map_core.PiecewiseLinearMap.from_json(out.read_text())
    assert m == map_core.build_tilde_tau(map_core.validate_params("1/5", "1/50", "1/1000"))


def test_transfer_density(capsys):
    assert main(["transfer", "density", "--gamma", "1/200", "--alpha", "1/2"]) == EXIT_OK
    lines = [ln for ln in capsys.readouterr().out.splitlines() if not ln.startswith("#")]
    assert lines[0] == "x_left,x_right,height"
    assert len(lines) > 2


def _body(path):
    return "".join(ln for ln in path.read_text().splitlines(True) if not ln.startswith("#"))


def test_run_reproducible(tmp_path, capsys):
    cfg = tmp_path / "run.toml"
    cfg.write_text('eta = "1/5"\ndelta = "1/50"\ngamma = "1/200"\nL = 8\nsteps = 50\nreplicas = 2\n'
                   "eps_grid = [0.01, 0.19]\nseed = 3\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(cfg), "--out", str(a)]) == EXIT_OK
    assert main(["run", "--config", str(cfg), "--out", str(b)]) == EXIT_OK
    for name in ("sweep.csv", "summary.csv"):
        assert _body(a / name) == _body(b / name)
    meta = json.loads((a / "meta.json").read_text())
    assert meta["k"] == 19 and meta["config"]["L"] == 8
    header = _body(a / "sweep.csv").splitlines()[0]
    assert header == "eps,L,seed,t,magnetization,frac_negative,origin_sign,error_sites"


def test_pca_csv(tmp_path, capsys):
    out = tmp_path / "pca.csv"
    assert main(["pca", "--p", "0.02", "--L", "8", "--steps", "20", "--out", str(out)]) == EXIT_OK
    lines = _body(out).splitlines()
    assert lines[0] == "p,L,seed,t,magnetization,frac_negative,origin_sign,error_sites"
    assert len(lines) == 21


def test_smooth_build(tmp_path, capsys):
    out = tmp_path / "s.json"
    assert main(["smooth", "build", "--sigma", "0.01", "--out", str(out)]) == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["p"] == 17296 and doc["meta"]["k"] == 6


def test_report_csv_only(tmp_path, capsys):
    out = tmp_path / "rep"
    assert main(["report", "--gamma", "1/200", "--L", "8", "--steps", "50", "--out", str(out)]) == EXIT_OK
    names = {p.name for p in out.iterdir()}
    assert {"k_table.csv", "certify.csv", "peierls.csv", "sweep_summary.csv"} <= names
    assert not any(n.endswith(".png") for n in names)
