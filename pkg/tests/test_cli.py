import io
import json

import numpy as np
import pytest

from hstab.bubbles import BubbleConfig, exact_constants
from hstab.cli import RunConfig, UsageError, build_config, main, parse_config_text
from hstab.grid import build_grid, sample, save_gridfn


def _run(argv):
    out = io.StringIO()
    code = main(argv, stream=out)
    return code, out.getvalue()


def test_identities_pass_n1(tmp_path):
    code, text = _run(["identities", "--n", "1", "--out", str(tmp_path)])
    assert code == 0, text
    assert "FAIL" not in text
    data = json.loads((tmp_path / "identities.json").read_text())
    assert data["passed"] is True and data["command"] == "identities"
    assert (tmp_path / "identities.config").exists()
    assert {c["name"] for c in data["checks"]} >= {"calibration_c0", "bubble_equation_residual", "dilation_identity_ratio"}


def test_tampered_normalization_fails(tmp_path):
    code, text = _run(["identities", "--n", "1", "--c0-scale", "1.01", "--out", str(tmp_path)])
    assert code == 1
    assert "FAIL" in text


def _bubble_file(tmp_path, lam=0.8, tc=0.4, n=1):
    c = exact_constants(n)
    g = build_grid(n, 30.0, -900.0, 900.0, 96)
    u = sample(g, BubbleConfig.on_axis(c, [lam], [tc]).sigma_rt)
    path = tmp_path / "u.hgf"
    save_gridfn(u, path)
    return path


def test_fit_roundtrip(tmp_path):
    path = _bubble_file(tmp_path)
    code, text = _run(["fit", "--input", str(path), "--m", "1", "--init", "0.88:0.5", "--out", str(tmp_path)])
    assert code == 0, text
    res = json.loads((tmp_path / "fit.json").read_text())["fit"]
    assert res["lams"][0] == pytest.approx(0.8, rel=1e-4)
    assert res["centers_t"][0] == pytest.approx(0.4, abs=1e-4)


def test_fit_deficit_only(tmp_path):
    path = _bubble_file(tmp_path)
    code, text = _run(["fit", "--input", str(path), "--m", "0", "--out", str(tmp_path)])
    assert code == 0
    res = json.loads((tmp_path / "fit.json").read_text())
    assert res["deficit"] >= 0.0
    assert "deficit" in text


def test_corrupt_file_exit_2(tmp_path):
    path = _bubble_file(tmp_path)
    data = path.read_bytes()
    path.write_bytes(b"HGF2" + data[4:])
    code, _ = _run(["fit", "--input", str(path), "--out", str(tmp_path)])
    assert code == 2


def test_usage_errors(tmp_path):
    assert _run(["identities", "--bogus-key", "1", "--out", str(tmp_path)])[0] == 2
    assert _run(["identities", "--n", "one", "--out", str(tmp_path)])[0] == 2
    assert _run(["nosuchcommand"])[0] == 2
    assert _run(["fit", "--out", str(tmp_path)])[0] == 2
    assert _run(["fit", "--input", str(tmp_path / "missing.hgf"), "--out", str(tmp_path)])[0] == 2


def test_config_file_and_overrides(tmp_path, monkeypatch):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("# comment\nn = 2\nresolution = 64  # inline\neps = 0.1, 0.05, 0.02\nseed = 7\n")
    monkeypatch.setenv("HSTAB_THREADS", "3")
    cfg = build_config("coercivity", str(cfgfile), ["--resolution=128", "--seed", "9"], str(tmp_path))
    assert cfg.n == 2 and cfg.resolution == 128 and cfg.seed == 9 and cfg.threads == 3
    assert tuple(cfg.eps) == (0.1, 0.05, 0.02)
    assert cfg.out == str(tmp_path)
    again = parse_config_text(cfg.as_text())
    assert RunConfig(command="coercivity", **{k: v for k, v in again.items() if k != "command"}).resolve() == cfg
    with pytest.raises(UsageError):
        parse_config_text("no equals sign here\n")
    with pytest.raises(UsageError):
        build_config("identities", None, ["--n"], None)


def test_defaults_resolve():
    assert RunConfig(command="identities").resolve().n == 1
    assert RunConfig(command="sharp-example").resolve().n == 2
    assert len(RunConfig(command="scaling").resolve().eps) >= 4


def test_scaling_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(["scaling", "--n", "1", "--seed", "3", "--out", str(a)])[0] == 0
    assert _run(["scaling", "--n", "1", "--seed", "3", "--out", str(b)])[0] == 0
    assert (a / "scaling.csv").read_bytes() == (b / "scaling.csv").read_bytes()
    header = (a / "scaling.csv").read_text().splitlines()[0]
    assert header == "quantity,eps,value,err_estimate,slope,predicted,verdict"
