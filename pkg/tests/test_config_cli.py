import json
import math

import pytest

from dglab import cli, emit
from dglab.config import load_config
from dglab.errors import InvalidParameter

TWO_PI = 2 * math.pi


def write_cfg(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


# ------------------------------------------------------------------ config


def test_physics_required():
    with pytest.raises(InvalidParameter, match="physics"):
        load_config({})
    with pytest.raises(InvalidParameter, match="s"):
        load_config({"physics": {"beta": 10.0}})


def test_guard_messages_name_the_inequality():
    with pytest.raises(InvalidParameter, match="theta_J"):
        load_config({"physics": {"beta": 10.0, "s": 0.3}})
    with pytest.raises(InvalidParameter, match="base decomposition"):
        load_config({"physics": {"beta": 10.0, "s": 0.1}, "numerics": {"decomposition": "base"}})
    with pytest.raises(InvalidParameter, match="h must be 1/n"):
        load_config({"physics": {"beta": 10.0, "s": 0.0}, "numerics": {"h": 0.3}})
    with pytest.raises(InvalidParameter, match="bogus"):
        load_config({"physics": {"beta": 10.0, "s": 0.0}, "bogus": 1})
    with pytest.raises(InvalidParameter, match="rho"):
        load_config({"physics": {"beta": 10.0, "s": 0.0}, "distribution": {"kind": "range"}})


def test_env_overrides_numerics_only():
    cfg = load_config({"physics": {"beta": 10.0, "s": 0.0}},
                      env={"DGLAB_NUMERICS_J_MAX": "7", "DGLAB_NUMERICS_BETA": "1"})
    assert cfg.numerics.j_max == 7
    assert cfg.physics.beta == 10.0


def test_seed_override_and_range():
    cfg = load_config({"physics": {"beta": 10.0, "s": 0.0}}, seed=2**64 - 1)
    assert cfg.seed == 2**64 - 1
    with pytest.raises(InvalidParameter):
        load_config({"physics": {"beta": 10.0, "s": 0.0}}, seed=2**64)


def test_massless_chain_is_pinned():
    cfg = load_config({"physics": {"beta": 10.0, "s": 0.0}})
    assert cfg.mc.pinned and cfg.resolved()["mc"]["pinned"]
    cfg = load_config({"physics": {"beta": 10.0, "s": 0.0, "m2": 0.1}})
    assert not cfg.mc.pinned


def test_regularity_warning():
    cfg = load_config({"physics": {"beta": 10.0, "s": 0.0},
                       "distribution": {"kind": "range", "rho": 3, "regularity_C": 1.5}})
    assert cfg.guard_warnings()


# -------------------------------------------------------------------- emit


def test_emit_checksums():
    report = {"command": "flow", "status": "PASS", "exit_code": 0, "config": {"a": 1},
              "summary": {"x": 0.1}, "tables": {"trajectory": [{"j": 0, "z1": 0.25}]},
              "warnings": []}
    j = emit.render(report, "json")
    c = emit.render(report, "csv")
    assert emit.verify(j) and emit.verify(c)
    assert not emit.verify(j.replace("0.25", "0.26"))
    assert not emit.verify(c.replace("0.25", "0.26"))
    assert emit.render(report, "json") == j
    assert c.splitlines()[4] == "j,z1"


# --------------------------------------------------------------- service


def test_service_error_mapping():
    client = cli._client(None)  # in-process app
    assert client.get("/health").json()["status"] == "ok"
    r = client.post("/flow", json={"config": {"physics": {"beta": 1.0, "s": 0.9}}})
    assert r.status_code == 422 and r.json()["exit_code"] == 1
    r = client.post("/flow", json={"config": {}, "seed": -1})
    assert r.status_code == 422


# ------------------------------------------------------------------- CLI


def test_cli_usage_errors(capsys, tmp_path):
    assert run(["flow"], capsys)[0] == 1  # missing --config
    assert run(["nope"], capsys)[0] == 1
    assert run(["flow", "--config", str(tmp_path / "missing.json")], capsys)[0] == 1
    bad = write_cfg(tmp_path, {"physics": {"beta": 10.0}})
    code, _, err = run(["flow", "--config", bad], capsys)
    assert code == 1 and "physics.s" in err
    cfg = write_cfg(tmp_path, {"physics": {"beta": 10.0, "s": 0.0}}, "ok.json")
    assert run(["flow", "--config", cfg, "--emit", "xml"], capsys)[0] == 1
    assert run(["flow", "--config", cfg, "--seed", "-3"], capsys)[0] == 1


def test_flow_exit_codes(capsys, tmp_path):
    base = {"geometry": {"L": 8, "N": 3}, "numerics": {"j_max": 8}}
    hi = write_cfg(tmp_path, dict(base, physics={"beta": 2 * TWO_PI, "s": 0.0}), "hi.json")
    lo = write_cfg(tmp_path, dict(base, physics={"beta": 0.5 * TWO_PI, "s": 0.0}), "lo.json")
    code, out, _ = run(["flow", "--config", hi], capsys)
    assert code == 0
    doc = json.loads(out)
    assert doc["summary"]["j0"] is not None and emit.verify(out)
    code, out, _ = run(["flow", "--config", lo], capsys)
    assert code == 2
    assert json.loads(out)["summary"]["divergence_scale"] is not None
    # schema stable and bytes identical across reruns
    assert run(["flow", "--config", lo], capsys)[1] == out


def test_frd_report_csv_and_files(capsys, tmp_path):
    cfg = write_cfg(tmp_path, {"physics": {"beta": 10.0, "s": 0.0}})
    code, out, _ = run(["frd-report", "--config", cfg, "--emit", "csv"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert [ln for ln in lines if not ln.startswith("#")][0] == "p1,p2,j,gamma_hat"
    assert emit.verify(out)
    outdir = tmp_path / "out"
    code, out, _ = run(["frd-report", "--config", cfg, "--out", str(outdir)], capsys)
    assert code == 0 and (outdir / "frd-report.json").exists()
    assert list(outdir.glob("*.dgcov"))


def test_frd_zero_mode_needs_mass(capsys, tmp_path):
    cfg = write_cfg(tmp_path, {"physics": {"beta": 10.0, "s": 0.0}, "frd": {"zero_mode": True}})
    code, out, err = run(["frd-report", "--config", cfg], capsys)
    assert code == 1 and json.loads(err.splitlines()[0])["kind"] == "zero-mode-divergence"


def test_corrupted_covariance_surfaces(capsys, tmp_path):
    cfg = write_cfg(tmp_path, {"physics": {"beta": 10.0, "s": 0.0}})
    outdir = tmp_path / "tables"
    assert run(["frd-report", "--config", cfg, "--out", str(outdir)], capsys)[0] == 0
    table = sorted(outdir.glob("*.dgcov"))[-1]
    data = bytearray(table.read_bytes())
    data[-5] ^= 0x55
    table.write_bytes(bytes(data))
    bad = write_cfg(tmp_path, {"physics": {"beta": 10.0, "s": 0.0},
                               "frd": {"covariance_files": [str(table)]}}, "bad.json")
    code, _, err = run(["validate", "--config", bad, "--criteria", "14"], capsys)
    assert code == 1 and "checksum" in err


def test_validate_subset_and_seed(capsys):
    code, out, _ = run(["validate", "--criteria", "5,6", "--seed", "3"], capsys)
    assert code == 0
    doc = json.loads(out)
    rows = doc["tables"]["criteria"]
    assert [r["number"] for r in rows] == [5, 6]
    assert all(r["status"] == "pass" for r in rows)
    code2, out2, _ = run(["validate", "--criteria", "5,6", "--seed", "4"], capsys)
    strip = lambda d: {k: v for k, v in json.loads(d).items() if k not in ("config", "checksum")}  # noqa: E731
    assert code2 == 0 and strip(out2)["tables"] == strip(out)["tables"]


def test_inequalities_command(capsys, tmp_path):
    cfg = write_cfg(tmp_path, {"physics": {"beta": 10.0, "s": 0.0},
                               "numerics": {"inequality_fields": 30, "closure_max_blocks": 8}})
    code, out, _ = run(["inequalities", "--config", cfg, "--emit", "csv"], capsys)
    assert code == 0
    header = [ln for ln in out.splitlines() if not ln.startswith("#")][0]
    assert header.startswith("check,")
