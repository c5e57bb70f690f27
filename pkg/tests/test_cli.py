import json

import pytest

from multisle.cli import EXIT_CONFIG, EXIT_MODULE, EXIT_OK, main, parse_config
from multisle.crossing import cardy_crossing
from multisle.io import SCHEMA, SchemaError, read_output


def test_crossing_grid_csv(tmp_path):
    out = tmp_path / "c.csv"
    assert main(["crossing", "--model", "percolation", "--grid", "9", "--out", str(out)]) == EXIT_OK
    doc = read_output(out)
    assert doc["schema"] == SCHEMA and doc["kind"] == "crossing"
    assert doc["header"] == ["x", "probability"]
    assert len(doc["rows"]) == 9
    x, p = doc["rows"][2]
    assert x == pytest.approx(0.3) and p == pytest.approx(cardy_crossing(0.3), abs=1e-12)
    assert doc["config"]["model"] == "percolation"


def test_crossing_generic_json(tmp_path):
    out = tmp_path / "c.json"
    assert main(["crossing", "--model", "generic", "--kappa", "3", "--grid", "3", "--format", "json",
                 "--out", str(out)]) == EXIT_OK
    doc = read_output(out)
    assert len(doc["result"]["rows"]) == 3
    assert doc["result"]["rows"][1][1] == pytest.approx(0.5)


def test_arch_enumeration(tmp_path):
    out = tmp_path / "a.json"
    assert main(["arch", "--n", "6", "--m", "3", "--out", str(out)]) == EXIT_OK
    doc = read_output(out)
    assert doc["result"]["dimension"] == 5
    assert len(doc["result"]["configurations"]) == 5


def test_kappa_out_of_range_rejected(capsys):
    assert main(["crossing", "--model", "generic", "--kappa", "9"]) == EXIT_CONFIG
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError"
    assert any("(0,8)" in p for p in err["problems"])


def test_all_problems_reported_together(capsys):
    assert main(["simulate", "--kappa", "9", "--samples", "0", "--points", "1,0"]) == EXIT_CONFIG
    err = json.loads(capsys.readouterr().err)
    assert len(err["problems"]) >= 3


def test_speeds_normalised_with_warning():
    cfg = parse_config(["simulate", "--points", "0,0.3,1", "--speeds", "1,1,2", "--samples", "4"])
    assert sum(cfg.speeds) == pytest.approx(1.0)
    assert cfg.speeds == pytest.approx((0.25, 0.25, 0.5))
    assert cfg.warnings


def test_config_file_and_override(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("# comment\nmodel = fk_ising\ngrid = 4\n")
    cfg = parse_config(["crossing", "--config", str(conf), "--grid", "2"])
    assert cfg.model == "fk_ising" and cfg.grid == 2
    bad = tmp_path / "bad.conf"
    bad.write_text("kappa = 3\nbogus = 1\n")
    assert main(["crossing", "--config", str(bad)]) == EXIT_CONFIG


def test_show_defaults(capsys):
    assert main(["--show-defaults"]) == EXIT_OK
    text = capsys.readouterr().out
    for sub in ("crossing", "simulate", "partition", "arch", "classical"):
        assert f"[{sub}]" in text
    assert "cap = 1000000.0" in text


def test_partition_placeholder_grid(tmp_path):
    out = tmp_path / "p.csv"
    assert main(["partition", "--kappa", "6", "--grid", "4", "--out", str(out)]) == EXIT_OK
    doc = read_output(out)
    assert len(doc["rows"]) == 4
    zcol = doc["header"].index("Z")
    assert all(r[zcol] == pytest.approx(1.0, abs=1e-10) for r in doc["rows"])
    res = [i for i, h in enumerate(doc["header"]) if h.startswith("residual")]
    assert all(abs(r[i]) < 1e-4 for r in doc["rows"] for i in res)


def test_classical_branches(tmp_path):
    out = tmp_path / "k.json"
    assert main(["classical", "--points", "0,1", "--format", "json", "--out", str(out)]) == EXIT_OK
    doc = read_output(out)
    vals = sorted(tuple(round(v, 9) for v in b["values"]) for b in doc["result"]["branches"])
    assert vals == [(-2.0, 2.0), (6.0, -6.0)]
    assert doc["result"]["classical"] is True


def test_simulate_roundtrip(tmp_path):
    out, oc, tr = tmp_path / "s.json", tmp_path / "o.jsonl", tmp_path / "t.csv"
    code = main(["simulate", "--points", "0,0.5,1", "--partition", "fourpoint:1,1", "--samples", "40",
                 "--seed", "3", "--format", "json", "--out", str(out), "--outcomes", str(oc),
                 "--traces", "2", "--trace-stride", "50", "--trace-out", str(tr)])
    assert code == EXIT_OK
    doc = read_output(out)
    res = doc["result"]
    assert sum(res["arch_counts"].values()) + res["failures"] == 40
    assert res["analytic"]["(1,2)|3"] == pytest.approx(0.5)
    recs = read_output(oc)
    assert recs["kind"] == "outcomes" and len(recs["records"]) == 40
    assert {r["sample_id"] for r in recs["records"]} == set(range(40))
    traces = read_output(tr)
    assert traces["header"] == ["sample_id", "curve_id", "point_index", "re", "im"]
    assert {r[0] for r in traces["rows"]} == {0, 1}
    # same seed, same result
    out2 = tmp_path / "s2.json"
    main(["simulate", "--points", "0,0.5,1", "--partition", "fourpoint:1,1", "--samples", "40",
          "--seed", "3", "--format", "json", "--out", str(out2)])
    assert read_output(out2)["result"]["arch_counts"] == res["arch_counts"]


def test_module_error_exit(capsys):
    assert main(["crossing", "--model", "potts", "--q", "0"]) == EXIT_MODULE
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "CrossingDomainError"


def test_read_output_rejects_foreign_schema(tmp_path):
    f = tmp_path / "x.json"
    f.write_text(json.dumps({"schema": "other/9", "kind": "k", "config": {}, "result": 1}))
    with pytest.raises(SchemaError):
        read_output(f)
