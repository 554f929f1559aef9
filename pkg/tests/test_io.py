"""CSV/sidecar record format, configs, artifacts, and report emission."""

import csv
import json

import numpy as np
import pytest

from robustcp import dgp, io
from robustcp.core import CoarsenedRecord, CoarseningLevel
from robustcp.errors import ConfigError, SchemaError
from robustcp.nuisance import fit_covshift_nuisances
from robustcp.scores import RawScore
from robustcp.simulate import SimConfig, run_monte_carlo


def _write_sidecar(tmp_path, side, name="data.json"):
    p = tmp_path / name
    p.write_text(json.dumps(side))
    return p


TWO_STAGE_SIDE = {"D": 1, "K": 1, "x_dim": 1, "z_dims": [1]}


def _rows_to_csv(tmp_path, header, rows, name="data.csv"):
    p = tmp_path / name
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return p


def test_roundtrip_two_stage(tmp_path):
    recs = dgp.gen_setting1(200, seed=0)
    side = io.sidecar_for_records(recs)
    assert side["D"] == 1 and side["x_dim"] == 1 and side["z_dims"] == [2]
    csv_path = tmp_path / "recs.csv"
    io.write_records(csv_path, recs, side)
    back, table = io.read_records(csv_path, side)
    assert table.is_monotone() and table.K == 1
    assert len(back) == len(recs)
    for a, b in zip(recs, back):
        assert a.level == b.level
        assert np.array_equal(a.x, b.x)
        for ba, bb in zip(a.z_blocks, b.z_blocks):
            assert (ba is None) == (bb is None)
            if ba is not None:
                assert np.array_equal(ba, bb)
        assert a.y == b.y


def test_roundtrip_nonmonotone_patterns(tmp_path):
    spec = dgp.default_toy_spec()
    recs = dgp.gen_discrete_toy(spec, "nonmonotone", 300, seed=1)
    patterns = {k: mask for k, mask in spec.nonmono_table().patterns.items() if k > 0}
    side = io.sidecar_for_records(recs, patterns=patterns)
    csv_path = tmp_path / "recs.csv"
    io.write_records(csv_path, recs, side)
    back, table = io.read_records(csv_path, side)
    assert not table.is_monotone()
    assert [r.level for r in back] == [r.level for r in recs]
    assert [r.y for r in back] == [r.y for r in recs]


def test_header_mismatch(tmp_path):
    side = _write_sidecar(tmp_path, TWO_STAGE_SIDE)
    path = _rows_to_csv(tmp_path, ["c", "x_1", "y"], [["inf", "0.0", "1.0"]])
    with pytest.raises(SchemaError, match="header"):
        io.read_records(path, io.load_sidecar(side))


def test_value_where_pattern_says_absent_names_row(tmp_path):
    header = ["c", "x_1", "z1_1", "y"]
    rows = [
        ["inf", "0.0", "1.0", "2.0"],
        ["1", "0.5", "1.0", "3.0"],  # y present at a censored level
    ]
    path = _rows_to_csv(tmp_path, header, rows)
    with pytest.raises(SchemaError, match="row 2"):
        io.read_records(path, TWO_STAGE_SIDE)


def test_missing_required_cell_and_bad_level(tmp_path):
    header = ["c", "x_1", "z1_1", "y"]
    path = _rows_to_csv(tmp_path, header, [["inf", "0.0", "", "2.0"]])
    with pytest.raises(SchemaError, match="row 1"):
        io.read_records(path, TWO_STAGE_SIDE)
    path = _rows_to_csv(tmp_path, header, [["7", "0.0", "", ""]], name="b.csv")
    with pytest.raises(SchemaError, match="row 1"):
        io.read_records(path, TWO_STAGE_SIDE)
    path = _rows_to_csv(tmp_path, header, [["nope", "0.0", "", ""]], name="c.csv")
    with pytest.raises(SchemaError, match="row 1"):
        io.read_records(path, TWO_STAGE_SIDE)
    path = _rows_to_csv(tmp_path, header, [["inf", "abc", "1.0", "2.0"]], name="d.csv")
    with pytest.raises(SchemaError, match="non-numeric"):
        io.read_records(path, TWO_STAGE_SIDE)


def test_sidecar_validation(tmp_path):
    with pytest.raises(SchemaError):
        io.load_sidecar(tmp_path / "missing.json")
    p = _write_sidecar(tmp_path, {"D": 1, "x_dim": 1})
    with pytest.raises(SchemaError, match="z_dims"):
        io.load_sidecar(p)
    p = _write_sidecar(tmp_path, {"D": 2, "x_dim": 1, "z_dims": [1]}, name="b.json")
    with pytest.raises(SchemaError, match="length"):
        io.load_sidecar(p)
    with pytest.raises(SchemaError):
        io.sidecar_for_records([])


def test_load_config_rules(tmp_path):
    good = {"schema_version": 1, "alpha": 0.1, "setting": "setting1"}
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(good))
    cfg = io.load_config(p, allowed_keys={"alpha", "setting"}, required_keys={"setting"})
    assert cfg["alpha"] == 0.1
    p.write_text(json.dumps({**good, "extra": 1}))
    with pytest.raises(ConfigError, match="unknown"):
        io.load_config(p, allowed_keys={"alpha", "setting"})
    p.write_text(json.dumps({"schema_version": 1, "alpha": 0.1}))
    with pytest.raises(ConfigError, match="missing"):
        io.load_config(p, allowed_keys={"alpha", "setting"}, required_keys={"setting"})
    p.write_text(json.dumps({"schema_version": 2, "alpha": 0.1}))
    with pytest.raises(ConfigError, match="schema_version"):
        io.load_config(p, allowed_keys={"alpha"})
    p.write_text(json.dumps({"schema_version": 1, "alpha": 1.5}))
    with pytest.raises(ConfigError, match="alpha"):
        io.load_config(p, allowed_keys={"alpha"})
    p.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="object"):
        io.load_config(p, allowed_keys={"alpha"})
    p.write_text("{bad json")
    with pytest.raises(ConfigError):
        io.load_config(p, allowed_keys={"alpha"})


def test_config_fingerprint_is_order_insensitive():
    a = io.config_fingerprint({"a": 1, "b": 2})
    b = io.config_fingerprint({"b": 2, "a": 1})
    c = io.config_fingerprint({"a": 1, "b": 3})
    assert a == b != c


def test_artifact_roundtrip(tmp_path):
    recs = dgp.gen_gaussian_covshift(400, seed=3)
    grid = np.linspace(-5, 5, 21)
    nu = fit_covshift_nuisances(recs, grid)
    path = tmp_path / "nuisance.pkl"
    io.save_artifact(path, nu, RawScore(), {"setting": "gaussian_covshift", "seed": 3})
    payload = io.load_artifact(path)
    assert payload["fingerprint"] == io.config_fingerprint({"setting": "gaussian_covshift", "seed": 3})
    probe = np.linspace(-1, 1, 5)[:, None]
    assert np.array_equal(
        payload["nuisance"].propensity(1).predict(probe), nu.propensity(1).predict(probe)
    )
    assert payload["score_kind"] == "raw"
    with pytest.raises(SchemaError):
        io.load_artifact(tmp_path / "missing.pkl")


def test_report_emission_deterministic(tmp_path):
    cfg = SimConfig(
        setting="discrete_toy",
        view="covshift",
        n_grid=(25,),
        reps=2,
        score="raw",
        oracle=True,
        test_size=100,
        seed=4,
    )
    report = run_monte_carlo(cfg)
    j1, j2 = tmp_path / "a.json", tmp_path / "b.json"
    io.write_report_json(j1, report)
    io.write_report_json(j2, run_monte_carlo(cfg))
    assert j1.read_bytes() == j2.read_bytes()
    c1 = tmp_path / "a.csv"
    io.write_report_csv(c1, report)
    lines = c1.read_text().strip().splitlines()
    assert lines[0] == "replication,method,n,coverage,width,inf_count"
    assert len(lines) == 1 + 2  # two replications, one method
