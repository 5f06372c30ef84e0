import json

import numpy as np
import pytest

from loreg.errors import SpecError
from loreg.simgen import GraphSpec
from loreg.simulation import (
    DEFAULT_METHODS,
    MethodSpec,
    SimulationSpec,
    evaluate_run,
    run_replication,
    run_simulation,
)

SMALL = {
    "schema_version": 1,
    "graph": {"family": "band", "p": 20},
    "n": 100,
    "replications": 3,
    "methods": ["loreg:S", "loreg:S|US|S", "lasso:T|T|S"],
    "seed": 11,
}


def small_spec(**kw):
    d = json.loads(json.dumps(SMALL))
    d.update(kw)
    return SimulationSpec.from_dict(d)


def test_method_parsing():
    m = MethodSpec.parse("loreg:S|US|S")
    assert m.thresholded and m.label == "loreg:S|US|S" and m.slug == "loreg_S__US__S"
    assert MethodSpec.parse(" lasso:T ").label == "lasso:T"
    for bad in ("loreg", "glasso:S", "loreg:X", "loreg:S|US"):
        with pytest.raises(ValueError):
            MethodSpec.parse(bad)
    assert len(DEFAULT_METHODS) == 11


def test_spec_round_trip():
    spec = small_spec(tuning={"t_max": "auto"}, distribution="subgaussian")
    again = SimulationSpec.from_json(spec.to_json())
    assert again.to_dict() == spec.to_dict()
    assert again.to_json() == spec.to_json()
    assert again.hash() == spec.hash()


def test_spec_unknown_field_reports_line():
    text = '{\n  "schema_version": 1,\n  "graph": {"family": "band", "p": 10},\n  "n": 50,\n' \
           '  "replications": 2,\n  "sed": 4\n}\n'
    with pytest.raises(SpecError) as exc:
        SimulationSpec.from_json(text)
    assert exc.value.field == "sed" and exc.value.line == 6
    assert "sed" in str(exc.value) and "line 6" in str(exc.value)


@pytest.mark.parametrize("patch", [
    {"schema_version": 2}, {"n": 2}, {"replications": 0}, {"distribution": "t"}, {"fdr_level": 1.0},
    {"methods": []}, {"methods": ["loreg:Q"]}, {"graph": {"family": "hub", "p": 25}},
    {"graph": {"family": "band", "p": 10, "colour": 1}}, {"tuning": {"t_max": -1}},
])
def test_spec_validation(patch):
    with pytest.raises(SpecError):
        small_spec(**patch)


def test_replication_is_order_independent():
    spec = small_spec()
    omega = np.eye(20) + 0.3 * (np.abs(np.subtract.outer(range(20), range(20))) == 1)
    a = run_replication(spec, omega, 2)
    b = run_replication(spec, omega, 2)
    for k in a["methods"]:
        np.testing.assert_array_equal(a["methods"][k], b["methods"][k])
    assert set(a["normality"]) == {"loreg:US", "loreg:T", "lasso:T"}


def test_run_determinism_and_self_consistency(tmp_path):
    spec = small_spec()
    r1 = run_simulation(spec, tmp_path / "a", parallelism=1)
    run_simulation(spec, tmp_path / "b", parallelism=2)
    m1 = (tmp_path / "a" / "metrics.json").read_bytes()
    assert m1 == (tmp_path / "b" / "metrics.json").read_bytes()
    run_simulation(spec, tmp_path / "a", parallelism=1)
    assert (tmp_path / "a" / "metrics.json").read_bytes() == m1
    assert evaluate_run(tmp_path / "a") == json.loads(m1) == r1
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    paths = {f["path"] for f in manifest["files"]}
    assert {"spec.json", "omega_true.csv", "metrics.json", "metrics_table.csv"} <= paths
    assert "replications/rep_0002/loreg_S__US__S.csv" in paths
    assert manifest["graph"]["edge_count"] == 37
    assert [s["spawn_key"] for s in manifest["seeds"]] == [[0, 1], [1, 1], [2, 1]]
    table = (tmp_path / "a" / "metrics_table.csv").read_text().splitlines()
    assert table[0].startswith("method,l1_mean,l1_sd") and len(table) == 4
    assert set(r1["normality"]["loreg:T"]) == {"S_hat", "S_omega", "S_omega_c"}


def test_thresholding_changes_only_off_support(tmp_path):
    spec = small_spec(replications=2, normality=False)
    rec = run_replication(spec, np.linalg.inv(np.linalg.inv(
        np.eye(20) + 0.4 * (np.abs(np.subtract.outer(range(20), range(20))) == 1))), 0)
    S, TS = rec["methods"]["loreg:S"], rec["methods"]["loreg:S|US|S"]
    kept = TS != 0
    np.testing.assert_array_equal(TS[kept], S[kept])
    np.testing.assert_array_equal(np.diag(TS), np.diag(S))


def test_hub_manifest_edge_count(tmp_path):
    spec = SimulationSpec(GraphSpec("hub", 200), n=10, replications=1, methods=("loreg:S",),
                          tuning=SimulationSpec.from_dict(SMALL).tuning, save_estimates=False)
    spec.tuning.fixed_t = 1
    run_simulation(spec, tmp_path, parallelism=1)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["graph"]["edge_count"] == 180
    with pytest.raises(SpecError):
        evaluate_run(tmp_path)


@pytest.mark.slow
def test_band_p200_frobenius_window():
    spec = SimulationSpec(GraphSpec("band", 200), n=400, replications=20, methods=("loreg:S",),
                          seed=2024, normality=False, save_estimates=False)
    report = run_simulation(spec, parallelism=1)
    assert 1.73 <= report["methods"]["loreg:S"]["summary"]["frobenius"]["mean"] <= 1.93
