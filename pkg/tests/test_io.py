import json

import numpy as np
import pytest
from pydantic import ValidationError

from aipw_gmm import load_csv
from aipw_gmm.IO.Ingest import export_csv, ingest
from aipw_gmm.IO.Report import build_payload, significance_stars, write_json
from aipw_gmm.Utils.Aliases import assumption_map, estimator_map, normalize_alias
from aipw_gmm.Utils.Config import RoleConfig, RunConfig, load_config_file, merge_settings
from aipw_gmm.Utils.Errors import ConfigurationError, FullyObservedViolation, ParseError
from aipw_gmm.Utils.Shared import context

ROLES = RoleConfig(outcome="y", treatment="d", instruments=("z",), covariates=("x",))


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_empty_outcome_cell(tmp_path):
    path = write(tmp_path, "y,d,z,x\n1.5,1,0,0.2\n,0,1,0.4\n2.0,NA,1,0.9\n")
    dataset = ingest(path, ROLES)
    assert dataset.r_y.tolist() == [True, False, True]
    assert dataset.r_d.tolist() == [True, True, False]
    assert dataset.z_names == ("z", "x")
    assert dataset.x_names == ("x",)


def test_missing_covariate_names_the_cell(tmp_path):
    path = write(tmp_path, "y,d,z,x\n1.5,1,0,0.2\n1.0,0,1,NA\n")
    with pytest.raises(FullyObservedViolation, match="line 3"):
        ingest(path, ROLES)


def test_unparseable_cell(tmp_path):
    path = write(tmp_path, "y,d,z,x\n1.5,1,0,0.2\n1.0,yes,1,0.3\n")
    with pytest.raises(ParseError) as excinfo:
        ingest(path, ROLES)
    assert excinfo.value.line == 3
    assert excinfo.value.column == "d"


def test_role_problems(tmp_path):
    path = write(tmp_path, "y,d,z,x\n1.5,2,0,0.2\n1.0,0,1,0.3\n")
    with pytest.raises(ConfigurationError):
        ingest(path, RoleConfig(outcome="y", treatment="d", instruments="z,w"))
    with pytest.raises(ConfigurationError):
        ingest(path, RoleConfig(outcome="y", treatment="d", instruments="z", treatment_type="binary"))
    with pytest.raises(ConfigurationError):
        ingest(tmp_path / "absent.csv", ROLES)


def test_intercept_and_quoting(tmp_path):
    path = write(tmp_path, 'y,d,z,x\n"1.5",1,0,0.2\n1.0,.,1,0.3\n')
    dataset = load_csv(path, {"outcome": "y", "treatment": "d", "instruments": ["z"], "covariates": ["x"],
                              "add_intercept": True, "covariates_as_instruments": False})
    assert dataset.z_names == ("const", "z")
    assert dataset.x_names == ("const", "x")
    assert dataset.y.compressed().tolist() == [1.5, 1.0]
    assert not dataset.r_d[1]


def test_export_then_ingest_round_trip(tmp_path, sim_draw):
    dataset = sim_draw.to_dataset()
    path = tmp_path / "out" / "sim.csv"
    export_csv(dataset, path, ROLES)
    assert ingest(path, ROLES).equals(dataset)


def test_role_config_validation():
    roles = RoleConfig(outcome="y", treatment="d", instruments="z1, z2", treatment_type="discrete",
                       treatment_values=(2, 0, 1))
    assert roles.instruments == ("z1", "z2")
    assert roles.d_support == (0.0, 1.0, 2.0)
    with pytest.raises(ValidationError):
        RoleConfig(outcome="y", treatment="y", instruments="z")
    with pytest.raises(ValidationError):
        RoleConfig(outcome="y", treatment="d", instruments="z", treatment_type="discrete")


def test_run_config():
    run = RunConfig(estimator="aipw", assumption="mar", pattern_mode="general", sieve="cv")
    assert run.moment_kind.value == "AIPW_GENERAL"
    assert run.assumption.value == "MAR"
    assert len(run.sieve_choice) == 5
    assert run.clamp_bounds is None
    assert RunConfig(clamp_lo=0.05).clamp_bounds == (0.05, 1.0)
    with pytest.raises(ValidationError):
        RunConfig(estimator="ols")


def test_config_files(tmp_path):
    yaml_path = write(tmp_path, "outcome: y\ninstruments: [z]\ndegree: 3\n", "run.yaml")
    assert load_config_file(yaml_path) == {"outcome": "y", "instruments": ["z"], "degree": 3}
    json_path = write(tmp_path, json.dumps({"seed": 4}), "run.json")
    assert load_config_file(json_path) == {"seed": 4}
    with pytest.raises(ConfigurationError):
        load_config_file(write(tmp_path, "- a\n- b\n", "list.yaml"))
    with pytest.raises(ConfigurationError):
        load_config_file(tmp_path / "absent.yaml")


def test_merge_settings():
    merged = merge_settings({"degree": 3, "seed": 1, "nested": {"a": 1}}, {"degree": None, "seed": 2,
                                                                           "nested": {"b": 2}})
    assert merged == {"degree": 3, "seed": 2, "nested": {"a": 1, "b": 2}}


def test_runtime_context(monkeypatch):
    monkeypatch.setenv("AIPW_GMM_THREADS", "3")
    monkeypatch.setenv("AIPW_GMM_CLAMP_LO", "0.05")
    assert context.threads == 3
    assert context.clamp_bounds == (0.05, 1.0)
    context.threads = 2
    assert context.threads == 2
    monkeypatch.setenv("AIPW_GMM_CLAMP_LO", "2")
    with pytest.raises(ConfigurationError):
        context.clamp_bounds
    with pytest.raises(ConfigurationError):
        context.clamp_bounds = (0.5, 0.4)


def test_aliases():
    assert normalize_alias(assumption_map, "Sequential-MAR") == "SMAR"
    assert normalize_alias(estimator_map, " DR ") == "AIPW"
    assert normalize_alias(estimator_map, "unknown") == "unknown"


def test_report_helpers(tmp_path, capsys):
    assert [significance_stars(p) for p in (0.0005, 0.005, 0.02, 0.2)] == ["***", "**", "*", ""]
    payload = build_payload("estimate", {"seed": 1}, {"values": np.array([1.0, np.nan])}, seed=1)
    assert payload["results"]["values"] == [1.0, None]
    write_json(payload, tmp_path / "nested" / "out.json")
    assert json.loads((tmp_path / "nested" / "out.json").read_text())["meta"]["command"] == "estimate"
    write_json(payload, "-")
    assert json.loads(capsys.readouterr().out)["meta"]["seed"] == 1


def test_ragged_row_reports_its_line(tmp_path):
    path = write(tmp_path, "y,d,z,x\n1.5,1,0,0.2\n1.0,0,1,0.3,9,9\n")
    with pytest.raises(ParseError, match="line 3") as excinfo:
        ingest(path, ROLES)
    assert excinfo.value.line == 3
    assert excinfo.value.column is None


def test_invalid_utf8_reports_its_line(tmp_path):
    path = tmp_path / "latin.csv"
    path.write_bytes(b"y,d,z,x\n1.5,1,0,0.2\n1.0,\xff\xfe,1,0.3\n")
    with pytest.raises(ParseError, match="not valid UTF-8") as excinfo:
        ingest(path, ROLES)
    assert excinfo.value.line == 3


def test_empty_file_is_a_parse_error(tmp_path):
    with pytest.raises(ParseError) as excinfo:
        ingest(write(tmp_path, ""), ROLES)
    assert excinfo.value.line == 1
