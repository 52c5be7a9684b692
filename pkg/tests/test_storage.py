import csv
import json

import numpy as np
import pytest
from pydantic import ValidationError

from conftest import ssp_instance
from regular_dp.errors import ModelValidationError
from regular_dp.regions import SRegionDescriptor
from regular_dp.regularity import classify_policies
from regular_dp.schema import BuilderSpec, ExperimentConfig, ModelFile, ReportHeader
from regular_dp.solvers import value_iteration
from regular_dp.storage import (
    atomic_write_text,
    classify_report,
    dump_model,
    load_model,
    model_from_file,
    sha256_file,
    write_trace_csv,
)


def _explicit(**overrides) -> dict:
    doc = {
        "name": "two-state",
        "states": [{"id": 0, "label": "1"}, {"id": 1, "label": "t"}],
        "stop_set": [1],
        "actions": [
            {"state": 0, "control": "self", "cost": 1.0, "transitions": [{"prob": 1.0, "next": 0}]},
            {"state": 0, "control": "to-t", "cost": 5.0, "transitions": [{"prob": 1.0, "next": 1}]},
            {"state": 1, "control": "stay", "transitions": [{"prob": 1.0, "next": 1}]},
        ],
    }
    doc.update(overrides)
    return doc


class TestModelFiles:
    def test_explicit_tables(self, detsp):
        model = model_from_file(ModelFile.model_validate(_explicit()))
        reference = detsp(1.0, 5.0)
        assert model.controls == reference.controls
        np.testing.assert_array_equal(model.transitions, reference.transitions)
        np.testing.assert_array_equal(model.costs, reference.costs)

    def test_builder_entry(self, detsp):
        spec = ModelFile(builder=BuilderSpec(name="detsp", params={"a": 0.0, "b": 3.0}))
        assert model_from_file(spec) == detsp(0.0, 3.0)

    def test_round_trip(self, tmp_path):
        model = ssp_instance(13)
        path = tmp_path / "model.json"
        dump_model(model, path, generated_by=BuilderSpec(name="random-ssp", params={"seed": 13}))
        loaded, digest = load_model(path)
        assert loaded.controls == model.controls
        assert loaded.stop_set == model.stop_set
        np.testing.assert_allclose(loaded.transitions, model.transitions, atol=1e-15)
        np.testing.assert_allclose(loaded.costs, model.costs, atol=1e-15)
        assert digest == sha256_file(path)
        assert json.loads(path.read_text())["generated_by"]["name"] == "random-ssp"

    def test_terminal_tokens(self):
        model = model_from_file(ModelFile.model_validate(_explicit(terminal=["+inf", 0.0])))
        assert model.terminal.to_json() == ["+inf", 0.0]

    def test_both_sources_rejected(self):
        with pytest.raises(ValidationError):
            ModelFile.model_validate(_explicit(builder={"name": "detsp", "params": {"a": 1, "b": 5}}))
        with pytest.raises(ValidationError):
            ModelFile.model_validate({"name": "empty"})

    def test_bad_state_ids(self):
        with pytest.raises(ModelValidationError):
            model_from_file(ModelFile.model_validate(_explicit(states=[{"id": 0}, {"id": 2}])))

    def test_duplicate_control(self):
        doc = _explicit()
        doc["actions"].append({"state": 1, "control": "stay", "transitions": [{"prob": 1.0, "next": 1}]})
        with pytest.raises(ModelValidationError) as err:
            model_from_file(ModelFile.model_validate(doc))
        assert err.value.state == 1

    def test_probabilities_checked_on_load(self):
        doc = _explicit()
        doc["actions"][0]["transitions"][0]["prob"] = 0.5
        with pytest.raises(ModelValidationError):
            model_from_file(ModelFile.model_validate(doc))


class TestWriting:
    def test_atomic_write_leaves_no_temporaries(self, tmp_path):
        target = tmp_path / "out" / "report.json"
        atomic_write_text(target, "first")
        atomic_write_text(target, "second")
        assert target.read_text() == "second"
        assert [p.name for p in target.parent.iterdir()] == ["report.json"]

    def test_trace_csv(self, tmp_path, detsp):
        model = detsp(1.0, 5.0)
        path = tmp_path / "trace.csv"
        write_trace_csv(value_iteration(model, model.lift(0.0)), list(model.state_labels), path)
        rows = list(csv.DictReader(path.open()))
        assert list(rows[0]) == ["iteration", "1", "t", "residual"]
        assert [float(r["1"]) for r in rows] == [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]
        assert float(rows[-1]["residual"]) == 0.0

    def test_classify_report(self, detsp):
        model = detsp(0.0, 3.0)
        header = ReportHeader(config=ExperimentConfig(algo="vi"), model_name=model.name, model_sha256="0" * 64)
        report = classify_report(model, header, classify_policies(model, SRegionDescriptor.all_real()))
        assert report.j_star_s == [3.0, 0.0]
        assert sorted(entry.s_regular for entry in report.policies) == ["certified", "refuted"]
        assert report.region == "all-real"
