import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from inpatient_map.cases import parse_case, read_cases, serialize_case, write_cases
from inpatient_map.errors import MalformedRecord, UnknownLabel
from inpatient_map.synthetic import make_cases
from inpatient_map.taxonomy import (DEPARTMENTS, DISEASES, LABELS, TREATMENTS, extract_label, label_from_token,
                                    labels_for)


def _record(**over):
    rec = {
        "case_id": "1_2",
        "demographics": {"language": "ENGLISH", "marital_status": "SINGLE", "race": "WHITE", "gender": "F"},
        "radiology_report": "Cardiomegaly.",
        "medical_history": "HTN",
        "diagnoses": [{"icd_code": "I214", "icd_version": 10, "long_title": "NSTEMI", "category": "D14",
                       "priority": 1}],
        "department": "CCU",
        "treatment": "T16",
    }
    rec.update(over)
    return rec


def test_taxonomy_cardinalities():
    assert (len(DEPARTMENTS), len(DISEASES), len(TREATMENTS)) == (9, 17, 16)
    for task, labs in LABELS.items():
        assert [lab.index for lab in labs] == list(range(1, len(labs) + 1))
        assert len({lab.code for lab in labs}) == len(labs)


def test_label_from_token_examples():
    assert label_from_token("diagnosis", "d5").code == "D5"
    assert label_from_token("triage", "Coronary Care Unit").code == "CCU"
    with pytest.raises(UnknownLabel):
        label_from_token("treatment", "T99")
    with pytest.raises(UnknownLabel):
        label_from_token("triage", "")


@given(st.sampled_from(["triage", "diagnosis", "treatment"]), st.data())
def test_label_from_token_round_trips_codes_and_titles(task, data):
    lab = data.draw(st.sampled_from(labels_for(task)))
    assert label_from_token(task, lab.code) == lab
    assert label_from_token(task, lab.code.lower()) == lab
    assert label_from_token(task, lab.long_title) == lab


def test_extract_label_prefers_longest_code_and_rejects_ambiguity():
    assert extract_label("triage", "I would send them to Neuro SICU.").code == "Neuro SICU"
    assert extract_label("diagnosis", "D1 or D14") is None
    assert extract_label("diagnosis", "D14, final answer D14").code == "D14"
    assert extract_label("treatment", "no idea") is None


def test_case_fields_map_directly():
    case = parse_case(json.dumps(_record()))
    assert case.department.code == "CCU"
    assert case.primary_diagnosis.category.code == "D14"
    assert case.gold("treatment").code == "T16"


def test_empty_report_is_malformed():
    with pytest.raises(MalformedRecord):
        parse_case(json.dumps(_record(radiology_report="")))


def test_diagnoses_are_sorted_by_priority():
    dx = [{"icd_code": c, "icd_version": 10, "long_title": c, "category": "D9", "priority": p}
          for c, p in (("J1", 2), ("J2", 1), ("J3", 3))]
    case = parse_case(json.dumps(_record(diagnoses=dx)))
    assert [d.priority for d in case.diagnoses] == [1, 2, 3]
    assert case.primary_diagnosis.icd_code == "J2"


@pytest.mark.parametrize("bad", [
    {"department": "XICU"},
    {"treatment": 7},
    {"diagnoses": []},
    {"diagnoses": [{"icd_code": "A", "icd_version": 8, "long_title": "x", "category": "D1", "priority": 1}]},
])
def test_invalid_records_rejected(bad):
    with pytest.raises(MalformedRecord):
        parse_case(json.dumps(_record(**bad)))


def test_non_json_line_is_malformed():
    with pytest.raises(MalformedRecord):
        parse_case("{not json")


@given(st.integers(0, 10_000), st.integers(1, 8))
def test_serialization_round_trip(seed, n):
    for case in make_cases(n, seed=seed):
        line = serialize_case(case)
        assert parse_case(line) == case
        assert serialize_case(parse_case(line)) == line


def test_write_and_read_cases(tmp_path):
    cases = make_cases(5, seed=3)
    write_cases(tmp_path / "c.jsonl", cases)
    assert read_cases(tmp_path / "c.jsonl") == cases
