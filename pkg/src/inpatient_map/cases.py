"""Patient case records and their JSON-lines wire format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import MalformedRecord, UnknownLabel
from .taxonomy import Label, by_code

UNKNOWN = "UNKNOWN"
MAX_DIAGNOSES = 3


@dataclass(frozen=True)
class Demographics:
    language: str = UNKNOWN
    marital_status: str = UNKNOWN
    race: str = UNKNOWN
    gender: str = UNKNOWN

    def render(self) -> str:
        return (
            f"Gender: {self.gender}; Race: {self.race}; "
            f"Marital status: {self.marital_status}; Language: {self.language}"
        )


@dataclass(frozen=True)
class DiagnosisRecord:
    icd_code: str
    icd_version: int
    long_title: str
    category: Label
    priority: int

    def __post_init__(self):
        if self.icd_version not in (9, 10):
            raise MalformedRecord(f"icd_version must be 9 or 10, got {self.icd_version!r}")
        if not isinstance(self.priority, int) or self.priority < 1:
            raise MalformedRecord(f"priority must be a positive integer, got {self.priority!r}")


@dataclass(frozen=True)
class PatientCase:
    case_id: str
    demographics: Demographics
    radiology_report: str
    medical_history: str
    diagnoses: tuple[DiagnosisRecord, ...]
    department: Label
    treatment: Label

    def __post_init__(self):
        if not self.case_id:
            raise MalformedRecord("case_id is empty")
        if not self.radiology_report or not self.radiology_report.strip():
            raise MalformedRecord(f"{self.case_id}: radiology_report is empty")
        if not self.diagnoses:
            raise MalformedRecord(f"{self.case_id}: at least one diagnosis is required")
        if len(self.diagnoses) > MAX_DIAGNOSES:
            raise MalformedRecord(f"{self.case_id}: more than {MAX_DIAGNOSES} diagnoses")
        ordered = tuple(sorted(self.diagnoses, key=lambda d: d.priority))
        object.__setattr__(self, "diagnoses", ordered)

    @property
    def primary_diagnosis(self) -> DiagnosisRecord:
        return self.diagnoses[0]

    def gold(self, task: str) -> Label:
        if task == "triage":
            return self.department
        if task == "diagnosis":
            return self.primary_diagnosis.category
        if task == "treatment":
            return self.treatment
        raise ValueError(f"unknown task {task!r}")

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "demographics": {
                "language": self.demographics.language,
                "marital_status": self.demographics.marital_status,
                "race": self.demographics.race,
                "gender": self.demographics.gender,
            },
            "radiology_report": self.radiology_report,
            "medical_history": self.medical_history,
            "diagnoses": [
                {
                    "icd_code": d.icd_code,
                    "icd_version": d.icd_version,
                    "long_title": d.long_title,
                    "category": d.category.code,
                    "priority": d.priority,
                }
                for d in self.diagnoses
            ],
            "department": self.department.code,
            "treatment": self.treatment.code,
        }


@dataclass(frozen=True)
class DatasetSplit:
    train: list[PatientCase] = field(default_factory=list)
    test: list[PatientCase] = field(default_factory=list)
    seed: int = 0


def _require(obj, key, kind, where):
    if not isinstance(obj, dict) or key not in obj:
        raise MalformedRecord(f"{where}: missing field {key!r}")
    value = obj[key]
    if not isinstance(value, kind) or isinstance(value, bool):
        raise MalformedRecord(f"{where}: field {key!r} has wrong type {type(value).__name__}")
    return value


def _label(task, token, where):
    try:
        return by_code(task, token)
    except UnknownLabel as exc:
        raise MalformedRecord(f"{where}: {exc}") from None


def case_from_dict(rec: dict) -> PatientCase:
    if not isinstance(rec, dict):
        raise MalformedRecord("case record must be a JSON object")
    case_id = _require(rec, "case_id", str, "case")
    where = f"case {case_id}"
    demo_raw = _require(rec, "demographics", dict, where)
    demo = Demographics(
        **{
            k: (demo_raw.get(k) or UNKNOWN)
            for k in ("language", "marital_status", "race", "gender")
        }
    )
    diagnoses = []
    for i, d in enumerate(_require(rec, "diagnoses", list, where)):
        dw = f"{where} diagnosis[{i}]"
        diagnoses.append(
            DiagnosisRecord(
                icd_code=_require(d, "icd_code", str, dw),
                icd_version=_require(d, "icd_version", int, dw),
                long_title=_require(d, "long_title", str, dw),
                category=_label("diagnosis", _require(d, "category", str, dw), dw),
                priority=_require(d, "priority", int, dw),
            )
        )
    return PatientCase(
        case_id=case_id,
        demographics=demo,
        radiology_report=_require(rec, "radiology_report", str, where),
        medical_history=rec.get("medical_history") or "",
        diagnoses=tuple(diagnoses),
        department=_label("triage", _require(rec, "department", str, where), where),
        treatment=_label("treatment", _require(rec, "treatment", str, where), where),
    )


def parse_case(line: str) -> PatientCase:
    """Parse one JSON-lines record into a validated :class:`PatientCase`."""
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"invalid JSON: {exc}") from None
    return case_from_dict(rec)


def serialize_case(case: PatientCase) -> str:
    return json.dumps(case.to_dict(), ensure_ascii=False)


def read_cases(path: str | Path) -> list[PatientCase]:
    cases = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                cases.append(parse_case(line))
            except MalformedRecord as exc:
                raise MalformedRecord(f"{path}:{lineno}: {exc}") from None
    return cases


def iter_lines(cases: Iterable[PatientCase]) -> Iterator[str]:
    for case in cases:
        yield serialize_case(case) + "\n"


def write_cases(path: str | Path, cases: Iterable[PatientCase]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(iter_lines(cases))
