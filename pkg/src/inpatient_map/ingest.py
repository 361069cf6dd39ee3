"""Build the inpatient case dataset from MIMIC-IV shaped CSV tables.

Pipeline: load and column-check the source tables, join them per hospital
admission with an ICU stay, drop admissions without a radiology report (and
other unusable rows, each with its own counter), map ICD codes to the 17
disease categories and services to the 16 treatments, then split.
"""

from __future__ import annotations

import dataclasses
import json
import random
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import pandas as pd

from .cases import UNKNOWN, DatasetSplit, Demographics, DiagnosisRecord, PatientCase, write_cases
from .errors import InputError, InsufficientCases, MissingColumn, MissingTable, UnknownLabel, UnmappedCode
from .taxonomy import Label, by_code, label_from_token

TABLE_COLUMNS = {
    "admissions": ("subject_id", "hadm_id", "language", "marital_status", "race"),
    "patients": ("subject_id", "gender"),
    "d_icd_diagnoses": ("icd_code", "icd_version", "long_title"),
    "diagnoses_icd": ("subject_id", "hadm_id", "seq_num", "icd_code", "icd_version"),
    "services": ("subject_id", "hadm_id", "transfertime", "curr_service"),
    "discharge": ("subject_id", "hadm_id", "text"),
    "radiology": ("subject_id", "hadm_id", "text"),
    "icustays": ("subject_id", "hadm_id", "stay_id", "first_careunit", "intime"),
}

DEDUP_POLICY = "all admissions kept; a subject with several ICU admissions contributes one case per admission"


@dataclass
class SourceTables:
    admissions: pd.DataFrame
    patients: pd.DataFrame
    d_icd_diagnoses: pd.DataFrame
    diagnoses_icd: pd.DataFrame
    services: pd.DataFrame
    discharge: pd.DataFrame
    radiology: pd.DataFrame
    icustays: pd.DataFrame


def load_source_tables(dir_path: str | Path) -> SourceTables:
    """Read the eight ``<table>.csv`` files, all columns as strings.

    Raises:
        MissingTable: a file is absent.
        MissingColumn: a required column is absent from a file.
    """
    dir_path = Path(dir_path)
    frames = {}
    for name, cols in TABLE_COLUMNS.items():
        path = dir_path / f"{name}.csv"
        if not path.is_file():
            raise MissingTable(f"{name}.csv")
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
        for col in cols:
            if col not in df.columns:
                raise MissingColumn(f"{name}.csv: {col}")
        frames[name] = df
    return SourceTables(**frames)


# ---------------------------------------------------------------------------
# Mapping files


def normalize_icd(code: str) -> str:
    return re.sub(r"[\s.]", "", code or "").upper()


@dataclass(frozen=True)
class IcdRange:
    version: int
    lo: str
    hi: str
    category: Label

    def contains(self, code: str) -> bool:
        head = code[: len(self.lo)]
        return len(head) == len(self.lo) and self.lo <= head <= self.hi


@dataclass(frozen=True)
class IcdCategoryMap:
    ranges: tuple[IcdRange, ...]

    def __post_init__(self):
        by_key = {}
        for r in self.ranges:
            if r.version not in (9, 10):
                raise InputError(f"ICD map: version must be 9 or 10, got {r.version}")
            if len(r.lo) != len(r.hi) or r.lo > r.hi:
                raise InputError(f"ICD map: bad interval {r.lo}-{r.hi}")
            by_key.setdefault((r.version, len(r.lo)), []).append(r)
        for (version, _), group in by_key.items():
            group = sorted(group, key=lambda r: r.lo)
            for a, b in zip(group, group[1:]):
                if b.lo <= a.hi:
                    raise InputError(f"ICD map: overlapping ICD-{version} intervals {a.lo}-{a.hi} and {b.lo}-{b.hi}")

    def lookup(self, code: str, version: int) -> Label:
        norm = normalize_icd(code)
        if version not in (9, 10):
            raise UnmappedCode(f"unsupported ICD version {version!r}")
        if not norm:
            raise UnmappedCode("empty ICD code")
        best = None
        for r in self.ranges:
            if r.version == version and r.contains(norm) and (best is None or len(r.lo) > len(best.lo)):
                best = r
        if best is None:
            raise UnmappedCode(f"ICD-{version} {code!r} matches no interval")
        return best.category


def _read_tsv(path) -> list[list[str]]:
    rows = []
    source = path if hasattr(path, "read_text") else Path(path)
    text = source.read_text(encoding="utf-8")
    for line in text.splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        rows.append([c.strip() for c in line.split("\t")])
    return rows


def _default_data(name):
    return resources.files("inpatient_map").joinpath("data", name)


def load_icd_map(path=None) -> IcdCategoryMap:
    ranges = []
    for row in _read_tsv(path or _default_data("icd_map.tsv")):
        if len(row) != 4:
            raise InputError(f"icd_map row needs 4 columns: {row}")
        version, lo, hi, cat = row
        try:
            ranges.append(IcdRange(int(version), normalize_icd(lo), normalize_icd(hi), by_code("diagnosis", cat)))
        except (ValueError, UnknownLabel) as exc:
            raise InputError(f"icd_map row {row}: {exc}") from None
    return IcdCategoryMap(tuple(ranges))


def load_svc_map(path=None) -> dict[str, Label]:
    entries = {}
    for row in _read_tsv(path or _default_data("svc_map.tsv")):
        if len(row) != 2:
            raise InputError(f"svc_map row needs 2 columns: {row}")
        try:
            entries[row[0].upper()] = by_code("treatment", row[1])
        except UnknownLabel as exc:
            raise InputError(f"svc_map row {row}: {exc}") from None
    return entries


def map_icd_to_category(code: str, version: int, icd_map: IcdCategoryMap) -> Label:
    return icd_map.lookup(code, version)


CAREUNIT_ALIASES = {"MICU/SICU": "MSICU", "MED/SURG": "MSICU"}
_PAREN = re.compile(r"\(([^()]+)\)\s*$")


def department_from_careunit(value: str) -> Label | None:
    """Map a MIMIC ``first_careunit`` string to one of the nine departments."""
    value = (value or "").strip()
    if not value:
        return None
    m = _PAREN.search(value)
    candidates = [m.group(1).strip()] if m else []
    candidates.append(value)
    for cand in candidates:
        cand = CAREUNIT_ALIASES.get(cand.upper(), cand)
        try:
            return label_from_token("triage", cand)
        except UnknownLabel:
            continue
    return None


# ---------------------------------------------------------------------------
# History extraction

_HISTORY_HEADER = re.compile(r"past\s+medical\s+history\s*:?", re.IGNORECASE)
_COLON_HEADER = re.compile(r"^[ \t]*[A-Z][A-Za-z /&()-]{1,60}:")
_CAPS_HEADER = re.compile(r"^[ \t]*[A-Z][A-Z &]{5,}[ \t]*$")


def _is_header(line: str) -> bool:
    return bool(_COLON_HEADER.match(line)) or (bool(_CAPS_HEADER.match(line)) and " " in line.strip())


def extract_history(discharge_text: str) -> str:
    """Text of the "Past Medical History" section, or "" when absent.

    The section runs from the header to the next section header: a line that
    starts with a colon-terminated title ("Social History:") or an all-caps
    multi-word title ("PHYSICAL EXAM").
    """
    if not discharge_text:
        return ""
    m = _HISTORY_HEADER.search(discharge_text)
    if not m:
        return ""
    lines = discharge_text[m.end():].split("\n")
    kept = lines[:1]
    for line in lines[1:]:
        if _is_header(line):
            break
        kept.append(line)
    return "\n".join(kept).strip()


# ---------------------------------------------------------------------------
# Join


@dataclass
class BuildReport:
    n_icu_admissions: int = 0
    n_cases: int = 0
    dropped_no_admission: int = 0
    dropped_unmapped_department: int = 0
    dropped_null_radiology: int = 0
    dropped_no_diagnosis: int = 0
    dropped_unmapped_icd: int = 0
    dropped_no_service: int = 0
    dropped_unmapped_service: int = 0
    missing_history_section: int = 0
    missing_icd_title: int = 0
    skipped_unmapped_diagnosis_rows: int = 0
    blanked_history: int = 0
    unmapped_icd_codes: list[str] = field(default_factory=list)
    unmapped_services: list[str] = field(default_factory=list)
    unmapped_careunits: list[str] = field(default_factory=list)
    dedup_policy: str = DEDUP_POLICY
    history_screen: str = "off"
    split: dict = field(default_factory=dict)

    @property
    def total_dropped(self) -> int:
        return sum(v for k, v in dataclasses.asdict(self).items() if k.startswith("dropped_"))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["total_dropped"] = self.total_dropped
        return d


def _id_key(value: str):
    return (0, int(value), "") if value.isdigit() else (1, 0, value)


def _group(df: pd.DataFrame) -> dict:
    return {key: g for key, g in df.groupby(["subject_id", "hadm_id"], sort=False)}


def _first_nonempty(df: pd.DataFrame | None, col: str) -> str:
    if df is None:
        return ""
    for v in df[col]:
        if v and v.strip():
            return v
    return ""


def _sorted(df: pd.DataFrame, cols: Sequence[str]) -> pd.DataFrame:
    cols = [c for c in cols if c in df.columns]
    return df.sort_values(cols, kind="stable") if cols else df


def join_cases(tables: SourceTables, icd_map: IcdCategoryMap, svc_map: dict[str, Label]) -> tuple[list[PatientCase], BuildReport]:
    """One case per (subject_id, hadm_id) with an ICU stay.

    Every ICU admission either becomes a case or increments exactly one
    ``dropped_*`` counter, checked in the field order of :class:`BuildReport`.
    """
    report = BuildReport()
    unmapped_icd, unmapped_svc, unmapped_cu = set(), set(), set()

    icu = tables.icustays.copy()
    icu["_order"] = range(len(icu))
    icu = icu.sort_values(["intime", "_order"], kind="stable")
    first_unit = {}
    for _, row in icu.iterrows():
        first_unit.setdefault((row["subject_id"], row["hadm_id"]), row["first_careunit"])
    keys = sorted(first_unit, key=lambda k: (_id_key(k[0]), _id_key(k[1])))
    report.n_icu_admissions = len(keys)

    admissions = {(r.subject_id, r.hadm_id): r for r in tables.admissions.itertuples(index=False)}
    gender = {r.subject_id: r.gender for r in tables.patients.itertuples(index=False)}
    titles = {(normalize_icd(r.icd_code), str(r.icd_version).strip()): r.long_title
              for r in tables.d_icd_diagnoses.itertuples(index=False)}
    radiology = _group(_sorted(tables.radiology, ["charttime", "note_id"]))
    discharge = _group(_sorted(tables.discharge, ["charttime", "note_id"]))
    diagnoses = _group(tables.diagnoses_icd)
    services = _group(_sorted(tables.services, ["transfertime"]))

    cases = []
    for key in keys:
        subject_id, hadm_id = key
        adm = admissions.get(key)
        if adm is None:
            report.dropped_no_admission += 1
            continue
        dept = department_from_careunit(first_unit[key])
        if dept is None:
            report.dropped_unmapped_department += 1
            unmapped_cu.add(first_unit[key])
            continue
        rad = radiology.get(key)
        notes = [t.strip() for t in (rad["text"] if rad is not None else []) if t and t.strip()]
        if not notes:
            report.dropped_null_radiology += 1
            continue
        dx = diagnoses.get(key)
        if dx is None or dx.empty:
            report.dropped_no_diagnosis += 1
            continue
        dx = dx.assign(seq_order=dx["seq_num"].astype(int)).sort_values("seq_order", kind="stable").head(3)
        records = []
        for r in dx.itertuples(index=False):
            version = int(r.icd_version)
            try:
                cat = icd_map.lookup(r.icd_code, version)
            except UnmappedCode:
                unmapped_icd.add(f"{version}:{normalize_icd(r.icd_code)}")
                report.skipped_unmapped_diagnosis_rows += 1
                continue
            title = titles.get((normalize_icd(r.icd_code), str(version)))
            if title is None:
                report.missing_icd_title += 1
                title = ""
            records.append(DiagnosisRecord(r.icd_code.strip(), version, title, cat, int(r.seq_order)))
        if not records:
            report.dropped_unmapped_icd += 1
            continue
        svc = _first_nonempty(services.get(key), "curr_service").strip().upper()
        if not svc:
            report.dropped_no_service += 1
            continue
        if svc not in svc_map:
            report.dropped_unmapped_service += 1
            unmapped_svc.add(svc)
            continue
        history = extract_history(_first_nonempty(discharge.get(key), "text"))
        if not history:
            report.missing_history_section += 1
        demo = Demographics(
            language=(adm.language or "").strip() or UNKNOWN,
            marital_status=(adm.marital_status or "").strip() or UNKNOWN,
            race=(adm.race or "").strip() or UNKNOWN,
            gender=(gender.get(subject_id) or "").strip() or UNKNOWN,
        )
        cases.append(PatientCase(
            case_id=f"{subject_id}_{hadm_id}",
            demographics=demo,
            radiology_report="\n\n".join(notes),
            medical_history=history,
            diagnoses=tuple(records),
            department=dept,
            treatment=svc_map[svc],
        ))

    report.n_cases = len(cases)
    report.unmapped_icd_codes = sorted(unmapped_icd)
    report.unmapped_services = sorted(unmapped_svc)
    report.unmapped_careunits = sorted(unmapped_cu)
    return cases, report


def screen_histories(cases: Iterable[PatientCase], reviewer) -> tuple[list[PatientCase], int]:
    """Blank histories whose every entity scores below the review threshold."""
    out, blanked = [], 0
    for case in cases:
        if case.medical_history:
            result = reviewer.review(case.medical_history, case.radiology_report)
            if result.dropped and not result.retained:
                case = dataclasses.replace(case, medical_history="")
                blanked += 1
        out.append(case)
    return out, blanked


def split_dataset(cases: Sequence[PatientCase], test_size: int = 1000, seed: int = 0) -> DatasetSplit:
    """Seeded shuffle (of the case_id-sorted list); the first ``test_size`` go to test."""
    if test_size < 1:
        raise ValueError("test_size must be >= 1")
    if len(cases) <= test_size:
        raise InsufficientCases(f"need more than {test_size} cases to split, have {len(cases)}")
    ordered = sorted(cases, key=lambda c: c.case_id)
    random.Random(seed).shuffle(ordered)
    return DatasetSplit(train=ordered[test_size:], test=ordered[:test_size], seed=seed)


def build_dataset(source_dir, out_dir, icd_map_path=None, svc_map_path=None, test_size: int = 1000,
                  seed: int = 0, reviewer=None) -> BuildReport:
    """End-to-end build writing train.jsonl, test.jsonl and build_report.json."""
    tables = load_source_tables(source_dir)
    cases, report = join_cases(tables, load_icd_map(icd_map_path), load_svc_map(svc_map_path))
    if reviewer is not None:
        cases, report.blanked_history = screen_histories(cases, reviewer)
        report.history_screen = f"record_review threshold={reviewer.threshold}"
    split = split_dataset(cases, test_size, seed)
    report.split = {"seed": seed, "test_size": len(split.test), "train_size": len(split.train)}
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_cases(out / "train.jsonl", split.train)
    write_cases(out / "test.jsonl", split.test)
    (out / "build_report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")
    return report
