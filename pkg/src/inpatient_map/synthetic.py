"""Synthetic, schema-faithful data for hermetic runs.

Nothing here is clinically meaningful. Texts are assembled from small
per-category phrase banks so that hashing embeddings give retrieval and
record review something to work with.
"""

from __future__ import annotations

import csv
import random
import re
from dataclasses import dataclass
from pathlib import Path

from .cases import Demographics, DiagnosisRecord, PatientCase
from .retrieval import KnowledgeDoc
from .taxonomy import by_code

# category -> (report findings, relevant history items, department, service, treatment)
PROFILES = {
    "D14": (["cardiomegaly with pulmonary vascular congestion", "coronary artery calcification",
             "small bilateral pleural effusions"], ["coronary artery disease", "atrial fibrillation on warfarin",
                                                    "hypertension"], "CCU", "CMED", "T16"),
    "D9": (["right lower lobe consolidation", "multiple pulmonary nodules", "patchy airspace opacities"],
           ["chronic obstructive pulmonary disease", "pulmonary nodules followed by imaging",
            "home oxygen dependence"], "MICU", "MED", "T11"),
    "D5": (["no acute intracranial abnormality", "mild cerebral volume loss", "no fracture"],
           ["alcohol use disorder with prior withdrawal seizures", "major depressive disorder",
            "anxiety"], "MICU", "PSYCH", "T11"),
    "D17": (["multifocal consolidation concerning for infection", "cavitary lesion in the upper lobe",
             "bilateral opacities"], ["recent sepsis from urinary source", "hepatitis C infection",
                                      "HIV on antiretroviral therapy"], "MICU", "MED", "T11"),
    "D4": (["spiculated mass in the left upper lobe", "hepatic metastatic lesions", "mediastinal lymphadenopathy"],
           ["lung cancer on chemotherapy", "prior lobectomy for mass", "smoking history"], "MICU", "OMED", "T11"),
    "D13": (["small bowel obstruction with transition point", "free intraperitoneal air",
             "cirrhotic liver morphology"], ["cirrhosis with varices", "prior bowel resection",
                                             "peptic ulcer disease"], "SICU", "SURG", "T4"),
    "D12": (["bilateral hydronephrosis", "renal calculi", "distended urinary bladder"],
            ["chronic kidney disease", "recurrent urinary tract infections", "renal calculi"], "MICU", "GU", "T13"),
    "D6": (["acute subdural hematoma", "multiple rib fractures", "pelvic fracture"],
           ["fall from ladder", "motor vehicle collision", "anticoagulation"], "TSICU", "TRAUM", "T3"),
    "D10": (["acute infarct in the left middle cerebral artery territory", "intraventricular hemorrhage",
             "hydrocephalus"], ["epilepsy on levetiracetam", "prior stroke", "migraine"], "Neuro SICU", "NSURG", "T9"),
    "D7": (["diffuse osteopenia", "enlarged thyroid gland", "fatty infiltration of the liver"],
           ["type 2 diabetes mellitus with insulin", "hypothyroidism", "obesity"], "MICU", "MED", "T11"),
    "D1": (["nonspecific bibasilar atelectasis", "no acute cardiopulmonary process", "low lung volumes"],
           ["syncope of unclear origin", "chronic fatigue", "weight loss"], "MICU", "MED", "T11"),
    "D15": (["splenomegaly", "diffuse lymphadenopathy", "marrow replacement pattern"],
            ["sickle cell disease", "chronic anemia requiring transfusion", "thrombocytopenia"], "MICU", "MED", "T11"),
    "D11": (["lumbar compression fracture", "degenerative disc disease", "soft tissue swelling of the thigh"],
            ["rheumatoid arthritis", "osteoarthritis of the knee", "prior hip replacement"], "SICU", "ORTHO", "T6"),
    "D8": (["subcutaneous gas in the lower extremity", "soft tissue edema of the leg", "skin thickening"],
           ["recurrent cellulitis", "psoriasis", "pressure ulcer"], "SICU", "PSURG", "T5"),
    "D3": (["gravid uterus", "intrauterine pregnancy", "small free fluid in the pelvis"],
           ["preeclampsia in prior pregnancy", "gestational diabetes", "prior cesarean section"], "MSICU", "OBS", "T8"),
}

NEUTRAL_HISTORY = ["tonsillectomy in childhood", "seasonal allergies", "remote appendectomy",
                   "vision correction with glasses", "bunion surgery"]

# (icd_code, icd_version, long_title, category)
ICD_SAMPLES = [
    ("I214", 10, "Non-ST elevation (NSTEMI) myocardial infarction", "D14"),
    ("41071", 9, "Subendocardial infarction, initial episode of care", "D14"),
    ("J189", 10, "Pneumonia, unspecified organism", "D9"),
    ("486", 9, "Pneumonia, organism unspecified", "D9"),
    ("F10239", 10, "Alcohol dependence with withdrawal, unspecified", "D5"),
    ("2910", 9, "Alcohol withdrawal delirium", "D5"),
    ("A419", 10, "Sepsis, unspecified organism", "D17"),
    ("0389", 9, "Unspecified septicemia", "D17"),
    ("C3490", 10, "Malignant neoplasm of unspecified part of unspecified bronchus or lung", "D4"),
    ("K922", 10, "Gastrointestinal hemorrhage, unspecified", "D13"),
    ("N179", 10, "Acute kidney failure, unspecified", "D12"),
    ("S066X9A", 10, "Traumatic subarachnoid hemorrhage with loss of consciousness, initial encounter", "D6"),
    ("G40909", 10, "Epilepsy, unspecified, not intractable, without status epilepticus", "D10"),
    ("E871", 10, "Hypo-osmolality and hyponatremia", "D7"),
    ("R0902", 10, "Hypoxemia", "D1"),
    ("78650", 9, "Chest pain, unspecified", "D2"),
    ("D62", 10, "Acute posthemorrhagic anemia", "D15"),
    ("M6282", 10, "Rhabdomyolysis", "D11"),
    ("L03115", 10, "Cellulitis of right lower limb", "D8"),
    ("O1490", 10, "Unspecified pre-eclampsia, unspecified trimester", "D3"),
    ("Q211", 10, "Atrial septal defect", "D16"),
]

CAREUNITS = {
    "CVICU": "Cardiac Vascular Intensive Care Unit (CVICU)",
    "CCU": "Coronary Care Unit (CCU)",
    "MICU": "Medical Intensive Care Unit (MICU)",
    "MSICU": "Medical/Surgical Intensive Care Unit (MICU/SICU)",
    "Neuro Intermediate": "Neuro Intermediate",
    "Neuro Stepdown": "Neuro Stepdown",
    "Neuro SICU": "Neuro Surgical Intensive Care Unit (Neuro SICU)",
    "SICU": "Surgical Intensive Care Unit (SICU)",
    "TSICU": "Trauma SICU (TSICU)",
}

_LANGS = ["ENGLISH", "SPANISH", "RUSSIAN", "?"]
_MARITAL = ["MARRIED", "SINGLE", "WIDOWED", "DIVORCED", ""]
_RACES = ["WHITE", "BLACK/AFRICAN AMERICAN", "ASIAN", "HISPANIC/LATINO", "UNKNOWN"]


def accession(i: int) -> str:
    return f"SYN-{i:05d}"


def _report(rng, cat, acc):
    findings = PROFILES[cat][0]
    picked = rng.sample(findings, 2)
    return (f"Accession {acc}. EXAMINATION: CT chest abdomen pelvis. "
            f"FINDINGS: {picked[0].capitalize()}. {picked[1].capitalize()}. "
            f"IMPRESSION: {picked[0].capitalize()}.")


def _history(rng, cat):
    items = rng.sample(PROFILES[cat][1], 2) + rng.sample(NEUTRAL_HISTORY, 1)
    rng.shuffle(items)
    return ". ".join(items)


def make_cases(n: int = 50, seed: int = 0, start: int = 1) -> list[PatientCase]:
    """``n`` synthetic cases; each radiology report carries a unique accession marker."""
    rng = random.Random(seed)
    cats = sorted(PROFILES)
    samples = {}
    for code, ver, title, cat in ICD_SAMPLES:
        samples.setdefault(cat, []).append((code, ver, title))
    out = []
    for i in range(start, start + n):
        cat = rng.choice(cats)
        _, _, dept, _, treat = PROFILES[cat]
        code, ver, title = rng.choice(samples.get(cat, [("R69", 10, "Illness, unspecified")]))
        secondary = rng.choice(ICD_SAMPLES)
        diagnoses = (
            DiagnosisRecord(code, ver, title, by_code("diagnosis", cat), 1),
            DiagnosisRecord(secondary[0], secondary[1], secondary[2], by_code("diagnosis", secondary[3]), 2),
        )
        out.append(PatientCase(
            case_id=f"{10000 + i}_{20000 + i}",
            demographics=Demographics(rng.choice(_LANGS), rng.choice(_MARITAL[:-1]), rng.choice(_RACES),
                                      rng.choice(["M", "F"])),
            radiology_report=_report(rng, cat, accession(i)),
            medical_history=_history(rng, cat),
            diagnoses=diagnoses,
            department=by_code("triage", dept),
            treatment=by_code("treatment", treat),
        ))
    return out


def make_knowledge_base(seed: int = 0, n_cases: int = 60) -> list[KnowledgeDoc]:
    """One guideline per profiled category plus ``n_cases`` prior-case summaries."""
    docs = []
    for cat, (findings, history, dept, _, treat) in sorted(PROFILES.items()):
        title = by_code("diagnosis", cat).long_title
        text = (f"Guideline for {title}. Typical imaging: {'; '.join(findings)}. "
                f"Relevant history: {'; '.join(history)}. Usual admission to {dept}; "
                f"treatment pathway {treat}.")
        docs.append(KnowledgeDoc(f"guideline-{cat}", "guideline", text, {"category": cat}))
    for c in make_cases(n_cases, seed=seed + 1000, start=90000):
        cat = c.primary_diagnosis.category
        text = (f"Prior case. Report: {c.radiology_report} History: {c.medical_history}. "
                f"Reasoning: findings and history support {cat.long_title}. Final diagnosis {cat.code}.")
        docs.append(KnowledgeDoc(f"kbcase-{c.case_id}", "case", text, {"category": cat.code, "case_id": c.case_id}))
    return docs


# ---------------------------------------------------------------------------
# Scripted mock backends

STAGE_HEAD = {"triage": "STAGE: TRIAGE", "diagnosis": "STAGE: DIAGNOSIS", "treatment": "STAGE: TREATMENT"}
CHIEF_HEAD = {s: f"REVIEW OF {s.upper()} DECISION" for s in STAGE_HEAD}
OVERSIGHT_CRITIQUE = ("The answer ignores a key imaging finding; reconcile the chosen category with "
                      "every abnormality listed under FINDINGS.")


def agent_reply(stage: str, code: str, note: str = "") -> str:
    return (f"CONTEXT: {stage} decision for the current admission\n"
            f"THINKING: Weighing the radiology findings and reviewed history{note}.\n"
            f"ANSWER: {code}")


def _case_rule(head: str, acc: str, extra: str = "") -> str:
    return rf"(?s)\A{re.escape(head)}(?=.*Accession {re.escape(acc)}\.){extra}"


@dataclass
class ScriptedCorpus:
    cases: list[PatientCase]
    agent_spec: dict
    chief_spec: dict
    answers: dict  # case_id -> {stage: code or PARSE_FAIL}
    critiqued: list[str]  # case_ids whose diagnosis gets one chief critique
    prose: list[str]  # case_ids whose treatment reply has no option token


def make_scripted_corpus(n: int = 50, seed: int = 0, accuracy: float = 0.8, n_critiques: int = 5,
                         n_prose: int = 2) -> ScriptedCorpus:
    """Cases plus rule files for the agent and chief mocks.

    Each answer is the gold label with probability ``accuracy``, otherwise a
    different label. ``n_critiques`` cases get a first diagnosis that the
    chief sends back once; their second reply is the gold label.
    ``n_prose`` cases answer treatment in free prose (a parse failure).
    """
    from .taxonomy import labels_for

    rng = random.Random(seed)
    cases = make_cases(n, seed=seed)
    order = list(range(n))
    rng.shuffle(order)
    critiqued = [cases[i].case_id for i in order[:n_critiques]]
    prose = [cases[i].case_id for i in order[n_critiques:n_critiques + n_prose]]
    agent_rules, chief_rules, answers = [], [], {}
    for i, case in enumerate(cases, start=1):
        acc = accession(i)
        answers[case.case_id] = {}
        for stage in STAGE_HEAD:
            gold = case.gold(stage)
            code = gold.code
            if rng.random() > accuracy:
                code = rng.choice([lab.code for lab in labels_for(stage) if lab.code != gold.code])
            head = STAGE_HEAD[stage]
            if stage == "diagnosis" and case.case_id in critiqued:
                wrong = next(lab.code for lab in labels_for(stage) if lab.code != gold.code)
                agent_rules.append({"match": _case_rule(head, acc, r"(?=.*CHIEF AGENT GUIDANCE)"), "regex": True,
                                    "response": agent_reply(stage, gold.code, " after the chief's guidance")})
                chief_rules.append({"match": _case_rule(CHIEF_HEAD[stage], acc,
                                                        rf"(?=.*PROPOSED ANSWER: {re.escape(wrong)}\n)"),
                                    "regex": True, "response": f"REVISE: {OVERSIGHT_CRITIQUE}"})
                agent_rules.append({"match": _case_rule(head, acc), "regex": True,
                                    "response": agent_reply(stage, wrong)})
                code = gold.code
            elif stage == "treatment" and case.case_id in prose:
                agent_rules.append({"match": _case_rule(head, acc), "regex": True,
                                    "response": "The patient should get whatever care seems best."})
                code = "PARSE_FAIL"
            else:
                agent_rules.append({"match": _case_rule(head, acc), "regex": True,
                                    "response": agent_reply(stage, code)})
            answers[case.case_id][stage] = code
    return ScriptedCorpus(
        cases=cases,
        agent_spec={"name": "scripted-agents", "default": "I cannot decide.", "rules": agent_rules},
        chief_spec={"name": "scripted-chief", "default": "APPROVE", "rules": chief_rules},
        answers=answers,
        critiqued=critiqued,
        prose=prose,
    )


# ---------------------------------------------------------------------------
# MIMIC-IV shaped CSV fixture


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_mimic_fixture(directory: str | Path, n_admissions: int = 200, n_null_radiology: int = 12,
                        seed: int = 0) -> dict:
    """Write the eight source tables for ``n_admissions`` ICU admissions.

    Exactly ``n_null_radiology`` admissions lack a usable radiology report
    (half with no note row, half with an empty one); every other admission
    is fully mappable. Returns summary counts.
    """
    rng = random.Random(seed)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    null_idx = set(rng.sample(range(n_admissions), n_null_radiology))
    cats = sorted(PROFILES)
    adm, pat, dx, svc, dis, rad, icu = [], [], [], [], [], [], []
    seen_subjects = set()
    note_no = 0
    for i in range(n_admissions):
        subject = 10000000 + i // 2  # two admissions per subject
        hadm = 20000000 + i
        cat = rng.choice(cats)
        findings, history, dept, service, _ = PROFILES[cat]
        adm.append([subject, hadm, f"2180-01-{1 + i % 28:02d} 08:00:00", rng.choice(_LANGS),
                    rng.choice(_MARITAL), rng.choice(_RACES)])
        if subject not in seen_subjects:
            seen_subjects.add(subject)
            pat.append([subject, rng.choice(["M", "F"]), rng.randint(20, 90)])
        primary = [s for s in ICD_SAMPLES if s[3] == cat] or [ICD_SAMPLES[0]]
        codes = [rng.choice(primary)] + rng.sample(ICD_SAMPLES, rng.randint(0, 4))
        rows = [[subject, hadm, seq, code, ver] for seq, (code, ver, _, _) in enumerate(codes, 1)]
        rng.shuffle(rows)
        dx.extend(rows)
        svc.append([subject, hadm, f"2180-01-{1 + i % 28:02d} 08:05:00", "", service])
        if rng.random() < 0.3:
            svc.append([subject, hadm, f"2180-01-{1 + i % 28:02d} 20:00:00", service, rng.choice(["MED", "SURG"])])
        stays = [[subject, hadm, 30000000 + 2 * i, CAREUNITS[dept], CAREUNITS[dept],
                  f"2180-01-{1 + i % 28:02d} 09:00:00"]]
        if rng.random() < 0.2:
            other = rng.choice(list(CAREUNITS.values()))
            stays.append([subject, hadm, 30000000 + 2 * i + 1, other, other, f"2180-01-{1 + i % 28:02d} 23:00:00"])
            rng.shuffle(stays)
        icu.extend(stays)
        note_no += 1
        if rng.random() < 0.9:
            text = (f"Name: ___ Unit No: ___\nChief Complaint:\nshortness of breath\n"
                    f"Past Medical History:\n{chr(10).join(rng.sample(history, 2))}\n{rng.choice(NEUTRAL_HISTORY)}\n"
                    f"\nSocial History:\n___\nPhysical Exam:\nunremarkable\n")
        else:
            text = "Name: ___\nChief Complaint:\nfever\nBrief Hospital Course:\nuneventful\n"
        dis.append([f"{subject}-DS-{note_no}", subject, hadm, "2180-02-01 10:00:00", text])
        if i in null_idx:
            if len(null_idx & set(range(i))) % 2 == 0:
                rad.append([f"{subject}-RR-{note_no}", subject, hadm, "2180-01-01 12:00:00", ""])
            continue
        for j in range(rng.randint(1, 2)):
            picked = rng.sample(findings, 2)
            rad.append([f"{subject}-RR-{note_no}{j}", subject, hadm, f"2180-01-01 1{j}:00:00",
                        f"EXAMINATION: CT.\nFINDINGS: {picked[0]}. {picked[1]}.\nIMPRESSION: {picked[0]}."])
    titles = sorted({(code, ver, title) for code, ver, title, _ in ICD_SAMPLES})
    _write_csv(directory / "admissions.csv",
               ["subject_id", "hadm_id", "admittime", "language", "marital_status", "race"], adm)
    _write_csv(directory / "patients.csv", ["subject_id", "gender", "anchor_age"], pat)
    _write_csv(directory / "d_icd_diagnoses.csv", ["icd_code", "icd_version", "long_title"], titles)
    _write_csv(directory / "diagnoses_icd.csv", ["subject_id", "hadm_id", "seq_num", "icd_code", "icd_version"], dx)
    _write_csv(directory / "services.csv", ["subject_id", "hadm_id", "transfertime", "prev_service", "curr_service"],
               svc)
    _write_csv(directory / "discharge.csv", ["note_id", "subject_id", "hadm_id", "charttime", "text"], dis)
    _write_csv(directory / "radiology.csv", ["note_id", "subject_id", "hadm_id", "charttime", "text"], rad)
    _write_csv(directory / "icustays.csv",
               ["subject_id", "hadm_id", "stay_id", "first_careunit", "last_careunit", "intime"], icu)
    return {"n_admissions": n_admissions, "n_null_radiology": n_null_radiology, "n_icu_rows": len(icu)}
