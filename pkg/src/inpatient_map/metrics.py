"""Classification and agreement metrics.

Confusion matrices are rows = gold, columns = predicted. ``PARSE_FAIL``
predictions live in a separate per-gold tally; they count as errors
everywhere (an extra prediction column that is never correct).
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import EmptyMatrix, LengthMismatch, UnknownLabel
from .taxonomy import PARSE_FAIL

DSMR_VARIANTS = ("fp_over_actual", "fpfn_over_actual", "fpfn_over_union")
DEFAULT_DSMR = "fpfn_over_actual"


@dataclass(frozen=True)
class ConfusionMatrix:
    labels: tuple[str, ...]
    counts: np.ndarray
    parse_fail: np.ndarray = None  # per-gold PARSE_FAIL tally

    def __post_init__(self):
        n = len(self.labels)
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (n, n):
            raise ValueError(f"counts must be {n}x{n}, got {counts.shape}")
        if (counts < 0).any():
            raise ValueError("counts must be non-negative")
        pf = np.zeros(n, dtype=np.int64) if self.parse_fail is None else np.asarray(self.parse_fail, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "parse_fail", pf)

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    @property
    def parse_fail_count(self) -> int:
        return int(self.parse_fail.sum())

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.parse_fail_count

    def extended(self) -> np.ndarray:
        """(n+1)x(n+1) matrix with PARSE_FAIL as a never-gold last class."""
        n = self.n_classes
        ext = np.zeros((n + 1, n + 1), dtype=np.int64)
        ext[:n, :n] = self.counts
        ext[:n, n] = self.parse_fail
        return ext

    def to_dict(self) -> dict:
        return {"labels": list(self.labels), "counts": self.counts.tolist(), "parse_fail": self.parse_fail.tolist()}


def confusion(preds: Sequence[str], golds: Sequence[str], labels: Sequence[str]) -> ConfusionMatrix:
    if len(preds) != len(golds):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(golds)} gold labels")
    labels = tuple(str(lab) for lab in labels)
    pos = {lab: i for i, lab in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    pf = np.zeros(len(labels), dtype=np.int64)
    for p, g in zip(preds, golds):
        p, g = str(p), str(g)
        if g not in pos:
            raise UnknownLabel(f"gold label {g!r} not in label set")
        if p == PARSE_FAIL:
            pf[pos[g]] += 1
        elif p in pos:
            counts[pos[g], pos[p]] += 1
        else:
            raise UnknownLabel(f"prediction {p!r} not in label set")
    return ConfusionMatrix(labels, counts, pf)


def _check(cm: ConfusionMatrix):
    if cm.total == 0:
        raise EmptyMatrix("confusion matrix has no scored episodes")


def one_vs_rest(cm: ConfusionMatrix) -> dict[str, np.ndarray]:
    """Per-class TP/FP/FN/TN arrays (PARSE_FAIL counted as FN for its gold class)."""
    c = cm.counts
    tp = np.diag(c).astype(np.int64)
    actual = c.sum(axis=1) + cm.parse_fail
    predicted = c.sum(axis=0)
    fp = predicted - tp
    fn = actual - tp
    tn = cm.total - tp - fp - fn
    return {"tp": tp, "fp": fp, "fn": fn, "tn": tn, "support": actual}


def _ratio(num, den):
    return float(num) / float(den) if den else 0.0


@dataclass
class BasicMetrics:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    specificity: float
    per_class: list[dict] = field(default_factory=list)
    excluded_classes: list[str] = field(default_factory=list)

    @property
    def sensitivity(self) -> float:
        return self.macro_recall


def basic_metrics(cm: ConfusionMatrix) -> BasicMetrics:
    """Accuracy plus macro one-vs-rest precision, recall, F1 and specificity.

    Classes with zero support are excluded from every macro average.
    Per-class precision with no predictions is 0; specificity of a class with
    no negatives is undefined and left out of the macro specificity.
    """
    _check(cm)
    s = one_vs_rest(cm)
    per_class, excluded = [], []
    precs, recs, f1s, specs = [], [], [], []
    for i, lab in enumerate(cm.labels):
        tp, fp, fn, tn, sup = (int(s[k][i]) for k in ("tp", "fp", "fn", "tn", "support"))
        p = _ratio(tp, tp + fp)
        r = _ratio(tp, tp + fn)
        f1 = _ratio(2 * p * r, p + r)
        spec = _ratio(tn, tn + fp) if tn + fp else None
        per_class.append({"label": lab, "support": sup, "tp": tp, "fp": fp, "fn": fn, "tn": tn,
                          "precision": p, "recall": r, "f1": f1, "specificity": spec})
        if sup == 0:
            excluded.append(lab)
            continue
        precs.append(p)
        recs.append(r)
        f1s.append(f1)
        if spec is not None:
            specs.append(spec)
    mean = lambda xs: float(np.mean(xs)) if xs else 0.0  # noqa: E731
    return BasicMetrics(
        accuracy=_ratio(np.trace(cm.counts), cm.total),
        macro_precision=mean(precs),
        macro_recall=mean(recs),
        macro_f1=mean(f1s),
        specificity=mean(specs),
        per_class=per_class,
        excluded_classes=excluded,
    )


def cohens_kappa(cm: ConfusionMatrix) -> float:
    _check(cm)
    ext = cm.extended().astype(np.float64)
    total = ext.sum()
    p_o = np.trace(ext) / total
    p_e = float(np.dot(ext.sum(axis=1), ext.sum(axis=0))) / total**2
    if p_e == 1.0:
        return 0.0
    return float((p_o - p_e) / (1.0 - p_e))


def mcc(cm: ConfusionMatrix) -> float:
    """Multiclass Matthews correlation (Gorodkin's R_K)."""
    _check(cm)
    ext = cm.extended().astype(np.float64)
    s = ext.sum()
    c = np.trace(ext)
    t = ext.sum(axis=1)
    p = ext.sum(axis=0)
    num = c * s - float(np.dot(t, p))
    den = np.sqrt((s * s - float(np.dot(p, p))) * (s * s - float(np.dot(t, t))))
    if den == 0:
        return 0.0
    return float(num / den)


def auc_ovr(scores, golds: Sequence[int]) -> float | None:
    """Macro one-vs-rest ROC AUC from per-class scores.

    ``scores`` is (n_samples, n_classes); ``golds`` are class indices. Uses
    the rank-sum form (ties get half credit). Classes lacking positives or
    negatives are skipped; returns None when there are no scores or no
    scorable class.
    """
    if scores is None:
        return None
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        return None
    golds = np.asarray(golds)
    if scores.shape[0] != len(golds):
        raise LengthMismatch(f"{scores.shape[0]} score rows vs {len(golds)} gold labels")
    aucs = []
    for c in range(scores.shape[1]):
        pos = golds == c
        n_pos, n_neg = int(pos.sum()), int((~pos).sum())
        if n_pos == 0 or n_neg == 0:
            continue
        ranks = rankdata(scores[:, c])
        u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
        aucs.append(u / (n_pos * n_neg))
    return float(np.mean(aucs)) if aucs else None


def dsmr(cm: ConfusionMatrix, variant: str = DEFAULT_DSMR) -> dict:
    """Disease-specific misdiagnosis rate per class, in percent.

    Variants: ``fp_over_actual`` = FP/actual, ``fpfn_over_actual`` =
    (FP+FN)/actual, ``fpfn_over_union`` = (FP+FN)/(actual+FP). Classes with
    no actual cases are omitted and listed under ``omitted``.
    """
    if variant not in DSMR_VARIANTS:
        raise ValueError(f"unknown DSMR variant {variant!r}; expected one of {DSMR_VARIANTS}")
    s = one_vs_rest(cm)
    rates, omitted = {}, []
    for i, lab in enumerate(cm.labels):
        actual, fp, fn = int(s["support"][i]), int(s["fp"][i]), int(s["fn"][i])
        if actual == 0:
            omitted.append(lab)
            continue
        if variant == "fp_over_actual":
            rate = fp / actual
        elif variant == "fpfn_over_actual":
            rate = (fp + fn) / actual
        else:
            rate = (fp + fn) / (actual + fp)
        rates[lab] = 100.0 * rate
    return {"variant": variant, "rates": rates, "omitted": omitted}


# ---------------------------------------------------------------------------
# Agreement

ICC_BANDS = ((0.40, "Poor"), (0.60, "Fair"), (0.75, "Good"))


def classify_icc(value: float) -> str:
    for upper, name in ICC_BANDS:
        if value < upper:
            return name
    return "Excellent"


@dataclass(frozen=True)
class IccResult:
    value: float
    classification: str
    msr: float
    msc: float
    mse: float
    n: int
    k: int
    degenerate: bool = False


def icc_2k(ratings) -> IccResult:
    """Two-way random-effects, average-measures ICC(2,k).

    ``ratings`` is an n_subjects x k_raters matrix. A matrix with zero total
    variance is reported as 1.0 with ``degenerate=True``; a zero denominator
    gives NaN, classification "Undefined", also flagged degenerate.
    """
    y = np.asarray(ratings, dtype=np.float64)
    if y.ndim != 2:
        raise ValueError("ratings must be a 2-D matrix")
    n, k = y.shape
    if n < 2 or k < 2:
        raise ValueError(f"need at least 2 subjects and 2 raters, got {n}x{k}")
    if not np.isfinite(y).all():
        raise ValueError("ratings contain missing or non-finite values")
    grand = y.mean()
    ss_total = float(((y - grand) ** 2).sum())
    if ss_total == 0.0:
        return IccResult(1.0, classify_icc(1.0), 0.0, 0.0, 0.0, n, k, degenerate=True)
    ss_rows = k * float(((y.mean(axis=1) - grand) ** 2).sum())
    ss_cols = n * float(((y.mean(axis=0) - grand) ** 2).sum())
    ss_err = max(ss_total - ss_rows - ss_cols, 0.0)
    msr = ss_rows / (n - 1)
    msc = ss_cols / (k - 1)
    mse = ss_err / ((n - 1) * (k - 1))
    den = msr + (k * msc - mse) / n
    if den == 0.0:
        return IccResult(float("nan"), "Undefined", msr, msc, mse, n, k, degenerate=True)
    value = (msr - mse) / den
    return IccResult(float(value), classify_icc(value), msr, msc, mse, n, k)


def rater_agreement(ratings: Mapping[str, Sequence[float]]) -> dict:
    """Pairwise ICC(2,k) with k=2 for every unordered rater pair.

    Returns ``{"pairs": [...], "matrix": {a: {b: icc}}}``; the matrix diagonal
    is each rater against itself.
    """
    names = list(ratings)
    cols = {name: np.asarray(ratings[name], dtype=np.float64) for name in names}
    lengths = {len(v) for v in cols.values()}
    if len(lengths) > 1:
        raise LengthMismatch("raters have rated different numbers of subjects")
    matrix = {a: {} for a in names}
    pairs = []
    for a in names:
        matrix[a][a] = icc_2k(np.column_stack([cols[a], cols[a]])).value
    for a, b in itertools.combinations(names, 2):
        res = icc_2k(np.column_stack([cols[a], cols[b]]))
        matrix[a][b] = matrix[b][a] = res.value
        pairs.append({"rater_a": a, "rater_b": b, "icc": res.value,
                      "classification": res.classification, "degenerate": res.degenerate})
    return {"pairs": pairs, "matrix": matrix}


# ---------------------------------------------------------------------------
# Report assembly


def metrics_report(task: str, preds: Sequence[str], golds: Sequence[str], labels: Sequence[str],
                   dsmr_variant: str = DEFAULT_DSMR, scores=None) -> dict:
    cm = confusion(preds, golds, labels)
    basic = basic_metrics(cm)
    report = {
        "task": task,
        "n": cm.total,
        "accuracy": basic.accuracy,
        "macro_precision": basic.macro_precision,
        "macro_f1": basic.macro_f1,
        "sensitivity": basic.sensitivity,
        "specificity": basic.specificity,
        "kappa": cohens_kappa(cm),
        "mcc": mcc(cm),
        "parse_fail_count": cm.parse_fail_count,
        "excluded_from_macro": basic.excluded_classes,
        "per_class": basic.per_class,
        "dsmr": dsmr(cm, dsmr_variant),
        "confusion": cm.to_dict(),
    }
    if scores is not None:
        idx = {lab: i for i, lab in enumerate(cm.labels)}
        auc = auc_ovr(scores, [idx[g] for g in golds])
        if auc is not None:
            report["auc"] = auc
    return report


def write_per_class_csv(report: dict, path) -> None:
    fields = ["label", "support", "tp", "fp", "fn", "tn", "precision", "recall", "f1", "specificity", "dsmr"]
    rates = report["dsmr"]["rates"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in report["per_class"]:
            w.writerow({**row, "dsmr": rates.get(row["label"], "")})
