"""Command-line entry point: ``map-pathways <command> [options]``.

Exit codes: 0 success, 2 input error, 3 runtime or backend failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

from .agents import build_pathway, make_embedder, read_traces, run_batch, write_traces
from .cases import read_cases
from .config import MODULES, load_config
from .errors import InputError, MalformedRecord, RuntimeFailure
from .ingest import build_dataset
from .metrics import DSMR_VARIANTS, DEFAULT_DSMR, metrics_report, rater_agreement, write_per_class_csv
from .retrieval import index_documents, load_docs, load_index, save_index
from .review import RecordReviewer
from .taxonomy import PARSE_FAIL, TASKS, labels_for

log = logging.getLogger("inpatient_map")

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 2, 3
ABORT_FRACTION = 0.5


def _finite(obj):
    """Replace NaN and infinities with None so the output is strict JSON."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def _write_json(path, obj) -> None:
    obj = _finite(obj)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_build_dataset(args) -> int:
    reviewer = None
    if args.screen_history:
        cfg = load_config(args.config)
        reviewer = RecordReviewer(make_embedder(cfg.embedding), cfg.record_review.threshold,
                                  cfg.record_review.score)
    report = build_dataset(args.source_dir, args.out_dir, args.icd_map, args.svc_map, args.test_size,
                           args.seed, reviewer)
    print(f"cases={report.n_cases} dropped={report.total_dropped} "
          f"train={report.split['train_size']} test={report.split['test_size']} -> {args.out_dir}")
    return EXIT_OK


def cmd_index_kb(args) -> int:
    cfg = load_config(args.config)
    docs = load_docs(args.docs)
    index = index_documents(docs, make_embedder(cfg.embedding))
    save_index(index, args.out)
    print(f"indexed {len(index)} documents ({index.dims} dims) -> {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.disable:
        cfg = cfg.disable([m.strip() for m in args.disable.split(",") if m.strip()])
    cases = read_cases(args.cases)
    index = load_index(args.kb_index) if args.kb_index else None
    pathway = build_pathway(cfg, index=index)
    traces = run_batch(cases, pathway, args.parallelism)
    write_traces(args.traces_out, traces)
    aborted = sum(t.status == "ABORTED" for t in traces)
    parse_fails = sum(p == PARSE_FAIL for t in traces for p in t.predictions.values())
    print(f"episodes={len(traces)} aborted={aborted} parse_fails={parse_fails} "
          f"config_hash={cfg.config_hash} -> {args.traces_out}")
    if traces and aborted / len(traces) > ABORT_FRACTION:
        print(f"error: {aborted}/{len(traces)} episodes aborted; backend likely unavailable", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def evaluate_traces(traces, cases, tasks=TASKS, dsmr_variant: str = DEFAULT_DSMR) -> dict:
    """Join traces to gold cases on case_id and build one metrics section per task."""
    gold = {c.case_id: c for c in cases}
    missing = sorted({t.case_id for t in traces} - set(gold))
    if missing:
        raise InputError(f"{len(missing)} trace case_ids have no gold case, e.g. {missing[0]!r}")
    hashes = sorted({t.config_hash for t in traces})
    report = {"config_hashes": hashes, "n_traces": len(traces),
              "aborted": sum(t.status == "ABORTED" for t in traces), "tasks": {}}
    for task in tasks:
        preds = [t.predictions.get(task, PARSE_FAIL) for t in traces]
        golds = [gold[t.case_id].gold(task).code for t in traces]
        labels = [lab.code for lab in labels_for(task)]
        report["tasks"][task] = metrics_report(task, preds, golds, labels, dsmr_variant)
    return report


def cmd_evaluate(args) -> int:
    traces = read_traces(args.traces)
    cases = read_cases(args.cases)
    tasks = TASKS if args.task == "all" else (args.task,)
    report = evaluate_traces(traces, cases, tasks, args.dsmr_variant)
    _write_json(args.out, report)
    if args.per_class_csv:
        base = Path(args.per_class_csv)
        base.mkdir(parents=True, exist_ok=True)
        for task, section in report["tasks"].items():
            write_per_class_csv(section, base / f"{task}_per_class.csv")
    for task, section in report["tasks"].items():
        print(f"{task}: n={section['n']} accuracy={section['accuracy']:.4f} kappa={section['kappa']:.4f} "
              f"mcc={section['mcc']:.4f} parse_fail={section['parse_fail_count']}")
    return EXIT_OK


def read_ratings(path) -> dict[str, list[float]]:
    """Ratings CSV: one row per subject, one column per rater.

    A leading ``subject`` column is ignored if present. Empty or
    non-numeric cells are input errors.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise InputError(f"{path}: need a header and at least one row")
    header = [h.strip() for h in rows[0]]
    start = 1 if header and header[0].lower() in ("subject", "subject_id", "id") else 0
    raters = header[start:]
    out = {r: [] for r in raters}
    for lineno, row in enumerate(rows[1:], 2):
        if len(row) != len(header):
            raise MalformedRecord(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
        for rater, cell in zip(raters, row[start:]):
            try:
                out[rater].append(float(cell))
            except ValueError:
                raise MalformedRecord(f"{path}:{lineno}: missing or non-numeric rating for {rater!r}") from None
    return out


def cmd_rate_reliability(args) -> int:
    result = rater_agreement(read_ratings(args.ratings))
    _write_json(args.out, result)
    for p in result["pairs"]:
        print(f"{p['rater_a']} vs {p['rater_b']}: ICC={p['icc']:.4f} ({p['classification']})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="map-pathways", description="Inpatient pathway decision support pipeline")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-dataset", help="join source CSVs into train/test case files")
    p.add_argument("--source-dir", required=True)
    p.add_argument("--icd-map", default=None, help="ICD to category TSV (packaged default)")
    p.add_argument("--svc-map", default=None, help="service to treatment TSV (packaged default)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--test-size", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--screen-history", action="store_true",
                   help="blank histories with no entity relevant to the report")
    p.add_argument("--config", default=None, help="config supplying embedding and threshold for screening")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("index-kb", help="embed knowledge documents into an index file")
    p.add_argument("--docs", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_index_kb)

    p = sub.add_parser("run", help="run the triage, diagnosis, treatment pathway over cases")
    p.add_argument("--cases", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--kb-index", default=None)
    p.add_argument("--traces-out", required=True)
    p.add_argument("--parallelism", type=int, default=8)
    p.add_argument("--disable", default="", help=f"comma list from {','.join(MODULES)}")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="score traces against gold labels")
    p.add_argument("--traces", required=True)
    p.add_argument("--cases", required=True)
    p.add_argument("--task", choices=("all",) + TASKS, default="all")
    p.add_argument("--dsmr-variant", choices=DSMR_VARIANTS, default=DEFAULT_DSMR)
    p.add_argument("--out", required=True)
    p.add_argument("--per-class-csv", default=None, help="directory for per-class CSV tables")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rate-reliability", help="pairwise ICC(2,k) between raters")
    p.add_argument("--ratings", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rate_reliability)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RuntimeFailure as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
