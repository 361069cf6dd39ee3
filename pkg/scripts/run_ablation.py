"""Run the full pathway and each single-module ablation, then tabulate accuracy per task.

Usage: python3 scripts/run_ablation.py --workspace demo [--parallelism 8]
(expects the layout written by make_synthetic_data.py)
"""

import argparse
import json
from pathlib import Path

import pandas as pd

from inpatient_map.agents import build_pathway, make_embedder, run_batch, write_traces
from inpatient_map.cases import read_cases
from inpatient_map.cli import evaluate_traces
from inpatient_map.config import MODULES, load_config
from inpatient_map.retrieval import index_documents, load_docs, save_index


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workspace", default="demo")
    ap.add_argument("--parallelism", type=int, default=8)
    args = ap.parse_args()

    ws = Path(args.workspace)
    base = load_config(ws / "config.json")
    cases = read_cases(ws / "cases.jsonl")
    index = index_documents(load_docs(ws / "kb"), make_embedder(base.embedding))
    save_index(index, ws / "kb.idx")

    rows = []
    for name, disabled in [("full", [])] + [(f"-{m}", [m]) for m in MODULES]:
        cfg = base.disable(disabled)
        traces = run_batch(cases, build_pathway(cfg, index=index), args.parallelism)
        write_traces(ws / f"traces-{name.lstrip('-')}.jsonl", traces)
        report = evaluate_traces(traces, cases)
        (ws / f"report-{name.lstrip('-')}.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        row = {"config": name, "config_hash": cfg.config_hash}
        row.update({task: round(sec["accuracy"], 4) for task, sec in report["tasks"].items()})
        row["guided_retries"] = sum(len(s.attempts) - 1 for t in traces for s in t.stages)
        rows.append(row)
    print(pd.DataFrame(rows).to_string(index=False))


if __name__ == "__main__":
    main()
