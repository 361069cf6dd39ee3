"""Write a self-contained demo workspace: source CSVs, scripted cases, knowledge base, mock rules, config.

Usage: python3 scripts/make_synthetic_data.py --out demo [--n-cases 50] [--seed 0]
"""

import argparse
import json
from pathlib import Path

from inpatient_map.cases import write_cases
from inpatient_map.retrieval import write_docs
from inpatient_map.synthetic import make_knowledge_base, make_scripted_corpus, write_mimic_fixture


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="demo")
    ap.add_argument("--n-cases", type=int, default=50)
    ap.add_argument("--n-admissions", type=int, default=200)
    ap.add_argument("--accuracy", type=float, default=0.8, help="fraction of scripted answers equal to gold")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    info = write_mimic_fixture(out / "source", n_admissions=args.n_admissions, seed=args.seed)
    corpus = make_scripted_corpus(args.n_cases, seed=args.seed, accuracy=args.accuracy)
    write_cases(out / "cases.jsonl", corpus.cases)
    write_docs(out / "kb", make_knowledge_base(seed=args.seed))
    (out / "agent_rules.json").write_text(json.dumps(corpus.agent_spec, indent=1), encoding="utf-8")
    (out / "chief_rules.json").write_text(json.dumps(corpus.chief_spec, indent=1), encoding="utf-8")
    config = {
        "backend": {"kind": "mock", "rules": "agent_rules.json"},
        "chief_backend": {"kind": "mock", "rules": "chief_rules.json"},
        "embedding": {"kind": "hash", "dim": 256, "seed": 0},
        "seed": args.seed,
    }
    (out / "config.json").write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {out}: {info['n_admissions']} source admissions, {len(corpus.cases)} scripted cases, "
          f"{len(corpus.critiqued)} with a chief critique")


if __name__ == "__main__":
    main()
