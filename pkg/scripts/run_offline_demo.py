#!/usr/bin/env python3
"""End-to-end offline demo of the whole pipeline on scripted backends.

Generates a tiny three-question seed dataset plus deterministic backend
scripts, then drives every CLI stage in order:

    build-corpus -> construct -> filter -> emit-sft -> infer -> evaluate -> analyze-chains

Run it from the repository root:

    python scripts/run_offline_demo.py --out demo_out
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ragchain.cli import dispatch

QUESTIONS = (
    ("d1", "In what county is the ancestral home located?", "Orleans County"),
    ("d2", "Where was the playwright educated?", "Exeter College"),
    ("d3", "Where is the research agency headquartered?", "Cologne"),
)

BODY = (
    "Local records describe the subject of {qid} at length, naming {answer} as the "
    "decisive fact, alongside registry entries, correspondence, and survey notes that "
    "fill out the passage with period detail. Archivists attached several appendices "
    "covering neighboring parishes, water rights, and travel itineraries of the era."
)


def write_jsonl(path: Path, records: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records), encoding="utf-8"
    )


def build_workspace(root: Path) -> tuple[Path, Path]:
    seed_records = []
    model_turns = []
    answers = []
    for qid, question, answer in QUESTIONS:
        seed_records.append(
            {
                "id": qid,
                "question": question,
                "answer": answer,
                "gold_docs": [
                    {
                        "id": f"{qid}::gold",
                        "title": f"Gold passage for {qid}",
                        "body": BODY.format(qid=qid, answer=answer),
                        "label": "gold",
                        "source_question_id": qid,
                    }
                ],
                "source_benchmark": "demo",
            }
        )
        model_turns.append(
            {
                "match": "*",
                "completion": (
                    f"Thought 1: I need the key fact for {qid}.\n"
                    'Action 1: {"function": "search", "parameters": '
                    f'{{"query": "key fact for {qid}"}}}}'
                ),
            }
        )
        model_turns.append(
            {
                "match": "*",
                "completion": (
                    "Thought 2: The observation answers the question.\n"
                    'Action 2: {"function": "finish", "parameters": '
                    f'{{"answer": "The decisive fact is {answer}."}}}}'
                ),
            }
        )
        answers.append({"match": "*", "completion": answer})

    write_jsonl(root / "seed.jsonl", seed_records)
    write_jsonl(root / "scripts" / "model.jsonl", model_turns)
    write_jsonl(
        root / "scripts" / "gen.jsonl",
        [{"match": "*", "completion": "A grounded fact taken from the retrieved documents."}],
    )
    write_jsonl(root / "scripts" / "ans.jsonl", answers)
    write_jsonl(
        root / "scripts" / "judge.jsonl",
        [{"match": "*", "completion": "YES the prediction matches the gold answer."}] * 3,
    )
    config = root / "config.yaml"
    config.write_text(
        "t_max: 6\n"
        "retrieval_k: 2\n"
        "seed: 13\n"
        "corpus_tokens: {low: 200, high: 2000}\n"
        "backends:\n"
        "  lrm: {type: scripted, script: scripts/model.jsonl}\n"
        "  rearag: {type: scripted, script: scripts/model.jsonl}\n"
        "  gen: {type: scripted, script: scripts/gen.jsonl, exhaustion: repeat-last}\n"
        "  ans: {type: scripted, script: scripts/ans.jsonl}\n"
        "  judge: {type: scripted, script: scripts/judge.jsonl}\n",
        encoding="utf-8",
    )
    return root / "seed.jsonl", config


def run(argv: list) -> None:
    code = dispatch([str(a) for a in argv])
    if code != 0:
        print(f"stage failed with exit code {code}: {argv}", file=sys.stderr)
        raise SystemExit(code)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="demo_out", help="output directory")
    args = parser.parse_args()

    out = Path(args.out)
    seed, config = build_workspace(out / "workspace")
    base = ["--config", config]

    corpus = out / "corpus"
    chains = out / "chains.jsonl"
    rejects = out / "rejects.jsonl"
    kept = out / "kept.jsonl"
    sft = out / "sft.jsonl"
    records = out / "records.jsonl"
    report = out / "report.json"
    stats = out / "chain-length.json"

    run(base + ["validate-config"])
    run(base + ["build-corpus", "--seed", seed, "--out", corpus])
    run(base + ["construct", "--seed", seed, "--corpus", corpus,
                "--out", chains, "--rejects", rejects])
    run(base + ["filter", "--chains", chains, "--seed", seed,
                "--out", kept, "--report", out / "filter-report.json"])
    run(base + ["emit-sft", "--chains", kept, "--out", sft])
    run(base + ["infer", "--questions", seed, "--corpus-dir", corpus, "--out", records])
    run(base + ["evaluate", "--records", records, "--questions", seed,
                "--judge", "--benchmark", "demo", "--out", report])
    run(base + ["analyze-chains", "--report", report, "--out", stats,
                "--csv", out / "chain-length.csv"])

    payload = json.loads(report.read_text(encoding="utf-8"))
    print(f"demo artifacts in {out.resolve()}")
    print(f"  evaluated {payload['n']} questions: "
          f"EM {payload['em_pct']:.2f}, ACC_L {payload['accl_pct']:.2f}")
    print(f"  SFT samples: {sft}")
    print(f"  chain-length stats: {stats}")


if __name__ == "__main__":
    main()
