"""Command-line entry point exposing the pipelines as subcommands.

stdout stays clean: data goes only to the declared output paths (or to
stdout when a path is "-"); every diagnostic goes to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import random
import sys
import zlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .backends import Backend, HttpBackend, ScriptedBackend
from .chain import ChainStatus, chain_from_dict, chain_to_dict
from .config import RunConfig, build_backend, load_run_config
from .errors import ConfigError, RagchainError
from .evaluation import (
    BENCHMARK_FORMATS,
    EvalRecord,
    benchmark_document_pool,
    build_report,
    chain_length_stats,
    evaluate_records,
    load_benchmark,
)
from .inference import record_from_dict, record_to_dict, run_inference
from .jsonl import read_jsonl, write_json, write_jsonl
from .pipeline import (
    QAExample,
    construct_chain,
    construct_chain_ablation,
    emit_sft,
    example_from_dict,
    filter_chains,
    sft_sample_to_dict,
)
from .prompts import INFERENCE_PROMPT, JUDGE_PROMPT, PromptSet
from .rag import (
    CorpusView,
    DOCUMENTS_FILE,
    MANIFEST_FILE,
    RagEngine,
    build_corpus,
    corpus_tokens,
    default_token_counter,
    document_from_dict,
    load_corpus,
    save_corpus,
)

log = logging.getLogger("ragchain")

SEED_FORMATS = ("qa",) + BENCHMARK_FORMATS


def _require_file(path: str, flag: str) -> Path:
    resolved = Path(path)
    if not resolved.is_file():
        raise ConfigError(f"{flag}: file not found: {resolved}")
    return resolved


def _require_dir(path: str, flag: str) -> Path:
    resolved = Path(path)
    if not resolved.is_dir():
        raise ConfigError(f"{flag}: directory not found: {resolved}")
    return resolved


def _load_examples(path: Path, fmt: str) -> list[QAExample]:
    if fmt == "qa":
        return [example_from_dict(record) for record in read_jsonl(path)]
    return load_benchmark(path, fmt)


def _derived_seed(base_seed: int, question_id: str) -> int:
    return (base_seed ^ zlib.crc32(question_id.encode("utf-8"))) & 0xFFFFFFFF


def _resolve_workers(config: RunConfig, flag_value: int | None, backends: list[Backend]) -> int:
    """Pick the worker count: flag, then config, then the backend cap (API
    stages) or the CPU count (offline stages)."""
    http_caps = [b.max_concurrency for b in backends if isinstance(b, HttpBackend)]
    if flag_value is not None:
        workers = flag_value
    elif config.workers:
        workers = config.workers
    elif http_caps:
        workers = min(http_caps)
    else:
        workers = config.effective_workers()
    if workers < 1:
        raise ConfigError("--workers must be at least 1")
    if workers > 1 and any(isinstance(b, ScriptedBackend) for b in backends):
        log.info("scripted backend in use; forcing --workers 1 for deterministic replay")
        return 1
    return workers


def _parallel_map(fn, items, workers: int):
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# --- subcommand handlers ----------------------------------------------------


def _cmd_validate_config(args, config: RunConfig) -> int:
    problems = config.validate()
    for problem in problems:
        log.error("config: %s", problem)
    if problems:
        return 2
    log.info("config OK")
    return 0


def _cmd_build_corpus(args, config: RunConfig) -> int:
    seed_path = _require_file(args.seed, "--seed")
    examples = _load_examples(seed_path, args.format)
    low = args.low if args.low is not None else config.corpus_low
    high = args.high if args.high is not None else config.corpus_high
    base_seed = args.corpus_seed if args.corpus_seed is not None else config.seed

    pool = {doc.id: doc for example in examples for doc in example.gold_docs}
    if args.format != "qa":
        for doc in benchmark_document_pool(seed_path, args.format):
            pool.setdefault(doc.id, doc)
    if args.pool:
        for record in read_jsonl(_require_file(args.pool, "--pool")):
            doc = document_from_dict(record)
            pool.setdefault(doc.id, doc)

    if args.dry_run:
        log.info(
            "plan: build %d corpora targeting [%d, %d] tokens from a %d-document pool -> %s",
            len(examples), low, high, len(pool), args.out,
        )
        return 0
    pool_docs = list(pool.values())
    views = [
        build_corpus(
            example,
            pool_docs,
            (low, high),
            seed=_derived_seed(base_seed, example.id),
        )
        for example in examples
    ]
    save_corpus(args.out, views)
    log.info("wrote %d corpus views to %s", len(views), args.out)
    return 0


def _load_views(corpus_arg: str) -> dict:
    """Accept a corpus directory, its documents file, or a flat document JSONL.

    A flat file without a manifest yields one shared view per question: every
    question whose gold documents appear in the file sees the full file.
    """
    path = Path(corpus_arg)
    if path.is_dir():
        return load_corpus(path)
    if not path.is_file():
        raise ConfigError(f"--corpus: not found: {path}")
    if path.name == DOCUMENTS_FILE and (path.parent / MANIFEST_FILE).is_file():
        return load_corpus(path.parent)
    documents = tuple(document_from_dict(record) for record in read_jsonl(path))
    tokens = corpus_tokens(documents, default_token_counter)
    question_ids = {d.source_question_id for d in documents if d.label == "gold"}
    return {
        qid: CorpusView(question_id=qid, documents=documents, approx_token_count=tokens)
        for qid in question_ids
        if qid
    }


def _cmd_construct(args, config: RunConfig) -> int:
    seed_path = _require_file(args.seed, "--seed")
    examples = _load_examples(seed_path, args.format)
    views = _load_views(args.corpus)
    t_max = args.t_max if args.t_max is not None else config.t_max
    lrm = build_backend(config, "lrm")
    generator = build_backend(config, "gen")
    rag = RagEngine(generator=generator, k=config.retrieval_k, views=views)
    if args.dry_run:
        log.info(
            "plan: construct %d chains with t_max=%d over %d corpus views -> %s (rejects -> %s)",
            len(examples), t_max, len(views), args.out, args.rejects,
        )
        return 0
    workers = _resolve_workers(config, args.workers, [lrm, generator])
    prompts = PromptSet()
    chains = _parallel_map(
        lambda example: construct_chain(example, lrm, prompts, rag, t_max=t_max),
        examples,
        workers,
    )
    finished = [c for c in chains if c.status is ChainStatus.FINISHED]
    rejected = [c for c in chains if c.status is not ChainStatus.FINISHED]
    write_jsonl(args.out, (chain_to_dict(c) for c in finished))
    write_jsonl(args.rejects, (chain_to_dict(c) for c in rejected))
    log.info(
        "constructed %d chains: %d finished -> %s, %d rejected -> %s",
        len(chains), len(finished), args.out, len(rejected), args.rejects,
    )
    return 0


def _cmd_construct_ablation(args, config: RunConfig) -> int:
    seed_path = _require_file(args.seed, "--seed")
    examples = _load_examples(seed_path, args.format)
    missing = [e.id for e in examples if not e.decomposition]
    if missing:
        raise RagchainError(f"examples without gold decompositions: {missing}")
    llm = build_backend(config, "lrm")
    if args.dry_run:
        log.info("plan: construct %d ablation chains -> %s", len(examples), args.out)
        return 0
    prompts = PromptSet()
    chains = [construct_chain_ablation(example, llm, prompts) for example in examples]
    finished = [c for c in chains if c.status is ChainStatus.FINISHED]
    rejected = [c for c in chains if c.status is not ChainStatus.FINISHED]
    write_jsonl(args.out, (chain_to_dict(c) for c in finished))
    if args.rejects:
        write_jsonl(args.rejects, (chain_to_dict(c) for c in rejected))
    log.info("constructed %d ablation chains (%d finished)", len(chains), len(finished))
    return 0


def _cmd_filter(args, config: RunConfig) -> int:
    chains_path = _require_file(args.chains, "--chains")
    seed_path = _require_file(args.seed, "--seed")
    examples = _load_examples(seed_path, args.format)
    by_id = {example.id: example for example in examples}
    by_question = {example.question: example for example in examples}
    pairs = []
    for record in read_jsonl(chains_path):
        chain = chain_from_dict(record)
        example = by_id.get(chain.question_id) or by_question.get(chain.question)
        if example is None:
            raise RagchainError(f"no seed example matches chain {chain.question_id or chain.question!r}")
        pairs.append((chain, example))
    if args.dry_run:
        log.info("plan: filter %d chains -> %s", len(pairs), args.out)
        return 0
    kept, report = filter_chains(pairs)
    write_jsonl(args.out, (chain_to_dict(chain) for chain, _ in kept))
    if args.report:
        write_json(args.report, report.to_dict())
    log.info(
        "filter kept %d / dropped %d (%s)",
        report.kept, report.dropped,
        ", ".join(f"{k}={v}" for k, v in sorted(report.reasons.items())) or "none",
    )
    return 0


def _cmd_emit_sft(args, config: RunConfig) -> int:
    chains_path = _require_file(args.chains, "--chains")
    prompt = INFERENCE_PROMPT
    if args.prompt_file:
        prompt = _require_file(args.prompt_file, "--prompt-file").read_text(encoding="utf-8")
    chains = [chain_from_dict(record) for record in read_jsonl(chains_path)]
    if args.dry_run:
        log.info("plan: emit %d SFT samples -> %s", len(chains), args.out)
        return 0
    samples = emit_sft(chains, prompt)
    write_jsonl(args.out, (sft_sample_to_dict(sample) for sample in samples))
    log.info("emitted %d SFT samples to %s", len(samples), args.out)
    return 0


def _cmd_infer(args, config: RunConfig) -> int:
    questions_path = _require_file(args.questions, "--questions")
    examples = _load_examples(questions_path, args.format)
    views = load_corpus(_require_dir(args.corpus_dir, "--corpus-dir"))
    t_max = args.t_max if args.t_max is not None else config.t_max
    model = build_backend(config, "rearag")
    ans_model = build_backend(config, "ans")
    generator = build_backend(config, "gen")
    rag = RagEngine(generator=generator, k=config.retrieval_k, views=views)
    missing = [e.id for e in examples if e.id not in views]
    if missing:
        raise RagchainError(f"no corpus views for questions: {missing}")
    if args.dry_run:
        log.info("plan: run inference on %d questions with t_max=%d -> %s",
                 len(examples), t_max, args.out)
        return 0
    workers = _resolve_workers(config, args.workers, [model, ans_model, generator])
    prompts = PromptSet()
    records = _parallel_map(
        lambda example: run_inference(
            example.question, views[example.id], model, ans_model, prompts, rag, t_max=t_max
        ),
        examples,
        workers,
    )
    write_jsonl(args.out, (record_to_dict(record) for record in records))
    finished = sum(1 for r in records if r.chain.status is ChainStatus.FINISHED)
    log.info("inference finished %d / %d questions -> %s", finished, len(records), args.out)
    return 0


def _cmd_evaluate(args, config: RunConfig) -> int:
    records_path = _require_file(args.records, "--records")
    questions_path = _require_file(args.questions, "--questions")
    examples = _load_examples(questions_path, args.format)
    records = [record_from_dict(record) for record in read_jsonl(records_path)]
    if args.sample is not None and args.sample < len(records):
        seed = args.seed if args.seed is not None else config.seed
        records = random.Random(seed).sample(records, args.sample)
    judge = build_backend(config, "judge") if args.judge else None
    if args.dry_run:
        log.info("plan: evaluate %d records (judge=%s) -> %s",
                 len(records), bool(judge), args.out)
        return 0
    results = evaluate_records(records, examples, judge=judge)
    report = build_report(
        args.benchmark or args.format,
        results,
        judge_prompt=JUDGE_PROMPT if judge is not None else None,
    )
    write_json(args.out, report)
    log.info(
        "evaluated %d records: EM %s, ACC_L %s -> %s",
        report["n"],
        f"{report['em_pct']:.2f}" if report["em_pct"] is not None else "n/a",
        f"{report['accl_pct']:.2f}" if report["accl_pct"] is not None else "n/a",
        args.out,
    )
    return 0


def _cmd_analyze_chains(args, config: RunConfig) -> int:
    report_path = _require_file(args.report, "--report")
    payload = json.loads(report_path.read_text(encoding="utf-8"))
    per_record = payload.get("per_record") if isinstance(payload, dict) else payload
    if not isinstance(per_record, list):
        raise ConfigError("--report: expected an evaluation report with per_record entries")
    records = [
        EvalRecord(
            question_id=entry.get("question_id", ""),
            prediction=entry.get("prediction", ""),
            ground_truth=entry.get("ground_truth", ""),
            aliases=tuple(entry.get("aliases", ())),
            em=entry.get("em", 0),
            f1=entry.get("f1", 0.0),
            acc_l=entry.get("acc_l"),
            step_count=entry.get("step_count"),
        )
        for entry in per_record
    ]
    if args.dry_run:
        log.info("plan: analyze %d records -> %s", len(records), args.out)
        return 0
    stats = chain_length_stats(records)
    write_json(args.out, stats.to_dict())
    if args.csv:
        csv_path = Path(args.csv)
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        csv_path.write_text(stats.to_csv(), encoding="utf-8")
    log.info("chain-length stats over %d full-score records -> %s", stats.n, args.out)
    return 0


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ragchain",
        description="Reasoning-chain construction, SFT emission, inference and evaluation "
                    "over a pluggable retrieval engine.",
    )
    parser.add_argument("--config", help="YAML run configuration")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def add(name, handler, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(handler=handler)
        p.add_argument("--dry-run", action="store_true", help="validate and print the plan")
        return p

    add("validate-config", _cmd_validate_config, "check the run configuration")

    p = add("build-corpus", _cmd_build_corpus, "build per-question corpora with distractors")
    p.add_argument("--seed", required=True, help="seed dataset (QAExample JSONL or benchmark)")
    p.add_argument("--format", default="qa", choices=SEED_FORMATS)
    p.add_argument("--pool", help="extra document pool (Document JSONL)")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--low", type=int, help="lower token bound")
    p.add_argument("--high", type=int, help="upper token bound")
    p.add_argument("--corpus-seed", type=int, help="base seed for the corpus draws")

    p = add("construct", _cmd_construct, "construct reasoning chains with the LRM")
    p.add_argument("--seed", required=True, help="seed dataset file")
    p.add_argument("--format", default="qa", choices=SEED_FORMATS)
    p.add_argument("--corpus", required=True, help="corpus directory from build-corpus")
    p.add_argument("--t-max", type=int, help="step cap per chain")
    p.add_argument("--out", required=True, help="finished chains JSONL")
    p.add_argument("--rejects", required=True, help="aborted/exhausted chains JSONL")
    p.add_argument("--workers", type=int, help="parallel questions")

    p = add("construct-ablation", _cmd_construct_ablation,
            "construct chains in one shot from gold decompositions")
    p.add_argument("--seed", required=True, help="seed dataset file (with decompositions)")
    p.add_argument("--format", default="qa", choices=SEED_FORMATS)
    p.add_argument("--out", required=True, help="finished chains JSONL")
    p.add_argument("--rejects", help="aborted chains JSONL")

    p = add("filter", _cmd_filter, "drop unfinished and zero-F1 chains")
    p.add_argument("--chains", required=True, help="chains JSONL")
    p.add_argument("--seed", required=True, help="seed dataset file with ground truths")
    p.add_argument("--format", default="qa", choices=SEED_FORMATS)
    p.add_argument("--out", required=True, help="kept chains JSONL")
    p.add_argument("--report", help="filter report JSON")

    p = add("emit-sft", _cmd_emit_sft, "emit loss-masked SFT samples from finished chains")
    p.add_argument("--chains", required=True, help="finished chains JSONL")
    p.add_argument("--prompt-file", help="override the shipped inference prompt")
    p.add_argument("--out", required=True, help="SFT samples JSONL")

    p = add("infer", _cmd_infer, "run the deployed reasoning loop")
    p.add_argument("--questions", required=True, help="questions file")
    p.add_argument("--format", default="qa", choices=SEED_FORMATS)
    p.add_argument("--corpus-dir", required=True, help="corpus directory")
    p.add_argument("--t-max", type=int, help="step cap per chain")
    p.add_argument("--out", required=True, help="inference records JSONL")
    p.add_argument("--workers", type=int, help="parallel questions")

    p = add("evaluate", _cmd_evaluate, "score inference records (EM, F1, optional judge)")
    p.add_argument("--records", required=True, help="inference records JSONL")
    p.add_argument("--questions", required=True, help="questions file with ground truths")
    p.add_argument("--format", default="qa", choices=SEED_FORMATS)
    p.add_argument("--benchmark", help="benchmark name for the report")
    p.add_argument("--judge", action="store_true", help="run the LLM judge for ACC_L")
    p.add_argument("--sample", type=int, help="evaluate a seeded random sample of N records")
    p.add_argument("--seed", type=int, help="sampling seed")
    p.add_argument("--out", required=True, help="report JSON")

    p = add("analyze-chains", _cmd_analyze_chains, "chain-length distribution of full-score records")
    p.add_argument("--report", required=True, help="evaluation report JSON")
    p.add_argument("--out", required=True, help="stats JSON")
    p.add_argument("--csv", help="histogram CSV for plotting")

    return parser


def dispatch(argv: list[str]) -> int:
    """Run one subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 2
    try:
        config = load_run_config(args.config)
        return args.handler(args, config)
    except ConfigError as exc:
        log.error("%s", exc)
        return 2
    except RagchainError as exc:
        log.error("%s", exc)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
