"""
Command-line entry point.

    refeed index     --corpus raw.jsonl --out corpus_dir
    refeed retrieve  --index corpus_dir --query "..." -k 10
    refeed run       --config run.json [--mode refeed_full ...]
    refeed eval      --traces results/run/traces.jsonl --dataset dev.jsonl
    refeed ablate    --config run.json
    refeed coverage  --corpus corpus_dir --traces traces.jsonl --dataset dev.jsonl

Every command returns exit status 0 on success and 1 on failure.
"""
import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path

from refeed.analysis.ablation import ablation_table, run_ablation
from refeed.analysis.coverage import coverage_report, save_coverage
from refeed.analysis.evaluate import DEFAULT_KS, evaluate_run
from refeed.config import build_backend, check_capabilities, load_run_config, run_fingerprint, validate
from refeed.corpus.datasets import DATASET_KINDS, QA, load_dataset
from refeed.corpus.store import DEFAULT_CHUNK_SIZE, MANIFEST_FILE, CorpusStore, ingest_corpus_file
from refeed.errors import RefeedError
from refeed.pipeline.records import read_traces
from refeed.pipeline.refeed import MODES, REFEED_FULL, ReFeedPipeline
from refeed.pipeline.runner import TRACES_FILE, TraceSink, run_batch
from refeed.retrieval.bm25 import DEFAULT_B, DEFAULT_K1, INDEX_FILE, Bm25Index

logger = logging.getLogger(__name__)

RUN_MANIFEST_FILE = "run_manifest.json"
ABLATION_FILE = "ablation.csv"


def cmd_index(args):
    out_dir = Path(args.out)
    stats = ingest_corpus_file(args.corpus, out_dir, chunk_size=args.chunk_size)
    store = CorpusStore.open(out_dir)
    index = Bm25Index.build(store, k1=args.k1, b=args.b)
    index.save(out_dir / INDEX_FILE)
    print(f"num_raw_docs={stats.num_raw_docs} num_passages={stats.num_passages} total_tokens={stats.total_tokens}")
    return 0


def cmd_retrieve(args):
    index = Bm25Index.load(args.index)
    index_dir = Path(args.index) if Path(args.index).is_dir() else Path(args.index).parent
    store = CorpusStore.open(index_dir) if (index_dir / MANIFEST_FILE).exists() else None
    for doc in index.search(args.query, args.k):
        title = store.get_passage(doc.passage_id).title if store is not None else ""
        print(f"{doc.passage_id}\t{doc.score:.6f}\t{title}")
    return 0


def _run_overrides(args):
    overrides = {
        "mode": getattr(args, "mode", None),
        "workers": args.workers,
        "output_dir": Path(args.output_dir) if args.output_dir else None,
        "k_docs": args.k_docs,
        "n_samples": args.n_samples,
        "seed": args.seed,
        "templates_dir": Path(args.templates_dir) if args.templates_dir else None,
        "shots_path": Path(args.shots) if args.shots else None,
        "ensemble_scoring": args.ensemble_scoring,
    }
    if args.strict:
        overrides["strict"] = True
    return overrides


def _load_inputs(config):
    store = CorpusStore.open(config.corpus_dir)
    index = Bm25Index.load(Path(config.corpus_dir) / INDEX_FILE)
    examples = load_dataset(config.dataset_path, config.task)
    return store, index, examples


async def _run(config):
    pipeline_config = config.pipeline_config()
    backend = build_backend(config)
    check_capabilities(pipeline_config, backend.capabilities, config.allow_ensemble_fallback)
    store, index, examples = _load_inputs(config)

    out_dir = Path(config.output_dir)
    async with backend:
        pipeline = ReFeedPipeline(backend, index, store, pipeline_config)
        with TraceSink(out_dir) as sink:
            result = await run_batch(pipeline, examples, workers=config.workers, strict=config.strict, sink=sink)

    manifest = run_fingerprint(pipeline_config, backend, config)
    (out_dir / RUN_MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return result


def cmd_run(args):
    config = validate(load_run_config(args.config, _run_overrides(args)))
    result = asyncio.run(_run(config))
    print(f"mode={config.mode} {result.summary} -> {config.output_dir}")
    return 0


def _traces_path(path):
    path = Path(path)
    return path / TRACES_FILE if path.is_dir() else path


def cmd_eval(args):
    traces_path = _traces_path(args.traces)
    if not traces_path.exists():
        raise FileNotFoundError(f"Traces not found: {traces_path}")
    traces = read_traces(traces_path)
    if not traces:
        logger.warning(f"No traces in {traces_path}; every example scores 0")
    dataset = load_dataset(args.dataset, args.task)

    manifest_path = traces_path.parent / RUN_MANIFEST_FILE
    fingerprint = json.loads(manifest_path.read_text(encoding="utf-8")) if manifest_path.exists() else None
    report = evaluate_run(traces, dataset, Ks=args.ks, fingerprint=fingerprint)
    report.save(Path(args.out) if args.out else traces_path.parent)
    for name, value in report.aggregates.items():
        print(f"{name}\t{value:.4f}" if isinstance(value, float) else f"{name}\t{value}")
    return 0


def cmd_ablate(args):
    config = validate(load_run_config(args.config, _run_overrides(args)))
    backend = build_backend(config)
    base = config.pipeline_config()
    check_capabilities(config.pipeline_config(REFEED_FULL), backend.capabilities, config.allow_ensemble_fallback)
    store, index, examples = _load_inputs(config)
    out_dir = Path(config.output_dir)

    async def run_all():
        async with backend:
            return await run_ablation(
                backend, index, store, examples,
                workers=config.workers, strict=config.strict, out_dir=out_dir,
                **config.pipeline_overrides(),
                templates=base.templates,
            )

    results = asyncio.run(run_all())
    table = ablation_table(results, examples)
    out_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(out_dir / ABLATION_FILE)
    print(table.to_string(float_format=lambda value: f"{value:.4f}"))
    return 0


def cmd_coverage(args):
    store = CorpusStore.open(args.corpus)
    index = Bm25Index.load(Path(args.corpus) / INDEX_FILE)
    traces_path = _traces_path(args.traces)
    if not traces_path.exists():
        raise FileNotFoundError(f"Traces not found: {traces_path}")
    dataset = load_dataset(args.dataset, QA)
    frame = coverage_report(dataset, read_traces(traces_path), index, store, Ks=args.ks)
    save_coverage(frame, Path(args.out) if args.out else traces_path.parent)
    print(frame.to_string(float_format=lambda value: f"{value:.4f}"))
    return 0


def _add_run_flags(parser, with_mode=True):
    parser.add_argument("--config", required=True, help="Run configuration JSON file")
    if with_mode:
        parser.add_argument("--mode", choices=MODES)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--output-dir")
    parser.add_argument("--k-docs", type=int)
    parser.add_argument("--n-samples", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--templates-dir")
    parser.add_argument("--shots", help="Few-shot demonstrations, one JSON object per line")
    parser.add_argument("--ensemble-scoring", choices=("own_context", "same_answer"))
    parser.add_argument("--strict", action="store_true", help="Stop at the first failing example")


def build_parser():
    parser = argparse.ArgumentParser(prog="refeed", description="Answer, retrieve with the answer, refine.")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    index = commands.add_parser("index", help="Chunk a raw corpus and build its BM25 index")
    index.add_argument("--corpus", required=True, help="Raw corpus, one JSON document per line")
    index.add_argument("--out", required=True, help="Output corpus directory")
    index.add_argument("--chunk-size", type=int, default=DEFAULT_CHUNK_SIZE)
    index.add_argument("--k1", type=float, default=DEFAULT_K1)
    index.add_argument("--b", type=float, default=DEFAULT_B)
    index.set_defaults(handler=cmd_index)

    retrieve = commands.add_parser("retrieve", help="Print the top-k passages for a query")
    retrieve.add_argument("--index", required=True, help="Corpus directory or index file")
    retrieve.add_argument("--query", required=True)
    retrieve.add_argument("-k", type=int, default=10)
    retrieve.set_defaults(handler=cmd_retrieve)

    run = commands.add_parser("run", help="Run the pipeline over a dataset")
    _add_run_flags(run)
    run.set_defaults(handler=cmd_run)

    evaluate = commands.add_parser("eval", help="Score traces against a dataset")
    evaluate.add_argument("--traces", required=True, help="Traces file or run directory")
    evaluate.add_argument("--dataset", required=True)
    evaluate.add_argument("--task", choices=DATASET_KINDS, default=QA)
    evaluate.add_argument("--ks", type=int, nargs="+", default=list(DEFAULT_KS))
    evaluate.add_argument("--out", help="Report directory (default: next to the traces)")
    evaluate.set_defaults(handler=cmd_eval)

    ablate = commands.add_parser("ablate", help="Compare the full pipeline with its ablations and baselines")
    _add_run_flags(ablate, with_mode=False)
    ablate.set_defaults(handler=cmd_ablate)

    coverage = commands.add_parser("coverage", help="Recall@K of question-only and answer-augmented queries")
    coverage.add_argument("--corpus", required=True, help="Corpus directory with its index")
    coverage.add_argument("--traces", required=True)
    coverage.add_argument("--dataset", required=True)
    coverage.add_argument("--ks", type=int, nargs="+", default=[1, 5, 10, 20])
    coverage.add_argument("--out", help="Output directory (default: next to the traces)")
    coverage.set_defaults(handler=cmd_coverage)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s',
    )
    try:
        return args.handler(args)
    except (RefeedError, OSError) as e:
        logger.error(f"{args.command} failed: {e}", exc_info=args.verbose)
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
