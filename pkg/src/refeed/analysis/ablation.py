import logging

import pandas as pd

from refeed.analysis.evaluate import evaluate_run
from refeed.pipeline.refeed import CLOSED_BOOK, REFEED_FULL, RETRIEVE_THEN_READ, PipelineConfig, ReFeedPipeline
from refeed.pipeline.runner import TraceSink, run_batch

logger = logging.getLogger(__name__)

FULL = "refeed_full"
WITHOUT_DIVERSE = "refeed_full-diverse"
WITHOUT_ENSEMBLE = "refeed_full-ensemble"

# name -> (mode, config overrides)
ABLATION_VARIANTS = {
    FULL: (REFEED_FULL, {}),
    WITHOUT_DIVERSE: (REFEED_FULL, {"diverse": False}),
    WITHOUT_ENSEMBLE: (REFEED_FULL, {"ensemble": False}),
    RETRIEVE_THEN_READ: (RETRIEVE_THEN_READ, {}),
    CLOSED_BOOK: (CLOSED_BOOK, {}),
}


def variant_config(name, **overrides):
    mode, variant_overrides = ABLATION_VARIANTS[name]
    return PipelineConfig.for_mode(mode, **{**overrides, **variant_overrides})


async def run_ablation(backend, index, store, examples, workers=4, strict=False, out_dir=None, **overrides):
    """Run every ablation variant over the same examples; returns {variant: BatchResult}."""
    results = {}
    for name in ABLATION_VARIANTS:
        pipeline = ReFeedPipeline(backend, index, store, variant_config(name, **overrides))
        logger.info(f"Running ablation variant {name}")
        with TraceSink(out_dir / name if out_dir is not None else None) as sink:
            results[name] = await run_batch(pipeline, examples, workers=workers, strict=strict, sink=sink)
    return results


def ablation_table(results_by_variant, dataset):
    """One row per variant with its aggregate scores and the EM change against the full pipeline."""
    rows = []
    for name, result in results_by_variant.items():
        report = evaluate_run(result.traces, dataset, Ks=())
        row = {"variant": name, "f1": report.f1, "failures": len(result.failures)}
        if report.em is not None:
            row["em"] = report.em
        if report.rouge_l is not None:
            row["rouge_l"] = report.rouge_l
        rows.append(row)

    table = pd.DataFrame(rows).set_index("variant")
    leading = [c for c in ("em", "f1", "rouge_l") if c in table.columns]
    table = table[leading + ["failures"]]
    if FULL in table.index:
        key = "em" if "em" in table.columns else "f1"
        table[f"delta_{key}"] = table[key] - table.loc[FULL, key]
    return table
