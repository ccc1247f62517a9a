"""Command-line entry point.

Subcommands: ``run`` (model-guided search on one record), ``batch`` (full
method suite over a manifest), ``oracle-scan`` (brute-force reward table over
the whole vocabulary, synthetic backend only), and ``report`` (re-aggregate
previously written results).

Exit codes: 0 success; 2 configuration problem; 3 backend unreachable;
4 invalid or missing record/manifest/results; 5 every record failed;
6 oracle scan refused on a remote backend. Errors are reported as one JSON
object on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, RunConfig, build_backend, build_vocabulary, load_config, oracle_config
from .embeddings import EmbeddingVocabulary
from .gateway import SyntheticOracleConfig, oracle_base_score, synthetic_score
from .metrics import PerceptionScores, RewardSpec, reward
from .optimizer import OptimizerError, derive_record_seed, optimize
from .pipeline import (
    IngestResult,
    ManifestError,
    StreetViewRecord,
    ingest_manifest,
    load_results,
    resolve_reward_spec,
    resolve_scenario,
    run_batch,
    trace_lines,
    write_outcomes,
)
from .prompts import METRICS, scenario_objective
from .report import GROUPINGS, emit_reports

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_RECORD = 4
EXIT_ALL_FAILED = 5
EXIT_SCAN_REFUSED = 6


class CommandError(Exception):
    """Failure with a dedicated exit code and a user-facing message."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _load(config_path: str) -> RunConfig:
    try:
        return load_config(config_path)
    except ConfigError as exc:
        raise CommandError(EXIT_CONFIG, str(exc)) from exc


def _setup(config: RunConfig):
    try:
        vocab = build_vocabulary(config)
        backend = build_backend(config, vocab)
    except ConfigError as exc:
        raise CommandError(EXIT_CONFIG, str(exc)) from exc
    if not backend.ping():
        raise CommandError(
            EXIT_BACKEND, f"backend unreachable: {config.backend_url or config.backend_kind}"
        )
    return vocab, backend


def _ingest(manifest_path: str) -> IngestResult:
    try:
        return ingest_manifest(manifest_path)
    except ManifestError as exc:
        raise CommandError(EXIT_RECORD, str(exc)) from exc


def _find_record(ingest: IngestResult, record_id: str, manifest_path: str) -> StreetViewRecord:
    for record in ingest.records:
        if record.id == record_id:
            return record
    for rejection in ingest.rejections:
        if rejection.record_id == record_id:
            raise CommandError(
                EXIT_RECORD,
                f"record {record_id!r} was rejected: {rejection.reason}",
            )
    raise CommandError(EXIT_RECORD, f"record {record_id!r} not found in {manifest_path}")


def cmd_run(args: argparse.Namespace) -> int:
    """Model-guided search on a single record; writes trace and result files."""
    config = _load(args.config)
    vocab, backend = _setup(config)
    ingest = _ingest(args.manifest)
    record = _find_record(ingest, args.record, args.manifest)
    if not record.upd_detected:
        raise CommandError(
            EXIT_RECORD, f"record {record.id!r} has no detected disorder; nothing to renew"
        )
    scenario = resolve_scenario(record, config)
    spec = resolve_reward_spec(scenario, config)
    seed = derive_record_seed(config.seed, record.id)
    out_dir = Path(args.out) if args.out else config.output_dir
    try:
        outcome = optimize(
            record,
            scenario,
            vocab,
            backend,
            spec,
            replace(config.optimizer, rng_seed=seed),
            template=config.template,
            params=config.edit_params,
            edit_seed=seed,
            raw_scores=None,
        )
    except OptimizerError as exc:
        raise CommandError(EXIT_ALL_FAILED, str(exc)) from exc

    traces_dir = out_dir / "traces"
    results_dir = out_dir / "results"
    images_dir = out_dir / "images"
    for d in (traces_dir, results_dir, images_dir):
        d.mkdir(parents=True, exist_ok=True)
    (traces_dir / f"{record.id}.jsonl").write_text(
        "\n".join(trace_lines(record.id, outcome.trace)) + "\n", encoding="utf-8"
    )
    (results_dir / f"{record.id}.json").write_text(
        json.dumps(
            {
                "record_id": record.id,
                "scenario": record.scenario,
                "objective": scenario.objective_metric,
                "trigger": outcome.best_trigger,
                "prompt": outcome.prompt.rendered,
                "reward": outcome.best_reward,
                "raw_scores": outcome.raw_scores.as_dict(),
                "edited_scores": outcome.best_result.scores.as_dict(),
                "model_id": outcome.best_result.model_id,
                "evaluations": outcome.evaluations,
            },
            sort_keys=True,
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    (images_dir / f"{record.id}.png").write_bytes(outcome.best_result.edited_image)
    print(
        f"{record.id}: best trigger {outcome.best_trigger!r} "
        f"reward {outcome.best_reward:.4f} after {outcome.evaluations} evaluations"
    )
    return EXIT_OK


def cmd_batch(args: argparse.Namespace) -> int:
    """Full method suite over a manifest, with reports."""
    config = _load(args.config)
    vocab, backend = _setup(config)
    ingest = _ingest(args.manifest)
    if not ingest.records:
        detail = f" ({len(ingest.rejections)} records rejected)" if ingest.rejections else ""
        raise CommandError(EXIT_RECORD, f"manifest {args.manifest} has no valid records{detail}")
    workers = args.workers if args.workers else config.workers
    out_dir = Path(args.out) if args.out else config.output_dir
    started = time.monotonic()
    batch = run_batch(ingest.records, vocab, backend, config, workers=workers)
    elapsed = time.monotonic() - started

    write_outcomes(batch, out_dir)
    groupings = (args.group_by,) if args.group_by else GROUPINGS
    results = list(batch.results)
    if results:
        emit_reports(results, out_dir / "reports", groupings)
    # timing and counts live here, outside the byte-stable trace/report files
    (out_dir / "summary.json").write_text(
        json.dumps(
            {
                "records": len(batch.outcomes),
                "processed": batch.processed,
                "skipped": batch.skipped,
                "failed": batch.failed,
                "rejected": len(ingest.rejections),
                "rejections": [
                    {"line": r.line, "record_id": r.record_id, "reason": r.reason}
                    for r in ingest.rejections
                ],
                "failures": {
                    o.record_id: [list(f) for f in o.failures]
                    for o in batch.outcomes
                    if o.failures
                },
                "elapsed_seconds": round(elapsed, 3),
                "workers": workers,
            },
            sort_keys=True,
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    print(
        f"{len(batch.outcomes)} records: {batch.processed} processed, "
        f"{batch.skipped} skipped, {batch.failed} failed "
        f"({len(ingest.rejections)} rejected at ingest) in {elapsed:.1f}s"
    )
    if batch.failed == len(batch.outcomes):
        raise CommandError(EXIT_ALL_FAILED, "every record failed")
    return EXIT_OK


def oracle_scan_rows(
    oracle: SyntheticOracleConfig,
    record_id: str,
    vocab: EmbeddingVocabulary,
    spec: RewardSpec,
) -> tuple[list[tuple[str, PerceptionScores, float]], str, float]:
    """Reward for every vocabulary word on one record, plus the argmax.

    This is the brute-force ground truth the optimizer is judged against; it
    computes the landscape directly rather than going through edit requests.
    """
    raw = PerceptionScores(*(oracle_base_score(oracle, record_id, m) for m in METRICS))
    rows: list[tuple[str, PerceptionScores, float]] = []
    best_word: str | None = None
    best_value = float("-inf")
    for word in vocab.words:
        scores = PerceptionScores(
            *(synthetic_score(oracle, record_id, word, m) for m in METRICS)
        )
        value = reward(raw, scores, spec)
        rows.append((word, scores, value))
        if value > best_value or (value == best_value and (best_word is None or word < best_word)):
            best_word = word
            best_value = value
    assert best_word is not None
    return rows, best_word, best_value


def cmd_oracle_scan(args: argparse.Namespace) -> int:
    """Brute-force reward table over the vocabulary for one record."""
    config = _load(args.config)
    if config.backend_kind != "oracle":
        raise CommandError(
            EXIT_SCAN_REFUSED,
            "oracle-scan exhaustively evaluates the vocabulary and is refused "
            "on a remote backend; configure the synthetic backend",
        )
    try:
        vocab = build_vocabulary(config)
        oracle = oracle_config(config, vocab)
    except ConfigError as exc:
        raise CommandError(EXIT_CONFIG, str(exc)) from exc
    ingest = _ingest(args.manifest)
    record = _find_record(ingest, args.record, args.manifest)
    scenario = resolve_scenario(record, config) if record.upd_detected else None
    if scenario is not None:
        spec = resolve_reward_spec(scenario, config)
        objective = scenario.objective_metric
    else:
        # scanning a gated record is still well-defined: use the scenario default
        objective = config.scenario_objectives.get(
            record.scenario,
            config.reward_objective
            if config.reward_objective != "auto"
            else scenario_objective(record.scenario),
        )
        spec = RewardSpec(mode="single", objective=objective, epsilon=config.reward_epsilon)

    rows, argmax, best_value = oracle_scan_rows(oracle, record.id, vocab, spec)
    out_dir = Path(args.out) if args.out else config.output_dir
    scan_dir = out_dir / "oracle_scan"
    scan_dir.mkdir(parents=True, exist_ok=True)
    lines = ["word,safe,beauty,lively,reward"]
    for word, scores, value in rows:
        lines.append(
            f"{word},{scores.safe!r},{scores.beauty!r},{scores.lively!r},{value!r}"
        )
    (scan_dir / f"{record.id}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (scan_dir / f"{record.id}.json").write_text(
        json.dumps(
            {
                "record_id": record.id,
                "objective": objective,
                "argmax": argmax,
                "best_reward": best_value,
                "optimum_word": oracle.optimum_word,
                "vocabulary_size": len(vocab),
            },
            sort_keys=True,
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    print(f"{record.id}: scanned {len(rows)} words; argmax {argmax!r} reward {best_value:.4f}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    """Re-aggregate previously written results into report tables."""
    out_dir = Path(args.out)
    results_dir = out_dir / "results"
    if not results_dir.is_dir():
        raise CommandError(EXIT_RECORD, f"no results directory at {results_dir}")
    results = load_results(results_dir)
    if not results:
        raise CommandError(EXIT_RECORD, f"no results found under {results_dir}")
    groupings = (args.group_by,) if args.group_by else GROUPINGS
    written = emit_reports(results, out_dir / "reports", groupings)
    for group_by, (csv_path, _) in sorted(written.items()):
        print(f"{group_by}: {csv_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="renewal",
        description="Perception-driven prompt tuning for street-view renewal simulation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="model-guided search on one record")
    run.add_argument("--config", required=True, help="run configuration file")
    run.add_argument("--manifest", required=True, help="JSON-lines record manifest")
    run.add_argument("--record", required=True, help="record id to process")
    run.add_argument("--out", help="output directory (default: config output_dir)")
    run.set_defaults(func=cmd_run)

    batch = sub.add_parser("batch", help="full method suite over a manifest")
    batch.add_argument("--config", required=True)
    batch.add_argument("--manifest", required=True)
    batch.add_argument("--out", help="output directory (default: config output_dir)")
    batch.add_argument("--workers", type=int, help="worker count (default: config workers)")
    batch.add_argument("--group-by", choices=GROUPINGS, help="emit only this report")
    batch.set_defaults(func=cmd_batch)

    scan = sub.add_parser("oracle-scan", help="brute-force reward table (synthetic backend only)")
    scan.add_argument("--config", required=True)
    scan.add_argument("--manifest", required=True)
    scan.add_argument("--record", required=True)
    scan.add_argument("--out", help="output directory (default: config output_dir)")
    scan.set_defaults(func=cmd_oracle_scan)

    report = sub.add_parser("report", help="re-aggregate written results")
    report.add_argument("--out", required=True, help="batch output directory")
    report.add_argument("--group-by", choices=GROUPINGS, help="emit only this report")
    report.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=logging.INFO,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CommandError as exc:
        print(
            json.dumps({"error": {"code": exc.code, "message": str(exc)}}),
            file=sys.stderr,
        )
        return exc.code
    except Exception as exc:  # unexpected: still machine-readable, exit 1
        log.exception("unhandled failure")
        print(
            json.dumps({"error": {"code": 1, "message": f"{type(exc).__name__}: {exc}"}}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
