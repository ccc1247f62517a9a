"""End-to-end orchestration: manifest ingestion, disorder gating, per-record
method runs (manual prompt, synonym search, model-guided search, external
baselines), and serialization of traces and results.

Records are independent, so a batch may fan out across a worker pool; outputs
are sorted by record id before anything is written, which keeps every emitted
byte independent of worker count and completion order.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING

from .embeddings import EmbeddingVocabulary, nearest_neighbors
from .gateway import Backend, EditRequest, GatewayError, image_info
from .metrics import (
    PerceptionScores,
    RewardSpec,
    UndefinedBaselineError,
    improvement_rate,
    reward,
)
from .optimizer import (
    OptimizationOutcome,
    OptimizerError,
    TraceEntry,
    derive_record_seed,
    optimize,
)
from .prompts import (
    METRICS,
    SCENARIO_IDS,
    ScenarioError,
    ScenarioSpec,
    manual_prompt_word,
    render_prompt,
    scenario_mapping,
)

if TYPE_CHECKING:
    from .config import RunConfig

log = logging.getLogger(__name__)

METHODS = ("MP", "SW", "BO", "EXTERNAL")

# ids become file names, so keep them path-safe
_ID_CHARS = re.compile(r"[A-Za-z0-9._-]+")


class ManifestError(ValueError):
    """The manifest file itself is unreadable or unparseable."""


@dataclass(frozen=True)
class MorphologyBucket:
    """One urban-form stratum over the street height/width ratio."""

    label: str
    lower: float
    lower_inclusive: bool
    upper: float | None
    upper_inclusive: bool

    def contains(self, alpha: float) -> bool:
        if self.lower_inclusive:
            if alpha < self.lower:
                return False
        elif alpha <= self.lower:
            return False
        if self.upper is None:
            return True
        return alpha <= self.upper if self.upper_inclusive else alpha < self.upper


MORPHOLOGY_BUCKETS = (
    MorphologyBucket("BarelyPopulated", 0.0, True, 0.5, False),
    MorphologyBucket("LivingSpaces", 0.5, True, 1.5, True),
    MorphologyBucket("UrbanHub", 1.5, False, None, False),
)


def bucket_morphology(alpha: float) -> MorphologyBucket:
    """Assign a height/width ratio to its morphology stratum."""
    if alpha < 0:
        raise ValueError(f"height/width ratio must be non-negative, got {alpha}")
    for bucket in MORPHOLOGY_BUCKETS:
        if bucket.contains(alpha):
            return bucket
    raise AssertionError("buckets cover [0, inf)")


@dataclass(frozen=True)
class ExternalResult:
    """Precomputed edit supplied in the manifest for comparative reporting."""

    label: str
    trigger: str | None
    scores: PerceptionScores


@dataclass(frozen=True)
class StreetViewRecord:
    """One manifest entry after validation."""

    id: str
    image_path: Path
    upd_detected: bool
    factor: str | None
    mask_path: Path | None
    hw_ratio: float
    scenario: str
    external_results: tuple[ExternalResult, ...] = ()


@dataclass(frozen=True)
class Rejection:
    line: int
    record_id: str | None
    reason: str


@dataclass(frozen=True)
class IngestResult:
    records: tuple[StreetViewRecord, ...]
    rejections: tuple[Rejection, ...]


def _parse_external(value: object) -> tuple[ExternalResult, ...]:
    if not isinstance(value, list):
        raise ValueError("external_results must be a list")
    parsed = []
    for i, entry in enumerate(value):
        if not isinstance(entry, dict):
            raise ValueError(f"external_results[{i}] must be an object")
        label = entry.get("label", "EXTERNAL")
        if not isinstance(label, str) or not label:
            raise ValueError(f"external_results[{i}].label must be a non-empty string")
        trigger = entry.get("trigger")
        if trigger is not None and not isinstance(trigger, str):
            raise ValueError(f"external_results[{i}].trigger must be a string or null")
        scores = entry.get("scores")
        if not isinstance(scores, dict):
            raise ValueError(f"external_results[{i}].scores must be an object")
        try:
            parsed.append(
                ExternalResult(
                    label=label,
                    trigger=trigger,
                    scores=PerceptionScores(*(float(scores[m]) for m in METRICS)),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"external_results[{i}].scores invalid: {exc}") from exc
    return tuple(parsed)


def _parse_record(raw: dict, base_dir: Path) -> StreetViewRecord:
    record_id = raw.get("id")
    if not isinstance(record_id, str) or not record_id:
        raise ValueError("id must be a non-empty string")
    if not _ID_CHARS.fullmatch(record_id):
        raise ValueError(
            "id may contain only letters, digits, dot, underscore, and hyphen"
        )
    image = raw.get("image")
    if not isinstance(image, str) or not image:
        raise ValueError("image path is required")
    image_path = base_dir / image
    if not image_path.is_file():
        raise ValueError(f"image file not found: {image_path}")
    upd = raw.get("upd_detected")
    if not isinstance(upd, bool):
        raise ValueError("upd_detected must be a boolean")
    hw = raw.get("hw_ratio")
    if isinstance(hw, bool) or not isinstance(hw, (int, float)) or hw < 0 or hw != hw:
        raise ValueError("hw_ratio must be a non-negative number")
    scenario = raw.get("scenario")
    if scenario not in SCENARIO_IDS:
        raise ValueError(f"scenario must be one of {SCENARIO_IDS}, got {scenario!r}")

    factor = raw.get("factor")
    mask = raw.get("mask")
    mask_path: Path | None = None
    if upd:
        if not isinstance(factor, str) or not factor:
            raise ValueError("upd_detected requires a factor")
        if not isinstance(mask, str) or not mask:
            raise ValueError("upd_detected requires a mask path")
        mask_path = base_dir / mask
        if not mask_path.is_file():
            raise ValueError(f"mask file not found: {mask_path}")
        image_size, _ = image_info(image_path.read_bytes())
        mask_size, mask_mode = image_info(mask_path.read_bytes())
        if mask_size != image_size:
            raise ValueError(
                f"mask dimensions {mask_size} do not match image dimensions {image_size}"
            )
        if mask_mode != "L":
            raise ValueError(f"mask must be single-channel 8-bit (mode 'L'), got {mask_mode!r}")
        # confirms the factor is one this scenario can renew
        scenario_mapping(scenario, factor)
    else:
        factor = factor if isinstance(factor, str) else None

    external = _parse_external(raw["external_results"]) if "external_results" in raw else ()
    return StreetViewRecord(
        id=record_id,
        image_path=image_path,
        upd_detected=upd,
        factor=factor,
        mask_path=mask_path,
        hw_ratio=float(hw),
        scenario=str(scenario),
        external_results=external,
    )


def ingest_manifest(path: str | Path) -> IngestResult:
    """Parse a JSON-lines manifest into validated records.

    Invalid records are rejected individually with their line number and
    reason; valid ones proceed. Paths are resolved relative to the manifest's
    directory. Duplicate ids keep the first occurrence.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    base_dir = path.parent
    records: list[StreetViewRecord] = []
    rejections: list[Rejection] = []
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            rejections.append(Rejection(lineno, None, f"invalid JSON: {exc}"))
            continue
        if not isinstance(raw, dict):
            rejections.append(Rejection(lineno, None, "manifest line must be a JSON object"))
            continue
        try:
            record = _parse_record(raw, base_dir)
        except (ValueError, ScenarioError, GatewayError) as exc:
            rid = raw.get("id") if isinstance(raw.get("id"), str) else None
            rejections.append(Rejection(lineno, rid, str(exc)))
            continue
        if record.id in seen:
            rejections.append(Rejection(lineno, record.id, "duplicate record id"))
            continue
        seen.add(record.id)
        records.append(record)
    return IngestResult(records=tuple(records), rejections=tuple(rejections))


@dataclass(frozen=True)
class MethodResult:
    """One method's outcome on one record."""

    method: str
    record_id: str
    trigger: str | None
    raw_scores: PerceptionScores
    edited_scores: PerceptionScores
    rates: dict[str, float | None]
    objective_reward: float
    scenario: str
    hw_ratio: float
    variant: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "record_id": self.record_id,
            "trigger": self.trigger,
            "raw_scores": self.raw_scores.as_dict(),
            "edited_scores": self.edited_scores.as_dict(),
            "rates": dict(self.rates),
            "objective_reward": self.objective_reward,
            "scenario": self.scenario,
            "hw_ratio": self.hw_ratio,
            "variant": self.variant,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MethodResult":
        return cls(
            method=data["method"],
            record_id=data["record_id"],
            trigger=data.get("trigger"),
            raw_scores=PerceptionScores(**data["raw_scores"]),
            edited_scores=PerceptionScores(**data["edited_scores"]),
            rates={m: data["rates"].get(m) for m in METRICS},
            objective_reward=float(data["objective_reward"]),
            scenario=data["scenario"],
            hw_ratio=float(data["hw_ratio"]),
            variant=data.get("variant"),
        )


def compute_rates(
    raw: PerceptionScores, edited: PerceptionScores, epsilon: float
) -> dict[str, float | None]:
    """Per-metric relative improvements; None where the baseline is undefined."""
    rates: dict[str, float | None] = {}
    for metric in METRICS:
        try:
            rates[metric] = improvement_rate(raw.get(metric), edited.get(metric), epsilon)
        except UndefinedBaselineError:
            rates[metric] = None
    return rates


@dataclass(frozen=True)
class RecordOutcome:
    """Everything one record produced: method results, the search trace, and
    per-method failure reasons."""

    record_id: str
    scenario: str
    hw_ratio: float
    skipped: bool
    results: tuple[MethodResult, ...]
    failures: tuple[tuple[str, str], ...] = ()
    trace: tuple[TraceEntry, ...] = ()

    @property
    def succeeded(self) -> bool:
        return self.skipped or len(self.results) > 0


def resolve_scenario(record: StreetViewRecord, config: "RunConfig") -> ScenarioSpec:
    """Scenario spec for a record with the config's objective overrides applied."""
    override = config.scenario_objectives.get(record.scenario)
    if override is None and config.reward_objective != "auto":
        override = config.reward_objective
    return scenario_mapping(record.scenario, record.factor, override)


def resolve_reward_spec(scenario: ScenarioSpec, config: "RunConfig") -> RewardSpec:
    if config.reward_mode == "weighted":
        return RewardSpec(
            mode="weighted",
            objective=None,
            weights=config.reward_weights,
            epsilon=config.reward_epsilon,
        )
    return RewardSpec(
        mode="single",
        objective=scenario.objective_metric,
        epsilon=config.reward_epsilon,
    )


def process_record(
    record: StreetViewRecord,
    vocab: EmbeddingVocabulary,
    backend: Backend,
    config: "RunConfig",
) -> RecordOutcome:
    """Run every configured method on one record.

    A record without detected disorder is skipped untouched: no evaluator
    call, no edit, no result. Otherwise the raw scores are fetched exactly
    once and shared, a fixed per-record seed isolates prompt effects from
    sampling noise, and each method failure is recorded without stopping the
    others.
    """
    if not record.upd_detected:
        return RecordOutcome(
            record_id=record.id,
            scenario=record.scenario,
            hw_ratio=record.hw_ratio,
            skipped=True,
            results=(),
        )

    scenario = resolve_scenario(record, config)
    spec = resolve_reward_spec(scenario, config)
    seed = derive_record_seed(config.seed, record.id)
    image = record.image_path.read_bytes()
    mask = record.mask_path.read_bytes()

    results: list[MethodResult] = []
    failures: list[tuple[str, str]] = []
    trace: tuple[TraceEntry, ...] = ()

    def make_result(method, trigger, edited, reward_value, variant=None):
        return MethodResult(
            method=method,
            record_id=record.id,
            trigger=trigger,
            raw_scores=raw,
            edited_scores=edited,
            rates=compute_rates(raw, edited, config.reward_epsilon),
            objective_reward=reward_value,
            scenario=record.scenario,
            hw_ratio=record.hw_ratio,
            variant=variant,
        )

    def evaluate_trigger(word: str):
        prompt = render_prompt(word, scenario.target_word, config.template)
        request = EditRequest(
            image=image,
            mask=mask,
            prompt=prompt.rendered,
            seed=seed,
            params=config.edit_params,
            record_id=record.id,
            trigger=word,
        )
        result = backend.edit_and_score(request)
        return result, reward(raw, result.scores, spec)

    try:
        raw = backend.score_raw(image, record.id)
    except GatewayError as exc:
        return RecordOutcome(
            record_id=record.id,
            scenario=record.scenario,
            hw_ratio=record.hw_ratio,
            skipped=False,
            results=(),
            failures=(("record", f"raw scoring failed: {exc}"),),
        )

    # manual prompt baseline: one evaluation with the hand-picked word
    mp_word = manual_prompt_word(scenario.objective_metric)
    mp_eval: tuple | None = None
    try:
        result, value = evaluate_trigger(mp_word)
        mp_eval = (mp_word, result, value)
        results.append(make_result("MP", mp_word, result.scores, value))
    except (GatewayError, UndefinedBaselineError) as exc:
        failures.append(("MP", str(exc)))

    # synonym search: best of the manual word's embedding neighborhood
    if mp_word in vocab:
        neighbors = nearest_neighbors(
            vocab, mp_word, min(config.sw_k, len(vocab)), exclude_self=False
        )
        best: tuple[str, object, float] | None = None
        sw_errors = []
        for neighbor in neighbors:
            word = neighbor.word
            try:
                if mp_eval is not None and word == vocab.canonical(mp_word):
                    _, result, value = mp_eval
                else:
                    result, value = evaluate_trigger(word)
            except (GatewayError, UndefinedBaselineError) as exc:
                sw_errors.append(f"{word}: {exc}")
                continue
            if best is None or value > best[2]:
                best = (word, result, value)
        if best is not None:
            results.append(make_result("SW", best[0], best[1].scores, best[2]))
        else:
            failures.append(("SW", "; ".join(sw_errors) or "no candidates"))
    else:
        failures.append(("SW", f"manual word {mp_word!r} not in vocabulary"))

    # model-guided search
    try:
        outcome: OptimizationOutcome = optimize(
            record,
            scenario,
            vocab,
            backend,
            spec,
            replace(config.optimizer, rng_seed=seed),
            template=config.template,
            params=config.edit_params,
            edit_seed=seed,
            raw_scores=raw,
        )
        trace = outcome.trace
        results.append(
            make_result("BO", outcome.best_trigger, outcome.best_result.scores, outcome.best_reward)
        )
    except (GatewayError, OptimizerError, UndefinedBaselineError) as exc:
        failures.append(("BO", str(exc)))

    # precomputed external baselines from the manifest
    for ext in record.external_results:
        try:
            value = reward(raw, ext.scores, spec)
        except UndefinedBaselineError as exc:
            failures.append((f"EXTERNAL:{ext.label}", str(exc)))
            continue
        results.append(
            make_result("EXTERNAL", ext.trigger, ext.scores, value, variant=ext.label)
        )

    return RecordOutcome(
        record_id=record.id,
        scenario=record.scenario,
        hw_ratio=record.hw_ratio,
        skipped=False,
        results=tuple(results),
        failures=tuple(failures),
        trace=trace,
    )


@dataclass(frozen=True)
class BatchOutcome:
    """All record outcomes, sorted by id, plus bookkeeping counts."""

    outcomes: tuple[RecordOutcome, ...]
    processed: int
    skipped: int
    failed: int

    @property
    def results(self) -> tuple[MethodResult, ...]:
        out: list[MethodResult] = []
        for outcome in self.outcomes:
            out.extend(outcome.results)
        return tuple(out)


def run_batch(
    records: list[StreetViewRecord] | tuple[StreetViewRecord, ...],
    vocab: EmbeddingVocabulary,
    backend: Backend,
    config: "RunConfig",
    workers: int | None = None,
) -> BatchOutcome:
    """Process records concurrently and return order-independent outcomes."""
    workers = workers or config.workers

    def job(record: StreetViewRecord) -> RecordOutcome:
        try:
            return process_record(record, vocab, backend, config)
        except Exception as exc:  # record-level crash must not sink the batch
            log.exception("record %s failed", record.id)
            return RecordOutcome(
                record_id=record.id,
                scenario=record.scenario,
                hw_ratio=record.hw_ratio,
                skipped=False,
                results=(),
                failures=(("record", f"{type(exc).__name__}: {exc}"),),
            )

    if workers <= 1 or len(records) <= 1:
        outcomes = [job(r) for r in records]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(job, records))
    outcomes.sort(key=lambda o: o.record_id)
    processed = sum(1 for o in outcomes if not o.skipped and o.results)
    skipped = sum(1 for o in outcomes if o.skipped)
    failed = sum(1 for o in outcomes if not o.skipped and not o.results)
    return BatchOutcome(
        outcomes=tuple(outcomes), processed=processed, skipped=skipped, failed=failed
    )


# ---------------------------------------------------------------------------
# Serialization


def _scores_json(scores: PerceptionScores | None) -> dict | None:
    return None if scores is None else scores.as_dict()


def trace_lines(record_id: str, trace: tuple[TraceEntry, ...]) -> list[str]:
    """JSON-lines form of a search trace, one evaluation per line."""
    lines = []
    for entry in trace:
        lines.append(
            json.dumps(
                {
                    "record_id": record_id,
                    "iteration": entry.iteration,
                    "phase": entry.phase,
                    "trigger": entry.trigger,
                    "prompt": entry.prompt,
                    "scores": _scores_json(entry.scores),
                    "reward": entry.reward,
                    "best_so_far": entry.best_so_far,
                },
                sort_keys=True,
                separators=(",", ":"),
            )
        )
    return lines


def outcome_to_dict(outcome: RecordOutcome) -> dict:
    return {
        "record_id": outcome.record_id,
        "scenario": outcome.scenario,
        "hw_ratio": outcome.hw_ratio,
        "skipped": outcome.skipped,
        "results": [r.to_dict() for r in outcome.results],
        "failures": [list(f) for f in outcome.failures],
    }


def load_results(results_dir: str | Path) -> list[MethodResult]:
    """Read back every MethodResult serialized under a results directory."""
    results_dir = Path(results_dir)
    out: list[MethodResult] = []
    for path in sorted(results_dir.glob("*.json")):
        data = json.loads(path.read_text(encoding="utf-8"))
        for entry in data.get("results", []):
            out.append(MethodResult.from_dict(entry))
    return out


def write_outcomes(batch: BatchOutcome, out_dir: str | Path) -> None:
    """Write per-record traces and results under ``out_dir``.

    Layout: ``traces/<id>.jsonl`` and ``results/<id>.json``. Both are fully
    deterministic given the outcomes, so a warm-cache rerun reproduces every
    byte.
    """
    out_dir = Path(out_dir)
    traces_dir = out_dir / "traces"
    results_dir = out_dir / "results"
    traces_dir.mkdir(parents=True, exist_ok=True)
    results_dir.mkdir(parents=True, exist_ok=True)
    for outcome in batch.outcomes:
        if outcome.trace:
            (traces_dir / f"{outcome.record_id}.jsonl").write_text(
                "\n".join(trace_lines(outcome.record_id, outcome.trace)) + "\n",
                encoding="utf-8",
            )
        (results_dir / f"{outcome.record_id}.json").write_text(
            json.dumps(outcome_to_dict(outcome), sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
