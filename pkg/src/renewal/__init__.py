"""Perception-driven prompt tuning for street-view renewal simulation.

The package closes a loop around an image-editing evaluator: detected
disorder picks a scenario, the scenario fixes a prompt target and objective
metric, and a Gaussian-process search over trigger-word embeddings tunes the
prompt to maximize the predicted perception improvement.
"""

from .cache import CachedBackend, cached, edit_cache_key, raw_score_cache_key
from .config import ConfigError, OracleSettings, RunConfig, build_backend, build_vocabulary, load_config
from .embeddings import (
    EmbeddingVocabulary,
    NeighborResult,
    UnknownWordError,
    VocabularyError,
    cosine_similarity,
    dump_vocabulary,
    load_vocabulary,
    nearest_neighbors,
)
from .gateway import (
    Backend,
    EditParams,
    EditRequest,
    EvaluationResult,
    GatewayError,
    ProtocolError,
    RemoteBackend,
    RequestValidationError,
    SyntheticOracleBackend,
    SyntheticOracleConfig,
    TransportError,
    oracle_base_score,
    synthetic_score,
)
from .metrics import (
    PerceptionScores,
    RewardSpec,
    UndefinedBaselineError,
    improvement_rate,
    reward,
)
from .optimizer import (
    GPModel,
    OptimizationOutcome,
    OptimizerConfig,
    OptimizerError,
    TraceEntry,
    derive_record_seed,
    expected_improvement,
    gp_fit,
    gp_predict,
    gp_predict_batch,
    median_heuristic,
    optimize,
    select_next,
)
from .pipeline import (
    BatchOutcome,
    IngestResult,
    ManifestError,
    MethodResult,
    MorphologyBucket,
    RecordOutcome,
    StreetViewRecord,
    bucket_morphology,
    ingest_manifest,
    process_record,
    run_batch,
)
from .prompts import (
    DEFAULT_TEMPLATE,
    METRICS,
    SCENARIO_IDS,
    Prompt,
    PromptError,
    ScenarioError,
    ScenarioSpec,
    manual_prompt_word,
    render_prompt,
    scenario_mapping,
)
from .report import ReportRow, ReportTable, aggregate, emit_reports

__version__ = "0.1.0"
