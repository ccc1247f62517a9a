"""Bayesian optimization of trigger words over an embedding vocabulary.

The search space is the discrete vocabulary embedded in R^d. A Gaussian
process with a squared-exponential kernel models reward as a function of the
embedding vector; Expected Improvement is maximized exactly by enumerating the
unevaluated words. One run is strictly sequential because every selection
conditions on all prior observations.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
from scipy.linalg import solve_triangular
from scipy.spatial.distance import cdist, pdist
from scipy.stats import norm

from .embeddings import EmbeddingVocabulary
from .gateway import Backend, EditParams, EditRequest, EvaluationResult, GatewayError
from .metrics import PerceptionScores, RewardSpec, reward
from .prompts import DEFAULT_TEMPLATE, Prompt, ScenarioSpec, manual_prompt_word, render_prompt

if TYPE_CHECKING:
    from .pipeline import StreetViewRecord

log = logging.getLogger(__name__)

FAILED_REWARD = float("-inf")

# pairwise-distance matrices get quadratic; subsample above this many vectors
_MEDIAN_SUBSAMPLE_ABOVE = 4000
_MEDIAN_SUBSAMPLE_SIZE = 2048

LENGTHSCALE_MODES = ("median_heuristic", "fixed")


class OptimizerError(Exception):
    """Base class for optimization failures."""


class GPFitError(OptimizerError):
    """Kernel matrix could not be factorized even after jitter escalation."""


class VocabularyExhaustedError(OptimizerError):
    """select_next called with no unevaluated words left."""


@dataclass(frozen=True)
class OptimizerConfig:
    """Search knobs.

    ``budget`` counts every evaluation, initialization included, so it must
    cover at least the manual word plus the random seeds. ``patience`` counts
    consecutive non-improving model-guided iterations only.
    """

    budget: int = 30
    patience: int = 10
    init_random: int = 4
    xi: float = 0.01
    noise: float = 1e-6
    lengthscale_mode: str = "median_heuristic"
    lengthscale: float | None = None
    signal_floor: float = 1e-4
    rng_seed: int = 0
    candidate_limit: int | None = None

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be a positive integer")
        if self.patience < 1:
            raise ValueError("patience must be a positive integer")
        if self.init_random < 0:
            raise ValueError("init_random must be non-negative")
        if self.budget < self.init_random + 1:
            raise ValueError(
                f"budget {self.budget} cannot cover initialization "
                f"({self.init_random} random words plus the manual word)"
            )
        if self.xi < 0:
            raise ValueError("xi must be non-negative")
        if self.noise <= 0:
            raise ValueError("noise must be positive")
        if self.lengthscale_mode not in LENGTHSCALE_MODES:
            raise ValueError(
                f"lengthscale_mode must be one of {LENGTHSCALE_MODES}, "
                f"got {self.lengthscale_mode!r}"
            )
        if self.lengthscale_mode == "fixed":
            if self.lengthscale is None or self.lengthscale <= 0:
                raise ValueError("fixed lengthscale_mode requires a positive lengthscale")
        if self.signal_floor <= 0:
            raise ValueError("signal_floor must be positive")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must fit in an unsigned 64-bit integer")
        if self.candidate_limit is not None and self.candidate_limit < 1:
            raise ValueError("candidate_limit must be positive when set")


@dataclass(frozen=True)
class TraceEntry:
    """One evaluation in a run. ``scores`` is None when the evaluation failed
    and ``reward`` holds the negative-infinity sentinel."""

    iteration: int
    trigger: str
    prompt: str
    scores: PerceptionScores | None
    reward: float
    best_so_far: float
    phase: str

    def __post_init__(self):
        if self.phase not in ("init", "bo"):
            raise ValueError(f"phase must be 'init' or 'bo', got {self.phase!r}")


@dataclass(frozen=True)
class GPModel:
    """Fitted posterior state: Cholesky factor of (K + noise I) and the
    precomputed weights alpha = (K + noise I)^-1 y."""

    X: np.ndarray
    y: np.ndarray
    signal_var: float
    lengthscale: float
    noise: float
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0

    @property
    def dim(self) -> int:
        return self.X.shape[1]


def median_heuristic(vectors: np.ndarray, rng_seed: int = 0) -> float:
    """Median pairwise Euclidean distance, the default kernel lengthscale.

    Subsamples when the vector count makes the full distance matrix costly;
    falls back to 1.0 when all points coincide.
    """
    vectors = np.asarray(vectors, dtype=float)
    if vectors.ndim != 2 or vectors.shape[0] < 2:
        return 1.0
    if vectors.shape[0] > _MEDIAN_SUBSAMPLE_ABOVE:
        rng = np.random.default_rng(rng_seed)
        idx = rng.choice(vectors.shape[0], size=_MEDIAN_SUBSAMPLE_SIZE, replace=False)
        vectors = vectors[np.sort(idx)]
    med = float(np.median(pdist(vectors)))
    return med if med > 0.0 else 1.0


def _kernel(
    a: np.ndarray, b: np.ndarray, signal_var: float, lengthscale: float
) -> np.ndarray:
    sq = cdist(np.atleast_2d(a), np.atleast_2d(b), "sqeuclidean")
    return signal_var * np.exp(-sq / (2.0 * lengthscale**2))


def gp_fit(
    X,
    y,
    config: OptimizerConfig,
    vocab_vectors: np.ndarray | None = None,
) -> GPModel:
    """Fit the zero-mean GP surrogate to the observations.

    The lengthscale comes from the median heuristic over the candidate
    vocabulary vectors when provided (over X itself otherwise), or from the
    configured fixed value. Signal variance tracks the observed reward
    variance, floored so a flat start still has prior mass. Factorization
    retries with jitter escalating tenfold from 1e-8 up to 1e-2.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"{X.shape[0]} inputs but {y.shape[0]} targets")
    if X.shape[0] < 1:
        raise ValueError("gp_fit requires at least one observation")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise ValueError("observations must be finite")

    if config.lengthscale_mode == "fixed":
        lengthscale = float(config.lengthscale)
    else:
        basis = vocab_vectors if vocab_vectors is not None else X
        lengthscale = median_heuristic(basis, config.rng_seed)
    signal_var = max(float(np.var(y)), config.signal_floor)

    K = _kernel(X, X, signal_var, lengthscale)
    jitter = 0.0
    while True:
        try:
            chol = np.linalg.cholesky(K + (config.noise + jitter) * np.eye(X.shape[0]))
            break
        except np.linalg.LinAlgError:
            if jitter == 0.0:
                jitter = 1e-8
            elif jitter < 1e-2:
                jitter = min(jitter * 10.0, 1e-2)
            else:
                raise GPFitError(
                    f"kernel factorization failed for {X.shape[0]} observations "
                    f"even with jitter {jitter:g}"
                )
            log.debug("kernel factorization retry with jitter %g", jitter)
    tmp = solve_triangular(chol, y, lower=True)
    alpha = solve_triangular(chol.T, tmp, lower=False)
    return GPModel(
        X=X,
        y=y,
        signal_var=signal_var,
        lengthscale=lengthscale,
        noise=config.noise,
        chol=chol,
        alpha=alpha,
        jitter=jitter,
    )


def gp_predict_batch(model: GPModel, points) -> tuple[np.ndarray, np.ndarray]:
    """Posterior means and standard deviations at a batch of points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != model.dim:
        raise ValueError(
            f"probe dimension {points.shape[1]} does not match model dimension {model.dim}"
        )
    k_star = _kernel(model.X, points, model.signal_var, model.lengthscale)
    means = k_star.T @ model.alpha
    v = solve_triangular(model.chol, k_star, lower=True)
    variances = model.signal_var - np.sum(v * v, axis=0)
    variances = np.maximum(variances, 0.0)
    return means, np.sqrt(variances)


def gp_predict(model: GPModel, x) -> tuple[float, float]:
    """Posterior mean and standard deviation at a single point."""
    means, stddevs = gp_predict_batch(model, np.atleast_2d(np.asarray(x, dtype=float)))
    return float(means[0]), float(stddevs[0])


def expected_improvement(mean: float, stddev: float, best: float, xi: float) -> float:
    """Closed-form EI for a Gaussian posterior against the incumbent."""
    if stddev < 0:
        raise ValueError("stddev must be non-negative")
    gain = mean - best - xi
    if stddev == 0.0:
        return max(gain, 0.0)
    z = gain / stddev
    value = gain * norm.cdf(z) + stddev * norm.pdf(z)
    return max(float(value), 0.0)


def _expected_improvement_batch(
    means: np.ndarray, stddevs: np.ndarray, best: float, xi: float
) -> np.ndarray:
    gain = means - best - xi
    out = np.maximum(gain, 0.0)
    positive = stddevs > 0.0
    if np.any(positive):
        z = gain[positive] / stddevs[positive]
        out[positive] = gain[positive] * norm.cdf(z) + stddevs[positive] * norm.pdf(z)
    return np.maximum(out, 0.0)


def select_next(
    model: GPModel,
    vocab: EmbeddingVocabulary,
    evaluated: set[str],
    best: float,
    config: OptimizerConfig,
) -> str:
    """Unevaluated word with maximal EI; ties go to the lexicographically
    smallest word. With ``candidate_limit`` set, a seeded subsample of that
    size is scored instead of the full remainder."""
    candidate_idx = [i for i, w in enumerate(vocab.words) if w not in evaluated]
    if not candidate_idx:
        raise VocabularyExhaustedError("every vocabulary word has been evaluated")
    if config.candidate_limit is not None and len(candidate_idx) > config.candidate_limit:
        # reseeded per call from the run seed and progress so reruns subsample
        # identically at every iteration
        rng = np.random.default_rng((config.rng_seed, len(evaluated)))
        chosen = rng.choice(len(candidate_idx), size=config.candidate_limit, replace=False)
        candidate_idx = [candidate_idx[i] for i in np.sort(chosen)]
    words = [vocab.words[i] for i in candidate_idx]
    means, stddevs = gp_predict_batch(model, vocab.vectors[candidate_idx])
    ei = _expected_improvement_batch(means, stddevs, best, config.xi)
    top = float(np.max(ei))
    return min(w for w, e in zip(words, ei) if e == top)


@dataclass(frozen=True)
class OptimizationOutcome:
    """Everything a run produced: the winning prompt, its evaluation, the full
    trace, and the raw scores the rewards were computed against."""

    prompt: Prompt
    best_trigger: str
    best_reward: float
    best_result: EvaluationResult
    trace: tuple[TraceEntry, ...]
    raw_scores: PerceptionScores

    @property
    def evaluations(self) -> int:
        return len(self.trace)


def derive_record_seed(global_seed: int, record_id: str) -> int:
    """Stable per-record seed, independent of batch order."""
    digest = hashlib.sha256(f"{global_seed}\x00{record_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def optimize(
    record: "StreetViewRecord",
    scenario: ScenarioSpec,
    vocab: EmbeddingVocabulary,
    backend: Backend,
    reward_spec: RewardSpec,
    config: OptimizerConfig,
    template: str = DEFAULT_TEMPLATE,
    params: EditParams | None = None,
    edit_seed: int | None = None,
    raw_scores: PerceptionScores | None = None,
) -> OptimizationOutcome:
    """Run the full search for one record.

    Initialization evaluates the manual word for the scenario objective (when
    the vocabulary contains it) plus ``init_random`` seeded-random words; the
    model-guided phase then alternates fit, selection, and evaluation. The run
    stops at the evaluation budget, after ``patience`` consecutive
    model-guided iterations without improvement, or when the vocabulary is
    exhausted. Failed evaluations consume budget, blacklist their word, and
    are never fed to the surrogate.
    """
    if len(vocab) == 0:
        raise ValueError("vocabulary is empty")
    if record.mask_path is None:
        raise ValueError(f"record {record.id!r} has no mask; nothing to optimize")
    if params is None:
        params = EditParams()
    if edit_seed is None:
        edit_seed = derive_record_seed(config.rng_seed, record.id)

    image = Path(record.image_path).read_bytes()
    mask = Path(record.mask_path).read_bytes()
    if raw_scores is None:
        raw_scores = backend.score_raw(image, record.id)
    # surfaces an undefined-baseline record before any edit spends budget
    reward(raw_scores, raw_scores, reward_spec)

    trace: list[TraceEntry] = []
    evaluated: set[str] = set()
    observations_x: list[np.ndarray] = []
    observations_y: list[float] = []
    best_reward = float("-inf")
    best_trigger: str | None = None
    best_prompt: Prompt | None = None
    best_result: EvaluationResult | None = None

    def evaluate(word: str, phase: str) -> None:
        nonlocal best_reward, best_trigger, best_prompt, best_result
        prompt = render_prompt(word, scenario.target_word, template)
        request = EditRequest(
            image=image,
            mask=mask,
            prompt=prompt.rendered,
            seed=edit_seed,
            params=params,
            record_id=record.id,
            trigger=word,
        )
        evaluated.add(word)
        try:
            result = backend.edit_and_score(request)
            value = reward(raw_scores, result.scores, reward_spec)
        except GatewayError as exc:
            log.warning(
                "evaluation of %r failed for record %s: %s; word blacklisted",
                word, record.id, exc,
            )
            best_reward = max(best_reward, FAILED_REWARD)
            trace.append(TraceEntry(
                iteration=len(trace),
                trigger=word,
                prompt=prompt.rendered,
                scores=None,
                reward=FAILED_REWARD,
                best_so_far=best_reward,
                phase=phase,
            ))
            return
        if value > best_reward:
            best_reward = value
            best_trigger = word
            best_prompt = prompt
            best_result = result
        observations_x.append(vocab.vector(word))
        observations_y.append(value)
        trace.append(TraceEntry(
            iteration=len(trace),
            trigger=word,
            prompt=prompt.rendered,
            scores=result.scores,
            reward=value,
            best_so_far=best_reward,
            phase=phase,
        ))

    # --- initialization: manual word, then seeded random picks
    manual = manual_prompt_word(scenario.objective_metric)
    if manual in vocab:
        evaluate(vocab.canonical(manual), "init")
    else:
        log.warning(
            "manual word %r not in vocabulary; initialization uses random words only",
            manual,
        )
    rng = np.random.default_rng(config.rng_seed)
    pool = [w for w in vocab.words if w not in evaluated]
    draw = min(config.init_random, len(pool))
    if draw > 0:
        for i in rng.choice(len(pool), size=draw, replace=False):
            if len(trace) >= config.budget:
                break
            evaluate(pool[int(i)], "init")

    # --- model-guided phase
    stall = 0
    while len(trace) < config.budget:
        remaining = [w for w in vocab.words if w not in evaluated]
        if not remaining:
            break
        if observations_x:
            model = gp_fit(observations_x, observations_y, config, vocab.vectors)
            word = select_next(model, vocab, evaluated, best_reward, config)
        else:
            # nothing succeeded yet: uniform EI, take the tie-break choice
            word = min(remaining)
        before = best_reward
        evaluate(word, "bo")
        if best_reward > before:
            stall = 0
        else:
            stall += 1
            if stall >= config.patience:
                log.info(
                    "record %s: stopping after %d model-guided iterations without improvement",
                    record.id, stall,
                )
                break

    if best_trigger is None or best_prompt is None or best_result is None:
        raise OptimizerError(
            f"record {record.id!r}: every evaluation failed; no usable prompt found"
        )
    return OptimizationOutcome(
        prompt=best_prompt,
        best_trigger=best_trigger,
        best_reward=best_reward,
        best_result=best_result,
        trace=tuple(trace),
        raw_scores=raw_scores,
    )
