"""Run configuration: one YAML file describing vocabulary, backend, cache,
optimizer, reward, prompt, and batch settings.

Every knob has a default, so a minimal config names only the vocabulary path
and the backend. Relative paths resolve against the config file's directory;
the ``RENEWAL_CACHE_DIR`` environment variable overrides the cache location.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields as dataclass_fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .cache import CachedBackend
from .embeddings import EmbeddingVocabulary, VocabularyError, load_vocabulary
from .gateway import (
    Backend,
    EditParams,
    RemoteBackend,
    SyntheticOracleBackend,
    SyntheticOracleConfig,
)
from .metrics import DEFAULT_EPSILON
from .optimizer import OptimizerConfig
from .prompts import DEFAULT_TEMPLATE, METRICS, SCENARIO_IDS, PromptError, render_prompt

CACHE_DIR_ENV = "RENEWAL_CACHE_DIR"

BACKEND_KINDS = ("oracle", "remote")


class ConfigError(ValueError):
    """Unreadable, unparseable, or inconsistent run configuration."""


@dataclass(frozen=True)
class OracleSettings:
    """Synthetic-backend knobs; ``rng_seed`` falls back to the global seed."""

    optimum_word: str | None = None
    amplitude: float = 4.0
    bandwidth: float = 0.35
    base_low: float = 3.0
    base_high: float = 6.0
    noise_sigma: float = 0.0
    rng_seed: int | None = None


@dataclass(frozen=True)
class RunConfig:
    vocabulary_path: Path
    vocabulary_normalize: bool = True
    backend_kind: str = "oracle"
    backend_url: str | None = None
    oracle: OracleSettings = field(default_factory=OracleSettings)
    cache_dir: Path = Path("cache")
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    reward_mode: str = "single"
    reward_objective: str = "auto"
    reward_weights: tuple[float, float, float] | None = None
    reward_epsilon: float = DEFAULT_EPSILON
    template: str = DEFAULT_TEMPLATE
    edit_params: EditParams = field(default_factory=EditParams)
    scenario_objectives: Mapping[str, str] = field(default_factory=dict)
    sw_k: int = 10
    workers: int = 1
    output_dir: Path = Path("out")
    seed: int = 0

    def __post_init__(self):
        if self.backend_kind not in BACKEND_KINDS:
            raise ConfigError(f"backend kind must be one of {BACKEND_KINDS}")
        if self.backend_kind == "remote" and not self.backend_url:
            raise ConfigError("remote backend requires a url")
        if self.backend_kind == "oracle" and self.backend_url:
            raise ConfigError("url is only meaningful for the remote backend")
        if self.reward_objective != "auto" and self.reward_objective not in METRICS:
            raise ConfigError(f"reward objective must be 'auto' or one of {METRICS}")
        if self.sw_k < 1:
            raise ConfigError("sw_k must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        for sid, objective in self.scenario_objectives.items():
            if sid not in SCENARIO_IDS:
                raise ConfigError(f"scenario override for unknown scenario {sid!r}")
            if objective not in METRICS:
                raise ConfigError(
                    f"scenario {sid} objective must be one of {METRICS}, got {objective!r}"
                )
        try:
            render_prompt("trigger", "target", self.template)
        except PromptError as exc:
            raise ConfigError(f"invalid prompt template: {exc}") from exc


def _require_mapping(value: Any, name: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    return value


def _only_keys(section: dict, allowed: tuple[str, ...], name: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {', '.join(unknown)}")


def _build_optimizer(section: dict) -> OptimizerConfig:
    allowed = tuple(
        f.name for f in dataclass_fields(OptimizerConfig) if f.name != "rng_seed"
    )
    _only_keys(section, allowed, "optimizer")
    try:
        return OptimizerConfig(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid optimizer settings: {exc}") from exc


def _build_oracle(section: dict) -> OracleSettings:
    allowed = tuple(f.name for f in dataclass_fields(OracleSettings))
    _only_keys(section, allowed, "backend.oracle")
    try:
        return OracleSettings(**section)
    except TypeError as exc:
        raise ConfigError(f"invalid oracle settings: {exc}") from exc


def load_config(
    path: str | Path, env: Mapping[str, str] | None = None
) -> RunConfig:
    """Parse and validate a YAML run configuration."""
    path = Path(path)
    env = os.environ if env is None else env
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a mapping")
    _only_keys(
        data,
        (
            "vocabulary", "backend", "cache", "optimizer", "reward",
            "prompt", "edit", "scenarios", "sw_k", "workers", "output_dir", "seed",
        ),
        "config",
    )
    base = path.parent

    vocab_section = _require_mapping(data.get("vocabulary"), "vocabulary")
    _only_keys(vocab_section, ("path", "normalize"), "vocabulary")
    vocab_path_raw = vocab_section.get("path")
    if not vocab_path_raw:
        raise ConfigError("vocabulary.path is required")
    vocab_path = base / str(vocab_path_raw)
    if not vocab_path.is_file():
        raise ConfigError(f"vocabulary file not found: {vocab_path}")

    backend_section = _require_mapping(data.get("backend"), "backend")
    _only_keys(backend_section, ("kind", "url", "oracle"), "backend")
    backend_kind = backend_section.get("kind", "oracle")
    oracle_settings = _build_oracle(
        _require_mapping(backend_section.get("oracle"), "backend.oracle")
    )

    cache_section = _require_mapping(data.get("cache"), "cache")
    _only_keys(cache_section, ("dir",), "cache")

    reward_section = _require_mapping(data.get("reward"), "reward")
    _only_keys(reward_section, ("mode", "objective", "weights", "epsilon"), "reward")
    weights = reward_section.get("weights")
    if weights is not None:
        if not isinstance(weights, (list, tuple)) or len(weights) != len(METRICS):
            raise ConfigError(f"reward.weights must list one weight per metric {METRICS}")
        weights = tuple(float(w) for w in weights)

    prompt_section = _require_mapping(data.get("prompt"), "prompt")
    _only_keys(prompt_section, ("template",), "prompt")

    edit_section = _require_mapping(data.get("edit"), "edit")
    _only_keys(edit_section, ("guidance_scale", "steps"), "edit")
    try:
        edit_params = EditParams(
            guidance_scale=float(edit_section.get("guidance_scale", 7.5)),
            steps=int(edit_section.get("steps", 30)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid edit settings: {exc}") from exc

    scenarios_section = _require_mapping(data.get("scenarios"), "scenarios")
    scenario_objectives: dict[str, str] = {}
    for sid, override in scenarios_section.items():
        override = _require_mapping(override, f"scenarios.{sid}")
        _only_keys(override, ("objective",), f"scenarios.{sid}")
        if "objective" in override:
            scenario_objectives[str(sid)] = str(override["objective"])

    output_dir = base / str(data.get("output_dir", "out"))
    cache_override = env.get(CACHE_DIR_ENV)
    if cache_override:
        cache_dir = Path(cache_override)
    elif "dir" in cache_section and cache_section["dir"]:
        cache_dir = base / str(cache_section["dir"])
    else:
        cache_dir = output_dir / "cache"

    try:
        return RunConfig(
            vocabulary_path=vocab_path,
            vocabulary_normalize=bool(vocab_section.get("normalize", True)),
            backend_kind=str(backend_kind),
            backend_url=backend_section.get("url"),
            oracle=oracle_settings,
            cache_dir=cache_dir,
            optimizer=_build_optimizer(_require_mapping(data.get("optimizer"), "optimizer")),
            reward_mode=str(reward_section.get("mode", "single")),
            reward_objective=str(reward_section.get("objective", "auto")),
            reward_weights=weights,
            reward_epsilon=float(reward_section.get("epsilon", DEFAULT_EPSILON)),
            template=str(prompt_section.get("template", DEFAULT_TEMPLATE)),
            edit_params=edit_params,
            scenario_objectives=scenario_objectives,
            sw_k=int(data.get("sw_k", 10)),
            workers=int(data.get("workers", 1)),
            output_dir=output_dir,
            seed=int(data.get("seed", 0)),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration value: {exc}") from exc


def build_vocabulary(config: RunConfig) -> EmbeddingVocabulary:
    try:
        return load_vocabulary(config.vocabulary_path, normalize=config.vocabulary_normalize)
    except VocabularyError as exc:
        raise ConfigError(f"vocabulary {config.vocabulary_path}: {exc}") from exc


def oracle_config(config: RunConfig, vocab: EmbeddingVocabulary) -> SyntheticOracleConfig:
    """Resolve the synthetic-backend landscape from the run configuration."""
    settings = config.oracle
    return SyntheticOracleConfig(
        vocab=vocab if vocab.normalized else vocab.normalized_copy(),
        optimum_word=settings.optimum_word,
        amplitude=settings.amplitude,
        bandwidth=settings.bandwidth,
        base_low=settings.base_low,
        base_high=settings.base_high,
        noise_sigma=settings.noise_sigma,
        rng_seed=config.seed if settings.rng_seed is None else settings.rng_seed,
    )


def build_backend(config: RunConfig, vocab: EmbeddingVocabulary) -> CachedBackend:
    """Construct the configured backend behind the content-addressed cache."""
    inner: Backend
    if config.backend_kind == "oracle":
        try:
            inner = SyntheticOracleBackend(oracle_config(config, vocab))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"invalid oracle settings: {exc}") from exc
    else:
        inner = RemoteBackend(config.backend_url)
    return CachedBackend(inner, config.cache_dir)
