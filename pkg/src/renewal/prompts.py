"""Prompt construction and scenario wiring.

A prompt pairs a tunable trigger word with a fixed target word inside a
template sentence. Scenarios map a detected disorder class to the target word
and to the perception metric the run optimizes.
"""

from __future__ import annotations

from dataclasses import dataclass

DEFAULT_TEMPLATE = "{tr} {ta} in a street"

METRICS = ("safe", "beauty", "lively")

DEFAULT_FACTOR_CLASSES = ("Building", "Wall", "Fence", "Vegetation")

SCENARIO_IDS = ("NI", "BR", "GSE", "CG")

# id -> (acceptable source classes, target word or None to echo the detected
# class, default objective metric)
_SCENARIO_TABLE: dict[str, tuple[tuple[str, ...], str | None, str]] = {
    "NI": (("Wall", "Fence"), None, "safe"),
    "BR": (("Building",), "Building", "lively"),
    "GSE": (("Vegetation",), "Park", "beauty"),
    "CG": (("Vegetation",), "Gardens", "beauty"),
}

_MANUAL_WORDS = {"safe": "Safe", "beauty": "Beautiful", "lively": "Lively"}


class PromptError(ValueError):
    """Template or token violates the prompt contract."""


class ScenarioError(ValueError):
    """Unknown scenario id or incompatible detected class."""


def _render_token(token: str) -> str:
    return token.replace("_", " ")


@dataclass(frozen=True)
class Prompt:
    """A rendered edit instruction plus the pieces it was built from."""

    trigger: str
    target: str
    template: str
    rendered: str


@dataclass(frozen=True)
class ScenarioSpec:
    """How one renewal scenario selects its edit target and objective."""

    id: str
    source_classes: tuple[str, ...]
    target_word: str
    objective_metric: str


def render_prompt(trigger: str, target: str, template: str = DEFAULT_TEMPLATE) -> Prompt:
    """Substitute trigger and target into ``template``.

    The template must contain the placeholders ``{tr}`` and ``{ta}`` exactly
    once each. Underscores inside tokens become spaces in the rendered string.
    """
    if not trigger or not target:
        raise PromptError("trigger and target tokens must be non-empty")
    for placeholder in ("{tr}", "{ta}"):
        n = template.count(placeholder)
        if n != 1:
            raise PromptError(
                f"template must contain {placeholder} exactly once, found {n}: {template!r}"
            )
    rendered = template.replace("{tr}", _render_token(trigger)).replace(
        "{ta}", _render_token(target)
    )
    if not rendered:
        raise PromptError("rendered prompt is empty")
    return Prompt(trigger=trigger, target=target, template=template, rendered=rendered)


def scenario_mapping(
    scenario_id: str,
    detected_class: str | None = None,
    objective_override: str | None = None,
) -> ScenarioSpec:
    """Resolve a scenario id to its (source classes, target word, objective).

    NI echoes the detected class (Wall or Fence) as the target word, so it
    requires ``detected_class``. The objective metric defaults per scenario
    and can be overridden.
    """
    try:
        sources, target, objective = _SCENARIO_TABLE[scenario_id]
    except KeyError:
        raise ScenarioError(f"unknown scenario id: {scenario_id!r}") from None
    if target is None:
        if detected_class is None:
            raise ScenarioError(f"scenario {scenario_id} needs a detected class to pick its target")
        if detected_class not in sources:
            raise ScenarioError(
                f"scenario {scenario_id} expects a class in {sources}, got {detected_class!r}"
            )
        target = detected_class
    if objective_override is not None:
        if objective_override not in METRICS:
            raise ScenarioError(f"objective must be one of {METRICS}, got {objective_override!r}")
        objective = objective_override
    return ScenarioSpec(
        id=scenario_id,
        source_classes=sources,
        target_word=target,
        objective_metric=objective,
    )


def scenario_objective(scenario_id: str) -> str:
    """Default objective metric for a scenario, without resolving its target."""
    try:
        return _SCENARIO_TABLE[scenario_id][2]
    except KeyError:
        raise ScenarioError(f"unknown scenario id: {scenario_id!r}") from None


def manual_prompt_word(objective: str) -> str:
    """The hand-picked baseline trigger word for a perception metric."""
    try:
        return _MANUAL_WORDS[objective]
    except KeyError:
        raise PromptError(f"objective must be one of {METRICS}, got {objective!r}") from None
