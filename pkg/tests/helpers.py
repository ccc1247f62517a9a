"""Shared test utilities."""

from __future__ import annotations

from renewal.gateway import EvaluationResult


class CountingBackend:
    """Wraps a backend and counts every call that reaches it."""

    def __init__(self, inner):
        self.inner = inner
        self.edit_calls = 0
        self.score_calls = 0
        self.ping_calls = 0

    def edit_and_score(self, request) -> EvaluationResult:
        self.edit_calls += 1
        return self.inner.edit_and_score(request)

    def score_raw(self, image: bytes, record_id=None):
        self.score_calls += 1
        return self.inner.score_raw(image, record_id=record_id)

    def ping(self) -> bool:
        self.ping_calls += 1
        return self.inner.ping()

    @property
    def total_calls(self) -> int:
        return self.edit_calls + self.score_calls + self.ping_calls


class FailingBackend:
    """Backend whose edit calls fail for a chosen set of triggers."""

    def __init__(self, inner, fail_triggers=(), error=None):
        from renewal.gateway import TransportError

        self.inner = inner
        self.fail_triggers = set(fail_triggers)
        self.error = error or TransportError("injected failure")

    def edit_and_score(self, request) -> EvaluationResult:
        if request.trigger in self.fail_triggers:
            raise self.error
        return self.inner.edit_and_score(request)

    def score_raw(self, image: bytes, record_id=None):
        return self.inner.score_raw(image, record_id=record_id)

    def ping(self) -> bool:
        return self.inner.ping()
