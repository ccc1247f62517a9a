"""Reference evaluator service for the street-view renewal wire protocol."""

from .app import ServiceConfig, ServiceStartupError, create_app
from .stub import StubEditor, StubScorer

__all__ = [
    "ServiceConfig",
    "ServiceStartupError",
    "StubEditor",
    "StubScorer",
    "create_app",
]
