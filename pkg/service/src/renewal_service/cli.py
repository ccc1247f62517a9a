"""Command-line entry point: validate configuration, load backends, serve."""

from __future__ import annotations

import argparse
import sys

import uvicorn

from .app import ServiceConfig, ServiceStartupError, create_app


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="renewal-service",
        description="Reference evaluator service for the street-view renewal wire protocol",
    )
    parser.add_argument("--mode", choices=("stub", "real"), default="stub")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8000)
    parser.add_argument(
        "--stub-seed", type=int, default=0, help="seed for the deterministic stub backends"
    )
    parser.add_argument(
        "--simulate-unavailable",
        type=int,
        default=0,
        metavar="N",
        help="respond 503 to the first N edit/score requests",
    )
    parser.add_argument(
        "--edit-model", help="real mode: 'package.module:factory' for the edit backend"
    )
    parser.add_argument(
        "--score-model", help="real mode: 'package.module:factory' for the score backend"
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = ServiceConfig(
            mode=args.mode,
            host=args.host,
            port=args.port,
            stub_seed=args.stub_seed,
            simulate_unavailable=args.simulate_unavailable,
            edit_model=args.edit_model,
            score_model=args.score_model,
        )
        app = create_app(config)
    except (ValueError, ServiceStartupError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ValueError) else 1

    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
    return 0


if __name__ == "__main__":
    sys.exit(main())
