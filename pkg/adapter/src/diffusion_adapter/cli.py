"""Command line front end: ``serve`` runs the service, ``check`` grades one."""
from __future__ import annotations

import argparse
import sys
from typing import Sequence

from .config import AdapterConfig, ConfigError
from .conformance import conformance_check
from .service import create_app


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffusion-adapter")
    commands = parser.add_subparsers(dest="command", required=True)

    serve = commands.add_parser("serve", help="run the wire-protocol service")
    serve.add_argument("--config", help="TOML service config file")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8080)

    check = commands.add_parser("check", help="run the conformance fixtures against an endpoint")
    check.add_argument("--endpoint", required=True)
    check.add_argument("--timeout", type=float, default=120.0)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "serve":
        try:
            config = AdapterConfig.from_file(args.config) if args.config else AdapterConfig()
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        import uvicorn

        uvicorn.run(create_app(config), host=args.host, port=args.port)
        return 0
    report = conformance_check(args.endpoint, timeout=args.timeout)
    print(report.summary())
    return 0 if report.passed else 1


if __name__ == "__main__":
    raise SystemExit(main())
