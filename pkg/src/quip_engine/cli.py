"""Command-line entry points: the session server and the analytics tool."""

from __future__ import annotations

import argparse
import asyncio
import json
import sys

from .analytics import (
    code_log_file,
    export_coded,
    summarize,
)
from .config import ServiceConfig, load_config
from .errors import QuipError


def main_server(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="quip-engine",
        description="Conversational suggestion service for timely humorous comments",
    )
    parser.add_argument("--config", help="path to a JSON config file")
    parser.add_argument("--port", type=int, help="listen port (overrides config)")
    parser.add_argument("--providers", help="provider implementation id (e.g. mock)")
    parser.add_argument("--log-dir", help="event log directory")
    parser.add_argument("--seed", type=int, help="mock provider seed")
    parser.add_argument(
        "--replay",
        metavar="SCRIPT",
        help="replay a script deterministically, write the event log, and exit",
    )
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
    except QuipError as exc:
        print(f"error: {exc.message}", file=sys.stderr)
        return 2
    if args.port is not None:
        config.port = args.port
    if args.providers is not None:
        config.providers = args.providers
    if args.log_dir is not None:
        config.log_dir = args.log_dir
    if args.seed is not None:
        config.seed = args.seed

    if args.replay:
        return _replay(config, args.replay)

    import uvicorn

    from .api import create_app

    uvicorn.run(create_app(config), host="127.0.0.1", port=config.port, log_level="info")
    return 0


def _replay(config: ServiceConfig, script: str) -> int:
    from pathlib import Path

    from .service import SessionService, run_replay

    async def run() -> str:
        service = SessionService(config)
        try:
            sid = await run_replay(service, script)
        finally:
            await service.close()
        return sid

    try:
        sid = asyncio.run(run())
    except QuipError as exc:
        print(f"error: {exc.message}", file=sys.stderr)
        return 2
    log_path = Path(config.log_dir) / f"{sid}.jsonl"
    print(f"replayed {script} -> {log_path}")
    return 0


def main_analytics(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="quip-analytics", description="Interaction coding over session event logs"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    code_p = sub.add_parser("code", help="code a session log into interaction categories")
    code_p.add_argument("--log", required=True, help="path to a session event log")
    code_p.add_argument("--out", required=True, help="output file path")
    code_p.add_argument(
        "--format", default="csv", choices=["csv", "json", "timeline-json"], dest="fmt"
    )

    sum_p = sub.add_parser("summarize", help="print a per-session summary as JSON")
    sum_p.add_argument("--log", required=True, help="path to a session event log")

    args = parser.parse_args(argv)
    try:
        coded, events = code_log_file(args.log)
        if args.command == "code":
            path = export_coded(coded, args.fmt, args.out)
            print(f"wrote {len(coded)} coded interactions to {path}")
        else:
            summary = summarize(coded, events)
            print(json.dumps(summary.to_dict(), sort_keys=True, indent=2))
    except QuipError as exc:
        print(f"error: {exc.message}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main_server())
