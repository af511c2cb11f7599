"""Command-line entry point.

    ddts [options] <suite>
    ddts [options] run <run>
    ddts show {build|run|suite} <name>
    ddts list {builds|runs|suites}

The application root (definitions and hooks) comes from ``DDTS_APP``,
defaulting to the current directory; framework output goes under
``DDTS_OUT``, defaulting to ``./ddts-out``.

Exit status: 0 all tests passed, 1 test failures, 2 configuration or
definition error, 3 internal fault.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Sequence

from . import __version__
from .definitions import DefinitionKind, DefinitionStore
from .engine import Modes, invoke
from .errors import ConfigError, UsageError
from .hooks import HookRegistry

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_INTERNAL = 0, 1, 2, 3


@dataclass(frozen=True)
class Invocation:
    command: str  # run_suite | run_single | show | list
    name: str | None = None
    kind: DefinitionKind | None = None
    modes: Modes = field(default_factory=Modes)
    app_root: Path = Path(".")
    out_root: Path = Path("ddts-out")


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddts",
        description="Run a test suite or a single run, or inspect definitions.",
        epilog=(
            "commands: ddts <suite> | ddts run <run> | ddts show {build,run,suite} <name> | "
            "ddts list {builds,runs,suites}. Paths: DDTS_APP (application root), DDTS_OUT (output root)."
        ),
    )
    parser.add_argument("words", nargs="+", metavar="command")
    parser.add_argument("--use-baseline", metavar="DIR", type=Path, help="compare runs against the baseline in DIR")
    parser.add_argument("--gen-baseline", metavar="DIR", type=Path, help="write a new baseline to DIR")
    parser.add_argument("--force-baseline", action="store_true", help="allow --gen-baseline to overwrite")
    parser.add_argument("--workers", type=int, metavar="N", help="cap on simultaneously active runs")
    parser.add_argument("--hook-timeout", type=float, metavar="SECS", help="kill external hooks after SECS")
    parser.add_argument("--version", action="version", version=f"ddts {__version__}")
    return parser


def parse_args(argv: Sequence[str] | None = None, environ: dict[str, str] | None = None) -> Invocation:
    parser = _parser()
    args = parser.parse_intermixed_args(argv)
    env = os.environ if environ is None else environ
    words = args.words
    if args.force_baseline and args.gen_baseline is None:
        raise UsageError("--force-baseline requires --gen-baseline")
    if args.workers is not None and args.workers < 1:
        raise UsageError("--workers must be at least 1")
    if args.hook_timeout is not None and args.hook_timeout <= 0:
        raise UsageError("--hook-timeout must be positive")
    if (
        args.use_baseline is not None
        and args.gen_baseline is not None
        and args.use_baseline.resolve() == args.gen_baseline.resolve()
    ):
        raise UsageError("--use-baseline and --gen-baseline must name different directories")
    modes = Modes(
        use_baseline=args.use_baseline,
        gen_baseline=args.gen_baseline,
        force_baseline=args.force_baseline,
        workers=args.workers,
        hook_timeout=args.hook_timeout,
    )
    paths = dict(
        app_root=Path(env.get("DDTS_APP") or "."),
        out_root=Path(env.get("DDTS_OUT") or "ddts-out"),
    )
    head = words[0]
    if head in ("show", "list"):
        expected = 3 if head == "show" else 2
        if len(words) != expected:
            raise UsageError(f"usage: {'ddts show {build|run|suite} <name>' if head == 'show' else 'ddts list {builds|runs|suites}'}")
        try:
            kind = DefinitionKind.parse(words[1])
        except ConfigError as exc:
            raise UsageError(str(exc)) from exc
        return Invocation(head, words[2] if head == "show" else None, kind, modes, **paths)
    if head == "run":
        if len(words) != 2:
            raise UsageError("usage: ddts run <run>")
        return Invocation("run_single", words[1], None, modes, **paths)
    if len(words) != 1:
        raise UsageError("usage: ddts <suite>")
    return Invocation("run_suite", head, None, modes, **paths)


def execute(
    inv: Invocation,
    registry: HookRegistry | None = None,
    stdout: IO[str] | None = None,
    stderr: IO[str] | None = None,
) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    store = DefinitionStore(inv.app_root)
    if inv.command == "show":
        stdout.write(store.show(inv.kind, inv.name))
        return EXIT_PASS
    if inv.command == "list":
        for name in store.names(inv.kind):
            stdout.write(name + "\n")
        return EXIT_PASS
    verdict, _ = invoke(
        store,
        inv.name,
        inv.out_root,
        registry=registry,
        modes=inv.modes,
        single_run=inv.command == "run_single",
        stdout=stdout,
        stderr=stderr,
    )
    return verdict.exit_code


def main(
    argv: Sequence[str] | None = None,
    registry: HookRegistry | None = None,
    stdout: IO[str] | None = None,
    stderr: IO[str] | None = None,
    environ: dict[str, str] | None = None,
) -> int:
    stderr = stderr or sys.stderr
    try:
        inv = parse_args(argv, environ)
    except UsageError as exc:
        stderr.write(f"ddts: {exc}\n")
        _parser().print_usage(stderr)
        return EXIT_CONFIG
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return execute(inv, registry, stdout, stderr)
    except ConfigError as exc:
        stderr.write(f"ddts: {exc}\n")
        return EXIT_CONFIG
    except Exception as exc:
        stderr.write(f"ddts: internal error: {type(exc).__name__}: {exc}\n")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
