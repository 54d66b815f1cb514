"""``fracstrip <kind> --config <path> [--seed N] [--out DIR] [--threads N]``.

Exit status is 0 on success, 2 on a validation error and 3 on a numerical
failure.  ``FRACSTRIP_OUT`` and ``FRACSTRIP_THREADS`` override the output
directory and thread count from the config file; command-line flags win
over both.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional, Sequence

from ..errors import ConfigError, NumericalError, ValidationError
from .config import KINDS, load_config, validate
from .experiments import run

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fracstrip", description=__doc__.splitlines()[0])
    p.add_argument("kind", choices=KINDS)
    p.add_argument("--config", required=True, help="TOML experiment configuration")
    p.add_argument("--seed", type=int, help="master seed (overrides [run] seed)")
    p.add_argument("--out", help="output directory (overrides [run] out)")
    p.add_argument("--threads", type=int, help="worker threads (overrides [run] threads)")
    return p


def _env_int(name: str) -> Optional[int]:
    raw = os.environ.get(name)
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"environment variable {name}={raw!r} is not an integer") from None


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.kind)
        env_out, env_threads = os.environ.get("FRACSTRIP_OUT"), _env_int("FRACSTRIP_THREADS")
        if env_out:
            cfg.run["out"] = env_out
        if env_threads is not None:
            cfg.run["threads"] = env_threads
        if args.out is not None:
            cfg.run["out"] = args.out
        if args.threads is not None:
            cfg.run["threads"] = args.threads
        if args.seed is not None:
            cfg.run["seed"] = args.seed
        validate(cfg)
        report = run(cfg)
    except ValidationError as exc:
        print(f"fracstrip: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"fracstrip: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"fracstrip {cfg.kind}: {len(report.rows)} rows in {report.wall_clock:.1f}s "
          f"-> {cfg.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
