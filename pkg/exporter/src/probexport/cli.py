"""Command-line entry points.

export-fpm   normalize a stored array (.npy) and write it as a map file
render-fpm   rasterize an annotation JSON into a degraded map file

Exit codes: 0 success, 1 usage error, 2 data error (missing, malformed, or
unexportable input).  Error text goes to stderr.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .formats import ExportError, ExportJob, run_export_job
from .render import annotation_to_fpm


class UsageError(Exception):
    """Bad invocation: unknown flag, missing argument, malformed value."""


class _Parser(argparse.ArgumentParser):
    # argparse wants to exit(2) on bad flags; route through UsageError so the
    # entry points can keep the documented code assignment (usage errors are 1).
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


def _parse_labels(text: str) -> tuple[str, ...]:
    names = tuple(s.strip() for s in text.split(",") if s.strip())
    if not names:
        raise UsageError(f"--labels got no names in {text!r}")
    return names


def _parse_dims(text: str) -> tuple[int, int]:
    h, sep, w = text.partition("x")
    try:
        if not sep:
            raise ValueError("missing 'x'")
        dims = (int(h), int(w))
    except ValueError as e:
        raise UsageError(f"--dims must look like 128x128, got {text!r} ({e})") from e
    if dims[0] < 1 or dims[1] < 1:
        raise UsageError(f"--dims must be positive, got {text!r}")
    return dims


def export_main(argv: list[str] | None = None) -> int:
    parser = _Parser(
        prog="export-fpm",
        description="Normalize a saved (H, W, L) array and write it as .fpm",
    )
    parser.add_argument("--input", required=True, help=".npy array file")
    parser.add_argument(
        "--labels", required=True, help="comma-separated label names, 'bg' first"
    )
    parser.add_argument(
        "--out", required=True, help="output .fpm path (a directory with --key)"
    )
    parser.add_argument(
        "--key",
        default=None,
        help="'<image id>__<window tag>' replay name; --out becomes a directory",
    )
    try:
        args = parser.parse_args(argv)
        job = ExportJob(
            source=args.input,
            labels=_parse_labels(args.labels),
            path=args.out,
            key=args.key,
        )
        target = run_export_job(job)
        print(f"wrote {target}")
        return 0
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ExportError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2


def render_main(argv: list[str] | None = None) -> int:
    parser = _Parser(
        prog="render-fpm",
        description="Rasterize an annotation JSON into a degraded .fpm map",
    )
    parser.add_argument("--annotation", required=True, help="annotation JSON file")
    parser.add_argument("--dims", required=True, help="image size as HxW")
    parser.add_argument(
        "--labels", required=True, help="comma-separated label names, 'bg' first"
    )
    parser.add_argument("--out", required=True, help="output .fpm path")
    parser.add_argument("--blur", type=int, default=0, help="box blur radius")
    parser.add_argument("--sigma", type=float, default=0.0, help="noise level")
    parser.add_argument("--stride", type=int, default=1, help="block-average stride")
    parser.add_argument("--seed", type=int, default=0, help="noise stream root seed")
    try:
        args = parser.parse_args(argv)
        if args.blur < 0 or args.stride < 1 or args.sigma < 0:
            raise UsageError(
                "need --blur >= 0, --stride >= 1, --sigma >= 0, got "
                f"{args.blur}/{args.stride}/{args.sigma}"
            )
        annotation_to_fpm(
            Path(args.annotation),
            _parse_dims(args.dims),
            _parse_labels(args.labels),
            args.out,
            blur=args.blur,
            sigma=args.sigma,
            stride=args.stride,
            seed=args.seed,
        )
        print(f"wrote {args.out}")
        return 0
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ExportError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(export_main())
