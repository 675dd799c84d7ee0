"""plots CLI: render figures from simulator output files."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .render import FigureSpec, SchemaError, render


def cmd_render(args) -> int:
    try:
        spec = FigureSpec.from_json(Path(args.spec).read_text())
        info = render(spec)
    except (SchemaError, ValueError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": "input", "message": str(exc)}, sort_keys=True))
        return 2
    print(json.dumps(info, sort_keys=True))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="plots")
    sub = parser.add_subparsers(dest="command", required=True)
    ren = sub.add_parser("render", help="render one figure from a spec file")
    ren.add_argument("--spec", required=True, help="FigureSpec JSON path")
    ren.set_defaults(func=cmd_render)
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
