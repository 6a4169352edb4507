"""Command-line entry point.

Exit codes: 0 success, 1 unexpected failure, 2 manifest/config problem,
3 backend failure. Verbosity is controlled by ADAGE_LOG=debug|info|warn.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .errors import AdageError, BackendFailure
from .pipeline import cmd_evaluate, cmd_explain, parse_manifest
from .selfcheck import run_selfcheck

FORMATS_TEXT = """\
ADGT tensor container (little-endian)
  offset  size  field
  0       4     magic "ADGT"
  4       4     u32 version (1)
  8       4     u32 C  (channels)
  12      4     u32 H  (height)
  16      4     u32 W  (width)
  20      4*C*H*W  f32 values, index order (c*H + h)*W + w
  The payload length must match the header exactly; all values finite.

ADGM mask container (little-endian)
  offset  size  field
  0       4     magic "ADGM"
  4       4     u32 version (1)
  8       4     u32 H
  12      4     u32 W
  16      H*W   u8 category values, row-major
  Roles: binary masks hold {0,1}; categorical maps hold values < K,
  with 255 reserved as the "not eligible" sentinel in MCCG maps.

PGM export
  Binary PGM (P5), maxval 255: "P5\\n<W> <H>\\n255\\n" + H*W gray bytes.
  Categories map through an explicit palette; unmapped categories are an
  error, never silently black.

Model-backend wire protocol (stdio, little-endian)
  frame := u32 header_length | JSON header | payload
  The header is compact UTF-8 JSON with an "op" field; the payload length
  is implied by the op:
    {"op":"hello","version":1}                     -> no payload
    {"op":"hello","version":1,"n_class":N,"batch":B} -> no payload (reply)
    {"op":"predict","c":C,"h":H,"w":W}             -> 4*C*H*W bytes f32
    {"op":"logits","n_class":N,"h":H,"w":W}        -> 4*N*H*W bytes f32
    {"op":"error","message":"..."}                 -> no payload
    {"op":"bye"}                                   -> no payload
  The engine speaks first with hello and expects a hello reply advertising
  n_class. One request is in flight at a time. On bye the backend must
  exit with status 0.
"""


def _setup_logging() -> None:
    level_name = os.environ.get("ADAGE_LOG", "warn").lower()
    level = {"debug": logging.DEBUG, "info": logging.INFO, "warn": logging.WARNING}.get(
        level_name, logging.WARNING
    )
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )


def _add_manifest_command(sub, name: str, help_text: str):
    p = sub.add_parser(name, help=help_text)
    p.add_argument("manifest", help="path to the run manifest JSON")
    p.add_argument("--jobs", type=int, default=None, metavar="N",
                   help="process up to N tiles concurrently")
    p.add_argument("--rank-by", choices=["signed", "absolute"], default=None,
                   help="rank groups by signed value (default) or magnitude")
    p.add_argument("--k-policy", default=None, metavar="POLICY",
                   help="AP cutoff: paper (k=|reference|) or fixed:<k>")
    p.add_argument("--out", default=None, metavar="DIR",
                   help="override the manifest output directory")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adage",
        description="Channel-group attribution and domain-knowledge alignment "
        "scoring for dense pixel-wise predictors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_manifest_command(sub, "explain",
                          "write attribution tensors, MCCG maps, and CSV summaries")
    _add_manifest_command(sub, "evaluate",
                          "score alignment and segmentation quality into a report")
    sub.add_parser("selfcheck", help="run the built-in verification suite")
    sub.add_parser("formats", help="print the container and wire-protocol layouts")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging()

    if args.command == "selfcheck":
        return run_selfcheck(stream=sys.stdout)
    if args.command == "formats":
        print(FORMATS_TEXT, end="")
        return 0

    try:
        manifest = parse_manifest(
            args.manifest,
            out_override=args.out,
            rank_by=args.rank_by,
            k_policy=args.k_policy,
            jobs=args.jobs,
        )
        if args.command == "explain":
            return cmd_explain(manifest)
        return cmd_evaluate(manifest)
    except BackendFailure as exc:
        print(f"adage: {exc}", file=sys.stderr)
        return 3
    except AdageError as exc:
        print(f"adage: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
