"""Command line interface for the export adapter."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .encoders import build_encoder
from .export import ExportError, export_dataset
from .prototypes import PrototypeError, export_prototypes
from .raw import CaptureError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scene-export", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    export_p = sub.add_parser("export", help="convert raw captures into scene directories")
    export_p.add_argument("--source", type=Path, required=True, help="raw capture root")
    export_p.add_argument("--scenes", required=True, help="comma-separated capture names")
    export_p.add_argument("--encoder", default="color", help="color[:dim=D,patch=P] or vit:<model-path>")
    export_p.add_argument("--out", type=Path, required=True)

    proto_p = sub.add_parser("prototypes", help="encode one example image per class")
    proto_p.add_argument("--spec", type=Path, required=True,
                         help="JSON list of {class_name, image, mask?} entries")
    proto_p.add_argument("--encoder", default="color")
    proto_p.add_argument("--out", type=Path, required=True, help="output prototypes.json")
    return parser


def _cmd_export(args) -> int:
    encoder = build_encoder(args.encoder)
    names = [s.strip() for s in args.scenes.split(",") if s.strip()]
    manifest = export_dataset(args.source, names, args.out, encoder)
    print(f"exported {len(manifest.scenes)} scene(s) to {args.out}")
    print(f"wrote {args.out / 'manifest.json'}")
    return 0


def _cmd_prototypes(args) -> int:
    encoder = build_encoder(args.encoder)
    spec = json.loads(args.spec.read_text())
    entries = [
        (e["class_name"], Path(e["image"]), Path(e["mask"]) if e.get("mask") else None)
        for e in spec
    ]
    export_prototypes(entries, encoder, args.out)
    print(f"wrote {args.out}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "export":
            return _cmd_export(args)
        return _cmd_prototypes(args)
    except (CaptureError, ExportError, PrototypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
