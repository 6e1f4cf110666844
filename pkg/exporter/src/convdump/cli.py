"""convdump command line: make-toy and export."""

from __future__ import annotations

import argparse
import sys

from .export import ExportError, export_model
from .model import ModelError, load_model, make_toy


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convdump",
        description="Dump lowered weights and sampled responses from a toy model",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-toy", help="write a small random pretrained model")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--input-shape", default="3,8,8", help="c,h,w")

    p = sub.add_parser("export", help="export layers to NPY files + manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layer", action="append", default=None,
                   help="layer name (repeatable; default: all)")
    p.add_argument("--num-samples", type=int, default=48,
                   help="lowered columns per conv layer")
    p.add_argument("--images", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "make-toy":
            shape = tuple(int(v) for v in args.input_shape.split(","))
            if len(shape) != 3:
                print("error: --input-shape must be c,h,w", file=sys.stderr)
                return 2
            model = make_toy(args.out, seed=args.seed, input_shape=shape)
            print(f"wrote {model.name} to {args.out}")
            return 0
        model = load_model(args.model)
        manifest = export_model(
            model,
            args.out,
            num_samples=args.num_samples,
            seed=args.seed,
            layer_names=args.layer,
            n_images=args.images,
        )
        for entry in manifest["layers"]:
            print(f"{entry['name']}: {entry['weights']} + {len(entry['samples_x'])} sample pairs")
        return 0
    except (ModelError, ExportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
