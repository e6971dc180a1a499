"""Command line for the export scripts.

  feature-export sample --out DIR [--n-images 25 --qa-per-image 4 --seed 0]
  feature-export export --images DIR --qa-json FILE --out DIR
                        [--vision-model SPEC --text-model SPEC --layer -1]

Model specs are local paths or hub ids; "tiny" / "tiny:<seed>" builds the
deterministic random-weight fallback architectures.
"""

from __future__ import annotations

import argparse
import sys

from .backbones import DEFAULT_TEXT, DEFAULT_VISION, BackboneError
from .export import AnnotationError, ExportJob, run_export
from .formats import ExportFormatError
from .sample_data import make_sample_dataset


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="feature-export")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="render sample scenes plus QA annotations")
    p.add_argument("--out", required=True)
    p.add_argument("--n-images", type=int, default=25)
    p.add_argument("--qa-per-image", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--drop-grounding-every", type=int, default=0,
                   help="omit the grounding box from every k-th QA pair")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("export", help="run backbones and emit feature files")
    p.add_argument("--images", required=True, help="directory with the image files")
    p.add_argument("--qa-json", required=True, help="QA annotation JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--vision-model", default=DEFAULT_VISION)
    p.add_argument("--text-model", default=DEFAULT_TEXT)
    p.add_argument("--layer", type=int, default=-1,
                   help="hidden-state index to export (-1 = final layer)")
    p.add_argument("--expect-d", type=int, default=None,
                   help="fail unless the vision backbone emits this dimension")
    p.set_defaults(func=cmd_export)
    return parser


def cmd_sample(args) -> int:
    path = make_sample_dataset(args.out, n_images=args.n_images,
                               qa_per_image=args.qa_per_image, seed=args.seed,
                               drop_grounding_every=args.drop_grounding_every)
    print(f"wrote {path}")
    return 0


def cmd_export(args) -> int:
    job = ExportJob(images_dir=args.images, qa_json=args.qa_json, out_dir=args.out,
                    vision_spec=args.vision_model, text_spec=args.text_model,
                    layer=args.layer, expect_d=args.expect_d)
    manifest = run_export(job)
    print(f"wrote {manifest}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BackboneError as exc:
        print(f"backbone error: {exc}", file=sys.stderr)
        return 3
    except (AnnotationError, ExportFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
