"""Export pipeline.

    semff-export video   sampled frames -> feature file + manifest sidecar
    semff-export words   pretrained vectors -> corpus subset + missing report

Exit codes: 0 success, 1 usage or configuration error, 2 input data error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .backbone import get_backbone
from .errors import BackboneError, InputError
from .export import (collect_corpus_tokens, export_video_features,
                     export_word_vectors)


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def cmd_video(args) -> int:
    backbone = get_backbone(args.backbone, args.feature_dim)
    manifest = export_video_features(
        args.input, args.output, backbone,
        video_id=args.video_id, stride=args.stride)
    print(f"{manifest.video_id}: {manifest.frame_count} frames x "
          f"{manifest.feature_dim} ({manifest.backbone}) -> {args.output}")
    return 0


def cmd_words(args) -> int:
    tokens = collect_corpus_tokens(args.dataset)
    report = args.report or Path(str(args.output) + ".missing.txt")
    kept, missing = export_word_vectors(args.pretrained, tokens,
                                        args.output, report)
    print(f"kept {len(kept)}/{len(tokens)} tokens -> {args.output}")
    if missing:
        print(f"{len(missing)} missing tokens listed in {report}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="semff-export", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("video", help="extract frame features")
    p.add_argument("--input", type=Path, required=True,
                   help="video file, or a directory of image frames")
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--video-id", help="default: input file stem")
    p.add_argument("--stride", type=int, default=1,
                   help="keep every stride-th frame")
    p.add_argument("--backbone", choices=("resnet50", "projection"),
                   default="resnet50")
    p.add_argument("--feature-dim", type=int, default=2048,
                   help="projection backbone output width")
    p.set_defaults(func=cmd_video)

    p = sub.add_parser("words", help="subset pretrained word vectors")
    p.add_argument("--pretrained", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True,
                   help="dataset directory providing the vocabulary")
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--report", type=Path,
                   help="missing-token list (default: <output>.missing.txt)")
    p.set_defaults(func=cmd_words)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BackboneError as e:
        print(f"semff-export: configuration error: {e}", file=sys.stderr)
        return 1
    except InputError as e:
        print(f"semff-export: input error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"semff-export: input error: missing file {e.filename}",
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
