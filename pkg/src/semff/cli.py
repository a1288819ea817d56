"""Command-line pipeline.

    semff synth        build a synthetic dataset directory
    semff train-vdan   train the document/image embedding network
    semff train-agent  train the fast-forward agent on top of it
    semff run          fast-forward videos to selection files
    semff eval         score selections against ground truth

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure. All outputs are written under --output-dir with fixed
names and no timestamps, so reruns with the same seed are byte-identical.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import zlib
from pathlib import Path

import numpy as np

from . import agent as agent_mod
from . import dataio
from .errors import ConfigError, DataFormatError, NumericError, ShapeError
from .metrics import GroundTruth, evaluate_selection
from .vdan import (TOY_CONFIG, VdanConfig, WordVectorTable, encode_document,
                   encode_image, load_vdan, save_vdan, train_vdan)

PROFILES = {"full": VdanConfig(), "toy": TOY_CONFIG}


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator per consumer: same seed, distinct streams."""
    return np.random.default_rng(
        np.random.SeedSequence((seed, zlib.crc32(name.encode("utf-8")))))


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output-dir", type=Path, required=True)


def _add_vdan_dims(p: argparse.ArgumentParser) -> None:
    p.add_argument("--profile", choices=sorted(PROFILES), default="full")
    p.add_argument("--word-dim", type=int)
    p.add_argument("--sent-hidden", type=int)
    p.add_argument("--doc-hidden", type=int)
    p.add_argument("--image-dim", type=int)
    p.add_argument("--embedding-dim", type=int)
    p.add_argument("--proj-hidden", type=int)
    p.add_argument("--margin", type=float)
    p.add_argument("--no-word-attention", action="store_true")


def _vdan_config(args) -> VdanConfig:
    cfg = PROFILES[args.profile]
    overrides = {}
    for flag, field in (("word_dim", "word_dim"), ("sent_hidden", "sent_hidden"),
                        ("doc_hidden", "doc_hidden"), ("image_dim", "image_dim"),
                        ("embedding_dim", "embed_dim"),
                        ("proj_hidden", "proj_hidden"), ("margin", "margin")):
        value = getattr(args, flag)
        if value is not None:
            overrides[field] = value
    if args.no_word_attention:
        overrides["word_attention"] = False
    return dataclasses.replace(cfg, **overrides)


def _write_csv(path: Path, header: list[str], rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            cells = []
            for key in header:
                value = row.get(key, "")
                if isinstance(value, float):
                    cells.append(f"{value:.8f}")
                else:
                    cells.append(str(value))
            f.write(",".join(cells) + "\n")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    args.output_dir.mkdir(parents=True, exist_ok=True)
    manifest = dataio.generate_synthetic_dataset(
        args.output_dir,
        classes=args.classes,
        images_per_class=args.images_per_class,
        captions_per_image=args.captions_per_image,
        words_per_class=args.words_per_class,
        filler_count=args.filler_count,
        filler_rate=args.filler_rate,
        feature_dim=args.feature_dim,
        word_dim=args.word_dim,
        videos=args.videos,
        video_frames=args.video_frames,
        segments_per_video=args.segments_per_video,
        sentences_per_video=args.sentences_per_video,
        noise=args.noise,
        seed=args.seed)
    print(f"dataset: {args.output_dir}")
    print(f"classes={manifest['classes']} images={manifest['images']} "
          f"videos={len(manifest['videos'])}")
    return 0


def cmd_train_vdan(args) -> int:
    cfg = _vdan_config(args)
    table = WordVectorTable.from_file(args.dataset / "words.txt")
    corpus = dataio.load_corpus(args.dataset)
    args.output_dir.mkdir(parents=True, exist_ok=True)

    def progress(epoch, row):
        val = f" val_loss={row['val_loss']:.4f}" if "val_loss" in row else ""
        print(f"epoch {epoch}: train_loss={row['train_loss']:.4f}{val}")

    params, history = train_vdan(
        corpus, table, cfg,
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
        rng=rng_stream(args.seed, "vdan.pairs"),
        init_rng=rng_stream(args.seed, "vdan.init"),
        val_fraction=args.val_fraction, progress=progress)

    ckpt = args.output_dir / "vdan.sskp"
    save_vdan(ckpt, params)
    _write_csv(args.output_dir / "vdan_loss.csv",
               ["epoch", "train_loss", "val_loss", "val_pos_cos",
                "val_neg_cos", "val_separation"], history)
    print(f"wrote {ckpt}")
    return 0


def _video_inputs(dataset: Path, params, table) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """(video id, per-frame embeddings, document embedding) for every video.

    The document encoder is conditioned on the video's mean frame feature:
    inference has no paired image, and the mean is a deterministic stand-in
    with the right dimension.
    """
    out = []
    for vid in dataio.list_videos(dataset):
        features, sentences, _ = dataio.load_video(dataset, vid)
        e_doc = encode_document(params, table, sentences,
                                features.mean(axis=0)).data
        frames = np.stack([encode_image(params, f).data for f in features])
        out.append((vid, frames, e_doc))
    if not out:
        raise DataFormatError(f"{dataset}: no videos found under videos/")
    return out


def cmd_train_agent(args) -> int:
    params = load_vdan(args.vdan)
    table = WordVectorTable.from_file(args.dataset / "words.txt")
    cfg = agent_mod.AgentConfig(
        gamma=args.gamma, beta=args.entropy_beta, v_max=args.v_max,
        omega_max=args.omega_max, policy_lr=args.policy_lr,
        value_lr=args.value_lr, epochs=args.epochs)
    videos = [(frames, e_doc) for _, frames, e_doc
              in _video_inputs(args.dataset, params, table)]
    args.output_dir.mkdir(parents=True, exist_ok=True)

    def progress(epoch, row):
        print(f"epoch {epoch}: mean_return={row['mean_return']:.4f}")

    policy, value, history = agent_mod.train_agent(
        videos, cfg, rng_stream(args.seed, "agent.actions"),
        init_rng=rng_stream(args.seed, "agent.init"), progress=progress)

    ckpt = args.output_dir / "agent.sskp"
    agent_mod.save_agent(ckpt, policy, value, cfg)
    _write_csv(args.output_dir / "agent_returns.csv",
               ["epoch", "mean_return", "policy_loss", "value_loss"], history)
    print(f"wrote {ckpt}")
    return 0


def cmd_run(args) -> int:
    params = load_vdan(args.vdan)
    policy, _, acfg = agent_mod.load_agent(args.agent)
    table = WordVectorTable.from_file(args.dataset / "words.txt")
    video_ids = args.video or dataio.list_videos(args.dataset)
    if not video_ids:
        raise DataFormatError(f"{args.dataset}: no videos found under videos/")
    args.output_dir.mkdir(parents=True, exist_ok=True)
    for vid in video_ids:
        features, sentences, _ = dataio.load_video(args.dataset, vid)
        selected = agent_mod.fast_forward(
            features, sentences, params, table, policy,
            v_max=acfg.v_max, omega_max=acfg.omega_max)
        out = args.output_dir / f"{vid}.sel.txt"
        dataio.write_selection(out, vid, features.shape[0], selected)
        print(f"{vid}: kept {len(selected)}/{features.shape[0]} frames -> {out}")
    return 0


def _parse_hit_numbers(text: str) -> list[int]:
    try:
        hits = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"bad --hit-numbers value {text!r}") from None
    if not hits or any(h < 1 for h in hits):
        raise ConfigError("--hit-numbers needs positive integers")
    return hits


def cmd_eval(args) -> int:
    vid, n_frames, selected = dataio.read_selection(args.selection)
    features, _, segments = dataio.load_video(args.dataset, vid)
    if features.shape[0] != n_frames:
        raise DataFormatError(
            f"{args.selection}: header says {n_frames} frames, video {vid} "
            f"has {features.shape[0]}")
    if segments is None:
        raise DataFormatError(f"video {vid} has no ground-truth segments file")
    gt = GroundTruth(segments, n_frames)
    report = evaluate_selection(selected, gt, _parse_hit_numbers(args.hit_numbers))
    args.output_dir.mkdir(parents=True, exist_ok=True)
    report_path = args.output_dir / f"{vid}.report.txt"
    coverage_path = args.output_dir / f"{vid}.coverage.csv"
    report_path.write_text(report.to_text(), encoding="utf-8")
    coverage_path.write_text(report.coverage_csv(), encoding="utf-8")
    sys.stdout.write(report.to_text())
    print(f"wrote {report_path}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="semff", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--images-per-class", type=int, default=4)
    p.add_argument("--captions-per-image", type=int, default=3)
    p.add_argument("--words-per-class", type=int, default=12)
    p.add_argument("--filler-count", type=int, default=4)
    p.add_argument("--filler-rate", type=float, default=0.1)
    p.add_argument("--feature-dim", type=int, default=64)
    p.add_argument("--word-dim", type=int, default=16)
    p.add_argument("--videos", type=int, default=2)
    p.add_argument("--video-frames", type=int, default=200)
    p.add_argument("--segments-per-video", type=int, default=2)
    p.add_argument("--sentences-per-video", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-vdan", help="train the embedding network")
    _add_common(p)
    p.add_argument("--dataset", type=Path, required=True)
    _add_vdan_dims(p)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.set_defaults(func=cmd_train_vdan)

    p = sub.add_parser("train-agent", help="train the fast-forward agent")
    _add_common(p)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--vdan", type=Path, required=True,
                   help="embedding checkpoint from train-vdan")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--entropy-beta", type=float, default=0.01)
    p.add_argument("--policy-lr", type=float, default=1e-5)
    p.add_argument("--value-lr", type=float, default=1e-3)
    p.add_argument("--v-max", type=int, default=20)
    p.add_argument("--omega-max", type=int, default=5)
    p.set_defaults(func=cmd_train_agent)

    p = sub.add_parser("run", help="fast-forward videos to selection files")
    _add_common(p)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--vdan", type=Path, required=True)
    p.add_argument("--agent", type=Path, required=True)
    p.add_argument("--video", action="append",
                   help="video id; repeatable; default: all in dataset")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score a selection against ground truth")
    _add_common(p)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--selection", type=Path, required=True)
    p.add_argument("--hit-numbers", default="1,2,3,4,5")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"semff: configuration error: {e}", file=sys.stderr)
        return 1
    except (DataFormatError, ShapeError) as e:
        print(f"semff: data error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"semff: data error: missing file {e.filename}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"semff: numeric failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
