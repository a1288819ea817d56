"""Top-level export operations and their manifest sidecars."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError
from .formats import write_feature_file, write_word_vector_file
from .tokens import tokenize
from .video import iter_frames


@dataclass(frozen=True)
class ExportManifest:
    video_id: str
    frame_count: int
    stride: int
    backbone: str
    feature_dim: int
    source: str
    features_path: str

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
            f.write("\n")


def export_video_features(source: str | Path, out_path: str | Path, backbone,
                          *, video_id: str | None = None, stride: int = 1
                          ) -> ExportManifest:
    """Run the backbone over sampled frames and write features + manifest.

    The manifest lands next to the feature file as
    ``<name>.manifest.json``.
    """
    source, out_path = Path(source), Path(out_path)
    frames = [frame for _, frame in iter_frames(source, stride)]
    if not frames:
        raise InputError(f"{source}: no frames sampled")
    features = np.asarray(backbone.features(frames), dtype=np.float32)
    if features.shape != (len(frames), backbone.dim):
        raise InputError(
            f"backbone {backbone.name} returned shape {features.shape}, "
            f"expected {(len(frames), backbone.dim)}")
    write_feature_file(out_path, features)
    manifest = ExportManifest(
        video_id=video_id or source.stem,
        frame_count=len(frames),
        stride=stride,
        backbone=backbone.name,
        feature_dim=backbone.dim,
        source=str(source),
        features_path=str(out_path))
    manifest.write(out_path.with_name(out_path.name + ".manifest.json"))
    return manifest


def collect_corpus_tokens(dataset: str | Path) -> list[str]:
    """Sorted vocabulary of a dataset directory: caption text plus the
    per-video query documents."""
    dataset = Path(dataset)
    tokens: set[str] = set()
    captions = dataset / "corpus" / "captions.tsv"
    if not captions.is_file():
        raise InputError(f"{captions}: missing captions file")
    with open(captions, "r", encoding="utf-8") as f:
        for line in f:
            text = line.split("\t", 1)[-1]
            tokens.update(tokenize(text))
    videos = dataset / "videos"
    if videos.is_dir():
        for doc in sorted(videos.glob("*.txt")):
            tokens.update(tokenize(doc.read_text(encoding="utf-8")))
    if not tokens:
        raise InputError(f"{dataset}: empty vocabulary")
    return sorted(tokens)


def _read_pretrained(path: Path) -> dict[str, str]:
    """token -> the line's value text, first occurrence winning."""
    table: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split(None, 1)
            if not parts:
                continue
            if len(parts) < 2:
                raise InputError(f"{path}:{lineno}: token without values")
            token, values = parts[0], parts[1].strip()
            table.setdefault(token, values)
    if not table:
        raise InputError(f"{path}: no vectors found")
    return table


def export_word_vectors(pretrained: str | Path, corpus_tokens: Iterable[str],
                        out_path: str | Path, report_path: str | Path
                        ) -> tuple[list[str], list[str]]:
    """Subset a pretrained vector file to the corpus vocabulary.

    Kept lines are copied verbatim, so values survive byte for byte.
    Tokens absent from the pretrained file go to the report file, one per
    line; an empty report still gets written. Returns (kept, missing).
    """
    table = _read_pretrained(Path(pretrained))
    kept, missing = [], []
    dim = None
    with open(out_path, "w", encoding="utf-8") as f:
        for token in corpus_tokens:
            values = table.get(token)
            if values is None:
                missing.append(token)
                continue
            width = len(values.split())
            if dim is None:
                dim = width
            elif width != dim:
                raise InputError(
                    f"{pretrained}: token {token!r} has {width} values, "
                    f"others have {dim}")
            f.write(f"{token} {values}\n")
            kept.append(token)
    if not kept:
        raise InputError("no corpus token found in the pretrained file")
    with open(report_path, "w", encoding="utf-8") as f:
        for token in missing:
            f.write(token + "\n")
    return kept, missing


def subset_as_arrays(out_path: str | Path) -> tuple[list[str], np.ndarray]:
    """Parse a written subset back; mirrors what the engine will load."""
    tokens, rows = [], []
    with open(out_path, "r", encoding="utf-8") as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            tokens.append(parts[0])
            rows.append(np.array([float(v) for v in parts[1:]],
                                 dtype=np.float32))
    return tokens, np.stack(rows)
