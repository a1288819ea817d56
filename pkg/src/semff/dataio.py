"""File formats and dataset layout.

A dataset directory looks like:

    words.txt               token + d_w floats per line
    corpus/features.vdff    image features, one row per image
    corpus/captions.tsv     "<image_index>\\t<sentence>" per line
    videos/<id>.vdff        per-frame features
    videos/<id>.txt         query document, one sentence per line
    videos/<id>.gt.csv      relevant segments, "start,end" per line (inclusive)

The synthetic generator at the bottom builds such a directory from scratch
with class-separable features and class-partitioned vocabulary, so training
behaviour can be exercised without shipping real data.
"""

from __future__ import annotations

import logging
import re
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataFormatError

log = logging.getLogger("semff.dataio")

VDFF_MAGIC = b"VDFF"
VDFF_VERSION = 1


# ---------------------------------------------------------------------------
# Frame / image feature files
# ---------------------------------------------------------------------------

def write_features(path: str | Path, features: np.ndarray) -> None:
    """Write an (n, z) float32 feature matrix."""
    arr = np.ascontiguousarray(features, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"features must be 2-d, got shape {arr.shape}")
    with open(path, "wb") as f:
        f.write(VDFF_MAGIC)
        f.write(struct.pack("<III", VDFF_VERSION, arr.shape[1], arr.shape[0]))
        f.write(arr.tobytes())


def read_features(path: str | Path) -> np.ndarray:
    """Read a feature matrix back; bit-exact inverse of write_features."""
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) < 16:
            raise DataFormatError(f"{path}: truncated header ({len(header)} bytes)")
        if header[:4] != VDFF_MAGIC:
            raise DataFormatError(
                f"{path}: bad magic {header[:4]!r}, expected {VDFF_MAGIC!r}")
        version, dim, count = struct.unpack("<III", header[4:16])
        if version != VDFF_VERSION:
            raise DataFormatError(f"{path}: unsupported version {version}")
        if dim == 0:
            raise DataFormatError(f"{path}: zero feature dimension")
        payload = f.read(4 * dim * count)
        if len(payload) != 4 * dim * count:
            raise DataFormatError(
                f"{path}: payload truncated at byte {16 + len(payload)}, "
                f"expected {count} rows of dim {dim}")
        if f.read(1):
            raise DataFormatError(f"{path}: trailing bytes after {count} rows")
    return np.frombuffer(payload, dtype="<f4").reshape(count, dim).copy()


# ---------------------------------------------------------------------------
# Text formats
# ---------------------------------------------------------------------------

def load_word_vectors(path: str | Path) -> tuple[dict[str, int], np.ndarray]:
    """Load token vectors; returns (token -> row index, matrix).

    Dimensionality is inferred from the first line. Duplicate tokens keep
    the first occurrence and log a warning.
    """
    vocab: dict[str, int] = {}
    rows: list[np.ndarray] = []
    dim: int | None = None
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                if not values:
                    raise DataFormatError(f"{path}:{lineno}: no vector values")
                dim = len(values)
            elif len(values) != dim:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {dim} values, got {len(values)}")
            if token in vocab:
                log.warning("%s:%d: duplicate token %r, keeping first", path, lineno, token)
                continue
            try:
                vec = np.array([float(v) for v in values], dtype=np.float32)
            except ValueError as e:
                raise DataFormatError(f"{path}:{lineno}: {e}") from None
            vocab[token] = len(rows)
            rows.append(vec)
    if not rows:
        raise DataFormatError(f"{path}: no word vectors found")
    return vocab, np.stack(rows)


def write_word_vectors(path: str | Path, vocab: Sequence[str],
                       vectors: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for token, row in zip(vocab, vectors):
            f.write(token + " " + " ".join(f"{v:.6f}" for v in row) + "\n")


def load_document(path: str | Path) -> list[str]:
    """One sentence per line; blank lines are skipped."""
    with open(path, "r", encoding="utf-8") as f:
        sentences = [line.strip() for line in f]
    sentences = [s for s in sentences if s]
    if not sentences:
        raise DataFormatError(f"{path}: document has no sentences")
    return sentences


def load_captions(path: str | Path) -> list[tuple[int, str]]:
    """TSV of (image index, caption sentence)."""
    out: list[tuple[int, str]] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise DataFormatError(f"{path}:{lineno}: expected '<index>\\t<sentence>'")
            idx_str, sentence = line.split("\t", 1)
            try:
                idx = int(idx_str)
            except ValueError:
                raise DataFormatError(
                    f"{path}:{lineno}: bad image index {idx_str!r}") from None
            if idx < 0:
                raise DataFormatError(f"{path}:{lineno}: negative image index {idx}")
            if not sentence.strip():
                raise DataFormatError(f"{path}:{lineno}: empty caption")
            out.append((idx, sentence.strip()))
    if not out:
        raise DataFormatError(f"{path}: no captions found")
    return out


def load_segments(path: str | Path) -> list[tuple[int, int]]:
    """Inclusive (start, end) frame ranges; must be sorted and disjoint."""
    segments: list[tuple[int, int]] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise DataFormatError(f"{path}:{lineno}: expected 'start,end'")
            try:
                start, end = int(parts[0]), int(parts[1])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-integer bounds") from None
            if start < 0 or end < start:
                raise DataFormatError(
                    f"{path}:{lineno}: bad segment ({start}, {end})")
            if segments and start <= segments[-1][1]:
                raise DataFormatError(
                    f"{path}:{lineno}: segment ({start}, {end}) overlaps or is "
                    f"out of order with ({segments[-1][0]}, {segments[-1][1]})")
            segments.append((start, end))
    return segments


def write_segments(path: str | Path, segments: Sequence[tuple[int, int]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for start, end in segments:
            f.write(f"{start},{end}\n")


_SELECTION_HEADER = re.compile(
    r"^# video=(?P<vid>\S+) frames=(?P<frames>\d+) selected=(?P<sel>\d+)$")


def write_selection(path: str | Path, video_id: str, n_frames: int,
                    selected: Sequence[int]) -> None:
    """Persist the frames a playback policy kept, with provenance header."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# video={video_id} frames={n_frames} selected={len(selected)}\n")
        for idx in selected:
            f.write(f"{idx}\n")


def read_selection(path: str | Path) -> tuple[str, int, list[int]]:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        m = _SELECTION_HEADER.match(header)
        if not m:
            raise DataFormatError(f"{path}:1: bad selection header {header!r}")
        indices: list[int] = []
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                idx = int(line)
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: bad frame index {line!r}") from None
            if indices and idx <= indices[-1]:
                raise DataFormatError(
                    f"{path}:{lineno}: frame indices must strictly increase")
            indices.append(idx)
    n_frames = int(m.group("frames"))
    if len(indices) != int(m.group("sel")):
        raise DataFormatError(
            f"{path}: header says {m.group('sel')} frames, found {len(indices)}")
    if indices and (indices[0] < 0 or indices[-1] >= n_frames):
        raise DataFormatError(f"{path}: frame index out of range 0..{n_frames - 1}")
    return m.group("vid"), n_frames, indices


# ---------------------------------------------------------------------------
# Dataset directory
# ---------------------------------------------------------------------------

class Corpus:
    """Image features plus captions grouped by image index."""

    def __init__(self, features: np.ndarray, captions_by_image: list[list[str]]):
        self.features = features
        self.captions_by_image = captions_by_image

    def __len__(self) -> int:
        return self.features.shape[0]


def load_corpus(root: str | Path) -> Corpus:
    root = Path(root)
    features = read_features(root / "corpus" / "features.vdff")
    pairs = load_captions(root / "corpus" / "captions.tsv")
    grouped: list[list[str]] = [[] for _ in range(features.shape[0])]
    for idx, sentence in pairs:
        if idx >= features.shape[0]:
            raise DataFormatError(
                f"{root / 'corpus' / 'captions.tsv'}: image index {idx} out of "
                f"range for {features.shape[0]} images")
        grouped[idx].append(sentence)
    empty = [i for i, caps in enumerate(grouped) if not caps]
    if empty:
        raise DataFormatError(
            f"{root}: images without captions: {empty[:8]}{'...' if len(empty) > 8 else ''}")
    return Corpus(features, grouped)


def list_videos(root: str | Path) -> list[str]:
    vdir = Path(root) / "videos"
    if not vdir.is_dir():
        return []
    return sorted(p.stem for p in vdir.glob("*.vdff"))


def load_video(root: str | Path, video_id: str):
    """Returns (frame features, document sentences, segments or None)."""
    vdir = Path(root) / "videos"
    features = read_features(vdir / f"{video_id}.vdff")
    doc = load_document(vdir / f"{video_id}.txt")
    gt_path = vdir / f"{video_id}.gt.csv"
    segments = load_segments(gt_path) if gt_path.exists() else None
    if segments and segments[-1][1] >= features.shape[0]:
        raise DataFormatError(
            f"{gt_path}: segment end {segments[-1][1]} beyond last frame "
            f"{features.shape[0] - 1}")
    return features, doc, segments


# ---------------------------------------------------------------------------
# Synthetic dataset generator
# ---------------------------------------------------------------------------

def _orthonormal_rows(rng: np.random.Generator, k: int, dim: int) -> np.ndarray:
    if k > dim:
        raise ValueError(f"cannot fit {k} orthonormal prototypes in dim {dim}")
    gauss = rng.normal(size=(dim, k))
    q, _ = np.linalg.qr(gauss)
    return np.ascontiguousarray(q.T[:k], dtype=np.float32)


def _make_sentence(rng: np.random.Generator, class_words: list[str],
                   filler_words: list[str], length_range: tuple[int, int],
                   filler_rate: float) -> str:
    lo, hi = length_range
    length = int(rng.integers(lo, hi + 1))
    words = []
    for _ in range(length):
        if filler_words and rng.random() < filler_rate:
            words.append(filler_words[int(rng.integers(len(filler_words)))])
        else:
            words.append(class_words[int(rng.integers(len(class_words)))])
    if not any(w in class_words for w in words):
        words[0] = class_words[int(rng.integers(len(class_words)))]
    return " ".join(words)


def generate_synthetic_dataset(
        out_dir: str | Path, *,
        classes: int = 3,
        images_per_class: int = 4,
        captions_per_image: int = 3,
        words_per_class: int = 12,
        filler_count: int = 4,
        filler_rate: float = 0.1,
        caption_length: tuple[int, int] = (3, 6),
        feature_dim: int = 64,
        word_dim: int = 16,
        videos: int = 2,
        video_frames: int = 200,
        segments_per_video: int = 2,
        segment_length: tuple[int, int] = (20, 40),
        sentences_per_video: int = 4,
        noise: float = 0.0,
        seed: int = 0) -> dict:
    """Build a class-separable dataset directory; returns its manifest.

    With noise 0 every image equals its class prototype exactly, so
    within-class feature cosine is 1 and cross-class cosine is 0.
    """
    if classes < 3:
        raise ConfigError(
            f"need at least 3 classes (pair construction draws two partners), "
            f"got {classes}")
    if videos < 0 or video_frames < 1 or segments_per_video < 1:
        raise ConfigError("videos, video_frames, segments_per_video must be positive")
    if video_frames // segments_per_video < 3:
        raise ConfigError(
            f"{video_frames} frames cannot hold {segments_per_video} segments")
    if images_per_class < 1 or captions_per_image < 1 or words_per_class < 1:
        raise ConfigError("per-class sizes must be positive")
    if noise < 0:
        raise ConfigError(f"noise must be non-negative, got {noise}")
    out = Path(out_dir)
    (out / "corpus").mkdir(parents=True, exist_ok=True)
    (out / "videos").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    protos = _orthonormal_rows(rng, classes, feature_dim)

    vocab_by_class = [
        [f"class{k}word{w}" for w in range(words_per_class)]
        for k in range(classes)
    ]
    fillers = [f"filler{i}" for i in range(filler_count)]
    all_tokens = [t for sub in vocab_by_class for t in sub] + fillers
    vectors = rng.normal(0.0, 1.0 / np.sqrt(word_dim),
                         size=(len(all_tokens), word_dim)).astype(np.float32)
    write_word_vectors(out / "words.txt", all_tokens, vectors)

    n_images = classes * images_per_class
    image_class = np.repeat(np.arange(classes), images_per_class)
    features = protos[image_class].copy()
    if noise > 0:
        features += noise * rng.normal(size=features.shape).astype(np.float32)
    write_features(out / "corpus" / "features.vdff", features)

    with open(out / "corpus" / "captions.tsv", "w", encoding="utf-8") as f:
        for i in range(n_images):
            k = int(image_class[i])
            for _ in range(captions_per_image):
                sent = _make_sentence(rng, vocab_by_class[k], fillers,
                                      caption_length, filler_rate)
                f.write(f"{i}\t{sent}\n")

    manifest: dict = {
        "classes": classes,
        "images": n_images,
        "feature_dim": feature_dim,
        "word_dim": word_dim,
        "videos": {},
    }

    for v in range(videos):
        vid = f"video{v:02d}"
        k = v % classes
        frames = np.empty((video_frames, feature_dim), dtype=np.float32)
        for t in range(video_frames):
            other = int(rng.integers(classes - 1))
            if other >= k:
                other += 1
            frames[t] = protos[other]
        if noise > 0:
            frames += noise * rng.normal(size=frames.shape).astype(np.float32)

        segs: list[tuple[int, int]] = []
        chunk = video_frames // segments_per_video
        for s in range(segments_per_video):
            lo, hi = segment_length
            seg_len = int(rng.integers(lo, hi + 1))
            seg_len = min(seg_len, chunk - 2)
            start = s * chunk + int(rng.integers(0, chunk - seg_len))
            end = start + seg_len - 1
            segs.append((start, end))
            frames[start:end + 1] = protos[k]
            if noise > 0:
                frames[start:end + 1] += noise * rng.normal(
                    size=(seg_len, feature_dim)).astype(np.float32)

        write_features(out / "videos" / f"{vid}.vdff", frames)
        write_segments(out / "videos" / f"{vid}.gt.csv", segs)
        with open(out / "videos" / f"{vid}.txt", "w", encoding="utf-8") as f:
            for _ in range(sentences_per_video):
                f.write(_make_sentence(rng, vocab_by_class[k], fillers,
                                       caption_length, filler_rate) + "\n")
        manifest["videos"][vid] = {"class": k, "segments": segs}

    return manifest
