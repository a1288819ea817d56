"""Produce the cross-component compatibility fixtures.

Runs the exporter on a small deterministic clip and word table, then
writes the artifacts plus a JSON manifest of their intended contents.
The engine's test suite checks these in and asserts its readers see
exactly what the exporter meant to ship.

Usage: python3 tools/make_fixtures.py --out-dir ../tests/fixtures
"""

import argparse
import json
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from semff_export.backbone import PixelProjection
from semff_export.export import (export_video_features, export_word_vectors,
                                 subset_as_arrays)
from semff_export.formats import write_word_vector_file


def _clip(root: Path, count: int) -> None:
    root.mkdir(parents=True)
    for i in range(count):
        x = np.linspace(0, 255, 40, dtype=np.uint8)
        arr = np.zeros((30, 40, 3), dtype=np.uint8)
        arr[:, :, 0] = x
        arr[:, :, 1] = (i * 47) % 256
        arr[:, :, 2] = x[::-1]
        Image.fromarray(arr).save(root / f"frame{i:04d}.png")


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--out-dir", type=Path, required=True)
    args = parser.parse_args()
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        _clip(tmp / "clip", 5)
        features_path = out / "exporter_features.vdff"
        manifest = export_video_features(
            tmp / "clip", features_path, PixelProjection(dim=6),
            video_id="fixture-clip", stride=2)

        rng = np.random.default_rng(424242)
        pre_tokens = ["apple", "banana", "cherry", "date", "elderberry"]
        pre_vecs = rng.normal(size=(5, 4)).astype(np.float32)
        pretrained = tmp / "pretrained.txt"
        write_word_vector_file(pretrained, pre_tokens, pre_vecs)

        words_path = out / "exporter_words.txt"
        kept, missing = export_word_vectors(
            pretrained, ["apple", "cherry", "date", "zucchini"],
            words_path, tmp / "missing.txt")
        assert missing == ["zucchini"]

        from semff_export.formats import read_feature_file
        feats = read_feature_file(features_path)
        vocab, vectors = subset_as_arrays(words_path)

    expected = {
        "shape": list(feats.shape),
        "features": [[float(v) for v in row] for row in feats],
        "backbone": manifest.backbone,
        "stride": manifest.stride,
        "vocab": vocab,
        "vectors": [[float(v) for v in row] for row in vectors],
    }
    with open(out / "exporter_expected.json", "w", encoding="utf-8") as f:
        json.dump(expected, f, indent=2)
        f.write("\n")
    print(f"fixtures in {out}: features {feats.shape}, "
          f"{len(vocab)} word vectors")


if __name__ == "__main__":
    main()
