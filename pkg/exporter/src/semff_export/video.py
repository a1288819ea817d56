"""Frame sources: a directory of numbered images, or any video file the
OpenCV runtime can decode."""

from __future__ import annotations

from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from .errors import InputError

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


def _iter_image_dir(root: Path) -> Iterator[np.ndarray]:
    files = sorted(p for p in root.iterdir()
                   if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise InputError(f"{root}: no image files")
    for p in files:
        try:
            with Image.open(p) as img:
                yield np.asarray(img.convert("RGB"), dtype=np.uint8)
        except OSError as e:
            raise InputError(f"{p}: {e}") from None


def _iter_video_file(path: Path) -> Iterator[np.ndarray]:
    try:
        import cv2
    except ImportError as e:
        raise InputError(
            f"decoding video files needs opencv-python-headless ({e}); "
            "a directory of image frames works without it") from None
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise InputError(f"{path}: cannot decode")
    try:
        got_any = False
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            got_any = True
            yield np.ascontiguousarray(frame[:, :, ::-1])  # BGR -> RGB
        if not got_any:
            raise InputError(f"{path}: no decodable frames")
    finally:
        cap.release()


def iter_frames(source: str | Path, stride: int = 1
                ) -> Iterator[tuple[int, np.ndarray]]:
    """Yield (source frame index, RGB array) for every stride-th frame."""
    if stride < 1:
        raise InputError(f"stride must be >= 1, got {stride}")
    source = Path(source)
    if not source.exists():
        raise InputError(f"{source}: does not exist")
    frames = _iter_image_dir(source) if source.is_dir() \
        else _iter_video_file(source)
    for i, frame in enumerate(frames):
        if i % stride == 0:
            yield i, frame
