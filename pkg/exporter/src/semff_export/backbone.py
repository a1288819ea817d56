"""Frame feature backbones.

A backbone maps a list of HxWx3 uint8 RGB frames to an (n, dim) float32
matrix. ``resnet50`` is the full-scale choice (2048-dim global-pooled);
``projection`` is a deterministic, download-free stand-in for pipelines
and tests.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import BackboneError

_PATCH = 32  # projection backbone downsamples frames to _PATCH x _PATCH


class PixelProjection:
    """Fixed Gaussian projection of a bilinear thumbnail.

    No learned weights and no I/O, so outputs are stable across machines;
    nearby frames land on nearby features, which is all the engine needs
    from an ingestion stand-in.
    """

    def __init__(self, dim: int = 2048):
        if dim < 1:
            raise BackboneError(f"feature dim must be positive, got {dim}")
        self.dim = dim
        self.name = f"projection-{dim}"
        rng = np.random.default_rng(318133183)  # frozen: files must be stable
        flat = _PATCH * _PATCH * 3
        self._w = (rng.standard_normal((flat, dim)) / np.sqrt(flat)) \
            .astype(np.float32)

    def features(self, frames) -> np.ndarray:
        rows = np.empty((len(frames), self.dim), dtype=np.float32)
        for i, frame in enumerate(frames):
            img = Image.fromarray(np.asarray(frame, dtype=np.uint8))
            img = img.convert("RGB").resize((_PATCH, _PATCH), Image.BILINEAR)
            flat = np.asarray(img, dtype=np.float32).reshape(-1) / 255.0 - 0.5
            rows[i] = flat @ self._w
        return rows


class ResNet50:
    """Global-average-pooled residual network features (dim 2048)."""

    def __init__(self, pretrained: bool = True):
        try:
            import torch
            from torchvision import models
        except ImportError as e:
            raise BackboneError(
                "resnet50 backbone needs torch and torchvision installed "
                f"({e})") from None
        self._torch = torch
        if pretrained:
            try:
                weights = models.ResNet50_Weights.IMAGENET1K_V2
                net = models.resnet50(weights=weights)
            except Exception as e:
                raise BackboneError(
                    f"pretrained resnet50 weights unavailable ({e}); "
                    "pass --backbone projection for an offline run") from None
            self.name = "resnet50-imagenet"
        else:
            net = models.resnet50(weights=None)
            self.name = "resnet50-untrained"
        net.fc = torch.nn.Identity()
        net.eval()
        self._net = net
        self.dim = 2048
        mean = np.array([0.485, 0.456, 0.406], dtype=np.float32)
        std = np.array([0.229, 0.224, 0.225], dtype=np.float32)
        self._mean, self._std = mean, std

    def features(self, frames) -> np.ndarray:
        torch = self._torch
        batch = []
        for frame in frames:
            img = Image.fromarray(np.asarray(frame, dtype=np.uint8))
            img = img.convert("RGB").resize((224, 224), Image.BILINEAR)
            x = np.asarray(img, dtype=np.float32) / 255.0
            x = (x - self._mean) / self._std
            batch.append(x.transpose(2, 0, 1))
        with torch.no_grad():
            out = self._net(torch.from_numpy(np.stack(batch)))
        return out.numpy().astype(np.float32)


def get_backbone(name: str, feature_dim: int = 2048):
    if name == "projection":
        return PixelProjection(feature_dim)
    if name == "resnet50":
        if feature_dim != 2048:
            raise BackboneError("resnet50 features are always 2048-dim")
        return ResNet50()
    raise BackboneError(f"unknown backbone {name!r}")
