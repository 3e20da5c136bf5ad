"""Encoder backends.

The default "hash" backend maps bytes or text deterministically to
unit-norm Gaussian features (seeded from a SHA-256 digest), with strong
views generated as bounded perturbations of the base embedding. It lets
the exporter run offline and reproducibly; it carries no cross-modal
semantics. The "clip" backend runs a real pretrained vision-language
model and requires the optional torch/open_clip/pillow dependencies.
"""

from __future__ import annotations

import hashlib
import os

import numpy as np

from .errors import ImageDecodeError, ModelLoadError

CACHE_ENV = "BUNDLE_EXPORT_CACHE"
AUG_STRENGTH = 0.3  # perturbation norm of strong views, relative to the base


def _digest_gen(*parts: bytes) -> np.random.Generator:
    h = hashlib.sha256()
    for p in parts:
        h.update(p)
    seed = int.from_bytes(h.digest()[:8], "little")
    return np.random.Generator(np.random.PCG64(seed))


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


class HashEncoder:
    """Deterministic offline stand-in for a frozen encoder pair."""

    name = "hash"

    def __init__(self, dim: int = 512, seed: int = 0):
        self.dim = dim
        self.seed_bytes = str(seed).encode()

    def encode_text(self, text: str) -> np.ndarray:
        gen = _digest_gen(b"text", self.seed_bytes, text.encode("utf-8"))
        return _unit(gen.standard_normal(self.dim)).astype(np.float32)

    def encode_image(self, data: bytes, view: int, aug_seed: int = 0) -> np.ndarray:
        base = _unit(_digest_gen(b"image", self.seed_bytes, data).standard_normal(self.dim))
        if view == 0:
            return base.astype(np.float32)
        gen = _digest_gen(b"view", self.seed_bytes, str(aug_seed).encode(),
                          str(view).encode(), data)
        noise = _unit(gen.standard_normal(self.dim))
        return _unit(base + AUG_STRENGTH * noise).astype(np.float32)


class ClipEncoder:
    """Pretrained vision-language backend (optional dependencies).

    Strong augmentation is a seeded random resized crop + horizontal flip
    + color jitter; the model cache directory comes from the
    BUNDLE_EXPORT_CACHE env var.
    """

    name = "clip"

    def __init__(self, model_name: str = "ViT-B-32", pretrained: str = "openai"):
        try:
            import open_clip
            import torch  # noqa: F401
            from PIL import Image  # noqa: F401
        except ImportError as exc:
            raise ModelLoadError(
                f"clip backend needs torch, open_clip_torch and pillow: {exc}"
            ) from exc
        import open_clip

        cache = os.environ.get(CACHE_ENV)
        self._model, _, self._preprocess = open_clip.create_model_and_transforms(
            model_name, pretrained=pretrained, cache_dir=cache)
        self._tokenizer = open_clip.get_tokenizer(model_name)
        self._model.eval()
        self.dim = self._model.visual.output_dim

    def encode_text(self, text: str) -> np.ndarray:
        import torch

        with torch.no_grad():
            feats = self._model.encode_text(self._tokenizer([text]))
        return _unit(feats[0].cpu().numpy().astype(np.float32))

    def encode_image(self, data: bytes, view: int, aug_seed: int = 0) -> np.ndarray:
        import io

        import torch
        from PIL import Image

        try:
            img = Image.open(io.BytesIO(data)).convert("RGB")
        except Exception as exc:
            raise ImageDecodeError(str(exc)) from exc
        if view > 0:
            img = self._augment(img, view, aug_seed)
        with torch.no_grad():
            feats = self._model.encode_image(self._preprocess(img)[None])
        return _unit(feats[0].cpu().numpy().astype(np.float32))

    @staticmethod
    def _augment(img, view: int, aug_seed: int):
        import torch
        from torchvision import transforms

        gen = torch.Generator().manual_seed(aug_seed * 1_000_003 + view)
        torch.manual_seed(int(torch.randint(0, 2**31, (1,), generator=gen)))
        strong = transforms.Compose([
            transforms.RandomResizedCrop(img.size[::-1], scale=(0.5, 1.0)),
            transforms.RandomHorizontalFlip(),
            transforms.ColorJitter(0.4, 0.4, 0.4, 0.1),
        ])
        return strong(img)


def get_encoder(name: str, dim: int = 512, seed: int = 0):
    if name == "hash":
        return HashEncoder(dim=dim, seed=seed)
    if name == "clip":
        return ClipEncoder()
    raise ModelLoadError(f"unknown encoder backend {name!r}")
