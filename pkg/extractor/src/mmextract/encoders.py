"""Encoder registry: string ids resolve to paired image/text embedders.

Two families:

``hash:<dim>`` — a deterministic, dependency-light featurizer for pipelines
and tests with no model weights: images are decoded, resampled to a fixed
grid, and projected through a seeded Gaussian matrix; texts are character
trigram counts hashed into buckets and projected the same way. Not a
semantic encoder, but it honors the full extraction contract (aligned
unit-norm matrices of equal width, deterministic across runs).

``clip:<model-id>`` — a pretrained vision-language encoder loaded through
the transformers library when it is installed and the weights are available.
"""

from __future__ import annotations

import hashlib

import numpy as np
from PIL import Image

from .errors import EncoderLoadFailure, UnreadableImage

_GRID = 16
_TRIGRAM_BUCKETS = 4096


class PairedEncoder:
    """Interface: encode_images / encode_texts return unit-norm float32 rows."""

    dim: int

    def encode_images(self, records) -> np.ndarray:
        raise NotImplementedError

    def encode_texts(self, records) -> np.ndarray:
        raise NotImplementedError


def _normalize(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return (rows / norms).astype(np.float32)


def _seeded_projection(tag: str, rows_in: int, dim: int) -> np.ndarray:
    seed = int.from_bytes(hashlib.sha256(tag.encode()).digest()[:8], "little")
    rng = np.random.default_rng(seed)
    return rng.standard_normal((rows_in, dim)) / np.sqrt(rows_in)


class HashEncoder(PairedEncoder):
    def __init__(self, dim: int):
        if dim < 8:
            raise EncoderLoadFailure(f"hash encoder needs dim >= 8, got {dim}")
        self.dim = dim
        self._image_proj = _seeded_projection("hash-image", _GRID * _GRID * 3, dim)
        self._text_proj = _seeded_projection("hash-text", _TRIGRAM_BUCKETS, dim)

    def encode_images(self, records) -> np.ndarray:
        out = np.empty((len(records), self.dim), dtype=np.float64)
        for i, record in enumerate(records):
            try:
                with Image.open(record.image) as img:
                    pixels = np.asarray(
                        img.convert("RGB").resize((_GRID, _GRID), Image.BILINEAR),
                        dtype=np.float64,
                    )
            except Exception as exc:
                raise UnreadableImage(record.id, record.image, str(exc)) from exc
            flat = pixels.reshape(-1) / 255.0
            flat -= flat.mean()
            out[i] = flat @ self._image_proj
        return _normalize(out)

    def encode_texts(self, records) -> np.ndarray:
        out = np.empty((len(records), self.dim), dtype=np.float64)
        for i, record in enumerate(records):
            counts = np.zeros(_TRIGRAM_BUCKETS, dtype=np.float64)
            text = f"  {record.text.lower()}  "
            for j in range(len(text) - 2):
                gram = text[j : j + 3].encode("utf-8")
                digest = hashlib.blake2b(gram, digest_size=8).digest()
                bucket = int.from_bytes(digest[:4], "little") % _TRIGRAM_BUCKETS
                sign = 1.0 if digest[4] & 1 else -1.0
                counts[bucket] += sign
            norm = np.linalg.norm(counts)
            if norm > 0:
                counts /= norm
            out[i] = counts @ self._text_proj
        return _normalize(out)


class ClipEncoder(PairedEncoder):
    def __init__(self, model_id: str):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise EncoderLoadFailure(
                "clip encoders need the transformers and torch packages"
            ) from exc
        try:
            self._model = CLIPModel.from_pretrained(model_id)
            self._processor = CLIPProcessor.from_pretrained(model_id)
        except Exception as exc:
            raise EncoderLoadFailure(f"cannot load {model_id!r}: {exc}") from exc
        self._model.eval()
        self._torch = torch
        self.dim = int(self._model.config.projection_dim)

    def encode_images(self, records) -> np.ndarray:
        images = []
        for record in records:
            try:
                with Image.open(record.image) as img:
                    images.append(img.convert("RGB").copy())
            except Exception as exc:
                raise UnreadableImage(record.id, record.image, str(exc)) from exc
        inputs = self._processor(images=images, return_tensors="pt")
        with self._torch.no_grad():
            features = self._model.get_image_features(**inputs)
        return _normalize(features.cpu().numpy().astype(np.float64))

    def encode_texts(self, records) -> np.ndarray:
        inputs = self._processor(
            text=[record.text for record in records],
            return_tensors="pt",
            padding=True,
            truncation=True,
        )
        with self._torch.no_grad():
            features = self._model.get_text_features(**inputs)
        return _normalize(features.cpu().numpy().astype(np.float64))


def resolve_encoder(encoder_id: str) -> PairedEncoder:
    if ":" not in encoder_id:
        raise EncoderLoadFailure(
            f"encoder id {encoder_id!r} must look like 'hash:<dim>' or 'clip:<model>'"
        )
    family, _, arg = encoder_id.partition(":")
    if family == "hash":
        try:
            dim = int(arg)
        except ValueError as exc:
            raise EncoderLoadFailure(f"bad hash encoder dim {arg!r}") from exc
        return HashEncoder(dim)
    if family == "clip":
        return ClipEncoder(arg)
    raise EncoderLoadFailure(f"unknown encoder family {family!r}")
