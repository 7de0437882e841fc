"""Batch extraction: corpus in, aligned EMB1 matrices plus manifest out."""

from __future__ import annotations

import os

import numpy as np

from .corpus import CorpusSpec
from .emb1 import write_emb1, write_manifest
from .encoders import resolve_encoder


def extract(spec: CorpusSpec, out_dir, prefix: str = "corpus") -> dict:
    """Embed every record and write image/text EMB1 files plus the manifest.

    Row order matches the corpus order exactly; any unreadable image aborts
    the whole run (skipping would silently break positional alignment).
    Fusion of the two modalities is left to the selection toolkit, which
    owns that operation.
    """
    spec.check()
    encoder = resolve_encoder(spec.encoder)

    image_rows = []
    text_rows = []
    for start in range(0, len(spec.records), spec.batch_size):
        batch = spec.records[start : start + spec.batch_size]
        image_rows.append(encoder.encode_images(batch))
        text_rows.append(encoder.encode_texts(batch))

    images = np.vstack(image_rows) if image_rows else np.zeros((0, encoder.dim), np.float32)
    texts = np.vstack(text_rows) if text_rows else np.zeros((0, encoder.dim), np.float32)
    assert images.shape[0] == len(spec.records) == texts.shape[0]

    os.makedirs(out_dir, exist_ok=True)
    image_path = os.path.join(out_dir, f"{prefix}.image.emb")
    text_path = os.path.join(out_dir, f"{prefix}.text.emb")
    manifest_path = os.path.join(out_dir, f"{prefix}.jsonl")
    write_emb1(images, image_path)
    write_emb1(texts, text_path)
    write_manifest(spec.records, manifest_path)
    return {
        "image_emb": image_path,
        "text_emb": text_path,
        "manifest": manifest_path,
        "count": len(spec.records),
        "dim": encoder.dim,
    }
