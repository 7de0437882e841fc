"""Corpus specifications: the list of image/claim records to embed."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from .errors import CorpusFormatError

CATEGORIES = ("ooc", "manipulation", "pristine")


@dataclass(frozen=True)
class CorpusRecord:
    id: str
    image: str
    text: str
    label: int | None = None
    category: str | None = None


@dataclass(frozen=True)
class CorpusSpec:
    records: tuple[CorpusRecord, ...]
    encoder: str
    batch_size: int = 32

    def check(self) -> None:
        seen = set()
        for record in self.records:
            if record.id in seen:
                raise CorpusFormatError(f"duplicate record id {record.id!r}")
            seen.add(record.id)
            if not os.path.isfile(record.image) or not os.access(record.image, os.R_OK):
                raise CorpusFormatError(
                    f"record {record.id!r}: image {record.image!r} is not a readable file"
                )
        if self.batch_size < 1:
            raise CorpusFormatError("batch size must be positive")


def _parse_record(obj: dict, line_no: int, base_dir: str) -> CorpusRecord:
    if not isinstance(obj, dict):
        raise CorpusFormatError(f"line {line_no}: expected a JSON object")
    unknown = set(obj) - {"id", "image", "text", "label", "category"}
    if unknown:
        raise CorpusFormatError(f"line {line_no}: unknown keys {sorted(unknown)}")
    ident = obj.get("id")
    image = obj.get("image")
    text = obj.get("text")
    if not isinstance(ident, str) or not ident:
        raise CorpusFormatError(f"line {line_no}: id must be a nonempty string")
    if not isinstance(image, str) or not image:
        raise CorpusFormatError(f"line {line_no}: image must be a path string")
    if not isinstance(text, str):
        raise CorpusFormatError(f"line {line_no}: text must be a string")
    label = obj.get("label")
    if label is not None and label not in (0, 1):
        raise CorpusFormatError(f"line {line_no}: label must be 0 or 1")
    category = obj.get("category")
    if category is not None and category not in CATEGORIES:
        raise CorpusFormatError(f"line {line_no}: category must be one of {CATEGORIES}")
    if not os.path.isabs(image):
        image = os.path.join(base_dir, image)
    return CorpusRecord(id=ident, image=image, text=text, label=label, category=category)


def load_corpus(path, encoder: str, batch_size: int = 32) -> CorpusSpec:
    """Read a JSON Lines corpus; image paths resolve relative to the file."""
    base_dir = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"line {line_no}: invalid JSON: {exc}") from exc
            records.append(_parse_record(obj, line_no, base_dir))
    spec = CorpusSpec(records=tuple(records), encoder=encoder, batch_size=batch_size)
    spec.check()
    return spec
