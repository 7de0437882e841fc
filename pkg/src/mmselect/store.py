"""Embedding matrices, instance manifests, and their on-disk formats.

The embedding container is a purpose-built binary file (magic ``EMB1``)
holding a dense row-major float32 matrix:

    bytes 0-3    ASCII "EMB1"
    bytes 4-7    uint32 little-endian  feature dimension
    bytes 8-15   uint64 little-endian  row count
    bytes 16-    count*dim float32 little-endian values, row-major

No padding, no trailer. Manifests are JSON Lines: one object per line with
keys ``id`` / ``label`` / ``category`` / ``source``; line k describes
embedding row k.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagic,
    ManifestFormatError,
    NonFiniteValue,
    ShapeMismatch,
    TrailingBytes,
    TruncatedPayload,
    ZeroNormRow,
)

MAGIC = b"EMB1"
HEADER = struct.Struct("<4sIQ")

CATEGORIES = ("ooc", "manipulation", "pristine")

UNIT_NORM_TOL = 1e-4


class EmbeddingMatrix:
    """Immutable dense matrix of float32 feature rows.

    ``values`` is a read-only (count, dim) float32 array. ``unit_normalized``
    records a claim that every row has unit L2 norm (within 1e-4); the claim
    is checked at construction.
    """

    __slots__ = ("values", "count", "dim", "unit_normalized")

    def __init__(self, values: np.ndarray, unit_normalized: bool = False):
        arr = np.ascontiguousarray(values, dtype=np.float32)
        if arr.ndim != 2:
            raise ShapeMismatch(f"embedding matrix must be 2-D, got shape {arr.shape}")
        if arr.shape[1] < 1:
            raise ShapeMismatch("feature dimension must be positive")
        if not np.all(np.isfinite(arr)):
            bad = np.argwhere(~np.isfinite(arr))[0]
            raise NonFiniteValue(int(bad[0]), int(bad[1]))
        if unit_normalized and arr.shape[0] > 0:
            norms = np.linalg.norm(arr.astype(np.float64), axis=1)
            off = np.abs(norms - 1.0) > UNIT_NORM_TOL
            if np.any(off):
                row = int(np.argmax(off))
                raise ZeroNormRow(
                    row, f"row {row} norm {norms[row]:.6f} violates the unit-norm claim"
                )
        arr.flags.writeable = False
        self.values = arr
        self.count = int(arr.shape[0])
        self.dim = int(arr.shape[1])
        self.unit_normalized = bool(unit_normalized)

    def as_float64(self) -> np.ndarray:
        return self.values.astype(np.float64)

    def digest(self) -> str:
        """SHA-256 of the canonical EMB1 byte serialization."""
        return hashlib.sha256(to_bytes(self)).hexdigest()

    def __repr__(self) -> str:
        flag = ", unit" if self.unit_normalized else ""
        return f"EmbeddingMatrix({self.count}x{self.dim}{flag})"


@dataclass(frozen=True)
class InstanceRecord:
    id: str
    label: int | None = None
    category: str | None = None
    source: str | None = None


@dataclass(frozen=True)
class InstanceManifest:
    """Per-row metadata; record order binds to embedding row order.

    Duplicate ids are representable (they are reported by
    :func:`validate_pair`, not rejected here).
    """

    records: tuple[InstanceRecord, ...]

    def __len__(self) -> int:
        return len(self.records)

    def labels(self) -> list[int | None]:
        return [r.label for r in self.records]

    def digest(self) -> str:
        return hashlib.sha256(manifest_to_bytes(self)).hexdigest()


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    context: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


# --- EMB1 reader/writer -------------------------------------------------------

def from_bytes(data: bytes) -> EmbeddingMatrix:
    if len(data) < HEADER.size or data[:4] != MAGIC:
        raise BadMagic("not an EMB1 file")
    _, dim, count = HEADER.unpack_from(data)
    if dim < 1:
        raise BadMagic(f"EMB1 dimension must be positive, got {dim}")
    expected = HEADER.size + 4 * dim * count
    if len(data) < expected:
        raise TruncatedPayload(
            f"header declares {count}x{dim} ({expected} bytes), file has {len(data)}"
        )
    if len(data) > expected:
        raise TrailingBytes(f"{len(data) - expected} unexpected bytes after payload")
    values = np.frombuffer(data, dtype="<f4", offset=HEADER.size).reshape(count, dim)
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise NonFiniteValue(int(bad[0]), int(bad[1]))
    return EmbeddingMatrix(values)


def to_bytes(matrix: EmbeddingMatrix) -> bytes:
    header = HEADER.pack(MAGIC, matrix.dim, matrix.count)
    payload = np.ascontiguousarray(matrix.values, dtype="<f4").tobytes()
    return header + payload


def load_embeddings(path) -> EmbeddingMatrix:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def write_embeddings(matrix: EmbeddingMatrix, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(matrix))


# --- manifest reader/writer -----------------------------------------------------

def _parse_record(obj: dict, line_no: int) -> InstanceRecord:
    if not isinstance(obj, dict):
        raise ManifestFormatError(f"line {line_no}: expected a JSON object")
    unknown = set(obj) - {"id", "label", "category", "source"}
    if unknown:
        raise ManifestFormatError(f"line {line_no}: unknown keys {sorted(unknown)}")
    ident = obj.get("id")
    if not isinstance(ident, str) or not ident:
        raise ManifestFormatError(f"line {line_no}: id must be a nonempty string")
    label = obj.get("label")
    if label is not None and label not in (0, 1):
        raise ManifestFormatError(f"line {line_no}: label must be 0 or 1")
    category = obj.get("category")
    if category is not None and category not in CATEGORIES:
        raise ManifestFormatError(
            f"line {line_no}: category must be one of {CATEGORIES}"
        )
    source = obj.get("source")
    if source is not None and not isinstance(source, str):
        raise ManifestFormatError(f"line {line_no}: source must be a string")
    return InstanceRecord(id=ident, label=label, category=category, source=source)


def load_manifest(path) -> InstanceManifest:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestFormatError(f"line {line_no}: invalid JSON: {exc}") from exc
            records.append(_parse_record(obj, line_no))
    return InstanceManifest(records=tuple(records))


def record_to_json(record: InstanceRecord) -> str:
    obj: dict = {"id": record.id}
    if record.label is not None:
        obj["label"] = record.label
    if record.category is not None:
        obj["category"] = record.category
    if record.source is not None:
        obj["source"] = record.source
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def manifest_to_bytes(manifest: InstanceManifest) -> bytes:
    lines = [record_to_json(r) for r in manifest.records]
    return ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")


def write_manifest(manifest: InstanceManifest, path) -> None:
    with open(path, "wb") as fh:
        fh.write(manifest_to_bytes(manifest))


# --- modality fusion -------------------------------------------------------------

def fuse_modalities(
    image_emb: EmbeddingMatrix,
    text_emb: EmbeddingMatrix,
    allow_single_modality: bool = False,
) -> EmbeddingMatrix:
    """Average aligned image/text rows and rescale each result to unit norm.

    A zero-norm input row means the modality is missing for that instance.
    By default that is an error; with ``allow_single_modality`` the present
    modality passes through renormalized. A zero-norm *fused* row (the two
    modalities cancel) is always an error.
    """
    if image_emb.count != text_emb.count or image_emb.dim != text_emb.dim:
        raise ShapeMismatch(
            f"image is {image_emb.count}x{image_emb.dim}, "
            f"text is {text_emb.count}x{text_emb.dim}"
        )
    img = image_emb.as_float64()
    txt = text_emb.as_float64()
    img_norm = np.linalg.norm(img, axis=1)
    txt_norm = np.linalg.norm(txt, axis=1)

    if not allow_single_modality:
        for name, norms in (("image", img_norm), ("text", txt_norm)):
            zero = norms == 0.0
            if np.any(zero):
                row = int(np.argmax(zero))
                raise ZeroNormRow(row, f"{name} row {row} has zero L2 norm")
        fused = (img + txt) / 2.0
    else:
        both_zero = (img_norm == 0.0) & (txt_norm == 0.0)
        if np.any(both_zero):
            row = int(np.argmax(both_zero))
            raise ZeroNormRow(row, f"row {row} is missing both modalities")
        fused = np.where(
            (img_norm == 0.0)[:, None], txt,
            np.where((txt_norm == 0.0)[:, None], img, (img + txt) / 2.0),
        )

    fused_norm = np.linalg.norm(fused, axis=1)
    zero_fused = fused_norm == 0.0
    if np.any(zero_fused):
        row = int(np.argmax(zero_fused))
        raise ZeroNormRow(row, f"fused row {row} has zero L2 norm (modalities cancel)")
    fused /= fused_norm[:, None]
    return EmbeddingMatrix(fused.astype(np.float32), unit_normalized=True)


# --- pair validation --------------------------------------------------------------

def validate_pair(
    matrix: EmbeddingMatrix,
    manifest: InstanceManifest,
    require_labels: bool = True,
    require_unit: bool | None = None,
) -> ValidationReport:
    """Cross-check a matrix/manifest pair; every problem becomes a Violation.

    ``require_unit`` lets a caller assert the unit-norm claim for a matrix
    loaded without the flag (the in-memory flag is enforced at construction,
    so a flagged matrix always passes that check). ``None`` means "use the
    matrix's own flag". An empty violation list means the pair is usable by
    the selectors. Pure: identical inputs always produce the identical report.
    """
    if require_unit is None:
        require_unit = matrix.unit_normalized
    violations: list[Violation] = []
    if matrix.count != len(manifest):
        violations.append(
            Violation(
                code="count_mismatch",
                message=f"matrix has {matrix.count} rows, manifest has {len(manifest)}",
                context={"matrix_count": matrix.count, "manifest_count": len(manifest)},
            )
        )

    seen: dict[str, int] = {}
    for row, record in enumerate(manifest.records):
        if record.id in seen:
            violations.append(
                Violation(
                    code="duplicate_id",
                    message=f"id {record.id!r} appears at rows {seen[record.id]} and {row}",
                    context={"id": record.id, "rows": (seen[record.id], row)},
                )
            )
        else:
            seen[record.id] = row
        if require_labels and record.label is None:
            violations.append(
                Violation(
                    code="missing_label",
                    message=f"row {row} (id {record.id!r}) has no label",
                    context={"row": row, "id": record.id},
                )
            )

    if require_unit and matrix.count > 0:
        norms = np.linalg.norm(matrix.as_float64(), axis=1)
        for row in np.nonzero(np.abs(norms - 1.0) > UNIT_NORM_TOL)[0]:
            violations.append(
                Violation(
                    code="non_unit_row",
                    message=f"row {int(row)} norm {norms[row]:.6f} violates the unit-norm claim",
                    context={"row": int(row), "norm": float(norms[row])},
                )
            )

    return ValidationReport(violations=tuple(violations))
