import hashlib
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmselect import errors
from mmselect.store import (
    EmbeddingMatrix,
    InstanceManifest,
    InstanceRecord,
    from_bytes,
    fuse_modalities,
    load_embeddings,
    load_manifest,
    manifest_to_bytes,
    to_bytes,
    validate_pair,
    write_embeddings,
    write_manifest,
)

from oracles import emb1_bytes


def matrix(rows, unit=False):
    return EmbeddingMatrix(np.array(rows, dtype=np.float32), unit_normalized=unit)


# --- EMB1 format ---------------------------------------------------------------


def test_empty_matrix_roundtrip(tmp_path):
    path = tmp_path / "empty.emb"
    write_embeddings(EmbeddingMatrix(np.zeros((0, 16), dtype=np.float32)), path)
    assert path.stat().st_size == 16  # header only
    loaded = load_embeddings(path)
    assert loaded.count == 0
    assert loaded.dim == 16


def test_identity_payload(tmp_path):
    path = tmp_path / "id.emb"
    write_embeddings(matrix([[1.0, 0.0], [0.0, 1.0]]), path)
    loaded = load_embeddings(path)
    assert loaded.values.tolist() == [[1.0, 0.0], [0.0, 1.0]]


def test_single_value_encoding():
    data = to_bytes(matrix([[1.0]]))
    assert len(data) == 20
    assert data[16:] == bytes.fromhex("0000803f")  # IEEE-754 1.0f, little-endian


def test_roundtrip_digest_against_byte_writer_oracle(tmp_path):
    rng = np.random.default_rng(1000)
    values = rng.standard_normal((1000, 512)).astype(np.float32)
    expected = emb1_bytes([list(map(float, row)) for row in values], 512)
    path = tmp_path / "big.emb"
    write_embeddings(EmbeddingMatrix(values), path)
    produced = path.read_bytes()
    assert hashlib.sha256(produced).hexdigest() == hashlib.sha256(expected).hexdigest()
    reread = to_bytes(load_embeddings(path))
    assert hashlib.sha256(reread).hexdigest() == hashlib.sha256(expected).hexdigest()


def test_roundtrip_digest_257x63(tmp_path):
    rng = np.random.default_rng(7)
    values = rng.standard_normal((257, 63)).astype(np.float32)
    expected = emb1_bytes([list(map(float, row)) for row in values], 63)
    path = tmp_path / "odd.emb"
    write_embeddings(EmbeddingMatrix(values), path)
    assert path.read_bytes() == expected


@settings(max_examples=40, deadline=None)
@given(
    count=st.integers(min_value=0, max_value=12),
    dim=st.integers(min_value=1, max_value=9),
    seed=st.integers(min_value=0, max_value=2 ** 31),
)
def test_roundtrip_property(count, dim, seed):
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((count, dim)).astype(np.float32)
    data = to_bytes(EmbeddingMatrix(values))
    back = from_bytes(data)
    assert to_bytes(back) == data                       # load . write identity on bytes
    assert np.array_equal(back.values, values)          # write . load identity on values


def test_bad_magic():
    with pytest.raises(errors.BadMagic):
        from_bytes(b"NOPE" + b"\x00" * 12)
    with pytest.raises(errors.BadMagic):
        from_bytes(b"EMB")  # shorter than a header


def test_truncated_payload():
    data = b"EMB1" + struct.pack("<I", 4) + struct.pack("<Q", 3) + b"\x00" * 8
    with pytest.raises(errors.TruncatedPayload):
        from_bytes(data)


def test_huge_declared_count_rejected_without_allocation():
    data = b"EMB1" + struct.pack("<I", 1024) + struct.pack("<Q", 2 ** 60)
    with pytest.raises(errors.TruncatedPayload):
        from_bytes(data)


def test_trailing_bytes_rejected():
    data = to_bytes(matrix([[1.0, 2.0]])) + b"\x00"
    with pytest.raises(errors.TrailingBytes):
        from_bytes(data)


def test_non_finite_value_reports_position():
    values = np.array([[1.0, 2.0], [3.0, np.nan]], dtype=np.float32)
    data = emb1_bytes([[1.0, 2.0], [3.0, float("nan")]], 2)
    with pytest.raises(errors.NonFiniteValue) as excinfo:
        from_bytes(data)
    assert excinfo.value.row == 1
    assert excinfo.value.col == 1
    with pytest.raises(errors.NonFiniteValue):
        EmbeddingMatrix(values)


# --- manifests -------------------------------------------------------------------


def test_manifest_roundtrip(tmp_path):
    manifest = InstanceManifest(
        records=(
            InstanceRecord(id="a", label=0, category="ooc", source="feed-a"),
            InstanceRecord(id="b", label=1),
            InstanceRecord(id="c"),
        )
    )
    path = tmp_path / "m.jsonl"
    write_manifest(manifest, path)
    assert load_manifest(path) == manifest
    # line k describes row k; absent fields are omitted, not null
    lines = path.read_text().splitlines()
    assert lines[1] == '{"id":"b","label":1}'
    assert lines[2] == '{"id":"c"}'


def test_manifest_rejects_bad_label(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id":"a","label":2}\n')
    with pytest.raises(errors.ManifestFormatError):
        load_manifest(path)


def test_manifest_rejects_unknown_keys(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id":"a","extra":1}\n')
    with pytest.raises(errors.ManifestFormatError):
        load_manifest(path)


def test_manifest_rejects_bad_category(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id":"a","category":"meme"}\n')
    with pytest.raises(errors.ManifestFormatError):
        load_manifest(path)


def test_manifest_allows_duplicate_ids(tmp_path):
    # Duplicates are data for validate_pair, not parse failures.
    path = tmp_path / "dup.jsonl"
    path.write_text('{"id":"a","label":0}\n{"id":"a","label":1}\n')
    manifest = load_manifest(path)
    assert len(manifest) == 2


# --- fusion ----------------------------------------------------------------------


def test_fuse_orthogonal_axes():
    fused = fuse_modalities(matrix([[1.0, 0.0]]), matrix([[0.0, 1.0]]))
    expected = np.sqrt(2.0) / 2.0
    assert fused.unit_normalized
    np.testing.assert_allclose(fused.values[0], [expected, expected], atol=1e-7)


def test_fuse_identical_unit_rows_is_identity():
    fused = fuse_modalities(matrix([[0.6, 0.8]]), matrix([[0.6, 0.8]]))
    np.testing.assert_allclose(fused.values[0], [0.6, 0.8], atol=1e-7)


def test_fuse_norms_property():
    rng = np.random.default_rng(5)
    image = rng.standard_normal((10_000, 8))
    text = rng.standard_normal((10_000, 8))
    image /= np.linalg.norm(image, axis=1, keepdims=True)
    text /= np.linalg.norm(text, axis=1, keepdims=True)
    fused = fuse_modalities(
        EmbeddingMatrix(image.astype(np.float32)),
        EmbeddingMatrix(text.astype(np.float32)),
    )
    norms = np.linalg.norm(fused.as_float64(), axis=1)
    assert np.max(np.abs(norms - 1.0)) <= 1e-6


def test_fuse_permutation_equivariance():
    rng = np.random.default_rng(6)
    image = rng.standard_normal((20, 5)).astype(np.float32)
    text = rng.standard_normal((20, 5)).astype(np.float32)
    perm = rng.permutation(20)
    direct = fuse_modalities(EmbeddingMatrix(image[perm]), EmbeddingMatrix(text[perm]))
    permuted = fuse_modalities(EmbeddingMatrix(image), EmbeddingMatrix(text)).values[perm]
    np.testing.assert_array_equal(direct.values, permuted)


def test_fuse_shape_mismatch():
    with pytest.raises(errors.ShapeMismatch):
        fuse_modalities(matrix([[1.0, 0.0]]), matrix([[1.0, 0.0], [0.0, 1.0]]))


def test_fuse_zero_row_rejected_with_index():
    image = matrix([[1.0, 0.0], [0.0, 0.0]])
    text = matrix([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(errors.ZeroNormRow) as excinfo:
        fuse_modalities(image, text)
    assert excinfo.value.row == 1


def test_fuse_single_modality_flag():
    image = matrix([[1.0, 0.0], [0.0, 0.0]])
    text = matrix([[1.0, 0.0], [0.0, 2.0]])
    fused = fuse_modalities(image, text, allow_single_modality=True)
    np.testing.assert_allclose(fused.values[1], [0.0, 1.0], atol=1e-7)
    # both modalities missing is still an error
    with pytest.raises(errors.ZeroNormRow):
        fuse_modalities(
            matrix([[0.0, 0.0]]), matrix([[0.0, 0.0]]), allow_single_modality=True
        )


def test_fuse_cancelling_rows_rejected():
    with pytest.raises(errors.ZeroNormRow):
        fuse_modalities(matrix([[1.0, 0.0]]), matrix([[-1.0, 0.0]]))


# --- validate_pair ------------------------------------------------------------------


def _manifest(n, labelled=True):
    return InstanceManifest(
        records=tuple(
            InstanceRecord(id=f"r{i}", label=(i % 2 if labelled else None))
            for i in range(n)
        )
    )


def test_validate_clean_pair():
    rng = np.random.default_rng(0)
    m = EmbeddingMatrix(rng.standard_normal((10, 4)).astype(np.float32))
    report = validate_pair(m, _manifest(10))
    assert report.ok
    assert report.violations == ()


def test_validate_count_mismatch():
    rng = np.random.default_rng(0)
    m = EmbeddingMatrix(rng.standard_normal((10, 4)).astype(np.float32))
    report = validate_pair(m, _manifest(9))
    codes = [v.code for v in report.violations]
    assert codes == ["count_mismatch"]
    assert report.violations[0].context == {"matrix_count": 10, "manifest_count": 9}


def test_validate_duplicate_id_reports_rows():
    records = [InstanceRecord(id=f"r{i}", label=0) for i in range(10)]
    records[7] = InstanceRecord(id="r3", label=0)
    manifest = InstanceManifest(records=tuple(records))
    m = EmbeddingMatrix(np.zeros((10, 2), dtype=np.float32))
    report = validate_pair(m, manifest)
    dup = [v for v in report.violations if v.code == "duplicate_id"]
    assert len(dup) == 1
    assert dup[0].context == {"id": "r3", "rows": (3, 7)}


def test_validate_missing_labels_only_when_required():
    m = EmbeddingMatrix(np.ones((3, 2), dtype=np.float32))
    unlabelled = _manifest(3, labelled=False)
    assert not validate_pair(m, unlabelled).ok
    assert validate_pair(m, unlabelled, require_labels=False).ok


def test_validate_unit_claim():
    m = EmbeddingMatrix(np.array([[3.0, 4.0]], dtype=np.float32))
    report = validate_pair(m, _manifest(1), require_unit=True)
    assert [v.code for v in report.violations] == ["non_unit_row"]


def test_validate_is_pure():
    m = EmbeddingMatrix(np.ones((4, 2), dtype=np.float32))
    manifest = _manifest(3)
    assert validate_pair(m, manifest) == validate_pair(m, manifest)


def test_matrix_is_immutable():
    m = EmbeddingMatrix(np.ones((2, 2), dtype=np.float32))
    with pytest.raises(ValueError):
        m.values[0, 0] = 5.0


def test_manifest_digest_tracks_content():
    a = _manifest(3)
    b = InstanceManifest(records=a.records[:2] + (InstanceRecord(id="zz", label=1),))
    assert a.digest() != b.digest()
    assert manifest_to_bytes(a).endswith(b"\n")
