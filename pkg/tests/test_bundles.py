import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from auxcl import bundles
from auxcl.errors import (
    BadVersion,
    DataError,
    InvariantViolation,
    LabelOutOfRange,
    NonFiniteEntry,
    SizeMismatch,
)


def random_bundle(rng, kind="image", count=10, reps=2, dim=8, labels=False):
    data = rng.standard_normal((count, reps, dim)).astype(np.float32)
    names = [f"c{i}" for i in range(max(3, count // 2))]
    lab = rng.integers(0, len(names), size=count).astype(np.int32) if labels else None
    return bundles.make_bundle(kind, data, names, labels=lab)


class TestRoundTrip:
    def test_image_roundtrip_bit_identical(self, tmp_path, rng64):
        b = random_bundle(rng64, labels=True)
        bundles.write_bundle(b, tmp_path / "b")
        back = bundles.read_bundle(tmp_path / "b")
        assert back.manifest == b.manifest
        assert np.array_equal(back.data.view(np.uint32), b.data.view(np.uint32))
        assert np.array_equal(back.labels, b.labels)

    def test_empty_bundle(self, tmp_path, rng64):
        b = random_bundle(rng64, count=0)
        bundles.write_bundle(b, tmp_path / "b")
        back = bundles.read_bundle(tmp_path / "b")
        assert back.count == 0
        assert os.path.getsize(tmp_path / "b" / "embeddings.bin") == 0

    def test_payload_size_formula(self, tmp_path, rng64):
        b = random_bundle(rng64, count=3, reps=2, dim=64)
        bundles.write_bundle(b, tmp_path / "b")
        assert os.path.getsize(tmp_path / "b" / "embeddings.bin") == 3 * 2 * 64 * 4

    @given(count=st.integers(0, 6), reps=st.integers(1, 3), dim=st.integers(1, 16),
           labels=st.booleans(), seed=st.integers(0, 2**31))
    @settings(max_examples=40, deadline=None)
    def test_roundtrip_property(self, tmp_path_factory, count, reps, dim, labels, seed):
        rng = np.random.default_rng(seed)
        b = random_bundle(rng, count=count, reps=reps, dim=dim, labels=labels)
        d = tmp_path_factory.mktemp("rt")
        bundles.write_bundle(b, d)
        back = bundles.read_bundle(d)
        assert back.manifest == b.manifest
        assert np.array_equal(back.data.view(np.uint32), b.data.view(np.uint32))
        if labels:
            assert np.array_equal(back.labels, b.labels)


class TestValidation:
    def test_truncated_payload(self, tmp_path, rng64):
        b = random_bundle(rng64)
        bundles.write_bundle(b, tmp_path / "b")
        path = tmp_path / "b" / "embeddings.bin"
        raw = path.read_bytes()
        path.write_bytes(raw[:-4])
        with pytest.raises(SizeMismatch):
            bundles.read_bundle(tmp_path / "b")

    def test_label_out_of_range(self, tmp_path, rng64):
        b = random_bundle(rng64, labels=True)
        bundles.write_bundle(b, tmp_path / "b")
        labels = np.frombuffer((tmp_path / "b" / "labels.bin").read_bytes(),
                               dtype="<i4").copy()
        labels[0] = len(b.manifest.class_names)
        (tmp_path / "b" / "labels.bin").write_bytes(labels.tobytes())
        with pytest.raises(LabelOutOfRange):
            bundles.read_bundle(tmp_path / "b")

    def test_negative_label_rejected(self, tmp_path, rng64):
        b = random_bundle(rng64, labels=True)
        bundles.write_bundle(b, tmp_path / "b")
        labels = np.frombuffer((tmp_path / "b" / "labels.bin").read_bytes(),
                               dtype="<i4").copy()
        labels[0] = -1
        (tmp_path / "b" / "labels.bin").write_bytes(labels.tobytes())
        with pytest.raises(LabelOutOfRange):
            bundles.read_bundle(tmp_path / "b")

    def test_nan_injected(self, tmp_path, rng64):
        b = random_bundle(rng64)
        bundles.write_bundle(b, tmp_path / "b")
        data = np.frombuffer((tmp_path / "b" / "embeddings.bin").read_bytes(),
                             dtype="<f4").copy()
        data[3] = np.nan
        (tmp_path / "b" / "embeddings.bin").write_bytes(data.tobytes())
        with pytest.raises(NonFiniteEntry):
            bundles.read_bundle(tmp_path / "b")

    def test_bad_version(self, tmp_path, rng64):
        b = random_bundle(rng64)
        bundles.write_bundle(b, tmp_path / "b")
        doc = json.loads((tmp_path / "b" / "manifest.json").read_text())
        doc["version"] = 2
        (tmp_path / "b" / "manifest.json").write_text(json.dumps(doc))
        with pytest.raises(BadVersion):
            bundles.read_bundle(tmp_path / "b")

    def test_write_validates_before_touching_disk(self, tmp_path, rng64):
        data = rng64.standard_normal((4, 1, 8)).astype(np.float32)
        data[0, 0, 0] = np.inf
        b = bundles.EmbeddingBundle(
            manifest=bundles.BundleManifest(
                version=1, kind="image", dim=8, count=4, views=1,
                descriptions=None, labels=False, class_names=("a", "b")),
            data=data, labels=None)
        with pytest.raises(NonFiniteEntry):
            bundles.write_bundle(b, tmp_path / "b")
        assert not (tmp_path / "b").exists()

    def test_duplicate_class_names(self, rng64):
        data = rng64.standard_normal((2, 1, 4)).astype(np.float32)
        with pytest.raises(InvariantViolation):
            bundles.make_bundle("image", data, ["a", "a"])


def _numeric_spans(raw: bytes):
    """Byte ranges of the integer values of numeric manifest fields."""
    import re

    spans = []
    for key in (b'"version"', b'"dim"', b'"count"', b'"views"', b'"descriptions"'):
        for m in re.finditer(re.escape(key) + rb"\s*:\s*(\d+)", raw):
            spans.append((m.start(1), m.end(1)))
    return spans


class TestManifestCorruption:
    def test_every_numeric_byte_corruption_is_typed(self, tmp_path, rng64):
        b = random_bundle(rng64, count=5, reps=2, dim=8, labels=True)
        bundles.write_bundle(b, tmp_path / "b")
        path = tmp_path / "b" / "manifest.json"
        raw = path.read_bytes()
        spans = _numeric_spans(raw)
        assert spans, "expected numeric fields in the manifest"
        replacements = b"0123456789x-} "
        tried = 0
        for start, end in spans:
            for pos in range(start, end):
                for repl in replacements:
                    mutated = bytearray(raw)
                    if mutated[pos] == repl:
                        continue
                    mutated[pos] = repl
                    path.write_bytes(bytes(mutated))
                    tried += 1
                    with pytest.raises(DataError):
                        bundles.read_bundle(tmp_path / "b")
        path.write_bytes(raw)
        assert tried > 50
        bundles.read_bundle(tmp_path / "b")  # pristine manifest still loads
