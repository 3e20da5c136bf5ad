"""On-disk embedding bundle format.

A bundle directory holds ``manifest.json``, ``embeddings.bin`` (float32
little-endian, row-major [count x reps x dim] where reps is the view
count for image bundles and the description count for text-description
bundles), and optionally ``labels.bin`` (int32 little-endian). The byte
layout is normative: it is the contract with external exporters.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadVersion,
    InvariantViolation,
    IoError,
    LabelOutOfRange,
    NonFiniteEntry,
    SizeMismatch,
)

KINDS = ("image", "text-class", "text-description")

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class BundleManifest:
    version: int
    kind: str
    dim: int
    count: int
    views: int | None
    descriptions: int | None
    labels: bool
    class_names: tuple[str, ...]
    data_file: str = "embeddings.bin"
    label_file: str | None = None
    dtype: str = "f32le"

    @property
    def reps(self) -> int:
        """Records per sample: views, descriptions, or 1."""
        if self.kind == "image":
            return int(self.views)
        if self.kind == "text-description":
            return int(self.descriptions)
        return 1

    @property
    def payload_bytes(self) -> int:
        return self.count * self.reps * self.dim * 4

    def validate(self) -> None:
        if self.version != 1:
            raise BadVersion(f"unsupported version {self.version}")
        if self.kind not in KINDS:
            raise InvariantViolation(f"unknown kind {self.kind!r}")
        if self.dtype != "f32le":
            raise InvariantViolation(f"unsupported dtype {self.dtype!r}")
        if self.dim <= 0:
            raise InvariantViolation(f"dim must be positive, got {self.dim}")
        if self.count < 0:
            raise InvariantViolation(f"count must be nonnegative, got {self.count}")
        if self.kind == "image":
            if self.views is None or self.views < 1:
                raise InvariantViolation("image bundles need views >= 1")
        elif self.views is not None:
            raise InvariantViolation(f"{self.kind} bundles must not set views")
        if self.kind == "text-description":
            if self.descriptions is None or self.descriptions < 1:
                raise InvariantViolation("text-description bundles need descriptions >= 1")
        elif self.descriptions is not None:
            raise InvariantViolation(f"{self.kind} bundles must not set descriptions")
        if len(set(self.class_names)) != len(self.class_names):
            raise InvariantViolation("class_names must be unique")
        if self.labels and not self.label_file:
            raise InvariantViolation("labels present but no label_file named")
        if not self.labels and self.label_file:
            raise InvariantViolation("label_file named but labels absent")


@dataclass(frozen=True)
class EmbeddingBundle:
    """Immutable embedding records plus their manifest.

    data has shape [count, reps, dim] float32; labels is an int32 vector
    or None.
    """

    manifest: BundleManifest
    data: np.ndarray
    labels: np.ndarray | None

    def __post_init__(self):
        self.data.setflags(write=False)
        if self.labels is not None:
            self.labels.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.manifest.dim

    @property
    def count(self) -> int:
        return self.manifest.count

    @property
    def reps(self) -> int:
        return self.manifest.reps

    def view(self, v: int) -> np.ndarray:
        """All records of one view/description index, shape [count, dim]."""
        return self.data[:, v, :]

    def validate(self) -> None:
        self.manifest.validate()
        expected = (self.manifest.count, self.manifest.reps, self.manifest.dim)
        if self.data.shape != expected:
            raise InvariantViolation(f"data shape {self.data.shape} != {expected}")
        if self.data.dtype != np.float32:
            raise InvariantViolation(f"data dtype {self.data.dtype} != float32")
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteEntry("bundle data contains NaN or Inf")
        if self.manifest.labels:
            if self.labels is None:
                raise InvariantViolation("manifest says labels present but none given")
            if self.labels.shape != (self.manifest.count,):
                raise InvariantViolation(
                    f"labels shape {self.labels.shape} != ({self.manifest.count},)")
            n_cls = len(self.manifest.class_names)
            if self.manifest.count and (
                self.labels.min(initial=0) < 0 or self.labels.max(initial=-1) >= n_cls
            ):
                raise LabelOutOfRange(f"labels must lie in [0, {n_cls})")
        elif self.labels is not None:
            raise InvariantViolation("labels given but manifest says absent")


def make_bundle(kind: str, data: np.ndarray, class_names,
                labels: np.ndarray | None = None) -> EmbeddingBundle:
    """Build a validated bundle from a [count, reps, dim] float32 array."""
    count, reps, dim = data.shape
    manifest = BundleManifest(
        version=1,
        kind=kind,
        dim=dim,
        count=count,
        views=reps if kind == "image" else None,
        descriptions=reps if kind == "text-description" else None,
        labels=labels is not None,
        class_names=tuple(class_names),
        label_file="labels.bin" if labels is not None else None,
    )
    bundle = EmbeddingBundle(
        manifest=manifest,
        data=np.ascontiguousarray(data, dtype=np.float32),
        labels=None if labels is None else np.ascontiguousarray(labels, dtype=np.int32),
    )
    bundle.validate()
    return bundle


def write_bundle(bundle: EmbeddingBundle, directory: str | os.PathLike) -> None:
    """Serialize a bundle; validates every invariant before touching disk."""
    bundle.validate()
    directory = os.fspath(directory)
    m = bundle.manifest
    doc = {
        "version": m.version,
        "kind": m.kind,
        "dim": m.dim,
        "count": m.count,
        "labels": "present" if m.labels else "absent",
        "class_names": list(m.class_names),
        "data_file": m.data_file,
        "dtype": m.dtype,
    }
    if m.kind == "image":
        doc["views"] = m.views
    if m.kind == "text-description":
        doc["descriptions"] = m.descriptions
    if m.labels:
        doc["label_file"] = m.label_file
    try:
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, MANIFEST_NAME), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        data = np.ascontiguousarray(bundle.data, dtype="<f4")
        with open(os.path.join(directory, m.data_file), "wb") as fh:
            fh.write(data.tobytes())
        if m.labels:
            labels = np.ascontiguousarray(bundle.labels, dtype="<i4")
            with open(os.path.join(directory, m.label_file), "wb") as fh:
                fh.write(labels.tobytes())
    except OSError as exc:
        raise IoError(str(exc)) from exc


def _get_int(doc: dict, key: str, required: bool) -> int | None:
    if key not in doc:
        if required:
            raise InvariantViolation(f"manifest missing {key!r}")
        return None
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise InvariantViolation(f"manifest field {key!r} must be an integer")
    return v


def read_manifest(directory: str | os.PathLike) -> BundleManifest:
    path = os.path.join(os.fspath(directory), MANIFEST_NAME)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise InvariantViolation(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise InvariantViolation("manifest root must be an object")
    known = {"version", "kind", "dim", "count", "views", "descriptions",
             "labels", "class_names", "data_file", "label_file", "dtype"}
    unknown = set(doc) - known
    if unknown:
        raise InvariantViolation(f"unknown manifest keys {sorted(unknown)}")
    labels_raw = doc.get("labels")
    if labels_raw not in ("present", "absent"):
        raise InvariantViolation(f"labels must be 'present' or 'absent', got {labels_raw!r}")
    names = doc.get("class_names")
    if not isinstance(names, list) or not all(isinstance(s, str) for s in names):
        raise InvariantViolation("class_names must be a list of strings")
    manifest = BundleManifest(
        version=_get_int(doc, "version", True),
        kind=doc.get("kind", ""),
        dim=_get_int(doc, "dim", True),
        count=_get_int(doc, "count", True),
        views=_get_int(doc, "views", False),
        descriptions=_get_int(doc, "descriptions", False),
        labels=labels_raw == "present",
        class_names=tuple(names),
        data_file=doc.get("data_file", "embeddings.bin"),
        label_file=doc.get("label_file"),
        dtype=doc.get("dtype", ""),
    )
    manifest.validate()
    return manifest


def read_bundle(directory: str | os.PathLike) -> EmbeddingBundle:
    """Load and eagerly validate a bundle directory.

    Raises BadVersion, SizeMismatch, LabelOutOfRange, NonFiniteEntry, or
    InvariantViolation; never an untyped crash for corrupt inputs.
    """
    directory = os.fspath(directory)
    manifest = read_manifest(directory)
    data_path = os.path.join(directory, manifest.data_file)
    try:
        payload = open(data_path, "rb").read()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    if len(payload) != manifest.payload_bytes:
        raise SizeMismatch(
            f"payload is {len(payload)} bytes, manifest implies {manifest.payload_bytes}")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float32, copy=True)
    data = data.reshape(manifest.count, manifest.reps, manifest.dim)
    labels = None
    if manifest.labels:
        label_path = os.path.join(directory, manifest.label_file)
        try:
            lraw = open(label_path, "rb").read()
        except OSError as exc:
            raise IoError(str(exc)) from exc
        if len(lraw) != manifest.count * 4:
            raise SizeMismatch(
                f"label payload is {len(lraw)} bytes, expected {manifest.count * 4}")
        labels = np.frombuffer(lraw, dtype="<i4").astype(np.int32, copy=True)
    bundle = EmbeddingBundle(manifest=manifest, data=data, labels=labels)
    bundle.validate()
    return bundle
