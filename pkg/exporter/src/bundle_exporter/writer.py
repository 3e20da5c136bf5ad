"""Standalone writer for the embedding-bundle directory format.

Deliberately independent of the consumer package: the format conformance
tests load these outputs through the consumer's own reader, so this
writer re-implements the normative layout (manifest.json + float32
little-endian payload + optional int32 labels) from scratch.
"""

from __future__ import annotations

import json
import os

import numpy as np


def write_bundle_dir(directory: str | os.PathLike, kind: str, data: np.ndarray,
                     class_names: list[str], labels: np.ndarray | None = None) -> None:
    count, reps, dim = data.shape
    manifest = {
        "version": 1,
        "kind": kind,
        "dim": int(dim),
        "count": int(count),
        "labels": "present" if labels is not None else "absent",
        "class_names": list(class_names),
        "data_file": "embeddings.bin",
        "dtype": "f32le",
    }
    if kind == "image":
        manifest["views"] = int(reps)
    elif kind == "text-description":
        manifest["descriptions"] = int(reps)
    elif kind != "text-class":
        raise ValueError(f"unknown bundle kind {kind!r}")
    if labels is not None:
        manifest["label_file"] = "labels.bin"

    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(directory, "embeddings.bin"), "wb") as fh:
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())
    if labels is not None:
        with open(os.path.join(directory, "labels.bin"), "wb") as fh:
            fh.write(np.ascontiguousarray(labels, dtype="<i4").tobytes())
