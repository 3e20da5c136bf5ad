"""Image and text export jobs plus bundle validation."""

from __future__ import annotations

import json
import os
import urllib.request
from dataclasses import dataclass, field

import numpy as np

from . import datasets
from .encoders import get_encoder
from .errors import ExporterError, ImageDecodeError, ModelLoadError
from .writer import write_bundle_dir

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png", ".bmp", ".webp", ".bin", ".raw")


@dataclass
class ExportJob:
    dataset: str
    out_dir: str
    encoder: str = "hash"
    views: int = 2
    dim: int = 512
    seed: int = 0
    images_dir: str | None = None
    with_labels: bool = True
    live_llm: bool = False
    templates: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.views < 1:
            raise ExporterError("views must be >= 1")
        if self.dataset not in datasets.DATASETS:
            datasets.class_names(self.dataset)  # raises DatasetUnknown
        if not self.templates and self.dataset in datasets.TEMPLATED:
            self.templates = datasets.templates(self.dataset)


def _list_image_folder(images_dir: str, known_classes: list[str]):
    """(class name, file path) pairs from a class-per-subdirectory layout."""
    entries = []
    for cls in sorted(os.listdir(images_dir)):
        sub = os.path.join(images_dir, cls)
        if not os.path.isdir(sub):
            continue
        if cls not in known_classes:
            raise ExporterError(
                f"folder {cls!r} is not a class of this dataset")
        for name in sorted(os.listdir(sub)):
            if name.lower().endswith(IMAGE_SUFFIXES):
                entries.append((cls, os.path.join(sub, name)))
    if not entries:
        raise ExporterError(f"no images found under {images_dir}")
    return entries


def export_image_embeddings(job: ExportJob) -> str:
    """Encode an image folder into an image bundle; returns the bundle dir.

    View 0 is the unaugmented embedding; views >= 1 are embeddings of
    strongly augmented copies (seeded, reproducible).
    """
    if not job.images_dir:
        raise ExporterError("image export needs --images")
    names = datasets.class_names(job.dataset)
    entries = _list_image_folder(job.images_dir, names)
    enc = get_encoder(job.encoder, dim=job.dim, seed=job.seed)
    data = np.empty((len(entries), job.views, enc.dim), dtype=np.float32)
    labels = np.empty(len(entries), dtype=np.int32)
    index = {c: i for i, c in enumerate(names)}
    for i, (cls, path) in enumerate(entries):
        try:
            raw = open(path, "rb").read()
        except OSError as exc:
            raise ImageDecodeError(f"{path}: {exc}") from exc
        for v in range(job.views):
            data[i, v] = enc.encode_image(raw, v, aug_seed=job.seed)
        labels[i] = index[cls]
    out = os.path.join(job.out_dir, "images")
    write_bundle_dir(out, "image", data, names,
                     labels=labels if job.with_labels else None)
    return out


def _query_llm(prompt: str) -> str:
    """One chat completion against an OpenAI-compatible endpoint."""
    key = os.environ.get("OPENAI_API_KEY")
    base = os.environ.get("OPENAI_BASE_URL", "https://api.openai.com/v1")
    model = os.environ.get("BUNDLE_EXPORT_LLM", "gpt-3.5-turbo")
    if not key:
        raise ModelLoadError(
            "--live-llm needs OPENAI_API_KEY (and optionally OPENAI_BASE_URL); "
            "without it the shipped description cache is used")
    req = urllib.request.Request(
        f"{base}/chat/completions",
        data=json.dumps({
            "model": model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0.7,
        }).encode(),
        headers={"Authorization": f"Bearer {key}",
                 "Content-Type": "application/json"})
    with urllib.request.urlopen(req, timeout=60) as resp:
        doc = json.loads(resp.read())
    return doc["choices"][0]["message"]["content"].strip()


def class_descriptions(job: ExportJob) -> dict[str, list[str]]:
    """Five descriptions per class: live LLM answers or the shipped cache."""
    if job.dataset not in datasets.TEMPLATED:
        raise ExporterError(
            f"{job.dataset} has no description templates (world-side export "
            "uses the bare class-name prompt only)")
    if not job.live_llm:
        return datasets.cached_descriptions(job.dataset)
    out = {}
    for cls in datasets.class_names(job.dataset):
        out[cls] = [_query_llm(t.format(category=cls)) for t in job.templates]
    return out


def export_text_embeddings(job: ExportJob) -> tuple[str, str]:
    """Class-name bundle [C x 1 x d] and description bundle [C x M x d]."""
    names = datasets.class_names(job.dataset)
    enc = get_encoder(job.encoder, dim=job.dim, seed=job.seed)
    name_rows = np.stack([
        enc.encode_text(datasets.BARE_PROMPT.format(category=c)) for c in names])
    classes_dir = os.path.join(job.out_dir, "classes")
    write_bundle_dir(classes_dir, "text-class", name_rows[:, None, :], names)

    descriptions_dir = ""
    if job.dataset in datasets.TEMPLATED:
        desc = class_descriptions(job)
        m = len(next(iter(desc.values())))
        rows = np.empty((len(names), m, enc.dim), dtype=np.float32)
        for i, c in enumerate(names):
            for j, text in enumerate(desc[c]):
                rows[i, j] = enc.encode_text(text)
        descriptions_dir = os.path.join(job.out_dir, "descriptions")
        write_bundle_dir(descriptions_dir, "text-description", rows, names)
    return classes_dir, descriptions_dir


def validate_bundle(directory: str) -> dict:
    """Load through the consumer's reader and report basic statistics."""
    from auxcl.bundles import read_bundle

    bundle = read_bundle(directory)
    m = bundle.manifest
    stats = {
        "kind": m.kind,
        "dim": m.dim,
        "count": m.count,
        "reps": m.reps,
        "labels": "present" if m.labels else "absent",
        "classes": len(m.class_names),
        "payload_bytes": m.payload_bytes,
    }
    if bundle.labels is not None and m.count:
        stats["label_min"] = int(bundle.labels.min())
        stats["label_max"] = int(bundle.labels.max())
    return stats
