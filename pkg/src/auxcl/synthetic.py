"""Synthetic embedding-bundle generator for desk-scale experiments.

Class means live on the unit sphere of a low-dimensional coordinate
subspace (uniform draws in high dimension are near-orthogonal, which
makes every loss vanish) and are repelled until every pairwise angle
reaches separation * intra-class noise. Each world class is a perturbed
copy of a downstream class mean, so retrieval has planted true nearest
neighbors, and description embeddings are noisy copies of the class-name
embedding. Images store view 0 as the clean sample and views >= 1 as
additional Gaussian perturbations standing in for strong augmentation.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import rng
from .bundles import EmbeddingBundle, make_bundle, write_bundle
from .errors import InfeasibleSeparation
from .stream import STREAM_NAME, Task, TaskStream, write_stream

INTRA_CLASS_NOISE = 0.1  # sigma: per-coordinate noise of image embeddings

BUNDLE_DIRS = {
    "downstream_images": "downstream_images",
    "world_images": "world_images",
    "downstream_classes": "downstream_classes",
    "downstream_descriptions": "downstream_descriptions",
    "world_classes": "world_classes",
}


@dataclass(frozen=True)
class SyntheticData:
    downstream_images: EmbeddingBundle
    world_images: EmbeddingBundle
    downstream_classes: EmbeddingBundle
    downstream_descriptions: EmbeddingBundle
    world_classes: EmbeddingBundle
    stream: TaskStream

    def write(self, directory: str | os.PathLike) -> None:
        directory = os.fspath(directory)
        os.makedirs(directory, exist_ok=True)
        for attr, sub in BUNDLE_DIRS.items():
            write_bundle(getattr(self, attr), os.path.join(directory, sub))
        write_stream(self.stream, os.path.join(directory, STREAM_NAME))


def _repel_means(gen: np.random.Generator, classes: int, dim: int,
                 subspace: int, min_angle: float, max_iter: int = 2000) -> np.ndarray:
    k = min(subspace, dim)
    means = np.zeros((classes, dim), dtype=np.float64)
    sub = gen.standard_normal((classes, k))
    sub /= np.sqrt((sub * sub).sum(axis=1))[:, None]
    means[:, :k] = sub
    min_cos = math.cos(min_angle)
    eta = 0.05
    for _ in range(max_iter):
        G = means @ means.T
        np.fill_diagonal(G, -1.0)
        bad = np.argwhere(np.triu(G > min_cos))
        if bad.size == 0:
            return means
        for i, j in bad:
            diff = means[i] - means[j]
            n = float(np.sqrt((diff * diff).sum()))
            if n < 1e-9:
                diff = np.zeros(dim)
                diff[:k] = gen.standard_normal(k) * 1e-3
                n = float(np.sqrt((diff * diff).sum()))
            means[i] += eta * diff / n
            means[j] -= eta * diff / n
        means /= np.sqrt((means * means).sum(axis=1))[:, None]
    raise InfeasibleSeparation(
        f"could not place {classes} means {min_angle:.3f} rad apart "
        f"in a {k}-dim subspace within {max_iter} iterations")


def _image_block(gen: np.random.Generator, means: np.ndarray, per_class: int,
                 views: int, sigma: float, view_noise: float) -> np.ndarray:
    classes, dim = means.shape
    out = np.empty((classes * per_class, views, dim), dtype=np.float64)
    for c in range(classes):
        for s in range(per_class):
            base = means[c] + sigma * gen.standard_normal(dim)
            out[c * per_class + s, 0] = base
            for v in range(1, views):
                out[c * per_class + s, v] = base + view_noise * gen.standard_normal(dim)
    return out.astype(np.float32)


def _split_tasks(gen: np.random.Generator, classes: int, per_class: int,
                 num_tasks: int, test_fraction: float) -> TaskStream:
    order = gen.permutation(classes)
    base, rem = divmod(classes, num_tasks)
    sizes = [base + (1 if t < rem else 0) for t in range(num_tasks)]
    n_test = max(1, int(round(per_class * test_fraction)))
    groups = []
    pos = 0
    for size in sizes:
        groups.append(sorted(int(c) for c in order[pos:pos + size]))
        pos += size
    # one split draw per class, in class-id order, independent of grouping
    splits = {}
    for c in range(classes):
        ids = c * per_class + gen.permutation(per_class)
        splits[c] = (sorted(int(i) for i in ids[n_test:]),
                     sorted(int(i) for i in ids[:n_test]))
    tasks = []
    for t, group in enumerate(groups, start=1):
        train, test, labels = [], [], []
        for c in group:
            tr, te = splits[c]
            train += tr
            test += te
            labels += [c] * len(te)
        tasks.append(Task(
            task_id=t,
            class_ids=tuple(group),
            train_ids=tuple(train),
            test_ids=tuple(test),
            test_labels=tuple(labels),
        ))
    return TaskStream(num_tasks=num_tasks, tasks=tuple(tasks))


def gen_synthetic(
    classes: int = 25,
    per_class: int = 40,
    dim: int = 64,
    views: int = 2,
    separation: float = 4.0,
    view_noise: float = 0.05,
    seed: int = 42,
    *,
    num_tasks: int = 5,
    descriptions: int = 5,
    world_per_class: int = 20,
    test_fraction: float = 0.25,
    world_noise: float = 0.03,
    description_noise: float = 0.05,
    mean_subspace_dim: int = 14,
) -> SyntheticData:
    """Generate the five bundles plus a task stream, deterministically.

    separation is in units of the intra-class noise sigma (0.1), so the
    pairwise angular floor between class means is separation * 0.1 rad.
    """
    if classes < num_tasks:
        raise ValueError("need at least one class per task")
    if dim < 8:
        raise ValueError("dim must be >= 8")
    if separation <= 0:
        raise ValueError("separation must be positive")
    if views < 1 or descriptions < 1:
        raise ValueError("views and descriptions must be >= 1")

    sigma = INTRA_CLASS_NOISE
    min_angle = separation * sigma
    means = _repel_means(rng.stream(seed, "means"), classes, dim,
                         mean_subspace_dim, min_angle)

    world_gen = rng.stream(seed, "world-means")
    world_means = means + world_noise * world_gen.standard_normal(means.shape)
    world_means /= np.sqrt((world_means * world_means).sum(axis=1))[:, None]

    desc_gen = rng.stream(seed, "descriptions")
    desc = np.empty((classes, descriptions, dim), dtype=np.float64)
    for c in range(classes):
        for m in range(descriptions):
            desc[c, m] = means[c] + description_noise * desc_gen.standard_normal(dim)

    ds_names = [f"class_{c:03d}" for c in range(classes)]
    world_names = [f"world_{c:03d}" for c in range(classes)]

    ds_images = _image_block(rng.stream(seed, "downstream-images"), means,
                             per_class, views, sigma, view_noise)
    w_images = _image_block(rng.stream(seed, "world-images"), world_means,
                            world_per_class, views, sigma, view_noise)
    w_labels = np.repeat(np.arange(classes, dtype=np.int32), world_per_class)

    task_stream = _split_tasks(rng.stream(seed, "tasks"), classes, per_class,
                               num_tasks, test_fraction)
    task_stream.validate(classes, classes * per_class)

    return SyntheticData(
        downstream_images=make_bundle("image", ds_images, ds_names),
        world_images=make_bundle("image", w_images, world_names, labels=w_labels),
        downstream_classes=make_bundle(
            "text-class", means.astype(np.float32)[:, None, :], ds_names),
        downstream_descriptions=make_bundle(
            "text-description", desc.astype(np.float32), ds_names),
        world_classes=make_bundle(
            "text-class", world_means.astype(np.float32)[:, None, :], world_names),
        stream=task_stream,
    )
