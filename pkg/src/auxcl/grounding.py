"""Stage 1 and 2: auxiliary class retrieval and text prototype construction.

Stage 1 scores every current downstream class name against all world
class names by cosine similarity and keeps the top K; the labeled world
samples of those classes form the task's auxiliary pool. Stage 2 turns
description embeddings into one unit-norm prototype per class.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .bundles import EmbeddingBundle
from .errors import EmptyPool, MissingSnapshot, NearZeroNorm
from .numerics import NORM_FLOOR, normalize_rows


def class_similarity(down_embs: np.ndarray, world_embs: np.ndarray) -> np.ndarray:
    """Cosine similarity matrix [C_down x C_world] between class embeddings."""
    for M, side in ((down_embs, "downstream"), (world_embs, "world")):
        norms = np.sqrt((np.asarray(M, dtype=np.float64) ** 2).sum(axis=1))
        if np.any(norms < NORM_FLOOR):
            raise NearZeroNorm(f"{side} class embedding with near-zero norm")
    return kernels.cosine_matrix(down_embs, world_embs)


def retrieve_topk(sim: np.ndarray, k: int) -> list[list[tuple[int, float]]]:
    """Per downstream class: the K most similar world classes, descending.

    Ties break toward the lower world-class index; returns fewer than K
    only when there are fewer world classes.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    out = []
    for row in np.asarray(sim):
        order = np.argsort(-row, kind="stable")[:k]
        out.append([(int(j), float(row[j])) for j in order])
    return out


@dataclass(frozen=True)
class AuxiliaryPool:
    """Task-level auxiliary supervision: retrieved world classes + samples."""

    task_id: int
    retrieved: dict[int, list[tuple[int, float]]]  # downstream class -> [(world class, score)]
    samples: tuple[tuple[int, int], ...]  # (world sample id, world label), deduplicated
    k: int
    images_per_class: int

    @property
    def world_class_ids(self) -> list[int]:
        """All retrieved world classes, ascending, deduplicated."""
        ids = {w for lst in self.retrieved.values() for w, _ in lst}
        return sorted(ids)

    def sample_ids(self) -> list[int]:
        return [sid for sid, _ in self.samples]


def build_auxiliary_pool(
    task_id: int,
    class_ids,
    retrieved: list[list[tuple[int, float]]],
    world_bundle: EmbeddingBundle,
    images_per_class: int,
    k: int,
) -> AuxiliaryPool:
    """Collect labeled world samples of every retrieved class.

    At most images_per_class samples per world class, chosen by lowest
    sample id; a world class retrieved by several downstream classes
    contributes its samples once.
    """
    if world_bundle.labels is None:
        raise ValueError("world bundle must carry labels")
    retrieved_map = {int(c): lst for c, lst in zip(class_ids, retrieved)}
    wanted = {w for lst in retrieved_map.values() for w, _ in lst}
    samples: list[tuple[int, int]] = []
    labels = world_bundle.labels
    for w in sorted(wanted):
        ids = np.nonzero(labels == w)[0]
        for sid in ids[:images_per_class]:
            samples.append((int(sid), int(w)))
    if not samples:
        raise EmptyPool(f"no world samples matched for task {task_id}")
    return AuxiliaryPool(
        task_id=task_id,
        retrieved=retrieved_map,
        samples=tuple(samples),
        k=k,
        images_per_class=images_per_class,
    )


def average_prototypes(desc_embs: np.ndarray) -> np.ndarray:
    """One unit prototype per class: normalize(mean over the M descriptions).

    desc_embs has shape [C, M, d]; raises NearZeroNorm if a class mean
    collapses (contradictory descriptions).
    """
    desc_embs = np.asarray(desc_embs)
    if desc_embs.ndim != 3 or desc_embs.shape[1] < 1:
        raise ValueError("expected [C, M, d] with M >= 1")
    mean = desc_embs.mean(axis=1)
    return normalize_rows(mean)


def world_prototypes(name_embs: np.ndarray) -> np.ndarray:
    """Unit prototypes from single class-name embeddings [C, d]."""
    name_embs = np.asarray(name_embs)
    return average_prototypes(name_embs[:, None, :])


@dataclass
class PrototypeBank:
    """Learnable unit-norm text prototypes plus frozen previous-task copies.

    Downstream rows accumulate over tasks in task order; world rows
    accumulate over the union of retrieved world classes. Snapshots hold
    the rows of every class seen before the current task.
    """

    dim: int
    down: np.ndarray = None
    down_ids: list[int] = field(default_factory=list)
    world: np.ndarray = None
    world_ids: list[int] = field(default_factory=list)
    down_prev: np.ndarray = None
    down_prev_ids: list[int] = field(default_factory=list)
    world_prev: np.ndarray = None
    world_prev_ids: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.down is None:
            self.down = np.zeros((0, self.dim), dtype=np.float32)
        if self.world is None:
            self.world = np.zeros((0, self.dim), dtype=np.float32)

    def append_down(self, class_ids, rows: np.ndarray) -> None:
        assert len(class_ids) == rows.shape[0]
        self.down = np.concatenate([self.down, rows.astype(np.float32)], axis=0)
        self.down_ids = self.down_ids + [int(c) for c in class_ids]

    def append_world(self, class_ids, rows: np.ndarray) -> None:
        new = [(int(c), i) for i, c in enumerate(class_ids) if int(c) not in set(self.world_ids)]
        if not new:
            return
        take = np.stack([rows[i] for _, i in new]).astype(np.float32)
        self.world = np.concatenate([self.world, take], axis=0)
        self.world_ids = self.world_ids + [c for c, _ in new]

    def down_rows(self, class_ids) -> np.ndarray:
        index = {c: i for i, c in enumerate(self.down_ids)}
        return self.down[[index[int(c)] for c in class_ids]]

    def world_row_index(self, class_ids) -> np.ndarray:
        index = {c: i for i, c in enumerate(self.world_ids)}
        return np.array([index[int(c)] for c in class_ids], dtype=np.int64)

    def snapshot(self) -> None:
        """Freeze current rows as the previous-task reference."""
        self.down_prev = self.down.copy()
        self.down_prev_ids = list(self.down_ids)
        self.world_prev = self.world.copy()
        self.world_prev_ids = list(self.world_ids)

    def shared_with_snapshot(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Aligned (old_down, new_down, old_world, new_world) shared rows."""
        if self.down_prev is None:
            raise MissingSnapshot("no prototype snapshot taken yet")
        d_idx_new = self.down_rows(self.down_prev_ids) if self.down_prev_ids else \
            np.zeros((0, self.dim), dtype=np.float32)
        if self.world_prev_ids:
            w_new = self.world[self.world_row_index(self.world_prev_ids)]
        else:
            w_new = np.zeros((0, self.dim), dtype=np.float32)
        return self.down_prev, d_idx_new, self.world_prev, w_new

    def renormalize_inplace(self) -> None:
        """Rescale every prototype row to unit norm, keeping array identity."""
        for M in (self.down, self.world):
            if not M.shape[0]:
                continue
            n = np.sqrt((M.astype(np.float64) ** 2).sum(axis=1))
            if np.any(n < NORM_FLOOR):
                raise NearZeroNorm("prototype row collapsed below the norm floor")
            M /= n[:, None].astype(M.dtype)


def export_retrieval(class_ids, class_names, world_names, retrieved) -> dict:
    """JSON-friendly retrieval map: class name -> ordered neighbors."""
    return {
        class_names[c]: [
            {"world_class": world_names[w], "score": score}
            for w, score in lst
        ]
        for c, lst in zip(class_ids, retrieved)
    }
