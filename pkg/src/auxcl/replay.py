"""Stage 5: class-balanced replay memory built from auxiliary samples.

After a task trains, every pool sample is scored through the tuned
encoder against the task's downstream prototypes; the k best per
assigned class become replay entries with that downstream label. The
memory only ever references world samples, never downstream ones, and
entries are frozen once merged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .alignment import tuned_forward
from .errors import DuplicateTask, EmptyMemory
from .grounding import AuxiliaryPool


@dataclass(frozen=True)
class ReplayEntry:
    sample_id: int        # world sample id
    class_id: int         # assigned downstream class
    score: float          # winning cosine similarity
    task_id: int          # task at which the entry was added


@dataclass
class ReplayMemory:
    per_class_cap: int
    entries: list[ReplayEntry] = field(default_factory=list)
    merged_tasks: set[int] = field(default_factory=set)

    def __len__(self) -> int:
        return len(self.entries)

    def per_class_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for e in self.entries:
            counts[e.class_id] = counts.get(e.class_id, 0) + 1
        return counts

    def to_json(self) -> dict:
        return {
            "per_class_cap": self.per_class_cap,
            "entries": [
                {"sample_id": e.sample_id, "class_id": e.class_id,
                 "score": e.score, "task_id": e.task_id}
                for e in self.entries
            ],
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def score_and_select(
    pool: AuxiliaryPool,
    tuner_params: dict,
    world_identity_features: np.ndarray,
    protos: np.ndarray,
    proto_class_ids,
    k: int,
) -> list[ReplayEntry]:
    """Assign each pool sample its best prototype and keep the top k per class.

    Scoring uses the identity view through the tuned encoder; ties break
    toward the lower sample id. Classes with no assignments contribute
    nothing.
    """
    if k <= 0:
        return []
    sample_ids = np.array(pool.sample_ids(), dtype=np.int64)
    if sample_ids.size == 0:
        return []
    U, _, _ = tuned_forward(tuner_params, world_identity_features[sample_ids])
    pn = np.sqrt((protos.astype(np.float64) ** 2).sum(axis=1))
    sims = (U @ protos.T) / pn[None, :].astype(U.dtype)
    class_ids = np.asarray(proto_class_ids, dtype=np.int64)
    order = np.argsort(class_ids, kind="stable")
    sims = sims[:, order]
    best_col = np.argmax(sims, axis=1)
    assigned = class_ids[order][best_col]
    scores = sims[np.arange(sims.shape[0]), best_col].astype(np.float64)
    entries: list[ReplayEntry] = []
    for c in sorted(set(int(x) for x in assigned)):
        idx = np.nonzero(assigned == c)[0]
        keep = idx[np.lexsort((sample_ids[idx], -scores[idx]))[:k]]
        for i in keep:
            entries.append(ReplayEntry(
                sample_id=int(sample_ids[i]),
                class_id=c,
                score=float(scores[i]),
                task_id=pool.task_id,
            ))
    return entries


def merge(memory: ReplayMemory, new_entries: list[ReplayEntry], task_id: int,
          world_sample_ids: set[int] | None = None) -> ReplayMemory:
    """Union new entries into the memory; a task may merge only once.

    Old tasks' entries are never evicted: tasks own disjoint classes, so
    per-class caps cannot collide. When world_sample_ids is given, every
    entry id must be in it (structural privacy check: replay may only
    reference world samples).
    """
    if task_id in memory.merged_tasks:
        raise DuplicateTask(f"task {task_id} already merged into replay memory")
    for e in new_entries:
        if e.task_id != task_id:
            raise ValueError(f"entry from task {e.task_id} merged under task {task_id}")
        if world_sample_ids is not None and e.sample_id not in world_sample_ids:
            raise ValueError(
                f"replay entry references non-world sample {e.sample_id}")
    counts: dict[int, int] = {}
    for e in new_entries:
        counts[e.class_id] = counts.get(e.class_id, 0) + 1
        if counts[e.class_id] > memory.per_class_cap:
            raise ValueError(f"class {e.class_id} exceeds the per-class cap")
    memory.entries = memory.entries + list(new_entries)
    memory.merged_tasks = memory.merged_tasks | {task_id}
    return memory


class ReplayBatcher:
    """Uniform without-replacement batches, reshuffled every epoch pass."""

    def __init__(self, memory: ReplayMemory, batch: int, seed: int, tag=0):
        if len(memory) == 0:
            raise EmptyMemory("cannot sample from an empty replay memory")
        self._ids = np.array([e.sample_id for e in memory.entries], dtype=np.int64)
        self._labels = np.array([e.class_id for e in memory.entries], dtype=np.int64)
        self.batch = min(batch, len(memory))
        self._gen = rng.stream(seed, "replay-batches", tag)
        self._order = self._gen.permutation(len(memory))
        self._pos = 0

    def next(self) -> tuple[np.ndarray, np.ndarray]:
        if self._pos + self.batch > self._order.shape[0]:
            self._order = self._gen.permutation(self._order.shape[0])
            self._pos = 0
        take = self._order[self._pos:self._pos + self.batch]
        self._pos += self.batch
        return self._ids[take], self._labels[take]


def sample_replay_batch(memory: ReplayMemory, batch: int, seed: int,
                        n_batches: int = 1) -> list[tuple[np.ndarray, np.ndarray]]:
    """Draw n_batches of (sample ids, labels) with epoch-pass semantics."""
    batcher = ReplayBatcher(memory, batch, seed)
    return [batcher.next() for _ in range(n_batches)]
