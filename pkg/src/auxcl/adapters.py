"""Stage 3: pseudo-labeling and the two linear adapter heads.

Downstream samples get argmax-cosine pseudo-labels from the frozen
vision-language features; per predicted class only the most confident
few train the downstream head. Both heads are bias-free linear maps from
the visual-backbone features to class logits, trained jointly with
cross-entropy. Columns for earlier tasks stay frozen.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels, rng
from .errors import NearZeroNorm, NonFiniteLoss, ShapeMismatch
from .numerics import NORM_FLOOR, AdamW, decay_schedule


@dataclass(frozen=True)
class PseudoLabelSet:
    """Per-sample predictions over the current task's classes."""

    sample_ids: np.ndarray          # [N] global sample ids
    labels: np.ndarray              # [N] predicted class ids (global)
    confidence: np.ndarray          # [N] max cosine score, in [-1, 1]
    selected: np.ndarray            # [N] bool mask


def pseudo_label(features: np.ndarray, prototypes: np.ndarray, class_ids,
                 sample_ids=None) -> PseudoLabelSet:
    """Assign each feature the class of its most-similar prototype.

    Ties break toward the lower class index. Confidence is the winning
    cosine similarity.
    """
    features = np.asarray(features)
    norms = np.sqrt((features.astype(np.float64) ** 2).sum(axis=1))
    if np.any(norms < NORM_FLOOR):
        raise NearZeroNorm("feature with near-zero norm cannot be pseudo-labeled")
    sims = kernels.cosine_matrix(features, np.asarray(prototypes))
    class_ids = np.asarray(class_ids, dtype=np.int64)
    order = np.argsort(class_ids, kind="stable")
    sims_sorted = sims[:, order]
    best = np.argmax(sims_sorted, axis=1)  # first max = lowest class id
    labels = class_ids[order][best]
    conf = sims_sorted[np.arange(sims.shape[0]), best]
    n = features.shape[0]
    sid = np.arange(n, dtype=np.int64) if sample_ids is None else \
        np.asarray(sample_ids, dtype=np.int64)
    return PseudoLabelSet(
        sample_ids=sid,
        labels=labels.astype(np.int64),
        confidence=conf.astype(np.float64),
        selected=np.zeros(n, dtype=bool),
    )


def select_topk_confident(pl: PseudoLabelSet, k_conf: int) -> PseudoLabelSet:
    """Flag the k_conf most confident samples of each predicted class.

    Ties break toward the lower sample id; classes with fewer than
    k_conf predictions keep everything.
    """
    if k_conf < 1:
        raise ValueError("k_conf must be >= 1")
    selected = np.zeros(pl.labels.shape[0], dtype=bool)
    for c in np.unique(pl.labels):
        idx = np.nonzero(pl.labels == c)[0]
        # sort by (-confidence, sample id)
        order = np.lexsort((pl.sample_ids[idx], -pl.confidence[idx]))
        selected[idx[order[:k_conf]]] = True
    return PseudoLabelSet(
        sample_ids=pl.sample_ids,
        labels=pl.labels,
        confidence=pl.confidence,
        selected=selected,
    )


@dataclass
class LinearAdapter:
    """Bias-free linear head [d x C]; columns map to global class ids.

    New-task columns are appended; existing columns and their class ids
    never move. A frozen prefix protects earlier tasks' columns during
    training.
    """

    dim: int
    weight: np.ndarray = None
    class_ids: list[int] = field(default_factory=list)
    frozen_cols: int = 0

    def __post_init__(self):
        if self.weight is None:
            self.weight = np.zeros((self.dim, 0), dtype=np.float32)

    @property
    def num_classes(self) -> int:
        return self.weight.shape[1]

    def append_classes(self, class_ids, gen: np.random.Generator,
                       init_scale: float = 0.01) -> None:
        new = [int(c) for c in class_ids if int(c) not in set(self.class_ids)]
        if not new:
            return
        cols = (gen.standard_normal((self.dim, len(new))) * init_scale).astype(np.float32)
        self.weight = np.concatenate([self.weight, cols], axis=1)
        self.class_ids = self.class_ids + new

    def freeze_existing(self) -> None:
        self.frozen_cols = self.num_classes

    def col_index(self, class_ids) -> np.ndarray:
        index = {c: i for i, c in enumerate(self.class_ids)}
        return np.array([index[int(c)] for c in class_ids], dtype=np.int64)

    def forward(self, features: np.ndarray) -> np.ndarray:
        """Raw logits W^T f for one feature [d] or a batch [n, d]."""
        features = np.asarray(features)
        if features.shape[-1] != self.dim:
            raise ShapeMismatch(f"feature dim {features.shape[-1]} != {self.dim}")
        return features @ self.weight

    def predict(self, features: np.ndarray) -> np.ndarray:
        """Global class ids of the argmax logits (lowest class id on ties)."""
        logits = self.forward(np.atleast_2d(features))
        ids = np.asarray(self.class_ids, dtype=np.int64)
        order = np.argsort(ids, kind="stable")
        best = np.argmax(logits[:, order], axis=1)
        return ids[order][best]


def adapter_forward(weight: np.ndarray, feature: np.ndarray) -> np.ndarray:
    """Logits of a single feature under a [d x C] head (no bias)."""
    weight = np.asarray(weight)
    feature = np.asarray(feature)
    if feature.shape != (weight.shape[0],):
        raise ShapeMismatch(f"feature {feature.shape} vs weight {weight.shape}")
    return feature @ weight


def _epoch_batches(ids: np.ndarray, batch: int, gen: np.random.Generator):
    perm = gen.permutation(ids.shape[0])
    for start in range(0, ids.shape[0], batch):
        yield ids[perm[start:start + batch]]


class _CyclicBatcher:
    """Reshuffling without-replacement batch iterator over a fixed id set."""

    def __init__(self, n: int, batch: int, gen: np.random.Generator):
        self.n = n
        self.batch = min(batch, n)
        self.gen = gen
        self._order = gen.permutation(n)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos + self.batch > self.n:
            self._order = self.gen.permutation(self.n)
            self._pos = 0
        out = self._order[self._pos:self._pos + self.batch]
        self._pos += self.batch
        return out


def train_dual_adapters(
    phi_d: LinearAdapter,
    phi_i: LinearAdapter,
    down_features: np.ndarray,
    down_targets: np.ndarray,
    aux_features: np.ndarray | None,
    aux_targets: np.ndarray | None,
    *,
    epochs: int,
    batch_down: int,
    batch_aux: int,
    optimizer_cfg: dict,
    seed: int,
    task_id: int,
) -> dict:
    """Fit both heads with the summed two-domain cross-entropy.

    down_targets/aux_targets are column indices into each adapter.
    phi_d columns below its frozen prefix are restored after every step.
    Returns per-epoch mean losses for the run log.
    """
    use_aux = aux_features is not None and len(aux_features) > 0
    opt = AdamW(
        lr=optimizer_cfg["lr"],
        betas=tuple(optimizer_cfg["betas"]),
        weight_decay=optimizer_cfg["weight_decay"],
        eps=optimizer_cfg["eps"],
        decay_factor=optimizer_cfg["decay_factor"],
        decay_epochs=decay_schedule(epochs, optimizer_cfg["decay_at"]),
    )
    gen = rng.stream(seed, "stage3", task_id)
    aux_iter = None
    if use_aux:
        aux_iter = _CyclicBatcher(len(aux_features), batch_aux, rng.stream(seed, "stage3-aux", task_id))
    frozen = phi_d.weight[:, :phi_d.frozen_cols].copy()
    history = []
    n = down_features.shape[0]
    ids = np.arange(n)
    for epoch in range(epochs):
        losses = []
        for chunk in _epoch_batches(ids, batch_down, gen):
            loss_d, dWd = kernels.linear_ce(
                down_features[chunk], phi_d.weight, down_targets[chunk])
            loss = loss_d
            grads = {"wd": dWd}
            params = {"wd": phi_d.weight}
            if use_aux:
                a = aux_iter.next()
                loss_i, dWi = kernels.linear_ce(
                    aux_features[a], phi_i.weight, aux_targets[a])
                loss += loss_i
                grads["wi"] = dWi
                params["wi"] = phi_i.weight
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"stage-3 loss diverged at epoch {epoch}")
            if phi_d.frozen_cols:
                dWd[:, :phi_d.frozen_cols] = 0.0
            opt.step(params, grads, epoch=epoch)
            if phi_d.frozen_cols:
                phi_d.weight[:, :phi_d.frozen_cols] = frozen
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return {"epoch_loss": history}
