"""Stage 4: feature tuner and prototype training with the alignment losses.

The frozen image features pass through a trainable per-dimension affine
plus a low-rank residual, then l2 normalization; at initialization this
is exactly the identity on normalized features, so the untrained model
matches pure prototype matching. Four cross-entropy terms align the
downstream and world branches against the frozen adapters' pseudo
targets, a temperature-softmax KL term pins previously seen prototype
rows to their snapshots, and replay samples add supervised cross-entropy
in the downstream space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels, rng
from .adapters import LinearAdapter, _CyclicBatcher, _epoch_batches
from .errors import NearZeroNorm, NonFiniteLoss
from .grounding import PrototypeBank
from .numerics import AdamW, decay_schedule

LOSS_COLUMNS = ("L_DD", "L_II", "L_ID", "L_DI", "L_KD", "L_replay", "L_total", "lr")


@dataclass
class EncoderTuner:
    """Trainable wrapper over frozen image features.

    forward(h) = l2_normalize(gamma * h + beta + lora_b @ (lora_a @ h)).
    gamma starts at ones, beta and lora_b at zeros, so the initial
    forward equals plain normalization exactly.
    """

    gamma: np.ndarray
    beta: np.ndarray
    lora_a: np.ndarray
    lora_b: np.ndarray

    @classmethod
    def init(cls, dim: int, rank: int, seed: int, init_scale: float = 0.01) -> "EncoderTuner":
        gen = rng.stream(seed, "tuner-init")
        return cls(
            gamma=np.ones(dim, dtype=np.float32),
            beta=np.zeros(dim, dtype=np.float32),
            lora_a=(gen.standard_normal((rank, dim)) * init_scale).astype(np.float32),
            lora_b=np.zeros((dim, rank), dtype=np.float32),
        )

    @property
    def dim(self) -> int:
        return self.gamma.shape[0]

    @property
    def rank(self) -> int:
        return self.lora_a.shape[0]

    def params(self) -> dict:
        return {"gamma": self.gamma, "beta": self.beta,
                "lora_a": self.lora_a, "lora_b": self.lora_b}

    def num_params(self) -> int:
        return self.gamma.size + self.beta.size + self.lora_a.size + self.lora_b.size


def tuned_forward(tuner_params: dict, H: np.ndarray):
    """Unit-norm tuned features plus caches for the backward pass."""
    H = np.atleast_2d(np.asarray(H))
    U, zn, AH = kernels.tuner_forward(
        H, tuner_params["gamma"], tuner_params["beta"],
        tuner_params["lora_a"], tuner_params["lora_b"])
    if np.any(zn < 1e-6):
        raise NearZeroNorm("tuned feature collapsed below the norm floor")
    return U, zn, AH


def alignment_ce(U: np.ndarray, protos: np.ndarray, targets, scale: float):
    """Mean CE of scale*cos(tuned feature, prototype) logits.

    Shared core of the four alignment losses and the replay loss;
    returns (loss, dL/dU, dL/dprotos).
    """
    return kernels.cos_ce(U, protos, np.asarray(targets), scale)


def loss_align(l_dd: float, l_ii: float, l_id: float, l_di: float,
               lambdas: tuple[float, float, float]) -> float:
    """l_dd + lambda1*l_ii + lambda2*l_id + lambda3*l_di."""
    l1, l2, l3 = lambdas
    if min(l1, l2, l3) < 0:
        raise ValueError("lambdas must be nonnegative")
    return l_dd + l1 * l_ii + l2 * l_id + l3 * l_di


def loss_kd(old_down: np.ndarray, new_down: np.ndarray,
            old_world: np.ndarray, new_world: np.ndarray, tau: float):
    """Prototype distillation: mean row-KL for each bank, summed.

    Softmax runs over the embedding coordinates of each row; rows are
    restricted to classes shared with the snapshot (the caller aligns).
    Returns (loss, d/dnew_down, d/dnew_world).
    """
    ld, gd = (0.0, None)
    lw, gw = (0.0, None)
    if old_down is not None and old_down.shape[0]:
        ld, gd = kernels.kd_rows(old_down, new_down, tau)
    if old_world is not None and old_world.shape[0]:
        lw, gw = kernels.kd_rows(old_world, new_world, tau)
    return ld + lw, gd, gw


@dataclass
class StepBatch:
    """One optimization step's features and frozen targets.

    Targets index prototype rows. Soft-target mode replaces the int
    vectors with [n, C] probability matrices.
    """

    ds_strong: np.ndarray
    ds_down_targets: np.ndarray
    ds_world_targets: np.ndarray | None = None
    aux_strong: np.ndarray | None = None
    aux_world_targets: np.ndarray | None = None
    aux_down_targets: np.ndarray | None = None
    rep_strong: np.ndarray | None = None
    rep_down_targets: np.ndarray | None = None
    kd_old_down: np.ndarray | None = None
    kd_old_world: np.ndarray | None = None


def stage4_loss_and_grads(params: dict, batch: StepBatch, scale: float,
                          lambdas: tuple[float, float, float, float], tau: float):
    """Total stage-4 loss and analytic gradients for every parameter group.

    params holds gamma, beta, lora_a, lora_b, protos_down, protos_world.
    Returns (total, grads, components); components carries the individual
    loss terms for the run log. Pure in params; safe for finite-diff
    checking in float64.
    """
    l1, l2, l3, l4 = lambdas
    pd = params["protos_down"]
    pw = params["protos_world"]
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    comps = {"L_DD": 0.0, "L_II": 0.0, "L_ID": 0.0, "L_DI": 0.0,
             "L_KD": 0.0, "L_replay": 0.0}

    def run_branch(strong, pieces):
        """pieces: list of (protos_key, targets, weight, comp_name)."""
        U, zn, AH = tuned_forward(params, strong)
        dU = np.zeros_like(U)
        for key, targets, weight, name in pieces:
            P = params[key]
            loss, dUi, dPi = alignment_ce(U, P, targets, scale)
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"{name} diverged")
            comps[name] += loss
            dU += weight * dUi
            grads[key] += weight * dPi
        dg, db, dA, dB = kernels.tuner_backward(
            np.atleast_2d(strong), params["lora_b"], U, zn, AH, dU)
        grads["gamma"] += dg
        grads["beta"] += db
        grads["lora_a"] += dA
        grads["lora_b"] += dB

    ds_pieces = [("protos_down", batch.ds_down_targets, 1.0, "L_DD")]
    if batch.ds_world_targets is not None:
        ds_pieces.append(("protos_world", batch.ds_world_targets, l3, "L_DI"))
    run_branch(batch.ds_strong, ds_pieces)

    if batch.aux_strong is not None and len(batch.aux_strong):
        run_branch(batch.aux_strong, [
            ("protos_world", batch.aux_world_targets, l1, "L_II"),
            ("protos_down", batch.aux_down_targets, l2, "L_ID"),
        ])

    if batch.rep_strong is not None and len(batch.rep_strong):
        run_branch(batch.rep_strong,
                   [("protos_down", batch.rep_down_targets, 1.0, "L_replay")])

    if batch.kd_old_down is not None:
        nd = batch.kd_old_down.shape[0]
        nw = 0 if batch.kd_old_world is None else batch.kd_old_world.shape[0]
        lkd, gkd_d, gkd_w = loss_kd(
            batch.kd_old_down, pd[:nd],
            batch.kd_old_world, None if not nw else pw[:nw], tau)
        if not np.isfinite(lkd):
            raise NonFiniteLoss("L_KD diverged")
        comps["L_KD"] = lkd
        if gkd_d is not None:
            grads["protos_down"][:nd] += l4 * gkd_d
        if gkd_w is not None:
            grads["protos_world"][:nw] += l4 * gkd_w

    total = (comps["L_DD"] + l1 * comps["L_II"] + l2 * comps["L_ID"]
             + l3 * comps["L_DI"] + l4 * comps["L_KD"] + comps["L_replay"])
    if not np.isfinite(total):
        raise NonFiniteLoss("stage-4 total loss diverged")
    comps["L_total"] = total
    return total, grads, comps


@dataclass
class Stage4Data:
    """Frozen inputs for one task's stage-4 training."""

    task_id: int
    ds_ids: np.ndarray                 # downstream train sample ids
    ds_vl: np.ndarray                  # [N, V, d] vision-language views
    ds_backbone: np.ndarray            # [N, d] identity-view backbone features
    aux_ids: np.ndarray                # world sample ids in the pool (may be empty)
    aux_world_rows: np.ndarray         # target rows into protos_world
    world_vl: np.ndarray               # [Nw, V, d]
    world_backbone: np.ndarray         # [Nw, d]
    rep_ids: np.ndarray                # replay world sample ids (may be empty)
    rep_down_rows: np.ndarray          # assigned downstream prototype rows
    kd_old_down: np.ndarray | None = None
    kd_old_world: np.ndarray | None = None


def _strong_view(views_array: np.ndarray, ids: np.ndarray,
                 gen: np.random.Generator) -> np.ndarray:
    """Pick one strong view (>= 1) per sample; identity if none exist."""
    V = views_array.shape[1]
    if V == 1:
        return views_array[ids, 0]
    picks = gen.integers(1, V, size=len(ids))
    return views_array[ids, picks]


def _soft_or_hard(logits: np.ndarray, row_map: np.ndarray, n_rows: int,
                  soft: bool) -> np.ndarray:
    """Adapter logits -> prototype-row targets (argmax ids or softmax)."""
    if not soft:
        best = np.argmax(logits, axis=1)
        return row_map[best]
    mx = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - mx)
    q = ex / ex.sum(axis=1, keepdims=True)
    out = np.zeros((logits.shape[0], n_rows), dtype=logits.dtype)
    out[:, row_map] = q
    return out


def train_stage4(
    tuner: EncoderTuner,
    bank: PrototypeBank,
    phi_d: LinearAdapter,
    phi_i: LinearAdapter,
    data: Stage4Data,
    *,
    epochs: int,
    batch_down: int,
    batch_aux: int,
    batch_replay: int,
    scale: float,
    lambdas: tuple[float, float, float, float],
    tau: float,
    soft_targets: bool,
    optimizer_cfg: dict,
    seed: int,
) -> list[dict]:
    """Optimize the tuner and both prototype banks for one task.

    The adapters and all stored features stay frozen; pseudo targets are
    recomputed from the frozen adapters every batch. Prototype rows are
    renormalized after every step. Returns one loss row per epoch.
    """
    t = data.task_id
    use_aux = len(data.aux_ids) > 0
    use_rep = len(data.rep_ids) > 0
    params = {**tuner.params(), "protos_down": bank.down, "protos_world": bank.world}
    opt = AdamW(
        lr=optimizer_cfg["lr"],
        betas=tuple(optimizer_cfg["betas"]),
        weight_decay=optimizer_cfg["weight_decay"],
        eps=optimizer_cfg["eps"],
        decay_factor=optimizer_cfg["decay_factor"],
        decay_epochs=decay_schedule(epochs, optimizer_cfg["decay_at"]),
    )
    gen_batch = rng.stream(seed, "stage4-batches", t)
    gen_view = rng.stream(seed, "stage4-views", t)
    aux_iter = _CyclicBatcher(len(data.aux_ids), batch_aux,
                              rng.stream(seed, "stage4-aux", t)) if use_aux else None
    rep_iter = _CyclicBatcher(len(data.rep_ids), batch_replay,
                              rng.stream(seed, "stage4-replay", t)) if use_rep else None

    # frozen-adapter target machinery: adapter columns -> prototype rows
    down_row_index = {c: i for i, c in enumerate(bank.down_ids)}
    d_map = np.array([down_row_index[c] for c in phi_d.class_ids], dtype=np.int64)
    world_row_index = {c: i for i, c in enumerate(bank.world_ids)}
    w_map = (np.array([world_row_index[c] for c in phi_i.class_ids], dtype=np.int64)
             if phi_i.num_classes else np.zeros(0, dtype=np.int64))

    history: list[dict] = []
    n = len(data.ds_ids)
    local = np.arange(n)
    batch_down = min(batch_down, n)
    for epoch in range(epochs):
        sums = {k: 0.0 for k in LOSS_COLUMNS if k != "lr"}
        steps = 0
        for chunk in _epoch_batches(local, batch_down, gen_batch):
            ids = data.ds_ids[chunk]
            ds_strong = _strong_view(data.ds_vl, ids, gen_view)
            ds_logits = data.ds_backbone[ids] @ phi_d.weight
            ds_down_t = _soft_or_hard(ds_logits, d_map, bank.down.shape[0], soft_targets)
            ds_world_t = None
            batch = StepBatch(ds_strong=ds_strong, ds_down_targets=ds_down_t)
            if use_aux and phi_i.num_classes:
                di_logits = data.ds_backbone[ids] @ phi_i.weight
                batch.ds_world_targets = _soft_or_hard(
                    di_logits, w_map, bank.world.shape[0], soft_targets)
                a = aux_iter.next()
                aux_ids = data.aux_ids[a]
                batch.aux_strong = _strong_view(data.world_vl, aux_ids, gen_view)
                batch.aux_world_targets = data.aux_world_rows[a]
                id_logits = data.world_backbone[aux_ids] @ phi_d.weight
                batch.aux_down_targets = _soft_or_hard(
                    id_logits, d_map, bank.down.shape[0], soft_targets)
            if use_rep:
                r = rep_iter.next()
                rep_ids = data.rep_ids[r]
                batch.rep_strong = _strong_view(data.world_vl, rep_ids, gen_view)
                batch.rep_down_targets = data.rep_down_rows[r]
            batch.kd_old_down = data.kd_old_down
            batch.kd_old_world = data.kd_old_world

            total, grads, comps = stage4_loss_and_grads(
                params, batch, scale, lambdas, tau)
            opt.step(params, grads, epoch=epoch)
            bank.renormalize_inplace()
            for k, v in comps.items():
                sums[k] += v
            steps += 1
        row = {k: sums[k] / steps for k in sums}
        row["lr"] = opt.lr_at(epoch)
        row["epoch"] = epoch
        history.append(row)
    return history
