"""End-to-end task-stream orchestration, inference, metrics, and reports.

For each task: retrieve auxiliary world classes, build prototypes, train
the adapter heads on confident pseudo-labels, run the cross-domain
alignment stage, select replay entries, snapshot prototypes, then
evaluate every seen task's test split without task identity. Auxiliary
data is consumed only from the second task onward. Everything is
deterministic given the config seed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .adapters import (
    LinearAdapter,
    pseudo_label,
    select_topk_confident,
    train_dual_adapters,
)
from .alignment import (
    LOSS_COLUMNS,
    EncoderTuner,
    Stage4Data,
    train_stage4,
    tuned_forward,
)
from .bundles import EmbeddingBundle, read_bundle
from .errors import ConfigError, DataError, EmptySplit, InvariantViolation
from .grounding import (
    AuxiliaryPool,
    PrototypeBank,
    average_prototypes,
    build_auxiliary_pool,
    class_similarity,
    export_retrieval,
    retrieve_topk,
    world_prototypes,
)
from .replay import ReplayMemory, merge, score_and_select
from .stream import TaskStream, read_stream

LAYERNORM_PARAMS = 39_936  # full-scale reference constant in the parameter formula


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

DEFAULT_CONFIG: dict = {
    "data": {
        "root": ".",
        "downstream_images": "downstream_images",
        "world_images": "world_images",
        "downstream_classes": "downstream_classes",
        "downstream_descriptions": "downstream_descriptions",
        "world_classes": "world_classes",
        "task_stream": "tasks.json",
        "downstream_backbone": None,
        "world_backbone": None,
    },
    "retrieval_k": 3,
    "images_per_class_cap": 10,
    "k_conf": 16,
    "replay_k": 10,
    "descriptions_m": None,
    "lambda1": 1.0,
    "lambda2": 1.0,
    "lambda3": 1.0,
    "lambda4": 30.0,
    "tau": 0.35,
    "logit_scale": 100.0,
    "rank": 16,
    "epochs_stage3": 20,
    "epochs_stage4": 30,
    "batch_downstream": 256,
    "batch_warmup": 32,
    "batch_aux": 64,
    "batch_replay": 64,
    "optimizer": {
        "lr": 0.004,
        "betas": [0.9, 0.999],
        "weight_decay": 0.01,
        "eps": 1e-8,
        "decay_factor": 0.2,
        "decay_at": [0.6, 0.85],
    },
    "soft_targets": False,
    "enable_stage3": True,
    "enable_stage4": True,
    "enable_stage5": True,
    "seed": 42,
    "out_dir": None,
}


def _merge_config(defaults: dict, user: dict, path: str = "") -> dict:
    out = {}
    for key, dv in defaults.items():
        if isinstance(dv, dict) and key in user:
            uv = user[key]
            if not isinstance(uv, dict):
                raise ConfigError(f"config field {path}{key} must be an object")
            out[key] = _merge_config(dv, uv, f"{path}{key}.")
        elif key in user:
            out[key] = user[key]
        else:
            out[key] = json.loads(json.dumps(dv))  # deep copy
    unknown = set(user) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(path + k for k in unknown)}")
    return out


def validate_config(cfg: dict) -> dict:
    """Check types and ranges; returns the config unchanged."""
    positive = ["retrieval_k", "images_per_class_cap", "k_conf", "logit_scale",
                "rank", "epochs_stage3", "epochs_stage4", "batch_downstream",
                "batch_warmup", "batch_aux", "batch_replay", "tau"]
    for key in positive:
        if not (isinstance(cfg[key], (int, float)) and cfg[key] > 0):
            raise ConfigError(f"config field {key} must be positive, got {cfg[key]!r}")
    for key in ["lambda1", "lambda2", "lambda3", "lambda4"]:
        if not (isinstance(cfg[key], (int, float)) and cfg[key] >= 0):
            raise ConfigError(f"config field {key} must be >= 0, got {cfg[key]!r}")
    if not (isinstance(cfg["replay_k"], int) and cfg["replay_k"] >= 0):
        raise ConfigError(f"replay_k must be a nonnegative integer, got {cfg['replay_k']!r}")
    opt = cfg["optimizer"]
    if opt["lr"] <= 0:
        raise ConfigError("optimizer.lr must be positive")
    if not (0 <= opt["weight_decay"] < 1):
        raise ConfigError("optimizer.weight_decay must lie in [0, 1)")
    if len(opt["betas"]) != 2 or not all(0 <= b < 1 for b in opt["betas"]):
        raise ConfigError("optimizer.betas must be two values in [0, 1)")
    if cfg["descriptions_m"] is not None and cfg["descriptions_m"] < 1:
        raise ConfigError("descriptions_m must be >= 1 when set")
    if not isinstance(cfg["seed"], int):
        raise ConfigError("seed must be an integer")
    return cfg


def load_config(path: str | os.PathLike | None = None,
                overrides: dict | None = None) -> dict:
    """Config file + overrides merged over defaults; unknown keys fail."""
    user: dict = {}
    base = "."
    if path is not None:
        base = os.path.dirname(os.path.abspath(os.fspath(path)))
        try:
            with open(os.fspath(path), "r", encoding="utf-8") as fh:
                user = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config root must be an object")
    cfg = _merge_config(DEFAULT_CONFIG, user)
    if overrides:
        for key, value in overrides.items():
            cfg[key] = value
    root = cfg["data"]["root"]
    if not os.path.isabs(root):
        cfg["data"]["root"] = os.path.normpath(os.path.join(base, root))
    return validate_config(cfg)


# ---------------------------------------------------------------------------
# loaded dataset
# ---------------------------------------------------------------------------

@dataclass
class LoadedData:
    downstream_images: EmbeddingBundle
    world_images: EmbeddingBundle
    downstream_classes: EmbeddingBundle
    downstream_descriptions: EmbeddingBundle
    world_classes: EmbeddingBundle
    downstream_backbone: EmbeddingBundle
    world_backbone: EmbeddingBundle
    stream: TaskStream

    @property
    def dim(self) -> int:
        return self.downstream_images.dim


def load_data(cfg: dict) -> LoadedData:
    d = cfg["data"]
    root = d["root"]

    def path(key):
        return os.path.join(root, d[key])

    ds = read_bundle(path("downstream_images"))
    world = read_bundle(path("world_images"))
    ds_cls = read_bundle(path("downstream_classes"))
    ds_desc = read_bundle(path("downstream_descriptions"))
    w_cls = read_bundle(path("world_classes"))
    ds_bb = read_bundle(path("downstream_backbone")) if d["downstream_backbone"] else ds
    w_bb = read_bundle(path("world_backbone")) if d["world_backbone"] else world
    stream = read_stream(path("task_stream"))

    dims = {b.dim for b in (ds, world, ds_cls, ds_desc, w_cls, ds_bb, w_bb)}
    if len(dims) != 1:
        raise DataError(f"bundle dims disagree: {sorted(dims)}")
    if world.labels is None:
        raise DataError("world image bundle must carry labels")
    n_cls = len(ds.manifest.class_names)
    if ds_cls.count != n_cls or ds_desc.count != n_cls:
        raise DataError("downstream text bundles disagree with image class names")
    if w_cls.count != len(world.manifest.class_names):
        raise DataError("world class bundle disagrees with world image class names")
    if ds_bb.count != ds.count or w_bb.count != world.count:
        raise DataError("backbone bundles must cover the same samples")
    if cfg["descriptions_m"] is not None and ds_desc.reps != cfg["descriptions_m"]:
        raise DataError(
            f"config expects {cfg['descriptions_m']} descriptions, bundle has {ds_desc.reps}")
    stream.validate(n_cls, ds.count)
    return LoadedData(ds, world, ds_cls, ds_desc, w_cls, ds_bb, w_bb, stream)


# ---------------------------------------------------------------------------
# inference and metrics
# ---------------------------------------------------------------------------

def prototype_argmax(U: np.ndarray, protos: np.ndarray, class_ids) -> np.ndarray:
    """Global class id of the best-cosine prototype row per feature.

    Ties break toward the lower class id regardless of row order.
    """
    pn = np.sqrt((protos.astype(np.float64) ** 2).sum(axis=1))
    sims = (U @ protos.T) / pn[None, :].astype(U.dtype)
    ids = np.asarray(class_ids, dtype=np.int64)
    order = np.argsort(ids, kind="stable")
    best = np.argmax(sims[:, order], axis=1)
    return ids[order][best]


def predict(feature: np.ndarray, tuner_params: dict, protos: np.ndarray,
            class_ids) -> int:
    """Classify one frozen feature over every class seen so far."""
    if len(class_ids) == 0:
        raise ValueError("predict requires at least one seen class")
    U, _, _ = tuned_forward(tuner_params, np.atleast_2d(feature))
    return int(prototype_argmax(U, protos, class_ids)[0])


def predict_batch(features: np.ndarray, tuner_params: dict, protos: np.ndarray,
                  class_ids) -> np.ndarray:
    U, _, _ = tuned_forward(tuner_params, features)
    return prototype_argmax(U, protos, class_ids)


def evaluate(features: np.ndarray, labels: np.ndarray, tuner_params: dict,
             protos: np.ndarray, class_ids) -> float:
    """Fraction of correct predictions on one test split."""
    if len(labels) == 0:
        raise EmptySplit("test split is empty")
    preds = predict_batch(features, tuner_params, protos, class_ids)
    return float(np.mean(preds == np.asarray(labels)))


def forgetting(matrix: np.ndarray, t: int) -> float:
    """Peak-minus-final accuracy of task t (1-based); negative = improvement.

    The peak is taken over the evaluations before the final task, so a
    task whose accuracy ends at its best shows negative forgetting.
    Undefined for the final task.
    """
    T = matrix.shape[0]
    if not (1 <= t < T):
        raise ValueError(f"forgetting is undefined for task {t} of {T}")
    row = matrix[t - 1, t - 1:T - 1]
    return float(np.max(row) - matrix[t - 1, T - 1])


def count_trainable_params(t_tokens: int, num_classes: int) -> int:
    """Full-scale trainable parameter formula: 768*T + 512*C + 39,936."""
    if t_tokens < 0 or num_classes < 0:
        raise ValueError("inputs must be nonnegative")
    return 768 * t_tokens + 512 * num_classes + LAYERNORM_PARAMS


def surrogate_param_count(dim: int, rank: int, proto_rows: int) -> int:
    """Desk-scale trainable count: 2d (affine) + 2rd (low rank) + rows*d."""
    return 2 * dim + 2 * rank * dim + proto_rows * dim


# ---------------------------------------------------------------------------
# model state persistence (manifest JSON + f32le payloads)
# ---------------------------------------------------------------------------

def save_state(directory: str, tuner: EncoderTuner, bank: PrototypeBank,
               logit_scale: float, phi_d: LinearAdapter | None = None,
               phi_i: LinearAdapter | None = None) -> None:
    os.makedirs(directory, exist_ok=True)
    groups = {
        "gamma": tuner.gamma, "beta": tuner.beta,
        "lora_a": tuner.lora_a, "lora_b": tuner.lora_b,
        "protos_down": bank.down, "protos_world": bank.world,
    }
    doc = {
        "version": 1,
        "dim": tuner.dim,
        "rank": tuner.rank,
        "logit_scale": logit_scale,
        "down_class_ids": list(bank.down_ids),
        "world_class_ids": list(bank.world_ids),
        "dtype": "f32le",
    }
    if phi_d is not None:
        groups["adapter_down"] = phi_d.weight
        doc["adapter_down_class_ids"] = list(phi_d.class_ids)
    if phi_i is not None:
        groups["adapter_world"] = phi_i.weight
        doc["adapter_world_class_ids"] = list(phi_i.class_ids)
    doc["arrays"] = {k: {"file": f"{k}.bin", "shape": list(v.shape)}
                     for k, v in groups.items()}
    with open(os.path.join(directory, "state.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for k, v in groups.items():
        with open(os.path.join(directory, f"{k}.bin"), "wb") as fh:
            fh.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load_state(directory: str) -> tuple[EncoderTuner, PrototypeBank, float]:
    try:
        with open(os.path.join(directory, "state.json"), "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read state: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvariantViolation(f"state.json is not valid JSON: {exc}") from exc
    arrays = {}
    for name, meta in doc["arrays"].items():
        path = os.path.join(directory, meta["file"])
        raw = open(path, "rb").read()
        expect = int(np.prod(meta["shape"])) * 4
        if len(raw) != expect:
            raise DataError(f"state array {name}: {len(raw)} bytes, expected {expect}")
        arrays[name] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(meta["shape"])
    tuner = EncoderTuner(gamma=arrays["gamma"], beta=arrays["beta"],
                         lora_a=arrays["lora_a"], lora_b=arrays["lora_b"])
    bank = PrototypeBank(dim=doc["dim"], down=arrays["protos_down"],
                         down_ids=list(doc["down_class_ids"]),
                         world=arrays["protos_world"],
                         world_ids=list(doc["world_class_ids"]))
    return tuner, bank, float(doc["logit_scale"])


def load_adapters(directory: str) -> tuple[LinearAdapter | None, LinearAdapter | None]:
    """Adapter checkpoints from a state directory, when present."""
    with open(os.path.join(directory, "state.json"), "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    out = []
    for name, ids_key in (("adapter_down", "adapter_down_class_ids"),
                          ("adapter_world", "adapter_world_class_ids")):
        if name not in doc["arrays"]:
            out.append(None)
            continue
        meta = doc["arrays"][name]
        raw = open(os.path.join(directory, meta["file"]), "rb").read()
        weight = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(meta["shape"])
        adapter = LinearAdapter(dim=weight.shape[0], weight=weight,
                                class_ids=list(doc[ids_key]))
        out.append(adapter)
    return out[0], out[1]


# ---------------------------------------------------------------------------
# the full pipeline
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    report: dict
    tuner: EncoderTuner
    bank: PrototypeBank
    memory: ReplayMemory
    accuracy: np.ndarray
    loss_curves: dict[int, list[dict]] = field(default_factory=dict)
    retrieval: dict = field(default_factory=dict)
    phi_d: LinearAdapter | None = None
    phi_i: LinearAdapter | None = None


def _optimizer_cfg(cfg: dict) -> dict:
    opt = dict(cfg["optimizer"])
    opt["betas"] = tuple(opt["betas"])
    opt["decay_at"] = tuple(opt["decay_at"])
    return opt


def run_stream(cfg: dict, data: LoadedData | None = None) -> RunResult:
    """Execute every stage over the task stream and assemble the report."""
    if data is None:
        data = load_data(cfg)
    dim = data.dim
    seed = cfg["seed"]
    T = data.stream.num_tasks
    ds_names = data.downstream_images.manifest.class_names
    world_names = data.world_images.manifest.class_names

    bank = PrototypeBank(dim=dim)
    tuner = EncoderTuner.init(dim, cfg["rank"], seed)
    phi_d = LinearAdapter(dim)
    phi_i = LinearAdapter(dim)
    memory = ReplayMemory(per_class_cap=cfg["replay_k"])
    world_id_set = set(range(data.world_images.count))
    acc = np.full((T, T), np.nan)
    union_acc: list[float] = []
    task_reports: list[dict] = []
    loss_curves: dict[int, list[dict]] = {}
    retrieval_log: dict = {}

    down_name_embs = data.downstream_classes.view(0)
    world_name_embs = data.world_classes.view(0)
    desc = data.downstream_descriptions.data
    opt_cfg = _optimizer_cfg(cfg)

    for task in data.stream.tasks:
        t = task.task_id
        class_list = list(task.class_ids)
        warnings: list[str] = []

        # Stage 1: retrieve nearest world classes, build the auxiliary pool.
        sims = class_similarity(down_name_embs[class_list], world_name_embs)
        retrieved = retrieve_topk(sims, cfg["retrieval_k"])
        pool = build_auxiliary_pool(
            t, class_list, retrieved, data.world_images,
            cfg["images_per_class_cap"], cfg["retrieval_k"])
        retrieval_log[t] = export_retrieval(class_list, ds_names, world_names, retrieved)

        # Stage 2: prototypes for the new classes and retrieved world classes.
        bank.append_down(class_list, average_prototypes(desc[class_list]))
        wids = pool.world_class_ids
        bank.append_world(wids, world_prototypes(world_name_embs[wids]))
        phi_d.append_classes(class_list, rng.stream(seed, "adapter-init-d", t))
        phi_i.append_classes(wids, rng.stream(seed, "adapter-init-i", t))

        aux_active = t >= 2  # auxiliary data consumed from the second task on
        train_ids = np.asarray(task.train_ids, dtype=np.int64)
        selected_count = 0
        n_prev_down = bank.down.shape[0] - len(class_list)
        n_prev_world = 0 if bank.down_prev is None else len(bank.world_prev_ids)
        prev_down = bank.down[:n_prev_down].copy()
        prev_world = bank.world[:n_prev_world].copy()

        # Stage 3: pseudo-label, select confident, fit the adapter heads.
        if cfg["enable_stage3"]:
            pl = pseudo_label(
                data.downstream_images.view(0)[train_ids],
                bank.down_rows(class_list), class_list, sample_ids=train_ids)
            pl = select_topk_confident(pl, cfg["k_conf"])
            for c in class_list:
                if not np.any(pl.labels[pl.selected] == c):
                    warnings.append(f"class {c} has no selected confident sample")
            sel = pl.selected
            selected_count = int(sel.sum())
            down_feats = data.downstream_backbone.view(0)[pl.sample_ids[sel]]
            down_targets = phi_d.col_index(pl.labels[sel])
            aux_feats = aux_targets = None
            if aux_active:
                pool_ids = np.array(pool.sample_ids(), dtype=np.int64)
                pool_labels = [lbl for _, lbl in pool.samples]
                aux_feats = data.world_backbone.view(0)[pool_ids]
                aux_targets = phi_i.col_index(pool_labels)
            train_dual_adapters(
                phi_d, phi_i, down_feats, down_targets, aux_feats, aux_targets,
                epochs=cfg["epochs_stage3"], batch_down=cfg["batch_warmup"],
                batch_aux=cfg["batch_aux"], optimizer_cfg=opt_cfg,
                seed=seed, task_id=t)

        # Stage 4: cross-domain alignment of the tuner and prototypes.
        if cfg["enable_stage4"]:
            aux_ids = np.array(pool.sample_ids(), dtype=np.int64) if aux_active else \
                np.zeros(0, dtype=np.int64)
            aux_world_rows = bank.world_row_index([lbl for _, lbl in pool.samples]) \
                if aux_active else np.zeros(0, dtype=np.int64)
            if len(memory) and aux_active:
                rep_ids = np.array([e.sample_id for e in memory.entries], dtype=np.int64)
                down_index = {c: i for i, c in enumerate(bank.down_ids)}
                rep_rows = np.array([down_index[e.class_id] for e in memory.entries],
                                    dtype=np.int64)
            else:
                rep_ids = np.zeros(0, dtype=np.int64)
                rep_rows = np.zeros(0, dtype=np.int64)
            kd_old_down = kd_old_world = None
            if t >= 2:
                old_d, _, old_w, _ = bank.shared_with_snapshot()
                kd_old_down = old_d
                kd_old_world = old_w if old_w.shape[0] else None
            stage4_data = Stage4Data(
                task_id=t,
                ds_ids=train_ids,
                ds_vl=data.downstream_images.data,
                ds_backbone=data.downstream_backbone.view(0),
                aux_ids=aux_ids,
                aux_world_rows=aux_world_rows,
                world_vl=data.world_images.data,
                world_backbone=data.world_backbone.view(0),
                rep_ids=rep_ids,
                rep_down_rows=rep_rows,
                kd_old_down=kd_old_down,
                kd_old_world=kd_old_world,
            )
            loss_curves[t] = train_stage4(
                tuner, bank, phi_d, phi_i, stage4_data,
                epochs=cfg["epochs_stage4"],
                batch_down=cfg["batch_downstream"],
                batch_aux=cfg["batch_aux"],
                batch_replay=cfg["batch_replay"],
                scale=cfg["logit_scale"],
                lambdas=(cfg["lambda1"], cfg["lambda2"], cfg["lambda3"], cfg["lambda4"]),
                tau=cfg["tau"],
                soft_targets=cfg["soft_targets"],
                optimizer_cfg=opt_cfg,
                seed=seed,
            )

        # Stage 3 epilogue: later tasks may not move this task's columns.
        phi_d.freeze_existing()

        # Stage 5: pick replay entries from the pool (consumed from t+1 on).
        replay_added = 0
        if cfg["enable_stage5"] and cfg["replay_k"] > 0:
            entries = score_and_select(
                pool, tuner.params(), data.world_images.view(0),
                bank.down_rows(class_list), class_list, cfg["replay_k"])
            merge(memory, entries, t, world_id_set)
            replay_added = len(entries)
            for c in class_list:
                if not any(e.class_id == c for e in entries):
                    warnings.append(f"class {c} received no replay entries")

        bank.snapshot()

        # Evaluate every seen task's split; no task id is used.
        correct_total = 0
        n_total = 0
        for seen in data.stream.tasks[:t]:
            te_ids = np.asarray(seen.test_ids, dtype=np.int64)
            feats = data.downstream_images.view(0)[te_ids]
            a = evaluate(feats, np.asarray(seen.test_labels), tuner.params(),
                         bank.down, bank.down_ids)
            acc[seen.task_id - 1, t - 1] = a
            correct_total += int(round(a * len(te_ids)))
            n_total += len(te_ids)
        union_acc.append(correct_total / n_total)

        drift_down = float(np.abs(bank.down[:n_prev_down] - prev_down).max()) \
            if n_prev_down else None
        drift_world = float(np.abs(bank.world[:n_prev_world] - prev_world).max()) \
            if n_prev_world else None
        curve = loss_curves.get(t)
        loss_summary = None if not curve else {
            "first_epoch_L_total": curve[0]["L_total"],
            "final_epoch_L_total": curve[-1]["L_total"],
        }

        task_reports.append({
            "task_id": t,
            "class_ids": class_list,
            "aux_pool_size": len(pool.samples),
            "aux_world_classes": len(pool.world_class_ids),
            "selected_confident": selected_count,
            "replay_added": replay_added,
            "replay_total": len(memory),
            "proto_drift_down": drift_down,
            "proto_drift_world": drift_world,
            "stage4_loss": loss_summary,
            "params_full_scale_formula": count_trainable_params(
                cfg["rank"], len(bank.down_ids)),
            "params_surrogate": surrogate_param_count(
                dim, cfg["rank"], bank.down.shape[0] + bank.world.shape[0]),
            "warnings": warnings,
        })

    report = _assemble_report(cfg, data, acc, union_acc, task_reports, memory)
    return RunResult(report=report, tuner=tuner, bank=bank, memory=memory,
                     accuracy=acc, loss_curves=loss_curves, retrieval=retrieval_log,
                     phi_d=phi_d, phi_i=phi_i)


def _assemble_report(cfg, data, acc, union_acc, task_reports, memory) -> dict:
    T = data.stream.num_tasks
    matrix = [[None if np.isnan(acc[u, k]) else float(acc[u, k]) for k in range(T)]
              for u in range(T)]
    cum_avg = [float(np.nanmean(acc[: k + 1, k])) for k in range(T)]
    final_per_task = [float(acc[u, T - 1]) for u in range(T)]
    forget = {str(t): forgetting(acc, t) for t in range(1, T)}
    mean_forget = float(np.mean(list(forget.values()))) if forget else None
    return {
        "config": {k: v for k, v in cfg.items() if k != "out_dir"},
        "num_tasks": T,
        "tasks": task_reports,
        "accuracy_matrix": matrix,
        "cumulative_avg": cum_avg,
        "union_accuracy": [float(x) for x in union_acc],
        "final_per_task": final_per_task,
        "final_cumulative_avg": cum_avg[-1],
        "forgetting": forget,
        "mean_forgetting": mean_forget,
        "replay_size": len(memory),
        "hyperparams_used": {
            "retrieval_k": cfg["retrieval_k"],
            "images_per_class_cap": cfg["images_per_class_cap"],
            "k_conf": cfg["k_conf"],
            "replay_k": cfg["replay_k"],
            "lambdas": [cfg["lambda1"], cfg["lambda2"], cfg["lambda3"], cfg["lambda4"]],
            "tau": cfg["tau"],
            "logit_scale": cfg["logit_scale"],
            "rank": cfg["rank"],
        },
    }


def format_report_table(report: dict) -> str:
    """Aligned text table: one row per evaluation point, Avg then T1..Tn."""
    T = report["num_tasks"]
    header = ["after_task", "avg"] + [f"T{u}" for u in range(1, T + 1)]
    widths = [max(10, len(h) + 2) for h in header]
    lines = ["".join(h.ljust(w) for h, w in zip(header, widths))]
    matrix = report["accuracy_matrix"]
    for k in range(T):
        cells = [str(k + 1), f"{report['cumulative_avg'][k]:.4f}"]
        for u in range(T):
            v = matrix[u][k]
            cells.append("-" if v is None else f"{v:.4f}")
        lines.append("".join(c.ljust(w) for c, w in zip(cells, widths)))
    forget_cells = ["forgetting", ""]
    for u in range(1, T + 1):
        f = report["forgetting"].get(str(u))
        forget_cells.append("-" if f is None else f"{f:+.4f}")
    lines.append("".join(c.ljust(w) for c, w in zip(forget_cells, widths)))
    lines.append(f"final cumulative avg: {report['final_cumulative_avg']:.4f}   "
                 f"replay size: {report['replay_size']}")
    return "\n".join(lines) + "\n"


def write_outputs(out_dir: str, result: RunResult, cfg: dict) -> None:
    """Persist report, tables, loss curves, retrieval log, memory, state."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(result.report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(format_report_table(result.report))
    with open(os.path.join(out_dir, "retrieval.json"), "w", encoding="utf-8") as fh:
        json.dump(result.retrieval, fh, indent=2, sort_keys=True)
        fh.write("\n")
    result.memory.save(os.path.join(out_dir, "replay_memory.json"))
    for t, rows in result.loss_curves.items():
        path = os.path.join(out_dir, f"task{t}_stage4_losses.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch," + ",".join(LOSS_COLUMNS) + "\n")
            for row in rows:
                cells = [str(row["epoch"])] + [repr(float(row[c])) for c in LOSS_COLUMNS]
                fh.write(",".join(cells) + "\n")
    save_state(os.path.join(out_dir, "state"), result.tuner, result.bank,
               cfg["logit_scale"], phi_d=result.phi_d, phi_i=result.phi_i)
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
