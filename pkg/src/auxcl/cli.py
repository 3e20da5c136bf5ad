"""Command-line interface.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import backend, engine, rng
from .errors import AuxclError
from .gradcheck import run_gradcheck_suite
from .synthetic import gen_synthetic


def _cmd_gen_synthetic(args) -> int:
    data = gen_synthetic(
        classes=args.classes,
        per_class=args.per_class,
        dim=args.dim,
        views=args.views,
        separation=args.separation,
        view_noise=args.view_noise,
        seed=args.seed,
        num_tasks=args.tasks,
        descriptions=args.descriptions,
        world_per_class=args.world_per_class,
    )
    data.write(args.out)
    cfg = engine.load_config(None, overrides={"seed": args.seed})
    cfg["data"]["root"] = "."
    with open(os.path.join(args.out, "run_config.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote synthetic dataset and run_config.json to {args.out}")
    return 0


def _cmd_retrieve(args) -> int:
    from .bundles import read_bundle
    from .grounding import class_similarity, export_retrieval, retrieve_topk

    ds_cls = read_bundle(os.path.join(args.data, "downstream_classes"))
    w_cls = read_bundle(os.path.join(args.data, "world_classes"))
    sims = class_similarity(ds_cls.view(0), w_cls.view(0))
    retrieved = retrieve_topk(sims, args.k)
    doc = export_retrieval(
        range(ds_cls.count), ds_cls.manifest.class_names,
        w_cls.manifest.class_names, retrieved)
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote retrieval map to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_run(args) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = engine.load_config(args.config, overrides=overrides)
    out_dir = args.out or cfg.get("out_dir")
    t0 = time.time()
    result = engine.run_stream(cfg)
    elapsed = time.time() - t0
    if out_dir:
        engine.write_outputs(out_dir, result, cfg)
    sys.stdout.write(engine.format_report_table(result.report))
    print(f"[{elapsed:.1f}s backend={backend.active_backend()}]", file=sys.stderr)
    return 0


def _cmd_eval(args) -> int:
    cfg = engine.load_config(os.path.join(args.run_dir, "config.json"))
    data = engine.load_data(cfg)
    tuner, bank, _scale = engine.load_state(os.path.join(args.run_dir, "state"))
    T = data.stream.num_tasks
    rows = []
    for task in data.stream.tasks:
        te = np.asarray(task.test_ids, dtype=np.int64)
        a = engine.evaluate(
            data.downstream_images.view(0)[te], np.asarray(task.test_labels),
            tuner.params(), bank.down, bank.down_ids)
        rows.append((task.task_id, a))
    avg = float(np.mean([a for _, a in rows]))
    print(f"re-evaluated final model on the cumulative test set of {T} tasks")
    for tid, a in rows:
        print(f"  T{tid}: {a:.4f}")
    print(f"  avg: {avg:.4f}")
    return 0


def _cmd_check_grad(args) -> int:
    worst = run_gradcheck_suite(instances=args.instances, seed=args.seed,
                                verbose=True)
    print(f"max relative error over all instances: {worst:.3e}")
    if worst > 1e-4:
        print("FAIL: exceeds 1e-4", file=sys.stderr)
        return 4
    print("OK: all gradients within 1e-4")
    return 0


def _cmd_sweep_replay(args) -> int:
    cfg = engine.load_config(args.config)
    data = engine.load_data(cfg)
    results = {}
    for k in (0, 1, 2, 5, 10):
        run_cfg = json.loads(json.dumps(cfg))
        run_cfg["replay_k"] = k
        res = engine.run_stream(run_cfg, data=data)
        results[k] = {
            "final_cumulative_avg": res.report["final_cumulative_avg"],
            "mean_forgetting": res.report["mean_forgetting"],
            "replay_size": res.report["replay_size"],
        }
        print(f"k={k:>2}  avg={results[k]['final_cumulative_avg']:.4f}  "
              f"forgetting={results[k]['mean_forgetting']:+.4f}  "
              f"|A_R|={results[k]['replay_size']}")
    avgs = [v["final_cumulative_avg"] for k, v in results.items() if k > 0]
    print(f"spread over k in {{1,2,5,10}}: {max(avgs) - min(avgs):.4f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="auxcl",
        description="Label-free class-incremental learning over embedding bundles")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", help="generate a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--classes", type=int, default=25)
    g.add_argument("--per-class", type=int, default=40)
    g.add_argument("--dim", type=int, default=64)
    g.add_argument("--views", type=int, default=2)
    g.add_argument("--tasks", type=int, default=5)
    g.add_argument("--separation", type=float, default=4.0)
    g.add_argument("--view-noise", type=float, default=0.05)
    g.add_argument("--descriptions", type=int, default=5)
    g.add_argument("--world-per-class", type=int, default=20)
    g.add_argument("--seed", type=int, default=42)
    g.set_defaults(func=_cmd_gen_synthetic)

    r = sub.add_parser("retrieve", help="stage-1 retrieval only, JSON out")
    r.add_argument("--data", required=True, help="dataset directory")
    r.add_argument("--k", type=int, default=3)
    r.add_argument("--out")
    r.set_defaults(func=_cmd_retrieve)

    u = sub.add_parser("run", help="run the full pipeline")
    u.add_argument("--config", required=True)
    u.add_argument("--seed", type=int)
    u.add_argument("--out")
    u.set_defaults(func=_cmd_run)

    e = sub.add_parser("eval", help="re-evaluate a saved run")
    e.add_argument("--run-dir", required=True)
    e.set_defaults(func=_cmd_eval)

    c = sub.add_parser("check-grad", help="finite-difference gradient suite")
    c.add_argument("--instances", type=int, default=120)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=_cmd_check_grad)

    s = sub.add_parser("sweep-replay", help="paired runs over replay sizes")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=_cmd_sweep_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AuxclError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
