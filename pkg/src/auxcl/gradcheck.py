"""Finite-difference verification of every training gradient.

Builds small random instances of the stage-3 two-domain loss and the
stage-4 total loss (all parameter groups: both adapter weights, the
tuner's affine and low-rank parts, and both prototype banks) in float64
and compares the analytic gradients against central differences.
"""

from __future__ import annotations

import numpy as np

from . import kernels, rng
from .alignment import StepBatch, stage4_loss_and_grads
from .numerics import fd_gradcheck


def lmap_instance(gen: np.random.Generator, d: int = 6, c_down: int = 4,
                  c_world: int = 3, n: int = 3):
    """Random stage-3 loss closure over {wd, wi} in float64."""
    Fd = gen.standard_normal((n, d))
    Fi = gen.standard_normal((n, d))
    yd = gen.integers(0, c_down, size=n)
    yi = gen.integers(0, c_world, size=n)
    params = {
        "wd": gen.standard_normal((d, c_down)) * 0.3,
        "wi": gen.standard_normal((d, c_world)) * 0.3,
    }

    def loss_and_grad(p):
        loss_d, dWd = kernels.linear_ce(Fd, p["wd"], yd)
        loss_i, dWi = kernels.linear_ce(Fi, p["wi"], yi)
        return loss_d + loss_i, {"wd": dWd, "wi": dWi}

    return loss_and_grad, params


def ltotal_instance(gen: np.random.Generator, d: int = 6, r: int = 2,
                    c_down: int = 4, c_world: int = 3, n: int = 3,
                    soft: bool = False, scale: float = 7.0,
                    lambdas=(1.0, 1.0, 1.0, 2.0), tau: float = 2.0):
    """Random stage-4 total-loss closure over all six groups in float64.

    Includes the four alignment terms, the replay term, and distillation
    against snapshots of both banks (two shared rows each).
    """
    def unit_rows(k):
        m = gen.standard_normal((k, d))
        return m / np.sqrt((m * m).sum(axis=1))[:, None]

    def targets(k, c):
        if not soft:
            return gen.integers(0, c, size=k)
        q = gen.random((k, c)) + 0.1
        return q / q.sum(axis=1, keepdims=True)

    batch = StepBatch(
        ds_strong=gen.standard_normal((n, d)),
        ds_down_targets=targets(n, c_down),
        ds_world_targets=targets(n, c_world),
        aux_strong=gen.standard_normal((n, d)),
        aux_world_targets=targets(n, c_world),
        aux_down_targets=targets(n, c_down),
        rep_strong=gen.standard_normal((n, d)),
        rep_down_targets=targets(n, c_down),
        kd_old_down=unit_rows(2),
        kd_old_world=unit_rows(2),
    )
    params = {
        "gamma": 1.0 + 0.1 * gen.standard_normal(d),
        "beta": 0.1 * gen.standard_normal(d),
        "lora_a": 0.2 * gen.standard_normal((r, d)),
        "lora_b": 0.2 * gen.standard_normal((d, r)),
        "protos_down": unit_rows(c_down),
        "protos_world": unit_rows(c_world),
    }

    def loss_and_grad(p):
        total, grads, _ = stage4_loss_and_grads(p, batch, scale, lambdas, tau)
        return total, grads

    return loss_and_grad, params


def run_gradcheck_suite(instances: int = 120, seed: int = 0,
                        verbose: bool = False) -> float:
    """Max relative error over the whole suite; alternates loss families."""
    worst = 0.0
    n_map = instances // 2
    for i in range(instances):
        gen = rng.stream(seed, "gradcheck", i)
        if i < n_map:
            loss_and_grad, params = lmap_instance(gen)
        else:
            soft = i % 5 == 0
            loss_and_grad, params = ltotal_instance(gen, soft=soft)
        err = fd_gradcheck(loss_and_grad, params, eps=1e-5)
        worst = max(worst, err)
        if verbose and (i + 1) % 40 == 0:
            print(f"  {i + 1}/{instances} instances, max rel err {worst:.3e}")
    return worst
