"""Deterministic vector math, loss primitives, AdamW, and a gradient checker.

Training runs in float32; gradient checking runs the same code paths in
float64. All public operations reject non-finite results and use fixed
reduction orders.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import (
    IndexOutOfRange,
    NearZeroNorm,
    NonFiniteLoss,
    ShapeMismatch,
)

NORM_FLOOR = 1e-6


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale v to unit L2 norm. Raises NearZeroNorm below the 1e-6 floor."""
    v = np.asarray(v)
    n = float(np.sqrt(np.sum((v * v).astype(np.float64))))
    if n < NORM_FLOOR:
        raise NearZeroNorm(f"norm {n:.3e} below {NORM_FLOOR}")
    return v / v.dtype.type(n)


def normalize_rows(M: np.ndarray) -> np.ndarray:
    """Row-wise l2_normalize with the same near-zero guard."""
    M = np.asarray(M)
    n = np.sqrt((M.astype(np.float64) ** 2).sum(axis=1))
    if np.any(n < NORM_FLOOR):
        bad = int(np.argmin(n))
        raise NearZeroNorm(f"row {bad} norm {n[bad]:.3e} below {NORM_FLOOR}")
    return M / n[:, None].astype(M.dtype)


def cosine_sim(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity of two vectors, in [-1, 1]."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape:
        raise ShapeMismatch(f"{u.shape} vs {v.shape}")
    nu = float(np.sqrt(np.sum((u * u).astype(np.float64))))
    nv = float(np.sqrt(np.sum((v * v).astype(np.float64))))
    if nu < NORM_FLOOR or nv < NORM_FLOOR:
        raise NearZeroNorm(f"norms ({nu:.3e}, {nv:.3e}) below {NORM_FLOOR}")
    return float(np.dot(u.astype(np.float64), v.astype(np.float64)) / (nu * nv))


def softmax(z: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Stable softmax with max-subtraction; temperature must be positive."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    z = np.asarray(z, dtype=np.float64) / temperature
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def cross_entropy(logits: np.ndarray, target) -> float:
    """-log softmax(logits)[target]; soft targets give -sum p*log softmax."""
    logits = np.asarray(logits, dtype=np.float64)
    mx = logits.max()
    lse = np.log(np.exp(logits - mx).sum()) + mx
    if np.ndim(target) == 0:
        t = int(target)
        if t < 0 or t >= logits.shape[0]:
            raise IndexOutOfRange(f"target {t} for {logits.shape[0]} logits")
        return float(lse - logits[t])
    p = np.asarray(target, dtype=np.float64)
    if p.shape != logits.shape:
        raise ShapeMismatch(f"{p.shape} vs {logits.shape}")
    return float(lse - np.dot(p, logits))


def kl_div(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) with q clamped at 1e-12; always >= 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeMismatch(f"{p.shape} vs {q.shape}")
    qc = np.maximum(q, 1e-12)
    pc = np.maximum(p, 1e-12)
    return float(np.sum(np.where(p > 0, p * (np.log(pc) - np.log(qc)), 0.0)))


# ---------------------------------------------------------------------------
# AdamW with step decay
# ---------------------------------------------------------------------------

@dataclass
class AdamW:
    """Decoupled-weight-decay Adam over a dict of named arrays.

    Decay is applied to the parameters directly after the bias-corrected
    moment update: p <- (1 - lr*wd) * (p - lr * mhat / (sqrt(vhat) + eps)).
    """

    lr: float = 0.004
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    eps: float = 1e-8
    decay_factor: float = 0.2
    decay_epochs: tuple[int, ...] = ()
    step_count: int = 0
    _m: dict = field(default_factory=dict)
    _v: dict = field(default_factory=dict)

    def lr_at(self, epoch: int) -> float:
        return step_decay_lr(epoch, self.lr, self.decay_factor, self.decay_epochs)

    def step(self, params: dict, grads: dict, epoch: int = 0) -> None:
        """One in-place update of every named parameter array."""
        lr = self.lr_at(epoch)
        self.step_count += 1
        b1, b2 = self.betas
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ShapeMismatch(f"{name}: grad {g.shape} vs param {p.shape}")
            if name not in self._m:
                self._m[name] = np.zeros_like(p)
                self._v[name] = np.zeros_like(p)
            kernels.adamw_update(
                p, g, self._m[name], self._v[name], self.step_count,
                lr, b1, b2, self.eps, self.weight_decay,
            )


def step_decay_lr(epoch: int, base_lr: float, factor: float,
                  decay_epochs: tuple[int, ...]) -> float:
    """base_lr * factor^(number of decay epochs <= epoch)."""
    k = sum(1 for e in decay_epochs if e <= epoch)
    return base_lr * factor ** k


def decay_schedule(num_epochs: int, fractions=(0.6, 0.85)) -> tuple[int, ...]:
    """Decay boundaries at the given fractions of the epoch budget."""
    return tuple(sorted({int(num_epochs * f) for f in fractions if int(num_epochs * f) > 0}))


# ---------------------------------------------------------------------------
# finite-difference gradient checker (64-bit mode)
# ---------------------------------------------------------------------------

def fd_gradcheck(loss_and_grad, params: dict, eps: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    ``loss_and_grad(params) -> (loss, grads)`` must be deterministic; params
    is a dict of float64 arrays perturbed coordinate-wise. The relative
    error is |g_a - g_fd| / max(1e-8, |g_a| + |g_fd|).
    """
    if not (1e-5 - 1e-12 <= eps <= 1e-2 + 1e-12):
        raise ValueError("eps must lie in [1e-5, 1e-2]")
    loss0, grads = loss_and_grad(params)
    if not np.isfinite(loss0):
        raise NonFiniteLoss(f"loss is {loss0}")
    worst = 0.0
    for name, p in params.items():
        ga = np.asarray(grads[name], dtype=np.float64)
        flat = p.reshape(-1)
        for i in range(flat.shape[0]):
            orig = flat[i]
            flat[i] = orig + eps
            lp, _ = loss_and_grad(params)
            flat[i] = orig - eps
            lm, _ = loss_and_grad(params)
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NonFiniteLoss(f"perturbed loss non-finite at {name}[{i}]")
            gfd = (lp - lm) / (2.0 * eps)
            gai = ga.reshape(-1)[i]
            rel = abs(gai - gfd) / max(1e-8, abs(gai) + abs(gfd))
            if rel > worst:
                worst = rel
    return worst
