"""Hot numeric kernels: batch losses, gradients, and optimizer updates.

Each kernel has a numba @njit loop implementation and a vectorized numpy
fallback; :mod:`auxcl.backend` picks the active path. All kernels are
dtype-generic (float32 for training, float64 for gradient checking),
single-threaded, and reduce in a fixed order, so a given path is
deterministic. Loss scalars are accumulated in float64.

Cross-entropy over cosine logits differentiates through the prototype
row normalization, so the analytic gradients match finite differences of
the exact forward computation.
"""

from __future__ import annotations

import numpy as np

from . import backend

if backend.HAS_NUMBA:
    from numba import njit
else:  # pragma: no cover - numba always present in CI
    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap if not (len(args) == 1 and callable(args[0])) else args[0]


# ---------------------------------------------------------------------------
# cosine similarity matrix
# ---------------------------------------------------------------------------

def _cosine_matrix_np(X, Y):
    xn = np.sqrt((X * X).sum(axis=1))
    yn = np.sqrt((Y * Y).sum(axis=1))
    return (X @ Y.T) / (xn[:, None] * yn[None, :])


@njit(cache=True)
def _cosine_matrix_nb(X, Y):
    m, d = X.shape
    n = Y.shape[0]
    xn = np.empty(m, dtype=X.dtype)
    yn = np.empty(n, dtype=Y.dtype)
    for i in range(m):
        s = 0.0
        for k in range(d):
            s += X[i, k] * X[i, k]
        xn[i] = np.sqrt(s)
    for j in range(n):
        s = 0.0
        for k in range(d):
            s += Y[j, k] * Y[j, k]
        yn[j] = np.sqrt(s)
    out = np.dot(X, Y.T)
    for i in range(m):
        for j in range(n):
            out[i, j] /= xn[i] * yn[j]
    return out


def cosine_matrix(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities between rows of X [m,d] and Y [n,d]."""
    if backend.using_numba():
        return _cosine_matrix_nb(np.ascontiguousarray(X), np.ascontiguousarray(Y))
    return _cosine_matrix_np(X, Y)


# ---------------------------------------------------------------------------
# softmax cross-entropy over raw linear logits (stage-3 adapters)
# ---------------------------------------------------------------------------

def _linear_ce_np(F, W, y):
    B = F.shape[0]
    logits = F @ W
    mx = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - mx)
    Z = ex.sum(axis=1, keepdims=True)
    lse = np.log(Z)[:, 0] + mx[:, 0]
    loss = float(np.mean((lse - logits[np.arange(B), y]).astype(np.float64)))
    G = ex / Z
    G[np.arange(B), y] -= 1.0
    G /= B
    dW = F.T @ G
    return loss, dW.astype(W.dtype, copy=False)


@njit(cache=True)
def _linear_ce_nb(F, W, y):
    B = F.shape[0]
    C = W.shape[1]
    logits = np.dot(F, W)
    loss = 0.0
    for i in range(B):
        mx = logits[i, 0]
        for c in range(1, C):
            if logits[i, c] > mx:
                mx = logits[i, c]
        z = 0.0
        for c in range(C):
            z += np.exp(logits[i, c] - mx)
        loss += np.log(z) + mx - logits[i, y[i]]
        for c in range(C):
            g = np.exp(logits[i, c] - mx) / z
            if c == y[i]:
                g -= 1.0
            logits[i, c] = g / B  # reuse the buffer as dL/dlogits
    dW = np.dot(F.T, logits)
    return loss / B, dW


def linear_ce(F: np.ndarray, W: np.ndarray, y: np.ndarray):
    """Mean cross-entropy of logits F @ W against hard targets y.

    Returns (loss, dL/dW). Features are treated as constants.
    """
    if backend.using_numba():
        return _linear_ce_nb(
            np.ascontiguousarray(F), np.ascontiguousarray(W), y.astype(np.int64)
        )
    return _linear_ce_np(F, W, y)


# ---------------------------------------------------------------------------
# softmax cross-entropy over scaled cosine logits (stage-4 losses)
# ---------------------------------------------------------------------------

def _cos_ce_np(U, P, y, scale, Q=None):
    B = U.shape[0]
    pn = np.sqrt((P * P).sum(axis=1))
    Ph = P / pn[:, None]
    logits = scale * (U @ Ph.T)
    mx = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - mx)
    Z = ex.sum(axis=1, keepdims=True)
    lse = np.log(Z)[:, 0] + mx[:, 0]
    Pr = ex / Z
    if Q is None:
        loss = float(np.mean((lse - logits[np.arange(B), y]).astype(np.float64)))
        G = Pr.copy()
        G[np.arange(B), y] -= 1.0
    else:
        loss = float(np.mean((lse - (Q * logits).sum(axis=1)).astype(np.float64)))
        G = Pr - Q
    G *= scale / B
    dU = G @ Ph
    dPh = G.T @ U
    dot = (dPh * Ph).sum(axis=1)
    dP = (dPh - dot[:, None] * Ph) / pn[:, None]
    return loss, dU.astype(U.dtype, copy=False), dP.astype(P.dtype, copy=False)


@njit(cache=True)
def _normalize_rows_nb(P):
    C, d = P.shape
    pn = np.empty(C, dtype=P.dtype)
    Ph = np.empty((C, d), dtype=P.dtype)
    for c in range(C):
        s = 0.0
        for k in range(d):
            s += P[c, k] * P[c, k]
        pn[c] = np.sqrt(s)
        inv = 1.0 / pn[c]
        for k in range(d):
            Ph[c, k] = P[c, k] * inv
    return pn, Ph


@njit(cache=True)
def _proto_grad_nb(dPh, Ph, pn):
    C, d = Ph.shape
    dP = np.empty((C, d), dtype=Ph.dtype)
    for c in range(C):
        dot = 0.0
        for k in range(d):
            dot += dPh[c, k] * Ph[c, k]
        for k in range(d):
            dP[c, k] = (dPh[c, k] - dot * Ph[c, k]) / pn[c]
    return dP


@njit(cache=True)
def _cos_ce_hard_nb(U, P, y, scale):
    B = U.shape[0]
    C = P.shape[0]
    pn, Ph = _normalize_rows_nb(P)
    logits = np.dot(U, Ph.T)
    loss = 0.0
    for i in range(B):
        mx = logits[i, 0] * scale
        for c in range(C):
            logits[i, c] *= scale
            if logits[i, c] > mx:
                mx = logits[i, c]
        z = 0.0
        for c in range(C):
            z += np.exp(logits[i, c] - mx)
        loss += np.log(z) + mx - logits[i, y[i]]
        for c in range(C):
            g = np.exp(logits[i, c] - mx) / z
            if c == y[i]:
                g -= 1.0
            logits[i, c] = g * scale / B  # buffer now holds dL/d(cos logits)
    G = logits
    dU = np.dot(G, Ph)
    dPh = np.dot(G.T, U)
    return loss / B, dU, _proto_grad_nb(dPh, Ph, pn)


@njit(cache=True)
def _cos_ce_soft_nb(U, P, Q, scale):
    B = U.shape[0]
    C = P.shape[0]
    pn, Ph = _normalize_rows_nb(P)
    logits = np.dot(U, Ph.T)
    loss = 0.0
    for i in range(B):
        mx = logits[i, 0] * scale
        for c in range(C):
            logits[i, c] *= scale
            if logits[i, c] > mx:
                mx = logits[i, c]
        z = 0.0
        dot_q = 0.0
        for c in range(C):
            z += np.exp(logits[i, c] - mx)
            dot_q += Q[i, c] * logits[i, c]
        loss += np.log(z) + mx - dot_q
        for c in range(C):
            g = np.exp(logits[i, c] - mx) / z - Q[i, c]
            logits[i, c] = g * scale / B
    G = logits
    dU = np.dot(G, Ph)
    dPh = np.dot(G.T, U)
    return loss / B, dU, _proto_grad_nb(dPh, Ph, pn)


def cos_ce(U: np.ndarray, P: np.ndarray, targets: np.ndarray, scale: float):
    """Mean CE of ``scale * cos(u_i, p_c)`` logits.

    U rows are assumed unit-norm (the caller normalizes); P rows are
    normalized inside and the gradient dP accounts for it. ``targets`` is
    either an int vector (hard) or a [B, C] probability matrix (soft).
    Returns (loss, dU, dP).
    """
    U = np.ascontiguousarray(U)
    P = np.ascontiguousarray(P)
    if targets.ndim == 2:
        if backend.using_numba():
            return _cos_ce_soft_nb(U, P, np.ascontiguousarray(targets), scale)
        return _cos_ce_np(U, P, None, scale, Q=targets)
    if backend.using_numba():
        return _cos_ce_hard_nb(U, P, targets.astype(np.int64), scale)
    return _cos_ce_np(U, P, targets, scale)


# ---------------------------------------------------------------------------
# encoder tuner forward/backward (per-dim affine + low-rank residual)
# ---------------------------------------------------------------------------

def _tuner_forward_np(H, gamma, beta, A, Bm):
    AH = H @ A.T
    Z = gamma[None, :] * H + beta[None, :] + AH @ Bm.T
    zn = np.sqrt((Z * Z).sum(axis=1))
    U = Z / zn[:, None]
    return U, zn, AH


@njit(cache=True)
def _tuner_forward_nb(H, gamma, beta, A, Bm):
    B, d = H.shape
    AH = np.dot(H, A.T)
    U = np.dot(AH, Bm.T)
    zn = np.empty(B, dtype=H.dtype)
    for i in range(B):
        nrm = 0.0
        for k in range(d):
            z = gamma[k] * H[i, k] + beta[k] + U[i, k]
            U[i, k] = z
            nrm += z * z
        zn[i] = np.sqrt(nrm)
        inv = 1.0 / zn[i]
        for k in range(d):
            U[i, k] *= inv
    return U, zn, AH


def tuner_forward(H, gamma, beta, A, Bm):
    """Normalized output of the feature tuner plus backward caches.

    Returns (U, zn, AH) where U[i] = z_i / ||z_i||,
    z_i = gamma * h_i + beta + Bm @ (A @ h_i), zn[i] = ||z_i||.
    """
    H = np.ascontiguousarray(H)
    if backend.using_numba():
        return _tuner_forward_nb(
            H,
            np.ascontiguousarray(gamma),
            np.ascontiguousarray(beta),
            np.ascontiguousarray(A),
            np.ascontiguousarray(Bm),
        )
    return _tuner_forward_np(H, gamma, beta, A, Bm)


def _tuner_backward_np(H, Bm, U, zn, AH, dU):
    dZ = (dU - (U * dU).sum(axis=1)[:, None] * U) / zn[:, None]
    dgamma = (dZ * H).sum(axis=0)
    dbeta = dZ.sum(axis=0)
    dB = dZ.T @ AH
    dA = (dZ @ Bm).T @ H
    return dgamma, dbeta, dA, dB


@njit(cache=True)
def _tuner_backward_nb(H, Bm, U, zn, AH, dU):
    B, d = H.shape
    dgamma = np.zeros(d, dtype=H.dtype)
    dbeta = np.zeros(d, dtype=H.dtype)
    DZ = np.empty((B, d), dtype=H.dtype)
    for i in range(B):
        dot = 0.0
        for k in range(d):
            dot += U[i, k] * dU[i, k]
        inv = 1.0 / zn[i]
        for k in range(d):
            dz = (dU[i, k] - dot * U[i, k]) * inv
            DZ[i, k] = dz
            dgamma[k] += dz * H[i, k]
            dbeta[k] += dz
    dB = np.dot(DZ.T, AH)
    dA = np.dot(np.dot(DZ, Bm).T, H)
    return dgamma, dbeta, dA, dB


def tuner_backward(H, Bm, U, zn, AH, dU):
    """Gradients of the tuner parameters given dL/dU from the losses."""
    if backend.using_numba():
        return _tuner_backward_nb(
            np.ascontiguousarray(H),
            np.ascontiguousarray(Bm),
            np.ascontiguousarray(U),
            np.ascontiguousarray(zn),
            np.ascontiguousarray(AH),
            np.ascontiguousarray(dU),
        )
    return _tuner_backward_np(H, Bm, U, zn, AH, dU)


# ---------------------------------------------------------------------------
# temperature-softmax KL rows (prototype distillation)
# ---------------------------------------------------------------------------

def _kd_rows_np(old, new, tau):
    S = old.shape[0]
    po = _softmax_rows_np(old / tau)
    q = _softmax_rows_np(new / tau)
    qc = np.maximum(q, 1e-12)
    loss = float(np.sum((po * (np.log(np.maximum(po, 1e-12)) - np.log(qc))).astype(np.float64)) / S)
    dNew = (q - po) / (tau * S)
    return loss, dNew.astype(new.dtype, copy=False)


def _softmax_rows_np(Z):
    mx = Z.max(axis=1, keepdims=True)
    ex = np.exp(Z - mx)
    return ex / ex.sum(axis=1, keepdims=True)


@njit(cache=True)
def _kd_rows_nb(old, new, tau):
    S, d = old.shape
    dNew = np.empty((S, d), dtype=new.dtype)
    po = np.empty(d, dtype=old.dtype)
    q = np.empty(d, dtype=new.dtype)
    loss = 0.0
    for s in range(S):
        mo = old[s, 0]
        mn = new[s, 0]
        for k in range(1, d):
            if old[s, k] > mo:
                mo = old[s, k]
            if new[s, k] > mn:
                mn = new[s, k]
        zo = 0.0
        zq = 0.0
        for k in range(d):
            po[k] = np.exp((old[s, k] - mo) / tau)
            zo += po[k]
            q[k] = np.exp((new[s, k] - mn) / tau)
            zq += q[k]
        for k in range(d):
            po[k] /= zo
            q[k] /= zq
            qk = q[k] if q[k] > 1e-12 else 1e-12
            pk = po[k] if po[k] > 1e-12 else 1e-12
            loss += po[k] * (np.log(pk) - np.log(qk))
            dNew[s, k] = (q[k] - po[k]) / (tau * S)
    return loss / S, dNew


def kd_rows(old: np.ndarray, new: np.ndarray, tau: float):
    """Mean over rows of KL(softmax(old/tau) || softmax(new/tau)).

    The softmax runs across the embedding coordinates of each row.
    Returns (loss, dL/dnew); q is clamped at 1e-12 inside the log.
    """
    old = np.ascontiguousarray(old)
    new = np.ascontiguousarray(new)
    if backend.using_numba():
        return _kd_rows_nb(old, new, tau)
    return _kd_rows_np(old, new, tau)


# ---------------------------------------------------------------------------
# AdamW update (decoupled decay applied after the moment step)
# ---------------------------------------------------------------------------

def _adamw_np(p, g, m, v, t, lr, b1, b2, eps, wd):
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * (g * g)
    mhat = m / (1.0 - b1 ** t)
    vhat = v / (1.0 - b2 ** t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)
    p *= 1.0 - lr * wd


@njit(cache=True)
def _adamw_nb(p, g, m, v, t, lr, b1, b2, eps, wd):
    n = p.shape[0]
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    decay = 1.0 - lr * wd
    for k in range(n):
        m[k] = b1 * m[k] + (1.0 - b1) * g[k]
        v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k]
        mhat = m[k] / c1
        vhat = v[k] / c2
        p[k] = (p[k] - lr * mhat / (np.sqrt(vhat) + eps)) * decay
    return None


def adamw_update(p, g, m, v, t, lr, b1, b2, eps, wd) -> None:
    """One in-place AdamW step on flat views of the param/grad/moments."""
    if backend.using_numba():
        _adamw_nb(
            p.reshape(-1), np.ascontiguousarray(g.reshape(-1)), m.reshape(-1),
            v.reshape(-1), t, lr, b1, b2, eps, wd,
        )
    else:
        _adamw_np(p.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1),
                  t, lr, b1, b2, eps, wd)
