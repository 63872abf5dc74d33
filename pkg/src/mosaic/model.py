"""Latent factor model, pairwise and block ranking losses, and SGD updates.

The instantaneous loss is the regularized logistic one,

    l(u, i, i') = log(1 + exp(-y * U_u.(V_i - V_i'))) + reg * (|U_u|^2 + |V_i|^2 + |V_i'|^2)

and a block's loss is the mean of l over every (preferred, non-preferred)
pair in the block, all pairs labelled y = +1.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.special import expit

from .data import Block
from .errors import NonFiniteUpdate, SchemaError

_CKPT_MAGIC = b"MOSAIC1"


@dataclass
class LatentModel:
    U: np.ndarray  # (n_users, k) float64
    V: np.ndarray  # (n_items, k) float64
    reg_lambda: float

    @property
    def dim_k(self) -> int:
        return self.U.shape[1]

    @property
    def n_users(self) -> int:
        return self.U.shape[0]

    @property
    def n_items(self) -> int:
        return self.V.shape[0]

    def copy(self) -> "LatentModel":
        return LatentModel(self.U.copy(), self.V.copy(), self.reg_lambda)


def init_model(n_users: int, n_items: int, dim_k: int, seed: int, reg_lambda: float = 0.0) -> LatentModel:
    """Seeded uniform initialization on [-1/(2k), +1/(2k)]."""
    if n_users < 1 or n_items < 1 or dim_k < 1:
        raise ValueError("n_users, n_items and dim_k must all be >= 1")
    rng = np.random.default_rng(seed)
    half = 1.0 / (2.0 * dim_k)
    U = rng.uniform(-half, half, size=(n_users, dim_k))
    V = rng.uniform(-half, half, size=(n_items, dim_k))
    return LatentModel(U=U, V=V, reg_lambda=float(reg_lambda))


def score(model: LatentModel, u: int, i: int) -> float:
    return float(model.U[u] @ model.V[i])


def _softplus(z):
    # log(1 + exp(z)) without overflow for |z| ~ 1e3
    return np.logaddexp(0.0, z)


def pairwise_loss(model: LatentModel, u: int, i: int, i_prime: int, y: int = 1) -> float:
    """Regularized logistic loss of one (user, preferred, non-preferred) triplet."""
    Uu, Vi, Vip = model.U[u], model.V[i], model.V[i_prime]
    z = float(Uu @ (Vi - Vip))
    reg = model.reg_lambda * (Uu @ Uu + Vi @ Vi + Vip @ Vip)
    return float(_softplus(-y * z) + reg)


def block_loss(model: LatentModel, block: Block) -> float:
    """Mean pairwise loss over all |pos| * |neg| pairs of the block."""
    Uu = model.U[block.user]
    Vp = model.V[list(block.positives)]  # (P, k)
    Vn = model.V[list(block.negatives)]  # (N, k)
    z = (Vp @ Uu)[:, None] - (Vn @ Uu)[None, :]  # (P, N)
    reg = model.reg_lambda * (
        Uu @ Uu
        + np.einsum("ij,ij->i", Vp, Vp)[:, None]
        + np.einsum("ij,ij->i", Vn, Vn)[None, :]
    )
    return float(np.mean(_softplus(-z) + reg))


def block_gradient(model: LatentModel, block: Block):
    """Analytic gradient of block_loss w.r.t. the touched rows.

    Returns (g_user, item_ids, g_items) where g_items[j] is the gradient of
    the row model.V[item_ids[j]]. Only the block's user row and the block's
    item rows carry gradient; everything else is exactly zero.
    """
    pos = list(block.positives)
    neg = list(block.negatives)
    P, N = len(pos), len(neg)
    lam = model.reg_lambda
    Uu = model.U[block.user]
    Vp = model.V[pos]
    Vn = model.V[neg]

    z = (Vp @ Uu)[:, None] - (Vn @ Uu)[None, :]  # (P, N)
    w = expit(-z)  # -d/dz log(1+e^-z)
    scale = 1.0 / (P * N)

    # d z / d U_u = V_i - V_i'; regularization: 2 lam U_u per pair
    g_user = scale * (
        -(w.sum(axis=1) @ Vp) + (w.sum(axis=0) @ Vn)
    ) + 2.0 * lam * Uu

    # each positive i appears in N pairs, each negative i' in P pairs
    g_pos = scale * (-w.sum(axis=1)[:, None] * Uu[None, :] + 2.0 * lam * N * Vp)
    g_neg = scale * (w.sum(axis=0)[:, None] * Uu[None, :] + 2.0 * lam * P * Vn)

    # merge duplicate ids shared between the two sets
    ids = pos + neg
    grads = np.vstack([g_pos, g_neg])
    uniq, inv = np.unique(ids, return_inverse=True)
    merged = np.zeros((len(uniq), model.dim_k))
    np.add.at(merged, inv, grads)
    return g_user, uniq, merged


@njit(cache=True)
def _block_update_core(U, V, u, pos, neg, lr, lam):  # pragma: no cover - jitted
    P = pos.shape[0]
    N = neg.shape[0]
    k = U.shape[1]
    Uu = U[u].copy()
    scale = 1.0 / (P * N)
    wp = np.zeros(P)
    wn = np.zeros(N)
    for a in range(P):
        ia = pos[a]
        sa = 0.0
        for c in range(k):
            sa += Uu[c] * V[ia, c]
        for b in range(N):
            ib = neg[b]
            sb = 0.0
            for c in range(k):
                sb += Uu[c] * V[ib, c]
            w = 1.0 / (1.0 + np.exp(sa - sb))
            wp[a] += w
            wn[b] += w
    gP = np.empty((P, k))
    gN = np.empty((N, k))
    for a in range(P):
        ia = pos[a]
        for c in range(k):
            gP[a, c] = scale * (-wp[a] * Uu[c] + 2.0 * lam * N * V[ia, c])
    for b in range(N):
        ib = neg[b]
        for c in range(k):
            gN[b, c] = scale * (wn[b] * Uu[c] + 2.0 * lam * P * V[ib, c])
    ok = True
    for c in range(k):
        s = 0.0
        for a in range(P):
            s -= wp[a] * V[pos[a], c]
        for b in range(N):
            s += wn[b] * V[neg[b], c]
        U[u, c] = Uu[c] - lr * (scale * s + 2.0 * lam * Uu[c])
        if not np.isfinite(U[u, c]):
            ok = False
    for a in range(P):
        ia = pos[a]
        for c in range(k):
            V[ia, c] -= lr * gP[a, c]
            if not np.isfinite(V[ia, c]):
                ok = False
    for b in range(N):
        ib = neg[b]
        for c in range(k):
            V[ib, c] -= lr * gN[b, c]
            if not np.isfinite(V[ib, c]):
                ok = False
    return ok


@njit(cache=True)
def _user_stream_core(U, V, u, pos_flat, pos_ptr, neg_flat, neg_ptr, lr, lam,
                      snapshot_every, snaps_out):  # pragma: no cover - jitted
    """Run every block of one user in order, recording U[u] after each
    snapshot_every-th update. Returns (ok, n_snapshots, failing_block)."""
    n_blocks = pos_ptr.shape[0] - 1
    k = U.shape[1]
    s = 0
    for b in range(n_blocks):
        pos = pos_flat[pos_ptr[b] : pos_ptr[b + 1]]
        neg = neg_flat[neg_ptr[b] : neg_ptr[b + 1]]
        ok = _block_update_core(U, V, u, pos, neg, lr, lam)
        if not ok:
            return False, s, b
        if (b + 1) % snapshot_every == 0:
            for c in range(k):
                snaps_out[s, c] = U[u, c]
            s += 1
    return True, s, -1


def sgd_step(model: LatentModel, block: Block, learning_rate: float) -> LatentModel:
    """One gradient step on the block's rows, in place."""
    pos = np.asarray(block.positives, dtype=np.int64)
    neg = np.asarray(block.negatives, dtype=np.int64)
    ok = _block_update_core(
        model.U, model.V, block.user, pos, neg, learning_rate, model.reg_lambda
    )
    if not ok:
        raise NonFiniteUpdate(
            f"non-finite entry after update of user {block.user}",
            user=block.user,
            block_index=block.index_t,
        )
    return model


@njit(cache=True)
def _triplet_update_core(U, V, u, i, j, lr, lam):  # pragma: no cover - jitted
    k = U.shape[1]
    Uu = U[u].copy()
    Vi = V[i].copy()
    Vj = V[j].copy()
    z = 0.0
    for c in range(k):
        z += Uu[c] * (Vi[c] - Vj[c])
    w = 1.0 / (1.0 + np.exp(z))
    ok = True
    for c in range(k):
        U[u, c] = Uu[c] - lr * (-w * (Vi[c] - Vj[c]) + 2.0 * lam * Uu[c])
        if not np.isfinite(U[u, c]):
            ok = False
    for c in range(k):
        V[i, c] -= lr * (-w * Uu[c] + 2.0 * lam * Vi[c])
    for c in range(k):
        V[j, c] -= lr * (w * Uu[c] + 2.0 * lam * Vj[c])
    return ok


def triplet_sgd_step(model: LatentModel, u: int, i: int, i_prime: int, learning_rate: float) -> None:
    """One SGD step on a single (u, preferred, non-preferred) triplet.

    Same loss as pairwise_loss with y = +1; used by the bootstrap-sampling
    baseline trainer. A degenerate i == i_prime triplet is a valid no-signal
    update (margin 0, opposing item gradients cancel).
    """
    ok = _triplet_update_core(
        model.U, model.V, u, i, i_prime, learning_rate, model.reg_lambda
    )
    if not ok:
        raise NonFiniteUpdate(f"non-finite entry after triplet update of user {u}", user=u)


def save_checkpoint(model: LatentModel, path) -> None:
    """Checkpoint layout: magic "MOSAIC1", u32 k, u32 n_users, u32 n_items,
    f64 reg_lambda, then U and V row-major as little-endian float64."""
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<IIId", model.dim_k, model.n_users, model.n_items, model.reg_lambda))
        fh.write(model.U.astype("<f8").tobytes())
        fh.write(model.V.astype("<f8").tobytes())


def load_checkpoint(path) -> LatentModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise SchemaError(f"{path}: not a model checkpoint")
        dim_k, n_users, n_items, reg_lambda = struct.unpack("<IIId", fh.read(20))
        U = np.frombuffer(fh.read(8 * n_users * dim_k), dtype="<f8").reshape(n_users, dim_k).copy()
        V = np.frombuffer(fh.read(8 * n_items * dim_k), dtype="<f8").reshape(n_items, dim_k).copy()
    return LatentModel(U=U, V=V, reg_lambda=reg_lambda)
