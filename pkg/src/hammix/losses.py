"""Training losses: batch-hard triplet, per-branch softmax classification,
and the search-aware table-ordering loss, with analytic gradients.

All distances are relaxed Hamming distances, (r - <u, v>) / 2, which agree
with the integer Hamming distance whenever the inputs are exactly {-1,+1}.
Subgradient conventions: hinges contribute zero gradient at exactly zero,
and tied max/min arguments resolve to the first attaining index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class LossValue:
    value: float
    grads: dict[str, np.ndarray] | None = None
    parts: dict[str, float] = field(default_factory=dict)


def relaxed_hamming(u: np.ndarray, v: np.ndarray) -> float:
    """(r - <u, v>) / 2 for vectors in [-1, +1]^r."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError("expected two vectors of equal length")
    return (u.size - float(u @ v)) / 2.0


def pairwise_relaxed_hamming(U: np.ndarray) -> np.ndarray:
    """All-pairs relaxed Hamming distances of the rows of U, shape (N, N)."""
    U = np.asarray(U, dtype=np.float64)
    return (U.shape[1] - U @ U.T) / 2.0


def triplet_loss_batch_hard(
    codes: np.ndarray,
    labels: np.ndarray,
    alpha: float,
    want_grad: bool = True,
) -> LossValue:
    """Margin hinge on (furthest positive - closest negative) per anchor.

    Anchors lacking a positive (another sample with the same label) or a
    negative are skipped and excluded from the normalization; it is an error
    if no anchor is usable. Returns gradients w.r.t. ``codes`` under key
    'codes'.
    """
    U = np.asarray(codes, dtype=np.float64)
    y = np.asarray(labels)
    N = U.shape[0]
    if y.shape != (N,):
        raise ValueError("labels must have one entry per code")
    D = pairwise_relaxed_hamming(U)
    eq = y[:, None] == y[None, :]
    pos = eq & ~np.eye(N, dtype=bool)
    neg = ~eq
    valid = pos.any(axis=1) & neg.any(axis=1)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("no anchor has both a positive and a negative in the batch")

    Dp = np.where(pos, D, -np.inf)
    Dn = np.where(neg, D, np.inf)
    p_star = np.argmax(Dp, axis=1)
    n_star = np.argmin(Dn, axis=1)
    anchors = np.flatnonzero(valid)
    h = alpha + Dp[anchors, p_star[anchors]] - Dn[anchors, n_star[anchors]]
    active = h > 0.0
    value = float(np.sum(h[active])) / n_valid

    grads = None
    if want_grad:
        G = np.zeros((N, N))
        act_anchors = anchors[active]
        np.add.at(G, (act_anchors, p_star[act_anchors]), 1.0 / n_valid)
        np.add.at(G, (act_anchors, n_star[act_anchors]), -1.0 / n_valid)
        dU = -0.5 * (G + G.T) @ U
        grads = {"codes": dU}
    return LossValue(value, grads)


def total_triplet_loss(
    branch_codes: list[np.ndarray],
    labels: np.ndarray,
    alpha: float,
    want_grad: bool = True,
) -> LossValue:
    """Sum of the batch-hard triplet loss over all branches."""
    value = 0.0
    grads: dict[str, np.ndarray] = {}
    for b, codes in enumerate(branch_codes):
        lv = triplet_loss_batch_hard(codes, labels, alpha, want_grad)
        value += lv.value
        if want_grad:
            grads[f"codes.{b}"] = lv.grads["codes"]
    return LossValue(value, grads if want_grad else None)


def classification_loss(
    branch_feats: list[np.ndarray],
    labels: np.ndarray,
    heads: list[tuple[np.ndarray, np.ndarray]],
    want_grad: bool = True,
) -> LossValue:
    """Sum over branches of mean softmax cross-entropy of the linear heads.

    Gradients cover the head weights and biases ('cls_w.b' / 'cls_b.b').
    """
    y = np.asarray(labels)
    N = y.shape[0]
    value = 0.0
    grads: dict[str, np.ndarray] = {}
    for b, (feats, (W, bias)) in enumerate(zip(branch_feats, heads)):
        F = np.asarray(feats, dtype=np.float64)
        C = W.shape[0]
        if F.shape[1] != W.shape[1]:
            raise ValueError(f"branch {b}: feature dim {F.shape[1]} != head dim {W.shape[1]}")
        if y.min() < 0 or y.max() >= C:
            raise ValueError("labels out of range for the classifier head")
        logits = F @ W.T + bias
        zmax = logits.max(axis=1, keepdims=True)
        lse = zmax[:, 0] + np.log(np.exp(logits - zmax).sum(axis=1))
        value += float(np.mean(lse - logits[np.arange(N), y]))
        if want_grad:
            p = np.exp(logits - lse[:, None])
            p[np.arange(N), y] -= 1.0
            p /= N
            grads[f"cls_w.{b}"] = p.T @ F
            grads[f"cls_b.{b}"] = p.sum(axis=0)
    return LossValue(value, grads if want_grad else None)


def sami_loss(
    full_codes: np.ndarray,
    key_cols: list[list[int]],
    want_grad: bool = True,
) -> LossValue:
    """Orders per-pair substring distances to match the probe order.

    For table keys built from the codes by ``key_cols``, penalizes every
    ordered pair (i, j) whose distance in table l+1 exceeds its distance in
    table l, averaged by 1 / (N^2 (m - 1)). Later-probed tables run at a
    smaller radius, so smaller later-table distances mean fewer false
    candidates. Diagonal pairs contribute zero. Gradient key: 'codes'.
    """
    U = np.asarray(full_codes, dtype=np.float64)
    N, R = U.shape
    m = len(key_cols)
    covered = sorted(c for cols in key_cols for c in cols)
    if covered != list(range(R)):
        raise ValueError("key columns must cover every code position exactly once")
    if m < 2:
        return LossValue(0.0, {"codes": np.zeros_like(U)} if want_grad else None)

    keys = [U[:, cols] for cols in key_cols]
    thetas = [(K.shape[1] - K @ K.T) / 2.0 for K in keys]
    coef = 1.0 / (N * N * (m - 1))
    value = 0.0
    G = [np.zeros((N, N)) for _ in range(m)] if want_grad else None
    for l in range(m - 1):
        H = thetas[l + 1] - thetas[l]
        act = H > 0.0
        value += float(H[act].sum()) * coef
        if want_grad:
            A = act.astype(np.float64) * coef
            G[l + 1] += A
            G[l] -= A
    grads = None
    if want_grad:
        dU = np.zeros_like(U)
        for l, cols in enumerate(key_cols):
            dU[:, cols] += -0.5 * (G[l] + G[l].T) @ keys[l]
        grads = {"codes": dU}
    return LossValue(value, grads)


def total_objective(
    model,
    feats: np.ndarray,
    labels: np.ndarray,
    key_cols: list[list[int]],
    alpha: float | None = None,
    beta: float | None = None,
    gamma: float | None = None,
    want_grad: bool = True,
) -> LossValue:
    """Triplet + beta * classification + gamma * table-ordering loss on the
    tanh-relaxed codes; gradients cover every model parameter.

    ``feats`` has shape (n_branches, N, feature_dim). Hyperparameters left
    as None come from the model config.
    """
    cfg = model.config
    alpha = cfg.alpha if alpha is None else alpha
    beta = cfg.beta if beta is None else beta
    gamma = cfg.gamma if gamma is None else gamma
    feats = np.asarray(feats, dtype=np.float64)
    B, N, _ = feats.shape
    if B != cfg.n_branches:
        raise ValueError(f"expected {cfg.n_branches} branches, got {B}")

    Z = model.project(feats)
    U = np.tanh(Z)
    r = cfg.branch_bits

    lt = total_triplet_loss([U[b] for b in range(B)], labels, alpha, want_grad)
    lc = classification_loss(
        [feats[b] for b in range(B)], labels, model.heads(), want_grad
    )
    full = np.concatenate([U[b] for b in range(B)], axis=1)
    ls = sami_loss(full, key_cols, want_grad)

    value = lt.value + beta * lc.value + gamma * ls.value
    parts = {"triplet": lt.value, "classification": lc.value, "sami": ls.value}
    if not want_grad:
        return LossValue(value, None, parts)

    grads: dict[str, np.ndarray] = {}
    dU = np.stack([lt.grads[f"codes.{b}"] for b in range(B)])
    ds_full = ls.grads["codes"]
    for b in range(B):
        dU[b] += gamma * ds_full[:, b * r:(b + 1) * r]
    dZ = dU * (1.0 - U * U)
    for b in range(B):
        grads[f"proj_w.{b}"] = dZ[b].T @ feats[b]
        grads[f"proj_b.{b}"] = dZ[b].sum(axis=0)
        grads[f"cls_w.{b}"] = beta * lc.grads[f"cls_w.{b}"]
        grads[f"cls_b.{b}"] = beta * lc.grads[f"cls_b.{b}"]
    return LossValue(value, grads, parts)
