import math

import numpy as np
import pytest

from hammix.codes import hamming_distance, pack
from hammix.losses import (
    classification_loss,
    pairwise_relaxed_hamming,
    relaxed_hamming,
    sami_loss,
    total_objective,
    total_triplet_loss,
    triplet_loss_batch_hard,
)
from hammix.model import HashModel, ModelConfig
from hammix.tables import KeyLayout, key_column_indices


# -- relaxed hamming ---------------------------------------------------------

def test_relaxed_hamming_identity_and_antipodal():
    u = np.ones(12)
    assert relaxed_hamming(u, u) == 0.0
    assert relaxed_hamming(u, -u) == 12.0


def test_relaxed_hamming_matches_integer_on_pm1():
    rng = np.random.default_rng(0)
    for _ in range(100):
        r = int(rng.integers(1, 64))
        u = rng.choice((-1.0, 1.0), size=r)
        v = rng.choice((-1.0, 1.0), size=r)
        expect = hamming_distance(pack(u.astype(int)), pack(v.astype(int)))
        assert relaxed_hamming(u, v) == expect


def test_relaxed_hamming_length_mismatch():
    with pytest.raises(ValueError):
        relaxed_hamming(np.ones(3), np.ones(4))


# -- batch-hard triplet --------------------------------------------------------

def exhaustive_batch_hard_oracle(codes, labels, alpha):
    """Enumerate every positive and negative per anchor; keep the hardest."""
    N = len(labels)
    D = pairwise_relaxed_hamming(np.asarray(codes, dtype=float))
    total, used = 0.0, 0
    for i in range(N):
        ps = [j for j in range(N) if j != i and labels[j] == labels[i]]
        ns = [j for j in range(N) if labels[j] != labels[i]]
        if not ps or not ns:
            continue
        used += 1
        hardest = alpha + max(D[i, j] for j in ps) - min(D[i, j] for j in ns)
        total += max(0.0, hardest)
    return total / used


def test_triplet_zero_when_margin_satisfied():
    # same-label codes identical, cross-label pairs at distance >= alpha
    codes = np.array(
        [[1, 1, 1, 1], [1, 1, 1, 1], [-1, -1, 1, 1], [-1, -1, 1, 1]], dtype=float
    )
    labels = np.array([0, 0, 1, 1])
    lv = triplet_loss_batch_hard(codes, labels, alpha=1.0)
    assert lv.value == 0.0
    assert np.allclose(lv.grads["codes"], 0.0)


def test_triplet_alpha_zero_identical_codes():
    codes = np.ones((4, 6))
    labels = np.array([0, 0, 1, 1])
    assert triplet_loss_batch_hard(codes, labels, alpha=0.0).value == 0.0


def test_triplet_matches_exhaustive_oracle_handmade():
    codes = np.array(
        [[1, 1, -1, -1], [1, -1, -1, -1], [-1, 1, 1, -1], [-1, -1, 1, 1]], dtype=float
    )
    labels = np.array([0, 0, 1, 1])
    for alpha in (0.5, 1.0, 3.0):
        got = triplet_loss_batch_hard(codes, labels, alpha).value
        assert got == pytest.approx(exhaustive_batch_hard_oracle(codes, labels, alpha), abs=1e-12)


def test_triplet_matches_oracle_random_batches():
    rng = np.random.default_rng(1)
    for _ in range(50):
        N = int(rng.integers(4, 9))
        r = int(rng.integers(2, 10))
        codes = rng.uniform(-1, 1, size=(N, r))
        labels = rng.integers(0, 3, size=N)
        if len(np.unique(labels)) < 2:
            continue
        counts = np.bincount(labels, minlength=3)
        if not np.any(counts >= 2):
            continue
        try:
            got = triplet_loss_batch_hard(codes, labels, 1.0).value
        except ValueError:
            continue
        assert got == pytest.approx(exhaustive_batch_hard_oracle(codes, labels, 1.0), abs=1e-12)


def test_triplet_anchor_skipping_and_error():
    codes = np.ones((3, 4))
    with pytest.raises(ValueError):
        triplet_loss_batch_hard(codes, np.array([0, 1, 2]), 1.0)  # no positives anywhere
    # singleton label 2 is skipped, the pair of label 0 stays usable
    codes = np.array([[1, 1, 1, 1], [1, 1, -1, -1], [-1, -1, -1, -1]], dtype=float)
    lv = triplet_loss_batch_hard(codes, np.array([0, 0, 2]), 0.5)
    assert lv.value >= 0.0


def test_triplet_invariant_to_permutation_within_identity():
    rng = np.random.default_rng(2)
    codes = rng.uniform(-1, 1, size=(6, 8))
    labels = np.array([0, 0, 0, 1, 1, 1])
    base = triplet_loss_batch_hard(codes, labels, 1.0).value
    perm = np.array([2, 0, 1, 5, 3, 4])  # shuffle inside each identity group
    again = triplet_loss_batch_hard(codes[perm], labels[perm], 1.0).value
    assert again == pytest.approx(base, abs=1e-12)


def test_total_triplet_is_per_branch_sum():
    rng = np.random.default_rng(3)
    labels = np.array([0, 0, 1, 1, 2, 2])
    branches = [rng.uniform(-1, 1, size=(6, 5)) for _ in range(3)]
    total = total_triplet_loss(branches, labels, 1.0)
    per = sum(triplet_loss_batch_hard(b, labels, 1.0).value for b in branches)
    assert total.value == pytest.approx(per, abs=1e-12)
    zero = total_triplet_loss([np.ones((4, 4))] * 3, np.array([0, 0, 1, 1]), 0.0)
    assert zero.value == 0.0


# -- classification ------------------------------------------------------------

def test_classification_uniform_logits_is_B_lnC():
    N, F, C, B = 6, 4, 5, 3
    feats = [np.random.default_rng(4).normal(size=(N, F)) for _ in range(B)]
    heads = [(np.zeros((C, F)), np.zeros(C)) for _ in range(B)]
    labels = np.arange(N) % C
    lv = classification_loss(feats, labels, heads)
    assert lv.value == pytest.approx(B * math.log(C), abs=1e-12)


def test_classification_dominant_logit_goes_to_zero():
    N, F, C = 4, 4, 4
    feats = [np.eye(N, F)]
    labels = np.array([0, 1, 2, 3])
    W = np.zeros((C, F))
    W[labels, np.arange(N)] = 1000.0  # huge correct-class margin
    lv = classification_loss(feats, labels, [(W, np.zeros(C))])
    assert lv.value < 1e-6


def test_classification_matches_logsumexp_oracle():
    rng = np.random.default_rng(5)
    N, F, C, B = 7, 6, 4, 2
    feats = [rng.normal(size=(N, F)) for _ in range(B)]
    heads = [(rng.normal(size=(C, F)), rng.normal(size=C)) for _ in range(B)]
    labels = rng.integers(0, C, size=N)
    lv = classification_loss(feats, labels, heads)
    expect = 0.0
    for b in range(B):
        logits = feats[b] @ heads[b][0].T + heads[b][1]
        for i in range(N):
            expect += (math.log(np.exp(logits[i]).sum()) - logits[i, labels[i]]) / N
    assert lv.value == pytest.approx(expect, rel=1e-12)


def test_classification_dimension_mismatch():
    with pytest.raises(ValueError):
        classification_loss(
            [np.zeros((2, 3))], np.array([0, 1]), [(np.zeros((2, 4)), np.zeros(2))]
        )


# -- table-ordering (search-aware) loss ------------------------------------------

def cols_for(B, r, m):
    return key_column_indices(KeyLayout.build("blockwise", B, r, m))


def test_sami_zero_for_identical_samples():
    # identical binary codes: every pair distance is 0 in every table
    rng = np.random.default_rng(13)
    U = np.tile(rng.choice((-1.0, 1.0), size=12), (5, 1))
    lv = sami_loss(U, cols_for(3, 4, 2))
    assert lv.value == 0.0
    assert np.allclose(lv.grads["codes"], 0.0)


def test_sami_zero_when_ordering_already_correct():
    # two samples differing only inside the first table's columns
    cols = cols_for(1, 8, 2)  # keys: bits 0-3, bits 4-7
    a = np.ones(8)
    b = np.ones(8)
    b[:4] = -1  # Theta^(1) = 4, Theta^(2) = 0: non-increasing
    lv = sami_loss(np.stack([a, b]), cols)
    assert lv.value == 0.0


def test_sami_worked_example_value():
    # single cross pair with Theta^(1) = 1, Theta^(2) = 3 -> (2 + 2) / 4 = 1.0
    cols = cols_for(1, 8, 2)
    a = np.ones(8)
    b = np.ones(8)
    b[0] = -1          # first key distance 1
    b[4:7] = -1        # second key distance 3
    lv = sami_loss(np.stack([a, b]), cols)
    assert lv.value == pytest.approx(1.0, abs=1e-12)


def test_sami_m1_defined_as_zero():
    U = np.random.default_rng(6).uniform(-1, 1, size=(4, 6))
    assert sami_loss(U, cols_for(1, 6, 1)).value == 0.0


def test_sami_invariant_under_batch_reordering():
    rng = np.random.default_rng(7)
    U = rng.uniform(-1, 1, size=(6, 12))
    cols = cols_for(3, 4, 2)
    base = sami_loss(U, cols).value
    perm = rng.permutation(6)
    assert sami_loss(U[perm], cols).value == pytest.approx(base, abs=1e-12)


def test_sami_bad_columns_rejected():
    U = np.ones((2, 8))
    with pytest.raises(ValueError):
        sami_loss(U, [[0, 1, 2], [3, 4, 5]])  # does not cover bits 6, 7


# -- total objective and gradients -------------------------------------------------

def build_model(rng, B=3, r=8, F=6, C=4, **hyper):
    cfg = ModelConfig(B, r, F, C, **hyper)
    return HashModel.init(cfg, rng)


def make_batch(rng, model, N=8):
    B, F, C = model.config.n_branches, model.config.feature_dim, model.config.n_classes
    feats = rng.normal(size=(B, N, F))
    labels = np.repeat(np.arange(N // 2) % C, 2)
    return feats, labels


def test_total_objective_reduces_to_triplet_when_beta_gamma_zero():
    rng = np.random.default_rng(8)
    model = build_model(rng)
    feats, labels = make_batch(rng, model)
    cols = cols_for(3, 8, model.config.n_tables)
    lv = total_objective(model, feats, labels, cols, beta=0.0, gamma=0.0)
    U = np.tanh(model.project(feats))
    lt = total_triplet_loss([U[b] for b in range(3)], labels, model.config.alpha)
    assert lv.value == pytest.approx(lt.value, rel=1e-12)


def test_total_objective_default_weighting():
    rng = np.random.default_rng(9)
    model = build_model(rng, beta=2.0, gamma=0.5)
    feats, labels = make_batch(rng, model)
    cols = cols_for(3, 8, model.config.n_tables)
    lv = total_objective(model, feats, labels, cols)
    assert lv.value == pytest.approx(
        lv.parts["triplet"] + 2.0 * lv.parts["classification"] + 0.5 * lv.parts["sami"],
        rel=1e-12,
    )
    assert lv.parts["triplet"] >= 0 and lv.parts["classification"] >= 0 and lv.parts["sami"] >= 0


def margins_are_clean(model, feats, labels, cols, tol=1e-3):
    """True when no hinge or tie sits within tol of a kink."""
    U = np.tanh(model.project(feats))
    y = np.asarray(labels)
    N = y.size
    for b in range(model.config.n_branches):
        D = pairwise_relaxed_hamming(U[b])
        eq = y[:, None] == y[None, :]
        pos = eq & ~np.eye(N, dtype=bool)
        neg = ~eq
        for i in range(N):
            if not (pos[i].any() and neg[i].any()):
                continue
            dp = np.sort(D[i, pos[i]])
            dn = np.sort(D[i, neg[i]])
            h = model.config.alpha + dp[-1] - dn[0]
            if abs(h) < tol:
                return False
            if len(dp) > 1 and dp[-1] - dp[-2] < tol:
                return False
            if len(dn) > 1 and dn[1] - dn[0] < tol:
                return False
    full = np.concatenate([U[b] for b in range(model.config.n_branches)], axis=1)
    keys = [full[:, c] for c in cols]
    th = [(K.shape[1] - K @ K.T) / 2.0 for K in keys]
    for l in range(len(cols) - 1):
        if np.any(np.abs(th[l + 1] - th[l]) < tol):
            return False
    return True


def numeric_grad(model, feats, labels, cols, name, idx, h=1e-5):
    p = model.params()[name]
    flat = p.reshape(-1)
    orig = flat[idx]
    flat[idx] = orig + h
    up = total_objective(model, feats, labels, cols, want_grad=False).value
    flat[idx] = orig - h
    down = total_objective(model, feats, labels, cols, want_grad=False).value
    flat[idx] = orig
    return (up - down) / (2 * h)


def test_gradients_match_central_differences():
    rng = np.random.default_rng(10)
    checked = 0
    seed_stream = np.random.default_rng(11)
    while checked < 50:
        model = build_model(
            np.random.default_rng(seed_stream.integers(2**32)), beta=2.0, gamma=0.5
        )
        feats, labels = make_batch(np.random.default_rng(seed_stream.integers(2**32)), model)
        cols = cols_for(3, 8, model.config.n_tables)
        if not margins_are_clean(model, feats, labels, cols):
            continue
        lv = total_objective(model, feats, labels, cols)
        params = model.params()
        for _ in range(5):
            name = list(params)[int(rng.integers(len(params)))]
            idx = int(rng.integers(params[name].size))
            num = numeric_grad(model, feats, labels, cols, name, idx)
            ana = lv.grads[name].reshape(-1)[idx]
            denom = max(abs(num), abs(ana), 1e-8)
            assert abs(num - ana) / denom < 1e-4, (name, idx, num, ana)
            checked += 1


def test_sign_of_tanh_equals_sign_of_preactivation():
    rng = np.random.default_rng(12)
    z = rng.normal(size=1000) * 3
    z = z[np.abs(z) > 1e-12]
    assert np.array_equal(np.sign(np.tanh(z)), np.sign(z))
