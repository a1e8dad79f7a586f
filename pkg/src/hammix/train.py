"""Mini-batch gradient training of the multi-branch hash model on labeled
features, with PK batch sampling and a stepped learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import SyntheticDataset, sample_pk_batch
from .losses import total_objective
from .model import HashModel, ModelConfig
from .tables import KeyLayout, key_column_indices


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 160
    batch_p: int = 16
    batch_k: int = 4
    lr: float = 4e-4
    weight_decay: float = 5e-4
    alpha: float = 1.0
    beta: float = 2.0
    gamma: float = 0.5
    n_tables: int = 4
    branch_bits: int = 32
    seed: int = 0

    @property
    def batch_size(self) -> int:
        return self.batch_p * self.batch_k


@dataclass
class TrainResult:
    model: HashModel
    trace: list[dict] = field(default_factory=list)


def _lr_at(epoch: int, cfg: TrainConfig) -> float:
    # step decay: x0.1 from epoch floor(T/2), x0.01 from floor(3T/4)
    decays = 0
    if epoch >= cfg.epochs // 2:
        decays += 1
    if epoch >= (3 * cfg.epochs) // 4:
        decays += 1
    return cfg.lr * (0.1 ** decays)


def train(ds: SyntheticDataset, cfg: TrainConfig, model: HashModel | None = None) -> TrainResult:
    """Run ``epochs`` passes of ceil(n/N) PK-sampled batches of plain SGD.

    Deterministic given the seed: parameter init and batch sampling draw
    from fixed named substreams. Weight decay applies to the projection and
    classifier weight matrices, not the biases.
    """
    if cfg.batch_p > ds.params.n_classes:
        raise ValueError("batch_p exceeds the number of identities")
    init_ss, batch_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    if model is None:
        mcfg = ModelConfig(
            n_branches=ds.params.n_branches,
            branch_bits=cfg.branch_bits,
            feature_dim=ds.params.feature_dim,
            n_classes=ds.params.n_classes,
            alpha=cfg.alpha,
            beta=cfg.beta,
            gamma=cfg.gamma,
            n_tables=cfg.n_tables,
        )
        model = HashModel.init(mcfg, np.random.Generator(np.random.PCG64(init_ss)))
    batch_rng = np.random.Generator(np.random.PCG64(batch_ss))

    layout = KeyLayout.build(
        "blockwise", model.config.n_branches, model.config.branch_bits, cfg.n_tables
    )
    key_cols = key_column_indices(layout)
    params = model.params()
    decayed = {f"proj_w.{b}" for b in range(model.config.n_branches)} | {
        f"cls_w.{b}" for b in range(model.config.n_branches)
    }

    steps = math.ceil(len(ds) / cfg.batch_size)
    trace: list[dict] = []
    for epoch in range(cfg.epochs):
        lr = _lr_at(epoch, cfg)
        sums = {"total": 0.0, "triplet": 0.0, "classification": 0.0, "sami": 0.0}
        for _ in range(steps):
            idx = sample_pk_batch(ds, cfg.batch_p, cfg.batch_k, batch_rng)
            feats = ds.feats[:, idx]
            labels = ds.labels[idx]
            lv = total_objective(
                model, feats, labels, key_cols,
                alpha=cfg.alpha, beta=cfg.beta, gamma=cfg.gamma,
            )
            if not np.isfinite(lv.value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, parts={lv.parts}, lr={lr}"
                )
            for name, p in params.items():
                g = lv.grads[name]
                if name in decayed:
                    p -= lr * (g + cfg.weight_decay * p)
                else:
                    p -= lr * g
            sums["total"] += lv.value
            for k, v in lv.parts.items():
                sums[k] += v
        trace.append({"epoch": epoch, "lr": lr, **{k: v / steps for k, v in sums.items()}})
    return TrainResult(model=model, trace=trace)


def encode_dataset(model: HashModel, ds: SyntheticDataset):
    """Binarize every sample and bundle codes, labels, cameras, and the
    pre-hash features into a bank."""
    return model.encode_bank(ds.feats, labels=ds.labels, cameras=ds.cameras)
