"""Synthetic labeled multi-branch features, PK batch sampling, and the
dataset sidecar files (id/label/camera CSV plus a feature matrix)."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class GeneratorParams:
    n: int = 4000
    n_classes: int = 50
    n_cameras: int = 4
    feature_dim: int = 32
    n_branches: int = 3
    centroid_scale: float = 1.0
    spread: float = 0.35
    camera_sigma: float = 0.3


@dataclass
class SyntheticDataset:
    feats: np.ndarray      # (B, n, F) float64
    labels: np.ndarray     # (n,) int64
    cameras: np.ndarray    # (n,) int64
    params: GeneratorParams

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def flat_features(self) -> np.ndarray:
        """Per-sample concatenation of branch features, (n, B*F)."""
        B = self.feats.shape[0]
        return np.concatenate([self.feats[b] for b in range(B)], axis=1)


def generate(params: GeneratorParams, rng: np.random.Generator) -> SyntheticDataset:
    """Per identity a class centroid per branch; each sample is centroid +
    per-camera offset + noise. Balanced over classes, cameras cycling within
    each class so every identity spans several cameras."""
    p = params
    if p.n_classes < 2:
        raise ValueError("need at least 2 identities")
    if p.n < 2 * p.n_classes:
        raise ValueError("need at least 2 samples per identity (n >= 2C)")
    if p.n_cameras < 2:
        raise ValueError("need at least 2 cameras for cross-camera retrieval")
    B, F, C = p.n_branches, p.feature_dim, p.n_classes

    centroids = rng.normal(0.0, p.centroid_scale, size=(C, B, F))
    camera_offsets = rng.normal(0.0, p.camera_sigma, size=(p.n_cameras, B, F))

    base, rem = divmod(p.n, C)
    counts = [base + 1] * rem + [base] * (C - rem)
    labels = np.repeat(np.arange(C, dtype=np.int64), counts)
    cameras = np.concatenate(
        [np.arange(cnt, dtype=np.int64) % p.n_cameras for cnt in counts]
    )
    noise = rng.normal(0.0, p.spread, size=(p.n, B, F)) if p.spread > 0 else np.zeros((p.n, B, F))
    feats = centroids[labels] + camera_offsets[cameras] + noise  # (n, B, F)
    return SyntheticDataset(
        feats=np.ascontiguousarray(feats.transpose(1, 0, 2)),
        labels=labels,
        cameras=cameras,
        params=p,
    )


def sample_pk_batch(
    ds: SyntheticDataset, P: int, K: int, rng: np.random.Generator
) -> np.ndarray:
    """Indices of a batch holding P distinct identities with K samples each
    (sampling with replacement only when an identity has fewer than K)."""
    C = ds.params.n_classes
    if P > C:
        raise ValueError(f"P={P} exceeds the {C} identities available")
    if P < 1 or K < 1:
        raise ValueError("P and K must be positive")
    chosen = rng.choice(C, size=P, replace=False)
    picks = []
    for c in chosen:
        pool = np.flatnonzero(ds.labels == c)
        replace = pool.size < K
        picks.append(rng.choice(pool, size=K, replace=replace))
    return np.concatenate(picks)


def make_protocol_split(
    ds: SyntheticDataset, queries_per_id: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Split sample indices into (query, gallery) so that every query keeps
    at least one same-identity, different-camera gallery match."""
    q_idx: list[int] = []
    g_mask = np.ones(len(ds), dtype=bool)
    for c in range(ds.params.n_classes):
        pool = np.flatnonzero(ds.labels == c)
        perm = pool[rng.permutation(pool.size)]
        take = min(queries_per_id, pool.size - 1)
        chosen = []
        for cand in perm:
            if len(chosen) == take:
                break
            rest = np.setdiff1d(pool, np.append(chosen, cand), assume_unique=False)
            if np.any(ds.cameras[rest] != ds.cameras[cand]):
                chosen.append(int(cand))
        q_idx.extend(chosen)
        g_mask[chosen] = False
    return np.array(sorted(q_idx), dtype=np.int64), np.flatnonzero(g_mask)


# -- sidecar files -----------------------------------------------------------

def save_dataset(ds: SyntheticDataset, prefix) -> None:
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    with open(f"{prefix}.sidecar.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label", "camera"])
        for i in range(len(ds)):
            w.writerow([i, int(ds.labels[i]), int(ds.cameras[i])])
    np.save(f"{prefix}.features.npy", ds.feats.transpose(1, 0, 2))  # (n, B, F)
    with open(f"{prefix}.meta.json", "w") as fh:
        json.dump({"generator": asdict(ds.params)}, fh, sort_keys=True)
        fh.write("\n")


def load_dataset(prefix) -> SyntheticDataset:
    prefix = Path(prefix)
    with open(f"{prefix}.meta.json") as fh:
        meta = json.load(fh)
    params = GeneratorParams(**meta["generator"])
    labels, cameras = load_sidecar(f"{prefix}.sidecar.csv")
    feats = np.load(f"{prefix}.features.npy")
    if feats.shape[0] != labels.shape[0]:
        raise ValueError(f"{prefix}: sidecar and feature matrix disagree on n")
    return SyntheticDataset(
        feats=np.ascontiguousarray(feats.transpose(1, 0, 2)),
        labels=labels,
        cameras=cameras,
        params=params,
    )


def load_sidecar(path) -> tuple[np.ndarray, np.ndarray]:
    labels, cameras = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for expected, row in enumerate(reader):
            if int(row["id"]) != expected:
                raise ValueError(f"{path}: ids must be dense and ordered from 0")
            labels.append(int(row["label"]))
            cameras.append(int(row["camera"]))
    return np.array(labels, dtype=np.int64), np.array(cameras, dtype=np.int64)
