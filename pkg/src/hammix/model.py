"""The multi-branch linear hash model: one projection head producing a
relaxed code per branch, plus one linear classifier head per branch.

Binarization uses sign with sign(0) = +1; tanh is sign-preserving, so codes
from the relaxed outputs equal codes from the raw projections.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .codes import CodeBank, pack_bits_rows

MODEL_MAGIC = b"DMIM"
MODEL_VERSION = 1


@dataclass
class ModelConfig:
    n_branches: int
    branch_bits: int
    feature_dim: int
    n_classes: int
    alpha: float = 1.0
    beta: float = 2.0
    gamma: float = 0.5
    n_tables: int = 4

    @property
    def total_bits(self) -> int:
        return self.n_branches * self.branch_bits


class HashModel:
    def __init__(self, config: ModelConfig, proj_w, proj_b, cls_w, cls_b):
        self.config = config
        self.proj_w = proj_w
        self.proj_b = proj_b
        self.cls_w = cls_w
        self.cls_b = cls_b

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator) -> "HashModel":
        """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)], seeded."""
        bound = 1.0 / np.sqrt(config.feature_dim)
        B, r, F, C = (
            config.n_branches,
            config.branch_bits,
            config.feature_dim,
            config.n_classes,
        )
        proj_w = [rng.uniform(-bound, bound, size=(r, F)) for _ in range(B)]
        proj_b = [rng.uniform(-bound, bound, size=r) for _ in range(B)]
        cls_w = [rng.uniform(-bound, bound, size=(C, F)) for _ in range(B)]
        cls_b = [rng.uniform(-bound, bound, size=C) for _ in range(B)]
        return cls(config, proj_w, proj_b, cls_w, cls_b)

    def project(self, feats: np.ndarray) -> np.ndarray:
        """Raw projections, shape (B, N, r)."""
        return np.stack(
            [feats[b] @ self.proj_w[b].T + self.proj_b[b] for b in range(self.config.n_branches)]
        )

    def relaxed_codes(self, feats: np.ndarray) -> np.ndarray:
        return np.tanh(self.project(feats))

    def heads(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(self.cls_w[b], self.cls_b[b]) for b in range(self.config.n_branches)]

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for b in range(self.config.n_branches):
            out[f"proj_w.{b}"] = self.proj_w[b]
            out[f"proj_b.{b}"] = self.proj_b[b]
            out[f"cls_w.{b}"] = self.cls_w[b]
            out[f"cls_b.{b}"] = self.cls_b[b]
        return out

    def encode_bits(self, feats: np.ndarray) -> np.ndarray:
        """Concatenated {0,1} bits per sample, shape (N, B*r); bit = 1 iff
        the projection is >= 0."""
        Z = self.project(feats)
        bits = (Z >= 0).astype(np.uint8)
        return np.concatenate([bits[b] for b in range(self.config.n_branches)], axis=1)

    def encode_bank(
        self,
        feats: np.ndarray,
        labels: np.ndarray | None = None,
        cameras: np.ndarray | None = None,
    ) -> CodeBank:
        """Pack codes for all samples; stores the concatenated pre-hash
        features alongside for re-ranking."""
        bits = self.encode_bits(feats)
        words = pack_bits_rows(bits)
        B = self.config.n_branches
        flat_feats = np.concatenate([feats[b] for b in range(B)], axis=1)
        return CodeBank(
            words,
            self.config.total_bits,
            labels=labels,
            cameras=cameras,
            features=flat_feats,
        )

    def save(self, path) -> None:
        cfg = self.config
        with open(path, "wb") as fh:
            fh.write(MODEL_MAGIC)
            fh.write(struct.pack("<B", MODEL_VERSION))
            fh.write(
                struct.pack(
                    "<IIII",
                    cfg.n_branches,
                    cfg.branch_bits,
                    cfg.feature_dim,
                    cfg.n_classes,
                )
            )
            for b in range(cfg.n_branches):
                for arr in (self.proj_w[b], self.proj_b[b], self.cls_w[b], self.cls_b[b]):
                    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path, **hyper) -> "HashModel":
        with open(path, "rb") as fh:
            if fh.read(4) != MODEL_MAGIC:
                raise ValueError(f"{path}: not a model file")
            (version,) = struct.unpack("<B", fh.read(1))
            if version != MODEL_VERSION:
                raise ValueError(f"{path}: unsupported model version {version}")
            B, r, F, C = struct.unpack("<IIII", fh.read(16))
            cfg = ModelConfig(B, r, F, C, **hyper)
            proj_w, proj_b, cls_w, cls_b = [], [], [], []

            def read_arr(shape):
                count = int(np.prod(shape))
                raw = fh.read(count * 8)
                if len(raw) != count * 8:
                    raise ValueError(f"{path}: truncated model file")
                return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)

            for _ in range(B):
                proj_w.append(read_arr((r, F)))
                proj_b.append(read_arr((r,)))
                cls_w.append(read_arr((C, F)))
                cls_b.append(read_arr((C,)))
        return cls(cfg, proj_w, proj_b, cls_w, cls_b)
