"""Low-rank adapters: ``y = W0 x + (alpha / r) B (A x)``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError


@dataclass
class LoRALayer:
    base_weight: np.ndarray  # (d_out, d_in)
    A: np.ndarray  # (r, d_in)
    B: np.ndarray  # (d_out, r)
    alpha: float = 1.0

    def __post_init__(self):
        self.base_weight = np.asarray(self.base_weight, dtype=np.float64)
        self.A = np.asarray(self.A, dtype=np.float64)
        self.B = np.asarray(self.B, dtype=np.float64)
        d_out, d_in = self.base_weight.shape
        r = self.A.shape[0]
        if r < 1:
            raise DataError("LoRA rank must be >= 1")
        if self.A.shape != (r, d_in) or self.B.shape != (d_out, r):
            raise DataError(
                f"LoRA shapes disagree: W0 {self.base_weight.shape}, A {self.A.shape}, B {self.B.shape}"
            )

    @classmethod
    def init(cls, base_weight, rank, alpha=None, rng=None, a_scale=None):
        """Random ``A``, zero ``B``, so the adapter starts as an exact no-op."""
        rng = np.random.default_rng(rng)
        base_weight = np.asarray(base_weight, dtype=np.float64)
        d_out, d_in = base_weight.shape
        a_scale = 1.0 / np.sqrt(d_in) if a_scale is None else a_scale
        A = rng.standard_normal((rank, d_in)) * a_scale
        B = np.zeros((d_out, rank))
        return cls(base_weight, A, B, float(rank if alpha is None else alpha))

    @property
    def rank(self) -> int:
        return self.A.shape[0]

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    def merged_weight(self):
        return self.base_weight + self.scale * (self.B @ self.A)


def lora_forward(layer: LoRALayer, x):
    """Apply the adapted layer to a vector or a batch of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.base_weight.shape[1]:
        raise DataError(f"input width {x.shape[-1]} != layer d_in {layer.base_weight.shape[1]}")
    base = x @ layer.base_weight.T
    return base + layer.scale * ((x @ layer.A.T) @ layer.B.T)
