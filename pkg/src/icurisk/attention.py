"""Scaled dot-product attention pooling diagnosis embeddings.

ICD leaf embeddings query their CCS ancestor embeddings (keys = values);
the per-query outputs are mean-pooled into one diagnostic feature vector,
so the result is order-invariant in both code lists and safe for episodes
without any diagnosis codes (zero vector).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor

__all__ = ["AttentionConfig", "attend", "Attention"]


@dataclass
class AttentionConfig:
    d_k: int
    pooling: str = "mean"

    def __post_init__(self):
        if self.d_k <= 0:
            raise ValueError("key dimension must be positive")
        if self.pooling != "mean":
            raise ValueError(f"unsupported pooling {self.pooling!r}")


def attend(x_icd: Tensor, x_ccs: Tensor) -> Tensor:
    """softmax(Q K^T / sqrt(d_k)) V with Q = x_icd and K = V = x_ccs,
    mean-pooled over query rows into a single vector."""
    x_icd, x_ccs = ad.as_tensor(x_icd), ad.as_tensor(x_ccs)
    n_query = x_icd.shape[0]
    if n_query == 0:
        return Tensor(np.zeros(x_icd.shape[1]))
    if x_ccs.shape[0] == 0:
        raise ValueError("attention needs at least one key/value row")
    if x_icd.shape[1] != x_ccs.shape[1]:
        raise ValueError(
            f"query and key feature sizes differ: {x_icd.shape[1]} vs {x_ccs.shape[1]}"
        )
    d_k = x_icd.shape[1]
    logits = ad.mul(ad.matmul(x_icd, ad.transpose(x_ccs)), 1.0 / np.sqrt(d_k))
    weights = ad.softmax_rows(logits)
    per_query = ad.matmul(weights, x_ccs)
    return ad.mul(ad.tsum(per_query, axis=0), 1.0 / n_query)


class Attention:
    """attend() plus optional learned query/key/value projections."""

    def __init__(
        self,
        store: ParamStore,
        prefix: str,
        d_k: int,
        rng: np.random.Generator,
        learned_projections: bool = False,
    ):
        self.config = AttentionConfig(d_k=d_k)
        self.projections = None
        if learned_projections:
            limit = np.sqrt(3.0 / d_k)
            self.projections = {
                name: store.add(f"{prefix}.W_{name}", rng.uniform(-limit, limit, (d_k, d_k)))
                for name in ("q", "k", "v")
            }

    def __call__(self, x_icd: Tensor, x_ccs: Tensor) -> Tensor:
        if self.projections is not None and x_icd.shape[0] > 0:
            q = ad.matmul(x_icd, self.projections["q"])
            k = ad.matmul(x_ccs, self.projections["k"])
            v = ad.matmul(x_ccs, self.projections["v"])
            # same pooled form, with keys and values projected separately
            logits = ad.mul(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(self.config.d_k))
            pooled = ad.matmul(ad.softmax_rows(logits), v)
            return ad.mul(ad.tsum(pooled, axis=0), 1.0 / x_icd.shape[0])
        return attend(x_icd, x_ccs)
