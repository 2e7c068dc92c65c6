"""Full risk predictor: three encoders, fusion, and ablation variants.

The temporal encoder (decay-aware GRU) yields h_D, the constant encoder
(two KAN layers) yields h_s, and attention over graph-convolved diagnosis
embeddings yields h_icd.  Their concatenation passes through dropout (train
mode only) and a single-layer KAN head to a sigmoid probability.  Ablation
variants swap the temporal cell for a plain GRU and/or all KAN blocks for
parameter-budget-matched two-layer perceptrons while keeping the exact
forward signature.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict, replace

import numpy as np

from . import autodiff as ad
from .attention import Attention
from .autodiff import NonFiniteError, ParamStore, Tensor
from .concept_graph import ConceptGraph, gcn_forward, lookup_embeddings
from .grud import GruCell, GrudCell
from .kan import KanLayer

__all__ = ["ModelConfig", "MlpBlock", "RiskModel", "bce_loss", "make_ablation", "VARIANTS"]

VARIANTS = ("full", "no_grud", "no_kan")


@dataclass
class ModelConfig:
    """Architecture hyperparameters (data dimensions arrive separately)."""

    hidden_size: int = 64
    gcn_dim1: int = 64
    gcn_dim2: int = 32
    kan_hidden: int = 32
    kan_out: int = 32
    kan_grid_size: int = 8
    kan_spline_order: int = 3
    kan_grid_range: float = 3.0
    kan_base_activation: bool = True
    dropout: float = 0.2
    mask_injection: bool = True
    attention_projections: bool = False
    temporal_cell: str = "grud"
    encoder: str = "kan"

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.temporal_cell not in ("grud", "gru"):
            raise ValueError(f"unknown temporal cell {self.temporal_cell!r}")
        if self.encoder not in ("kan", "mlp"):
            raise ValueError(f"unknown encoder {self.encoder!r}")

    def for_variant(self, variant: str) -> "ModelConfig":
        if variant == "full":
            return replace(self)
        if variant == "no_grud":
            return replace(self, temporal_cell="gru")
        if variant == "no_kan":
            return replace(self, encoder="mlp")
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


class MlpBlock:
    """Two affine layers around one fixed SiLU nonlinearity."""

    def __init__(self, store, prefix, n_in, n_hidden, n_out, rng):
        def glorot(a, b):
            limit = np.sqrt(6.0 / (a + b))
            return rng.uniform(-limit, limit, size=(a, b))

        self.w1 = store.add(f"{prefix}.w1", glorot(n_in, n_hidden))
        self.b1 = store.add(f"{prefix}.b1", np.zeros(n_hidden))
        self.w2 = store.add(f"{prefix}.w2", glorot(n_hidden, n_out))
        self.b2 = store.add(f"{prefix}.b2", np.zeros(n_out))

    def forward(self, x: Tensor) -> Tensor:
        h = ad.silu(ad.add(ad.matmul(x, self.w1), self.b1))
        return ad.add(ad.matmul(h, self.w2), self.b2)

    def n_params(self) -> int:
        return sum(t.data.size for t in (self.w1, self.b1, self.w2, self.b2))


def _matched_width(target_params: int, n_in: int, n_out: int) -> int:
    """Hidden width giving a two-layer MLP about target_params parameters."""
    return max(1, int(round((target_params - n_out) / (n_in + n_out + 1))))


class RiskModel:
    """One trainable predictor over a fixed schema and concept graph."""

    def __init__(
        self,
        config: ModelConfig,
        n_temporal: int,
        n_constant: int,
        graph: ConceptGraph,
        rng: np.random.Generator,
    ):
        self.config = config
        self.n_temporal = n_temporal
        self.n_constant = n_constant
        self.graph = graph
        self.store = ParamStore()
        store, c = self.store, config

        if c.temporal_cell == "grud":
            self.temporal = GrudCell(
                store, "temporal", n_temporal, c.hidden_size, rng,
                mask_injection=c.mask_injection,
            )
        else:
            self.temporal = GruCell(store, "temporal", n_temporal, c.hidden_size, rng)

        kan_kw = dict(
            grid_size=c.kan_grid_size,
            spline_order=c.kan_spline_order,
            grid_range=c.kan_grid_range,
            base_activation=c.kan_base_activation,
        )
        self.fused_dim = c.hidden_size + c.kan_out + c.gcn_dim2
        if c.encoder == "kan":
            self.constant_encoder = [
                KanLayer(store, "const0", n_constant, c.kan_hidden, rng, **kan_kw),
                KanLayer(store, "const1", c.kan_hidden, c.kan_out, rng, **kan_kw),
            ]
            self.head = KanLayer(store, "head", self.fused_dim, 1, rng, **kan_kw)
        else:
            per_edge = c.kan_grid_size + c.kan_spline_order + 2
            enc_budget = per_edge * (n_constant * c.kan_hidden + c.kan_hidden * c.kan_out)
            head_budget = per_edge * self.fused_dim
            self.constant_encoder = [
                MlpBlock(
                    store, "const_mlp", n_constant,
                    _matched_width(enc_budget, n_constant, c.kan_out), c.kan_out, rng,
                )
            ]
            self.head = MlpBlock(
                store, "head_mlp", self.fused_dim,
                _matched_width(head_budget, self.fused_dim, 1), 1, rng,
            )

        limit0 = np.sqrt(6.0 / (graph.n_nodes + c.gcn_dim1))
        limit1 = np.sqrt(6.0 / (c.gcn_dim1 + c.gcn_dim2))
        self.gcn_w0 = store.add(
            "gcn.w0", rng.uniform(-limit0, limit0, (graph.n_nodes, c.gcn_dim1))
        )
        self.gcn_w1 = store.add("gcn.w1", rng.uniform(-limit1, limit1, (c.gcn_dim1, c.gcn_dim2)))
        self.attention = Attention(
            store, "attention", c.gcn_dim2, rng, learned_projections=c.attention_projections
        )

    # -- forward -----------------------------------------------------------

    def node_embeddings(self) -> Tensor:
        return gcn_forward(self.graph, self.gcn_w0, self.gcn_w1)

    def forward_batch(self, batch: dict, mode: str = "eval", rng=None) -> Tensor:
        """Probabilities (batch, 1) for prepared arrays.

        `batch` carries values/mask/delta (B, T, N), standardized constants
        (B, M), empirical_mean (N,), and code_indices: a list of
        (icd_idx, ccs_idx) pairs, one per episode.
        """
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        h_temporal = self.temporal.encode_sequence(
            batch["values"], batch["mask"], batch["delta"], batch["empirical_mean"]
        )
        const = Tensor(np.atleast_2d(batch["constants"]))
        h_const = const
        for layer in self.constant_encoder:
            h_const = layer.forward(h_const)

        embeddings = self.node_embeddings()
        diag_rows = []
        for icd_idx, ccs_idx in batch["code_indices"]:
            if len(icd_idx) == 0:
                diag_rows.append(Tensor(np.zeros((1, self.config.gcn_dim2))))
            else:
                pooled = self.attention(
                    ad.take_rows(embeddings, icd_idx), ad.take_rows(embeddings, ccs_idx)
                )
                diag_rows.append(ad.reshape(pooled, (1, self.config.gcn_dim2)))
        h_diag = ad.concat(diag_rows, axis=0) if len(diag_rows) > 1 else diag_rows[0]

        fused = ad.concat([h_temporal, h_const, h_diag], axis=1)
        if mode == "train" and self.config.dropout > 0.0:
            if rng is None:
                raise ValueError("train mode with dropout needs an rng")
            keep = 1.0 - self.config.dropout
            mask = (rng.random(fused.shape) < keep) / keep
            fused = ad.mul(fused, Tensor(mask))

        prob = ad.sigmoid(self.head.forward(fused))
        if not np.all(np.isfinite(prob.data)):
            raise NonFiniteError("model produced a non-finite probability")
        return prob

    def forward(self, temporal, constant_values, codes, mode: str = "eval", rng=None) -> Tensor:
        """Single-episode probability from a TemporalTensor (empirical_mean set),
        an encoded constant vector, and the episode's code list."""
        if temporal.empirical_mean is None:
            raise ValueError("TemporalTensor needs empirical_mean before the forward pass")
        icd_idx, ccs_idx = self.graph.episode_indices(codes)
        batch = {
            "values": temporal.values[None],
            "mask": temporal.mask[None],
            "delta": temporal.delta[None],
            "constants": np.asarray(constant_values, dtype=np.float64)[None],
            "empirical_mean": temporal.empirical_mean,
            "code_indices": [(icd_idx, ccs_idx)],
        }
        return self.forward_batch(batch, mode=mode, rng=rng)

    def arch_dict(self) -> dict:
        return asdict(self.config)


def bce_loss(probabilities: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy with probabilities clamped to [1e-7, 1-1e-7]."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("labels must be 0 or 1")
    p = ad.clip(probabilities, 1e-7, 1.0 - 1e-7)
    per_sample = ad.add(
        ad.mul(Tensor(y), ad.log(p)),
        ad.mul(Tensor(1.0 - y), ad.log(ad.sub(1.0, p))),
    )
    return ad.mul(ad.tsum(per_sample), -1.0 / y.shape[0])


def make_ablation(base: RiskModel, which: str, rng: np.random.Generator) -> RiskModel:
    """Variant model sharing every parameter the variant still has.

    `no_grud` swaps the temporal cell for a plain GRU (same gate weights,
    decay and mask-injection parameters dropped); `no_kan` swaps both KAN
    encoders and the head for fresh budget-matched MLPs.
    """
    if which not in ("no_grud", "no_kan"):
        raise ValueError(f"unknown ablation {which!r}")
    variant = base.config.for_variant(which)
    out = RiskModel(variant, base.n_temporal, base.n_constant, base.graph, rng)
    for name, tensor in out.store.items():
        if name in base.store and base.store[name].data.shape == tensor.data.shape:
            tensor.data = base.store[name].data.copy()
    return out
