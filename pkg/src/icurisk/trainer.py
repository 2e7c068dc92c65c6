"""Optimization protocol: Adam with per-epoch learning-rate decay,
oversampled mini-batches, early stopping on validation loss, and
label-stratified 5-fold cross-validation.

All randomness descends from one master seed: each fold derives its own
streams (parameter init, oversampling, batch order, dropout) from
SeedSequence([seed, fold_index]), so runs are bit-reproducible and folds
are independent.  Empirical means and standardization statistics are fit
on the training split of each fold only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field, replace

import numpy as np

from . import autodiff as ad
from . import metrics as met
from .autodiff import NonFiniteError
from .concept_graph import CodeMapping, ConceptGraph, build_graph
from .model import ModelConfig, RiskModel, bce_loss
from .preprocess import (
    ConstantSchema,
    bin_events,
    derive_constant_schema,
    derive_temporal_features,
    encode_constants,
    fit_empirical_means,
    make_folds,
    oversample,
    schema_hash,
)

__all__ = [
    "TrainConfig",
    "EarlyStopper",
    "Adam",
    "PreparedEpisode",
    "FoldStats",
    "FoldResult",
    "CvResult",
    "prepare_episodes",
    "fit_fold_stats",
    "train_fold",
    "cross_validate",
    "sweep",
    "save_checkpoint",
    "load_checkpoint",
    "rebuild_model",
    "SchemaMismatchError",
]

CHECKPOINT_FORMAT = "icurisk-checkpoint"
CHECKPOINT_VERSION = 1


class SchemaMismatchError(ValueError):
    """Evaluation data does not match the checkpoint's training-time schema."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    lr_decay: float = 0.95
    batch_size: int = 64
    max_epochs: int = 100
    early_stop_patience: int = 10
    oversample_ratio: float = 1.0
    folds: int = 5
    seed: int = 0
    threshold_policy: str = "fixed"
    threshold: float = 0.5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must be in (0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.threshold_policy not in ("fixed", "youden"):
            raise ValueError(f"unknown threshold_policy {self.threshold_policy!r}")


class EarlyStopper:
    """Halt after `patience` epochs without a strict validation-loss improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = np.inf
        self.best_epoch = -1
        self.since_best = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record one epoch; returns True when the epoch improved the best loss."""
        if val_loss < self.best_loss:
            self.best_loss, self.best_epoch, self.since_best = val_loss, epoch, 0
            return True
        self.since_best += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.since_best >= self.patience


class Adam:
    """Standard Adam with bias correction; moments persist across steps."""

    def __init__(self, store, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in store.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in store.items()}

    def step(self, lr: float):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.store.items():
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------------------
# episode preparation and per-fold statistics


@dataclass
class PreparedEpisode:
    episode_id: str
    values: np.ndarray  # (T, N)
    mask: np.ndarray
    delta: np.ndarray
    constants: np.ndarray  # (M,) raw, unstandardized
    icd_idx: np.ndarray
    ccs_idx: np.ndarray
    label: int


def prepare_episodes(episodes, temporal_features, schema: ConstantSchema, graph: ConceptGraph):
    """Bin, encode, and index every episode once; folds reuse the result."""
    prepared = {}
    for ep in episodes:
        tt = bin_events(ep, temporal_features)
        cv = encode_constants(ep, schema)
        codes = [c for c in ep.icd_codes if c in graph.chains]
        icd_idx, ccs_idx = graph.episode_indices(codes)
        prepared[ep.episode_id] = PreparedEpisode(
            episode_id=ep.episode_id,
            values=tt.values,
            mask=tt.mask,
            delta=tt.delta,
            constants=cv.values,
            icd_idx=icd_idx,
            ccs_idx=ccs_idx,
            label=ep.label,
        )
    return prepared


@dataclass
class FoldStats:
    """Training-split statistics: decay-imputation means and constant scaling."""

    empirical_mean: np.ndarray  # (N,) per temporal feature, observed entries only
    const_center: np.ndarray  # (M,) zero outside continuous slots
    const_scale: np.ndarray  # (M,) one outside continuous slots

    def standardize(self, constants: np.ndarray) -> np.ndarray:
        return (constants - self.const_center) / self.const_scale


def fit_fold_stats(train_items, n_continuous: int) -> FoldStats:
    values = np.stack([p.values for p in train_items])
    mask = np.stack([p.mask for p in train_items])
    total = (values * mask).sum(axis=(0, 1))
    count = mask.sum(axis=(0, 1))
    empirical_mean = np.divide(total, count, out=np.zeros_like(total), where=count > 0)

    consts = np.stack([p.constants for p in train_items])
    center = np.zeros(consts.shape[1])
    scale = np.ones(consts.shape[1])
    if n_continuous:
        center[:n_continuous] = consts[:, :n_continuous].mean(axis=0)
        scale[:n_continuous] = np.maximum(consts[:, :n_continuous].std(axis=0), 1e-8)
    return FoldStats(empirical_mean, center, scale)


def make_batch(items, stats: FoldStats) -> dict:
    return {
        "values": np.stack([p.values for p in items]),
        "mask": np.stack([p.mask for p in items]),
        "delta": np.stack([p.delta for p in items]),
        "constants": np.stack([stats.standardize(p.constants) for p in items]),
        "empirical_mean": stats.empirical_mean,
        "code_indices": [(p.icd_idx, p.ccs_idx) for p in items],
    }


def _np_bce(probs: np.ndarray, labels: np.ndarray) -> float:
    p = np.clip(probs.reshape(-1), 1e-7, 1.0 - 1e-7)
    y = labels.reshape(-1)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def evaluate_model(model: RiskModel, items, stats: FoldStats, batch_size: int):
    """Deterministic eval-mode predictions; returns (probs, labels, mean loss)."""
    probs = []
    with ad.no_grad():
        for start in range(0, len(items), batch_size):
            chunk = items[start : start + batch_size]
            out = model.forward_batch(make_batch(chunk, stats), mode="eval")
            probs.append(out.data.reshape(-1))
    probs = np.concatenate(probs)
    labels = np.array([p.label for p in items], dtype=np.float64)
    return probs, labels, _np_bce(probs, labels)


# ---------------------------------------------------------------------------
# fold training


@dataclass
class FoldResult:
    fold_index: int
    best_epoch: int
    val_predictions: list  # (probability, label, episode_id)
    curve: list  # (train_loss, val_loss) per completed epoch
    diverged: bool = False
    epoch_label_counts: list = field(default_factory=list)  # (pos, neg) seen per epoch
    model: object = field(default=None, repr=False)  # best-epoch model, for checkpointing
    stats: object = field(default=None, repr=False)

    def prediction_pairs(self):
        return [(p, y) for p, y, _ in self.val_predictions]


def train_fold(
    prepared: dict,
    train_ids,
    val_ids,
    graph: ConceptGraph,
    arch: ModelConfig,
    cfg: TrainConfig,
    fold_index: int = 0,
    n_continuous: int = 0,
) -> FoldResult:
    """Train one fold to early stopping and predict its validation split.

    Validation data is never oversampled and never touches the fold
    statistics.  A non-finite loss (divergence) stops training; the best
    checkpoint seen so far still produces the predictions.
    """
    if set(train_ids) & set(val_ids):
        raise ValueError("train and validation ids overlap")
    seeds = np.random.SeedSequence([cfg.seed, fold_index]).generate_state(4)
    rng_init = np.random.default_rng(seeds[0])
    stream = np.random.default_rng(seeds[1])

    train_items_all = [prepared[i] for i in train_ids]
    val_items = [prepared[i] for i in val_ids]
    stats = fit_fold_stats(train_items_all, n_continuous)

    labels = {i: prepared[i].label for i in train_ids}
    sampled_ids = oversample(list(train_ids), labels, cfg.oversample_ratio, seed=int(seeds[2]))

    model = RiskModel(
        arch, train_items_all[0].values.shape[1], train_items_all[0].constants.shape[0],
        graph, rng_init,
    )
    optimizer = Adam(model.store, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    best_snapshot = model.store.snapshot()
    stopper = EarlyStopper(cfg.early_stop_patience)
    curve, label_counts = [], []
    diverged = False

    for epoch in range(cfg.max_epochs):
        lr = cfg.learning_rate * cfg.lr_decay**epoch
        order = stream.permutation(len(sampled_ids))
        epoch_losses, n_pos, n_neg = [], 0, 0
        for start in range(0, len(order), cfg.batch_size):
            chunk = [prepared[sampled_ids[k]] for k in order[start : start + cfg.batch_size]]
            y = np.array([p.label for p in chunk], dtype=np.float64)
            n_pos += int(y.sum())
            n_neg += int(len(y) - y.sum())
            try:
                probs = model.forward_batch(make_batch(chunk, stats), mode="train", rng=stream)
                loss = bce_loss(probs, y)
            except NonFiniteError:
                diverged = True
                break
            if not np.isfinite(loss.data):
                diverged = True
                break
            ad.backward(loss, model.store)
            optimizer.step(lr)
            epoch_losses.append(loss.item())
        label_counts.append((n_pos, n_neg))
        if diverged:
            break

        _, _, val_loss = evaluate_model(model, val_items, stats, cfg.batch_size)
        curve.append((float(np.mean(epoch_losses)), val_loss))
        if stopper.update(epoch, val_loss):
            best_snapshot = model.store.snapshot()
        elif stopper.should_stop:
            break

    model.store.load_snapshot(best_snapshot)
    val_probs, _, _ = evaluate_model(model, val_items, stats, cfg.batch_size)
    preds = [
        (float(p), int(item.label), item.episode_id) for p, item in zip(val_probs, val_items)
    ]
    return FoldResult(
        fold_index=fold_index,
        best_epoch=stopper.best_epoch,
        val_predictions=preds,
        curve=curve,
        diverged=diverged,
        epoch_label_counts=label_counts,
        model=model,
        stats=stats,
    )


# ---------------------------------------------------------------------------
# cross-validation and the hyperparameter sweep


AGGREGATED_METRICS = ("sensitivity", "specificity", "precision", "brier", "auroc", "auprc")


@dataclass
class CvResult:
    variant: str
    fold_results: list
    fold_reports: list  # metrics.EvalReport per fold
    aggregate: dict  # metric -> {"mean": float, "std": float}
    schema: dict
    arch: dict
    train: dict

    def mean(self, metric: str) -> float:
        return self.aggregate[metric]["mean"]

    def as_dict(self) -> dict:
        return {
            "variant": self.variant,
            "aggregate": self.aggregate,
            "folds": [
                {
                    "fold": fr.fold_index,
                    "best_epoch": fr.best_epoch,
                    "diverged": fr.diverged,
                    "report": rep.as_dict(),
                    "curve": [[float(a), float(b)] for a, b in fr.curve],
                    "predictions": [[p, y, eid] for p, y, eid in fr.val_predictions],
                }
                for fr, rep in zip(self.fold_results, self.fold_reports)
            ],
            "schema": self.schema,
            "arch": self.arch,
            "train": self.train,
        }


def _aggregate(reports) -> dict:
    out = {}
    for name in AGGREGATED_METRICS:
        vals = np.array([getattr(r, name) for r in reports])
        out[name] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return out


def cross_validate(
    episodes,
    mapping: CodeMapping,
    arch: ModelConfig,
    cfg: TrainConfig,
    variant: str = "full",
) -> CvResult:
    """Stratified k-fold protocol; every episode is predicted exactly once."""
    arch = arch.for_variant(variant)
    temporal_features = derive_temporal_features(episodes)
    schema = derive_constant_schema(episodes)
    codes = {c for ep in episodes for c in ep.icd_codes}
    graph = build_graph(codes, mapping)
    prepared = prepare_episodes(episodes, temporal_features, schema, graph)

    fold_results, fold_reports = [], []
    for fold_index, (train_ids, val_ids) in enumerate(
        make_folds(episodes, cfg.folds, cfg.seed)
    ):
        fr = train_fold(
            prepared, train_ids, val_ids, graph, arch, cfg,
            fold_index=fold_index, n_continuous=len(schema.continuous),
        )
        fold_results.append(fr)
        fold_reports.append(
            met.report(
                fr.prediction_pairs(),
                threshold_policy=cfg.threshold_policy,
                threshold=cfg.threshold,
            )
        )

    return CvResult(
        variant=variant,
        fold_results=fold_results,
        fold_reports=fold_reports,
        aggregate=_aggregate(fold_reports),
        schema={
            "temporal_features": list(temporal_features),
            "constant_schema": {
                "continuous": list(schema.continuous),
                "categorical": [[n, list(v)] for n, v in schema.categorical],
            },
            "schema_hash": schema_hash(temporal_features, schema),
        },
        arch=asdict(arch),
        train=asdict(cfg),
    )


def sweep(episodes, mapping, arch: ModelConfig, cfg: TrainConfig, lr_grid, batch_grid):
    """One cross-validation per (learning rate, batch size) cell."""
    if not lr_grid or not batch_grid:
        raise ValueError("sweep needs a nonempty grid")
    rows = []
    for lr in lr_grid:
        for batch in batch_grid:
            cell_cfg = replace(cfg, learning_rate=float(lr), batch_size=int(batch))
            result = cross_validate(episodes, mapping, arch, cell_cfg)
            rows.append(
                {
                    "learning_rate": float(lr),
                    "batch_size": int(batch),
                    "auroc_mean": result.mean("auroc"),
                    "auroc_std": result.aggregate["auroc"]["std"],
                    "auprc_mean": result.mean("auprc"),
                    "diverged_folds": sum(fr.diverged for fr in result.fold_results),
                }
            )
    return rows


# ---------------------------------------------------------------------------
# checkpoints: parameters + construction manifest


def save_checkpoint(path, model: RiskModel, stats: FoldStats, schema: dict, extra: dict):
    """Parameters plus everything needed to rebuild and safely re-apply."""
    manifest = {
        "arch": model.arch_dict(),
        "n_temporal": model.n_temporal,
        "n_constant": model.n_constant,
        "graph_chains": {icd: list(chain) for icd, chain in model.graph.chains.items()},
        "fold_stats": {
            "empirical_mean": stats.empirical_mean.tolist(),
            "const_center": stats.const_center.tolist(),
            "const_scale": stats.const_scale.tolist(),
        },
        "schema": schema,
    }
    manifest.update(extra)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "manifest": manifest,
        "params": {
            name: {"shape": list(t.data.shape), "data": t.data.ravel().tolist()}
            for name, t in model.store.items()
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a model checkpoint: {path}")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    params = {
        name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in payload["params"].items()
    }
    return params, payload["manifest"]


def rebuild_model(params: dict, manifest: dict):
    """Reconstruct the model and fold statistics stored in a checkpoint."""
    chains = {k: tuple(v) for k, v in manifest["graph_chains"].items()}
    graph = build_graph(sorted(chains), CodeMapping(chains))
    arch = ModelConfig(**manifest["arch"])
    model = RiskModel(
        arch, manifest["n_temporal"], manifest["n_constant"], graph,
        np.random.default_rng(0),
    )
    model.store.load_snapshot(params)
    fs = manifest["fold_stats"]
    stats = FoldStats(
        np.array(fs["empirical_mean"]),
        np.array(fs["const_center"]),
        np.array(fs["const_scale"]),
    )
    return model, stats
