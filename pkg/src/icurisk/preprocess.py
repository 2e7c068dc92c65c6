"""Episode records -> hourly temporal tensors and encoded constant vectors.

An episode carries raw timestamped events from the 24 hours before ICU
admission.  Binning samples each feature at 1-hour intervals (mean when a
bin holds several measurements), and missingness is made explicit through
an observation mask and a time-since-last-observation matrix built by a
piecewise recurrence.  Constant data becomes a fixed-layout vector:
continuous features pass through (missing -> 0), categorical features
expand to one-hot blocks.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "N_BINS",
    "EpisodeRecord",
    "TemporalTensor",
    "ConstantVector",
    "ConstantSchema",
    "bin_events",
    "compute_delta",
    "fit_empirical_means",
    "encode_constants",
    "make_folds",
    "oversample",
    "derive_temporal_features",
    "derive_constant_schema",
    "schema_hash",
    "save_episodes",
    "load_episodes",
    "write_bundle",
    "read_bundle",
]

N_BINS = 24


@dataclass
class EpisodeRecord:
    """One ICU stay: constants, raw events, diagnosis codes, outcome label."""

    episode_id: str
    constant_continuous: dict
    constant_categorical: dict
    events: list  # (feature_name, offset_hours in [0, 24), value)
    icd_codes: list
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")


@dataclass
class TemporalTensor:
    """The (values, mask, delta) triple for one episode, each (T, N)."""

    values: np.ndarray
    mask: np.ndarray
    delta: np.ndarray
    feature_names: tuple
    empirical_mean: np.ndarray | None = None


@dataclass
class ConstantSchema:
    continuous: tuple  # feature names, fixed order
    categorical: tuple  # (feature name, vocabulary tuple) pairs, fixed order

    def width(self) -> int:
        return len(self.continuous) + sum(len(v) for _, v in self.categorical)

    def layout(self) -> list:
        """(kind, name, offset, length) per block, in vector order."""
        out, off = [], 0
        for name in self.continuous:
            out.append(("continuous", name, off, 1))
            off += 1
        for name, vocab in self.categorical:
            out.append(("onehot", name, off, len(vocab)))
            off += len(vocab)
        return out


@dataclass
class ConstantVector:
    values: np.ndarray
    schema: ConstantSchema
    unknown_categories: int = 0


def bin_events(episode: EpisodeRecord, feature_names, n_bins: int = N_BINS) -> TemporalTensor:
    """Aggregate raw events into hourly bins; bin t covers [t, t+1) hours."""
    names = tuple(feature_names)
    if not names:
        raise ValueError("temporal feature list is empty")
    index = {name: i for i, name in enumerate(names)}

    sums = np.zeros((n_bins, len(names)))
    counts = np.zeros((n_bins, len(names)))
    for name, offset, value in episode.events:
        if name not in index:
            raise ValueError(f"episode {episode.episode_id}: unknown temporal feature {name!r}")
        if not (0.0 <= offset < n_bins):
            raise ValueError(
                f"episode {episode.episode_id}: event offset {offset} outside [0, {n_bins})"
            )
        if not np.isfinite(value):
            raise ValueError(f"episode {episode.episode_id}: non-finite value for {name!r}")
        t = int(offset)
        sums[t, index[name]] += value
        counts[t, index[name]] += 1.0

    mask = (counts > 0).astype(np.float64)
    values = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return TemporalTensor(values, mask, compute_delta(mask), names)


def compute_delta(mask: np.ndarray) -> np.ndarray:
    """Hours since the last observation, by the piecewise recurrence.

    delta[0] = 0; for t >= 1, delta[t] = 1 when the feature was observed at
    t-1, otherwise delta[t-1] + 1.
    """
    delta = np.zeros_like(mask, dtype=np.float64)
    for t in range(1, mask.shape[0]):
        delta[t] = np.where(mask[t - 1] > 0, 1.0, delta[t - 1] + 1.0)
    return delta


def fit_empirical_means(tensors) -> np.ndarray:
    """Per-feature mean over observed entries only; 0 for never-observed features.

    Call this on training-fold tensors exclusively: the result feeds the
    decay imputation, and validation data must not leak into it.
    """
    tensors = list(tensors)
    if not tensors:
        raise ValueError("fit_empirical_means needs at least one tensor")
    total = np.zeros(tensors[0].values.shape[1])
    count = np.zeros_like(total)
    for tt in tensors:
        total += (tt.values * tt.mask).sum(axis=0)
        count += tt.mask.sum(axis=0)
    return np.divide(total, count, out=np.zeros_like(total), where=count > 0)


def encode_constants(episode: EpisodeRecord, schema: ConstantSchema) -> ConstantVector:
    """Fixed-layout vector: continuous passthrough (missing -> 0), one-hot blocks.

    A categorical value outside the schema vocabulary leaves its block all
    zero and is tallied in `unknown_categories`.
    """
    out = np.zeros(schema.width())
    unknown = 0
    for i, name in enumerate(schema.continuous):
        value = episode.constant_continuous.get(name)
        if value is not None:
            out[i] = float(value)
    off = len(schema.continuous)
    for name, vocab in schema.categorical:
        value = episode.constant_categorical.get(name)
        if value is not None:
            if value in vocab:
                out[off + vocab.index(value)] = 1.0
            else:
                unknown += 1
        off += len(vocab)
    return ConstantVector(out, schema, unknown)


def make_folds(episodes, k: int = 5, seed: int = 0):
    """Label-stratified k-fold split; returns [(train_ids, val_ids), ...].

    Validation subsets are mutually exclusive, cover every episode, and
    each holds n_c // k or n_c // k + 1 episodes of class c.
    """
    if k < 2:
        raise ValueError("need k >= 2 folds")
    by_class = {0: [], 1: []}
    for ep in episodes:
        by_class[ep.label].append(ep.episode_id)
    for label, ids in by_class.items():
        if len(ids) < k:
            raise ValueError(f"class {label} has {len(ids)} episodes, fewer than k={k}")

    rng = np.random.default_rng(seed)
    buckets = [[] for _ in range(k)]
    for label in (0, 1):
        ids = list(by_class[label])
        rng.shuffle(ids)
        for i, eid in enumerate(ids):
            buckets[i % k].append(eid)

    folds = []
    for f in range(k):
        val = list(buckets[f])
        train = [eid for g in range(k) if g != f for eid in buckets[g]]
        folds.append((train, val))
    return folds


def oversample(train_ids, labels: dict, target_ratio: float = 1.0, seed: int = 0):
    """Duplicate minority ids (uniform, with replacement) up to minority:majority
    = target_ratio (within one sample).  Majority ids are untouched; never
    apply this to validation or test sets.
    """
    if not 0.0 < target_ratio <= 1.0:
        raise ValueError(f"target_ratio must be in (0, 1], got {target_ratio}")
    pos = [i for i in train_ids if labels[i] == 1]
    neg = [i for i in train_ids if labels[i] == 0]
    if not pos or not neg:
        raise ValueError("oversample needs both classes present")
    minority, majority = (pos, neg) if len(pos) <= len(neg) else (neg, pos)

    target = int(target_ratio * len(majority) + 0.5)
    if len(minority) >= target:
        return list(train_ids)
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(minority), size=target - len(minority))
    return list(train_ids) + [minority[i] for i in picks]


# ---------------------------------------------------------------------------
# schemas derived from a cohort


def derive_temporal_features(episodes) -> tuple:
    names = set()
    for ep in episodes:
        for name, _, _ in ep.events:
            names.add(name)
    return tuple(sorted(names))


def derive_constant_schema(episodes) -> ConstantSchema:
    continuous, categorical = set(), {}
    for ep in episodes:
        continuous.update(ep.constant_continuous)
        for name, value in ep.constant_categorical.items():
            categorical.setdefault(name, set()).add(value)
    return ConstantSchema(
        continuous=tuple(sorted(continuous)),
        categorical=tuple((n, tuple(sorted(v))) for n, v in sorted(categorical.items())),
    )


def schema_hash(temporal_features, schema: ConstantSchema) -> str:
    blob = json.dumps(
        {
            "temporal": list(temporal_features),
            "continuous": list(schema.continuous),
            "categorical": [[n, list(v)] for n, v in schema.categorical],
        },
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# episode files (line-delimited) and tensor bundles


def save_episodes(episodes, path) -> None:
    """One JSON object per line: id, label, constants, events, codes."""
    with open(path, "w") as fh:
        for ep in episodes:
            fh.write(
                json.dumps(
                    {
                        "id": ep.episode_id,
                        "label": ep.label,
                        "constants": {
                            "continuous": ep.constant_continuous,
                            "categorical": ep.constant_categorical,
                        },
                        "events": [[n, o, v] for n, o, v in ep.events],
                        "codes": list(ep.icd_codes),
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_episodes(path):
    episodes = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                episodes.append(
                    EpisodeRecord(
                        episode_id=str(rec["id"]),
                        constant_continuous=dict(rec["constants"].get("continuous", {})),
                        constant_categorical=dict(rec["constants"].get("categorical", {})),
                        events=[(e[0], float(e[1]), float(e[2])) for e in rec["events"]],
                        icd_codes=[str(c) for c in rec.get("codes", [])],
                        label=int(rec["label"]),
                    )
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad episode record ({exc})") from exc
    if not episodes:
        raise ValueError(f"{path}: no episode records found")
    return episodes


def write_bundle(out_dir, episodes, temporal_features=None, schema: ConstantSchema | None = None):
    """Serialize a cohort as dense arrays plus a schema manifest.

    The manifest's empirical means describe this bundle only; training
    always refits means on its own training folds.
    """
    import os

    os.makedirs(out_dir, exist_ok=True)
    temporal_features = temporal_features or derive_temporal_features(episodes)
    schema = schema or derive_constant_schema(episodes)

    tensors = [bin_events(ep, temporal_features) for ep in episodes]
    consts = [encode_constants(ep, schema) for ep in episodes]
    np.savez(
        os.path.join(out_dir, "tensors.npz"),
        values=np.stack([t.values for t in tensors]),
        mask=np.stack([t.mask for t in tensors]),
        delta=np.stack([t.delta for t in tensors]),
        constants=np.stack([c.values for c in consts]),
        labels=np.array([ep.label for ep in episodes], dtype=np.int64),
    )
    manifest = {
        "schema_hash": schema_hash(temporal_features, schema),
        "temporal_features": list(temporal_features),
        "constant_schema": {
            "continuous": list(schema.continuous),
            "categorical": [[n, list(v)] for n, v in schema.categorical],
        },
        "empirical_means": fit_empirical_means(tensors).tolist(),
        "episode_ids": [ep.episode_id for ep in episodes],
        "codes": {ep.episode_id: list(ep.icd_codes) for ep in episodes},
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


def read_bundle(bundle_dir):
    import os

    with open(os.path.join(bundle_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    arrays = dict(np.load(os.path.join(bundle_dir, "tensors.npz")))
    return arrays, manifest
