"""Command-line pipeline: generate, preprocess, train, eval, sweep.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure.  Every output directory receives exactly one manifest.json naming
the tool version, seed, config hash, data schema hash, and artifacts;
timestamps appear only there, so repeated runs with one seed are
byte-identical elsewhere.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__
from . import metrics as met
from . import preprocess as pp
from . import synth as synth_mod
from . import trainer as tr
from .autodiff import NonFiniteError
from .concept_graph import MappingError, load_mapping, save_mapping
from .config import ConfigError, load_run_config
from .model import VARIANTS

__all__ = ["main"]

DEFAULT_LR_GRID = (0.0001, 0.001, 0.01, 0.1)
DEFAULT_BATCH_GRID = (16, 32, 64, 128)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _hash_file(path) -> str:
    if path is None or not os.path.exists(path):
        return "none"
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()[:16]


def _write_manifest(out_dir, *, seed, config_path, schema_hash, artifacts):
    manifest = {
        "tool_version": __version__,
        "seed": seed,
        "config_hash": _hash_file(config_path),
        "data_schema_hash": schema_hash,
        "artifacts": sorted(artifacts),
        "created_at": datetime.now(timezone.utc).isoformat(),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def _overrides(args, single_cell: bool = True) -> dict:
    """Flags -> config overrides; sweep passes single_cell=False because its
    --lr/--batch flags are grid axes, not scalar fields."""
    over = {}
    if getattr(args, "seed", None) is not None:
        over["train.seed"] = args.seed
        over["synth.seed"] = args.seed
    if single_cell and getattr(args, "lr", None) is not None:
        over["train.learning_rate"] = args.lr
    if single_cell and getattr(args, "batch", None) is not None:
        over["train.batch_size"] = args.batch
    if getattr(args, "folds", None) is not None:
        over["train.folds"] = args.folds
    if getattr(args, "threshold_policy", None) is not None:
        over["train.threshold_policy"] = args.threshold_policy
    return over


def _load_episodes(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"data file not found: {path}")
    return pp.load_episodes(path)


def _find_mapping(args):
    path = args.mapping or os.path.join(os.path.dirname(os.path.abspath(args.data)), "mapping.tsv")
    if not os.path.exists(path):
        raise FileNotFoundError(
            f"code mapping not found: {path} (pass --mapping or keep mapping.tsv beside the data)"
        )
    return load_mapping(path)


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    rc = load_run_config(args.config, _overrides(args))
    episodes, truth = synth_mod.generate(rc.synth)
    os.makedirs(args.out, exist_ok=True)
    data_path = os.path.join(args.out, "episodes.jsonl")
    pp.save_episodes(episodes, data_path)
    with open(os.path.join(args.out, "groundtruth.json"), "w") as fh:
        json.dump(truth.as_dict(), fh, indent=1, sort_keys=True)
    save_mapping(truth.mapping, os.path.join(args.out, "mapping.tsv"))

    feats = pp.derive_temporal_features(episodes)
    schema = pp.derive_constant_schema(episodes)
    _write_manifest(
        args.out,
        seed=rc.synth.seed,
        config_path=args.config,
        schema_hash=pp.schema_hash(feats, schema),
        artifacts=["episodes.jsonl", "groundtruth.json", "mapping.tsv"],
    )
    rate = float(np.mean([ep.label for ep in episodes]))
    print(
        f"generated {len(episodes)} episodes (positive rate {rate:.3f}, "
        f"Bayes AUROC {truth.bayes_auroc:.4f}) in {args.out}"
    )
    return 0


def cmd_preprocess(args) -> int:
    episodes = _load_episodes(args.data)
    manifest = pp.write_bundle(args.out, episodes)
    _write_manifest(
        args.out,
        seed=None,
        config_path=None,
        schema_hash=manifest["schema_hash"],
        artifacts=["tensors.npz", "manifest.json"],
    )
    print(f"wrote tensor bundle for {len(episodes)} episodes to {args.out}")
    return 0


def cmd_train(args) -> int:
    rc = load_run_config(args.config, _overrides(args))
    episodes = _load_episodes(args.data)
    mapping = _find_mapping(args)
    result = tr.cross_validate(episodes, mapping, rc.model, rc.train, variant=args.variant)

    os.makedirs(args.out, exist_ok=True)
    artifacts = ["report.json", "summary.txt"]
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        json.dump(result.as_dict(), fh, indent=1, sort_keys=True)
    for fr in result.fold_results:
        name = f"checkpoint_fold{fr.fold_index}.json"
        tr.save_checkpoint(
            os.path.join(args.out, name),
            fr.model,
            fr.stats,
            result.schema,
            {
                "variant": args.variant,
                "seed": rc.train.seed,
                "fold_index": fr.fold_index,
                "best_epoch": fr.best_epoch,
                "train": result.train,
            },
        )
        artifacts.append(name)

    table = met.render_table(
        [(f"fold {r.fold_index}", rep) for r, rep in zip(result.fold_results, result.fold_reports)]
    )
    agg = result.aggregate
    summary = (
        f"variant: {args.variant}\n{table}\n\n"
        + "\n".join(
            f"{name}: {v['mean']:.4f} +/- {v['std']:.4f}" for name, v in sorted(agg.items())
        )
        + "\n"
    )
    with open(os.path.join(args.out, "summary.txt"), "w") as fh:
        fh.write(summary)
    _write_manifest(
        args.out,
        seed=rc.train.seed,
        config_path=args.config,
        schema_hash=result.schema["schema_hash"],
        artifacts=artifacts,
    )
    print(summary)
    return 0


def cmd_eval(args) -> int:
    if not os.path.exists(args.checkpoint):
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    params, manifest = tr.load_checkpoint(args.checkpoint)
    episodes = _load_episodes(args.data)

    feats = pp.derive_temporal_features(episodes)
    schema = pp.derive_constant_schema(episodes)
    got = pp.schema_hash(feats, schema)
    expected = manifest["schema"]["schema_hash"]
    if got != expected:
        raise tr.SchemaMismatchError(
            f"data schema hash {got} does not match checkpoint schema {expected}; "
            "evaluate on data with the training-time feature set"
        )

    model, stats = tr.rebuild_model(params, manifest)
    feats = tuple(manifest["schema"]["temporal_features"])
    cs = manifest["schema"]["constant_schema"]
    schema = pp.ConstantSchema(
        continuous=tuple(cs["continuous"]),
        categorical=tuple((n, tuple(v)) for n, v in cs["categorical"]),
    )
    prepared = tr.prepare_episodes(episodes, feats, schema, model.graph)
    items = [prepared[ep.episode_id] for ep in episodes]
    probs, labels, _ = tr.evaluate_model(model, items, stats, batch_size=128)

    policy = args.threshold_policy or "fixed"
    rep = met.report(list(zip(probs, labels.astype(int))), threshold_policy=policy)
    print(met.render_table([(manifest.get("variant", "model"), rep)]))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.json"), "w") as fh:
            json.dump(
                {
                    "report": rep.as_dict(),
                    "threshold_policy": policy,
                    "checkpoint": os.path.basename(args.checkpoint),
                    "predictions": [
                        [float(p), int(y), ep.episode_id]
                        for p, y, ep in zip(probs, labels, episodes)
                    ],
                },
                fh,
                indent=1,
                sort_keys=True,
            )
        _write_manifest(
            args.out,
            seed=manifest.get("seed"),
            config_path=None,
            schema_hash=expected,
            artifacts=["report.json"],
        )
    return 0


def _parse_grid(args):
    lrs, batches = DEFAULT_LR_GRID, DEFAULT_BATCH_GRID
    if args.grid:
        try:
            lr_part, batch_part = args.grid.split("x")
            lrs = tuple(float(v) for v in lr_part.split(","))
            batches = tuple(int(v) for v in batch_part.split(","))
        except ValueError as exc:
            raise ConfigError(f"--grid expects 'LR1,LR2xB1,B2', got {args.grid!r}") from exc
    if args.lr is not None:
        lrs = tuple(float(v) for v in str(args.lr).split(","))
    if args.batch is not None:
        batches = tuple(int(v) for v in str(args.batch).split(","))
    return lrs, batches


def cmd_sweep(args) -> int:
    rc = load_run_config(args.config, _overrides(args, single_cell=False))
    episodes = _load_episodes(args.data)
    mapping = _find_mapping(args)
    lrs, batches = _parse_grid(args)
    rows = tr.sweep(episodes, mapping, rc.model, rc.train, lrs, batches)

    os.makedirs(args.out, exist_ok=True)
    tsv = ["learning_rate\tbatch_size\tauroc_mean\tauroc_std"]
    for row in rows:
        tsv.append(
            f"{row['learning_rate']:g}\t{row['batch_size']}"
            f"\t{row['auroc_mean']:.4f}\t{row['auroc_std']:.4f}"
        )
    with open(os.path.join(args.out, "sweep.tsv"), "w") as fh:
        fh.write("\n".join(tsv) + "\n")
    with open(os.path.join(args.out, "sweep.json"), "w") as fh:
        json.dump(rows, fh, indent=1, sort_keys=True)

    feats = pp.derive_temporal_features(episodes)
    schema = pp.derive_constant_schema(episodes)
    _write_manifest(
        args.out,
        seed=rc.train.seed,
        config_path=args.config,
        schema_hash=pp.schema_hash(feats, schema),
        artifacts=["sweep.tsv", "sweep.json"],
    )
    print("\n".join(tsv))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="icurisk", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True, out=True):
        p.add_argument("--config", default=None, help="run config JSON file")
        p.add_argument("--seed", type=int, default=None)
        if data:
            p.add_argument("--data", required=True, help="episodes.jsonl")
            p.add_argument("--mapping", default=None, help="code mapping TSV")
        if out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("generate", help="write a synthetic cohort")
    common(p, data=False)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("preprocess", help="serialize tensors and schema manifest")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("train", help="cross-validated training")
    common(p)
    p.add_argument("--variant", choices=VARIANTS, default="full")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--threshold-policy", choices=("fixed", "youden"), default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a cohort")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--threshold-policy", choices=("fixed", "youden"), default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="learning-rate x batch-size grid")
    common(p)
    p.add_argument("--lr", default=None, help="comma list of learning rates")
    p.add_argument("--batch", default=None, help="comma list of batch sizes")
    p.add_argument("--grid", default=None, help="'LR1,LR2xB1,B2' shorthand")
    p.add_argument("--threshold-policy", choices=("fixed", "youden"), default=None)
    p.add_argument("--folds", type=int, default=None)
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NonFiniteError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (tr.SchemaMismatchError, MappingError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
