"""Why the decay cell earns its keep: informative missingness.

When how often a vital is measured correlates with how sick the patient is,
the observation pattern itself carries signal.  The decay-aware cell sees
masks and intervals; the plain-GRU ablation sees only mean-imputed values.
This script trains both variants (and the spline-free MLP variant) on such
a cohort and compares them.

Takes a few minutes on one CPU core.

Run:  python3 demos/06_ablations_and_missingness.py
"""

from icurisk import synth
from icurisk.model import ModelConfig
from icurisk.trainer import TrainConfig, cross_validate

cohort_cfg = synth.SynthConfig(
    n_episodes=400,
    positive_rate=0.15,
    missing_rate=0.35,
    informative_missingness=2.5,  # sicker patients are measured less often here
    temporal_effect=0.5,
    constant_effect=0.3,
    code_effect=0.5,
    seed=11,
)
episodes, truth = synth.generate(cohort_cfg)

arch = ModelConfig(
    hidden_size=16, gcn_dim1=16, gcn_dim2=8, kan_hidden=8, kan_out=8, dropout=0.1
)
train_cfg = TrainConfig(
    learning_rate=1e-3, batch_size=32, max_epochs=6, early_stop_patience=3,
    folds=5, seed=2,
)

results = {}
for variant in ("full", "no_grud", "no_kan"):
    results[variant] = cross_validate(episodes, truth.mapping, arch, train_cfg, variant=variant)
    agg = results[variant].aggregate
    print(
        f"{variant:>8}: AUROC {agg['auroc']['mean']:.4f} +/- {agg['auroc']['std']:.4f}   "
        f"AUPRC {agg['auprc']['mean']:.4f}   Brier {agg['brier']['mean']:.4f}"
    )

gap = results["full"].mean("auroc") - results["no_grud"].mean("auroc")
print(f"\ndecay-cell advantage under informative missingness: {gap:+.4f} AUROC")
print("(swap informative_missingness for 0.0 above and the gap shrinks toward zero)")
