"""ICU mortality-risk modeling on a small numpy autodiff core."""

__version__ = "0.1.0"

from . import (
    attention,
    autodiff,
    concept_graph,
    config,
    gradcheck,
    grud,
    kan,
    metrics,
    model,
    preprocess,
    synth,
    trainer,
)
