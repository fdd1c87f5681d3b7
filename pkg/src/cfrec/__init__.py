"""Counterfactual recommendation: two-branch click models debiased against clickbait."""

__version__ = "0.1.0"

from .fusion import FusionStrategy, fuse, nie, tie  # noqa: E402
from .effects import EffectKind, EffectScorer, effect_scores, reference_constants  # noqa: E402
from .data import DataSplit, FeatureTable, InteractionLog, split_dataset  # noqa: E402
from .scorer import TwoBranchScorer, init_scorer, load_checkpoint, save_checkpoint  # noqa: E402
from .training import TrainConfig, train, train_alpha_sweep  # noqa: E402
from .evaluation import evaluate, compare  # noqa: E402
from .synthetic import WorldConfig, generate_world  # noqa: E402

__all__ = [
    "DataSplit",
    "EffectKind",
    "EffectScorer",
    "FeatureTable",
    "FusionStrategy",
    "InteractionLog",
    "TrainConfig",
    "TwoBranchScorer",
    "WorldConfig",
    "compare",
    "effect_scores",
    "evaluate",
    "fuse",
    "generate_world",
    "init_scorer",
    "load_checkpoint",
    "nie",
    "reference_constants",
    "save_checkpoint",
    "split_dataset",
    "tie",
    "train",
    "train_alpha_sweep",
]
