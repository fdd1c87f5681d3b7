"""End-to-end synthetic experiments: NT against CR on one world, rank_diff, cleanness trend.

``SYNTHETIC_TRAIN`` is the training setup used for the synthetic worlds.  It
departs from :class:`TrainConfig`'s paper defaults (plain SGD at 0.001) to
converge within a desk-scale time budget: Adam at 0.01 with batches of 4096.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.stats import spearmanr

from .data import DataSplit, FeatureTable, like_click_ratio, split_dataset
from .effects import EffectKind, EffectScorer
from .evaluation import evaluate
from .scorer import TwoBranchScorer
from .synthetic import WorldConfig, generate_world, poison_test, rank_diff
from .training import ALPHA_GRID, TrainConfig, train, train_alpha_sweep

SYNTHETIC_TRAIN = TrainConfig(
    optimizer="adam",
    learning_rate=0.01,
    batch_size=4096,
    l2=1e-4,
    max_epochs=100,
    patience=10,
    strategy="mul-sigmoid",
)


@dataclass
class WorldRun:
    """NT and the validation-selected CR model on one generated world."""

    world: WorldConfig
    split: DataSplit
    features: FeatureTable
    nt: TwoBranchScorer
    cr: TwoBranchScorer
    best_alpha: float
    nt_ndcg: float
    cr_ndcg: float
    cr_ndcg_by_alpha: dict = field(default_factory=dict)

    @property
    def gain(self) -> float:
        return (self.cr_ndcg - self.nt_ndcg) / self.nt_ndcg if self.nt_ndcg else float("nan")


def ndcg10(model: TwoBranchScorer, features: FeatureTable, split: DataSplit, kind, strategy: str = "mul-sigmoid") -> float:
    return evaluate(EffectScorer.build(model, features, strategy, kind), split, (10,))[0].ndcg


def run_world(
    world: WorldConfig,
    train_config: TrainConfig = SYNTHETIC_TRAIN,
    grid: Sequence[float] = ALPHA_GRID,
    all_alphas: bool = False,
) -> WorldRun:
    """Generate, split (seed = world seed), train NT and a CR alpha sweep, score NDCG@10.

    NT ranks by the fused score; CR ranks by TIE with the alpha whose
    validation recall@10 is highest.  ``all_alphas`` also scores every sweep
    member on test, for diagnostics only.
    """
    log, features, _ = generate_world(world)
    split = split_dataset(log, world.seed)
    cfg = replace(train_config, seed=world.seed)
    nt, _ = train(split, features, replace(cfg, mode="nt", alpha=0.0))
    best_alpha, runs = train_alpha_sweep(split, features, cfg, grid)
    cr = runs[best_alpha][0]
    by_alpha = {}
    if all_alphas:
        by_alpha = {a: ndcg10(runs[a][0], features, split, EffectKind.TIE, cfg.strategy) for a in grid}
    return WorldRun(
        world=world,
        split=split,
        features=features,
        nt=nt,
        cr=cr,
        best_alpha=float(best_alpha),
        nt_ndcg=ndcg10(nt, features, split, EffectKind.FUSED, cfg.strategy),
        cr_ndcg=ndcg10(cr, features, split, EffectKind.TIE, cfg.strategy),
        cr_ndcg_by_alpha=by_alpha,
    )


def poisoned_rank_diffs(run: WorldRun, strategy: str = "mul-sigmoid", seed: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    """rank_diff per poisoned triple under NT (fused) and CR (TIE)."""
    split, features = run.split, run.features
    seed = run.world.seed if seed is None else seed
    stats = like_click_ratio(split.train, features.n_items)
    triples, extended = poison_test(split, features, stats, seed=seed)
    train_log = split.train
    exclude = {}
    for u in sorted({t.user for t in triples}):
        m = (train_log.users == u) & train_log.clicked
        exclude[u] = np.unique(train_log.items[m])
    nt = rank_diff(EffectScorer.build(run.nt, extended, strategy, EffectKind.FUSED), triples, features.n_items, exclude)
    cr = rank_diff(EffectScorer.build(run.cr, extended, strategy, EffectKind.TIE), triples, features.n_items, exclude)
    return nt, cr


def cleanness_trend(
    fractions: Sequence[float] = (0.0, 0.2, 0.4, 0.6, 0.8),
    seeds: Sequence[int] = (0, 1, 2),
    base: Optional[WorldConfig] = None,
    train_config: TrainConfig = SYNTHETIC_TRAIN,
    grid: Sequence[float] = ALPHA_GRID,
) -> tuple[list[float], float]:
    """Mean relative NDCG@10 gain of CR over NT per clickbait fraction, and its Spearman rho with the fraction."""
    base = base or WorldConfig()
    gains = []
    for frac in fractions:
        g = [run_world(replace(base, clickbait_fraction=frac, seed=s), train_config, grid).gain for s in seeds]
        gains.append(float(np.mean(g)))
    rho = spearmanr(list(fractions), gains).statistic
    return gains, float(rho)
