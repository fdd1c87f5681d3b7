"""Joint-loss training of the two-branch scorer and the baseline training regimes.

Modes:

* ``nt``  -- normal training on clicks, ranked by the fused score (alpha forced to 0)
* ``cr``  -- joint loss on fused and exposure scores, ranked by TIE
* ``cft`` -- content features only: exposure block zeroed, exposure branch dropped
* ``ct``  -- clean training: only liked clicks are positives
* ``nr``  -- liked clicks as positives, click-skips and non-clicks as weighted negatives
* ``ipw`` -- positives weighted by inverse popularity propensity
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from . import fusion
from .data import DataSplit, FeatureTable, InteractionLog, sample_negatives
from .effects import EffectKind, effects_from_scores
from .fusion import FusionStrategy
from .scorer import TwoBranchScorer, init_scorer

log = logging.getLogger(__name__)

MODES = ("nt", "cr", "cft", "ct", "nr", "ipw")
ALPHA_GRID = (0.0, 0.25, 0.5, 0.75, 1.0, 2.0, 3.0, 4.0, 5.0)
NR_LAMBDA_GRID = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)

POSITIVE = "positive"
CLICK_SKIP_NEGATIVE = "click-skip-negative"
NON_CLICK_NEGATIVE = "non-click-negative"


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1.0
    loss: str = "bpr"
    learning_rate: float = 0.001
    max_epochs: int = 200
    patience: int = 10
    dim: int = 64
    strategy: str = "mul-sigmoid"
    mode: str = "cr"
    nr_lambda: float = 0.6
    ipw_gamma: float = 1.0
    ipw_max_weight: float = 100.0
    seed: int = 0
    optimizer: str = "sgd"
    l2: float = 1e-5
    batch_size: int = 1024
    inference: str = ""  # empty: the mode's own rule
    hidden_dim: int = 0
    shared_user: bool = False
    plain: bool = False
    eval_k: int = 10
    reference_over: str = "catalog"

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.loss not in ("bpr", "ce"):
            raise ValueError(f"loss must be 'bpr' or 'ce', got {self.loss!r}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {', '.join(MODES)}, got {self.mode!r}")
        if not 0.0 <= self.nr_lambda <= 1.0:
            raise ValueError("nr_lambda must lie in [0, 1]")
        if self.ipw_gamma < 0:
            raise ValueError("ipw_gamma must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.reference_over not in ("catalog", "candidates"):
            raise ValueError("reference_over must be 'catalog' or 'candidates'")
        if self.max_epochs < 0 or self.patience < 1 or self.batch_size < 1 or self.dim < 1:
            raise ValueError("max_epochs >= 0, patience >= 1, batch_size >= 1 and dim >= 1 are required")
        FusionStrategy.parse(self.strategy)
        if self.inference:
            EffectKind.parse(self.inference)

    # derived settings ----------------------------------------------------
    @property
    def fusion(self) -> FusionStrategy:
        return FusionStrategy.parse(self.strategy)

    @property
    def effective_alpha(self) -> float:
        return self.alpha if self.mode == "cr" else 0.0

    @property
    def is_plain(self) -> bool:
        return self.mode == "cft" or self.plain

    @property
    def inference_kind(self) -> EffectKind:
        if self.inference:
            return EffectKind.parse(self.inference)
        return EffectKind.TIE if self.mode == "cr" else EffectKind.FUSED

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise KeyError(f"unknown train config key(s): {', '.join(unknown)}")
        return cls(**values)


@dataclass
class TrainReport:
    losses: list = field(default_factory=list)
    val_recall: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_recall: float = float("-inf")
    stopping_epoch: int = 0
    initial_loss: float = float("nan")
    checkpoint: Optional[str] = None

    def to_rows(self) -> list[dict]:
        return [
            {"epoch": k + 1, "loss": loss, "val_recall@10": rec}
            for k, (loss, rec) in enumerate(zip(self.losses, self.val_recall))
        ]


# ----------------------------------------------------------------- losses


def _softplus(x):
    return np.logaddexp(0.0, x)


def bpr_loss(s_pos, s_neg):
    """``-ln sigmoid(s_pos - s_neg)`` as a softplus, stable for any magnitude."""
    out = _softplus(-(np.asarray(s_pos, dtype=np.float64) - np.asarray(s_neg, dtype=np.float64)))
    return float(out) if np.ndim(out) == 0 else out


def ce_loss(score, label):
    s = np.asarray(score, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    out = y * _softplus(-s) + (1.0 - y) * _softplus(s)
    return float(out) if np.ndim(out) == 0 else out


def joint_loss(strategy, y_ui_pos, y_ue_pos, y_ui_neg, y_ue_neg, alpha: float, loss_kind: str = "bpr"):
    """Fused-prediction loss plus ``alpha`` times the exposure-only loss for one pair."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    f_pos = fusion.fuse(strategy, y_ui_pos, y_ue_pos)
    f_neg = fusion.fuse(strategy, y_ui_neg, y_ue_neg)
    if loss_kind == "bpr":
        return bpr_loss(f_pos, f_neg) + alpha * bpr_loss(y_ue_pos, y_ue_neg)
    if loss_kind == "ce":
        return (ce_loss(f_pos, 1) + ce_loss(f_neg, 0)) + alpha * (ce_loss(y_ue_pos, 1) + ce_loss(y_ue_neg, 0))
    raise ValueError(f"loss_kind must be 'bpr' or 'ce', got {loss_kind!r}")


def sample_weight(
    mode: str,
    item_popularity: int,
    max_popularity: int,
    sample_kind: str,
    nr_lambda: float = 0.6,
    ipw_gamma: float = 1.0,
    w_max: float = 100.0,
) -> float:
    if mode in ("nt", "cr", "cft", "ct"):
        return 1.0
    if mode == "nr":
        if sample_kind == CLICK_SKIP_NEGATIVE:
            return float(nr_lambda)
        if sample_kind == NON_CLICK_NEGATIVE:
            return float(1.0 - nr_lambda)
        return 1.0
    if mode == "ipw":
        if sample_kind != POSITIVE:
            return 1.0
        if item_popularity <= 0 or max_popularity <= 0:
            raise ValueError("IPW needs positive item popularity")
        p = (item_popularity / max_popularity) ** ipw_gamma
        return float(min(1.0 / p, w_max))
    raise ValueError(f"unknown mode {mode!r}")


def ipw_weights(popularity: np.ndarray, gamma: float, w_max: float) -> np.ndarray:
    """Vectorised positive-sample weights for IPW (popularity must be >= 1)."""
    pop = np.asarray(popularity, dtype=np.float64)
    if np.any(pop <= 0):
        raise ValueError("IPW needs positive item popularity")
    p = (pop / pop.max()) ** gamma
    return np.minimum(1.0 / p, w_max)


# ------------------------------------------------------- batch objective


@dataclass
class Batch:
    users: np.ndarray
    pos: np.ndarray
    neg: np.ndarray
    weight: np.ndarray  # per pair (BPR) / per positive (CE)
    neg_weight: Optional[np.ndarray] = None  # CE only; defaults to 1

    def __len__(self) -> int:
        return len(self.users)


def batch_loss_and_grads(
    scorer: TwoBranchScorer,
    features: FeatureTable,
    batch: Batch,
    strategy: FusionStrategy,
    alpha: float,
    loss_kind: str = "bpr",
    l2: float = 0.0,
    x_all: Optional[np.ndarray] = None,
    with_grads: bool = True,
):
    """Mean weighted joint loss over a batch and its analytic gradients."""
    B = len(batch)
    users2 = np.concatenate([batch.users, batch.users])
    items2 = np.concatenate([batch.pos, batch.neg])
    y_ui, y_ue, cache = scorer.forward(features, users2, items2, x_all=x_all)
    if scorer.plain:
        f = y_ui
        df_ui, df_ue = np.ones_like(y_ui), np.zeros_like(y_ue)
        alpha = 0.0
    else:
        f = fusion._fuse_unchecked(strategy, y_ui, y_ue)
        df_ui, df_ue = fusion.fuse_grad(strategy, y_ui, y_ue)
    w = batch.weight
    f_p, f_n = f[:B], f[B:]
    e_p, e_n = y_ue[:B], y_ue[B:]
    g_f = np.empty(2 * B)
    g_e = np.zeros(2 * B)
    if loss_kind == "bpr":
        d = f_p - f_n
        loss = w * _softplus(-d)
        gd = -w * expit(-d)
        g_f[:B], g_f[B:] = gd, -gd
        if alpha:
            de = e_p - e_n
            loss = loss + alpha * w * _softplus(-de)
            ge = -alpha * w * expit(-de)
            g_e[:B], g_e[B:] = ge, -ge
    elif loss_kind == "ce":
        wn = np.ones(B) if batch.neg_weight is None else batch.neg_weight
        loss = w * _softplus(-f_p) + wn * _softplus(f_n)
        g_f[:B] = w * (expit(f_p) - 1.0)
        g_f[B:] = wn * expit(f_n)
        if alpha:
            loss = loss + alpha * (w * _softplus(-e_p) + wn * _softplus(e_n))
            g_e[:B] = alpha * w * (expit(e_p) - 1.0)
            g_e[B:] = alpha * wn * expit(e_n)
    else:
        raise ValueError(f"loss_kind must be 'bpr' or 'ce', got {loss_kind!r}")
    total = float(loss.sum() / B)
    if l2:
        total += 0.5 * l2 * sum(float((v * v).sum()) for v in scorer.params.values())
    if not with_grads:
        return total, None
    g_ui = g_f * df_ui / B
    g_ue = (g_f * df_ue + g_e) / B
    grads = scorer.backward(cache, g_ui, g_ue)
    if l2:
        for k, v in scorer.params.items():
            grads[k] += l2 * v
    return total, grads


# ---------------------------------------------------------------- optimizers


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: dict, grads: dict) -> None:
        for k, g in grads.items():
            params[k] -= self.lr * g


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ------------------------------------------------------------ data setup


@dataclass
class _TrainingData:
    interacted: InteractionLog  # defines the negative pool
    positives: InteractionLog
    pos_weight: np.ndarray
    skip_items: list  # per user click-skip items (NR only)


def _training_data(train: InteractionLog, cfg: TrainConfig) -> _TrainingData:
    clicks = train.clicks()
    if cfg.mode in ("ct", "nr"):
        positives = clicks.subset(clicks.liked == 1)
    else:
        positives = clicks
    if len(positives) == 0:
        raise ValueError(f"mode {cfg.mode!r} has no positive training samples")
    if cfg.mode == "ipw":
        pop = np.bincount(clicks.items, minlength=train.n_items)
        pos_weight = ipw_weights(pop[positives.items], cfg.ipw_gamma, cfg.ipw_max_weight)
    else:
        pos_weight = np.ones(len(positives))
    skip_items = []
    if cfg.mode == "nr":
        skips = clicks.subset(clicks.liked != 1)
        skip_items = skips.clicked_items_by_user()
    return _TrainingData(clicks, positives, pos_weight, skip_items)


def _epoch_batches(data: _TrainingData, cfg: TrainConfig, epoch: int):
    triples = sample_negatives(data.interacted, cfg.seed, epoch, positives=data.positives)
    users, pos, neg = triples[:, 0], triples[:, 1], triples[:, 2]
    weight = data.pos_weight.copy()
    rng = np.random.default_rng([cfg.seed, epoch, 7])
    if cfg.mode == "nr":
        lam = cfg.nr_lambda
        skip_users, skip_pos, skip_neg = [], [], []
        for k, u in enumerate(users):
            cand = data.skip_items[u]
            if len(cand):
                skip_users.append(u)
                skip_pos.append(pos[k])
                skip_neg.append(cand[rng.integers(0, len(cand))])
        weight = np.concatenate([weight * (1.0 - lam), np.full(len(skip_users), lam)])
        users = np.concatenate([users, np.array(skip_users, dtype=np.int64)])
        pos = np.concatenate([pos, np.array(skip_pos, dtype=np.int64)])
        neg = np.concatenate([neg, np.array(skip_neg, dtype=np.int64)])
    order = rng.permutation(len(users))
    for start in range(0, len(order), cfg.batch_size):
        idx = order[start : start + cfg.batch_size]
        yield Batch(users[idx], pos[idx], neg[idx], weight[idx])


# ------------------------------------------------------------- validation


def effect_matrix(scorer: TwoBranchScorer, features: FeatureTable, cfg_or_strategy, kind, users=None, exclude_mask=None, reference_over="catalog"):
    """Effect scores for many users at once (BLAS path; for model selection)."""
    strategy = cfg_or_strategy.fusion if isinstance(cfg_or_strategy, TrainConfig) else FusionStrategy.parse(cfg_or_strategy)
    users = np.arange(scorer.n_users) if users is None else np.asarray(users)
    x = scorer.item_input(features)
    if scorer.hidden_dim:
        x = np.tanh(x @ scorer.params["hidden"])
    R = x @ scorer.item_proj
    n = features.n_items
    y_ui = scorer.user_item_emb[users] @ R.T + scorer.item_bias[:n]
    if scorer.plain:
        y_ue = np.zeros_like(y_ui)
    else:
        S = features.exposure @ scorer.exp_proj
        y_ue = scorer.user_exp_emb[users] @ S.T + scorer.exp_bias[:n]
    if reference_over == "candidates" and exclude_mask is not None:
        keep = ~exclude_mask
        cnt = keep.sum(axis=1)
        c_ui = (y_ui * keep).sum(axis=1) / cnt
        c_e = (y_ue * keep).sum(axis=1) / cnt
    else:
        c_ui, c_e = y_ui.mean(axis=1), y_ue.mean(axis=1)
    return effects_from_scores(strategy, kind, y_ui, y_ue, c_ui, c_e, plain=scorer.plain)


def _dense_mask(log: InteractionLog, n_users: int, n_items: int) -> np.ndarray:
    m = np.zeros((n_users, n_items), dtype=bool)
    c = log.clicked
    m[log.users[c], log.items[c]] = True
    return m


def recall_at_k_matrix(scores: np.ndarray, relevant: np.ndarray, exclude: np.ndarray, k: int) -> float:
    """Mean recall@k over rows with any relevant item; excluded cells never rank."""
    s = np.where(exclude, -np.inf, scores)
    rows = np.flatnonzero(relevant.any(axis=1))
    if len(rows) == 0:
        return 0.0
    s = s[rows]
    k = min(k, s.shape[1])
    top = np.argpartition(-s, k - 1, axis=1)[:, :k]
    hits = np.take_along_axis(relevant[rows], top, axis=1).sum(axis=1)
    return float(np.mean(hits / relevant[rows].sum(axis=1)))


# ------------------------------------------------------------------- train


def build_scorer(features: FeatureTable, n_users: int, cfg: TrainConfig) -> TwoBranchScorer:
    scorer = init_scorer(
        dim=cfg.dim,
        d_e=features.d_e,
        d_t=features.d_t,
        n_users=n_users,
        n_items=features.n_items,
        seed=cfg.seed,
        hidden_dim=cfg.hidden_dim,
        shared_user=cfg.shared_user,
        plain=cfg.is_plain,
        mask_exposure=cfg.mode == "cft",
    )
    scorer.meta["config"] = cfg.to_dict()
    return scorer


def train(
    split: DataSplit,
    features: FeatureTable,
    config: TrainConfig,
    scorer: Optional[TwoBranchScorer] = None,
    on_epoch: Optional[Callable[[int, TwoBranchScorer, float], None]] = None,
):
    """Train with mini-batch SGD/Adam on the joint loss; keep the best validation epoch.

    Each epoch draws fresh negatives, then scores validation recall@``eval_k``
    with the mode's inference rule.  Training stops once ``patience`` epochs
    pass without a strict improvement.  ``on_epoch(epoch, scorer, recall)``
    is called after each epoch with the live (not best) parameters.
    """
    cfg = config
    train_log = split.train
    if features.n_items != train_log.n_items:
        raise ValueError(f"feature table covers {features.n_items} items, log has {train_log.n_items}")
    scorer = build_scorer(features, train_log.n_users, cfg) if scorer is None else scorer
    data = _training_data(train_log, cfg)
    opt = Adam(cfg.learning_rate) if cfg.optimizer == "adam" else SGD(cfg.learning_rate)
    x_all = scorer.item_input(features)
    strategy = cfg.fusion
    alpha = cfg.effective_alpha
    kind = cfg.inference_kind

    exclude = _dense_mask(train_log, train_log.n_users, train_log.n_items)
    relevant = _dense_mask(split.validation, train_log.n_users, train_log.n_items)
    has_val = relevant.any()

    report = TrainReport()
    first = next(_epoch_batches(data, cfg, 0), None)
    if first is not None:
        report.initial_loss = batch_loss_and_grads(scorer, features, first, strategy, alpha, cfg.loss, 0.0, x_all, with_grads=False)[0]

    best = scorer.copy()
    since_best = 0
    for epoch in range(cfg.max_epochs):
        total, count = 0.0, 0
        for batch in _epoch_batches(data, cfg, epoch):
            loss, grads = batch_loss_and_grads(scorer, features, batch, strategy, alpha, cfg.loss, cfg.l2, x_all)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch + 1} (lr={cfg.learning_rate}, mode={cfg.mode})")
            opt.step(scorer.params, grads)
            total += loss * len(batch)
            count += len(batch)
        if not scorer.check_finite():
            raise TrainingDiverged(f"non-finite parameters after epoch {epoch + 1}")
        report.losses.append(total / max(count, 1))
        if has_val:
            eff = effect_matrix(scorer, features, strategy, kind, exclude_mask=exclude, reference_over=cfg.reference_over)
            rec = recall_at_k_matrix(eff, relevant, exclude, cfg.eval_k)
        else:
            rec = 0.0
        report.val_recall.append(rec)
        report.stopping_epoch = epoch + 1
        if on_epoch is not None:
            on_epoch(epoch + 1, scorer, rec)
        if rec > report.best_val_recall:
            report.best_val_recall = rec
            report.best_epoch = epoch + 1
            best = scorer.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
        log.debug("epoch %d loss %.6f val_recall@%d %.5f", epoch + 1, report.losses[-1], cfg.eval_k, rec)
    if cfg.max_epochs == 0:
        best = scorer.copy()
    best.meta["config"] = cfg.to_dict()
    return best, report


def train_alpha_sweep(split: DataSplit, features: FeatureTable, config: TrainConfig, grid=ALPHA_GRID):
    """Train one CR model per alpha; returns ``(best_alpha, {alpha: (scorer, report)})``."""
    runs = {}
    for a in grid:
        runs[a] = train(split, features, replace(config, alpha=float(a), mode="cr"))
    best_alpha = max(grid, key=lambda a: (runs[a][1].best_val_recall, -a))
    return best_alpha, runs


# ---------------------------------------------------------- gradient check


def _numeric_grad(fn, arr: np.ndarray, h: float) -> np.ndarray:
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        ix = it.multi_index
        orig = arr[ix]
        arr[ix] = orig + h
        up = fn()
        arr[ix] = orig - h
        down = fn()
        arr[ix] = orig
        g[ix] = (up - down) / (2.0 * h)
    return g


def gradient_check(
    config: TrainConfig,
    seed: int = 0,
    h: float = 1e-5,
    n_users: int = 4,
    n_items: int = 7,
    d_e: int = 3,
    d_t: int = 2,
    dim: int = 4,
    batch_size: int = 6,
    atol: Optional[float] = None,
    score_scale: float = 1.0,
    rtol: float = 1e-4,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Entries where both gradients are below ``atol`` in magnitude are compared
    absolutely.  By default ``atol`` is the magnitude below which the
    difference quotient's own roundoff (about ``eps * |loss| / h``) would
    already exceed ``rtol``, floored at 1e-7.  ``score_scale`` inflates
    features to probe saturation.
    """
    rng = np.random.default_rng(seed)
    features = FeatureTable(rng.normal(size=(n_items, d_e)) * score_scale, rng.normal(size=(n_items, d_t)) * score_scale)
    cfg = replace(config, dim=dim)
    scorer = build_scorer(features, n_users, cfg)
    for k, v in scorer.params.items():
        v[...] = rng.normal(scale=0.7, size=v.shape)
    batch = Batch(
        users=rng.integers(0, n_users, batch_size),
        pos=rng.integers(0, n_items, batch_size),
        neg=rng.integers(0, n_items, batch_size),
        weight=rng.uniform(0.5, 2.0, batch_size),
        neg_weight=rng.uniform(0.5, 2.0, batch_size) if cfg.loss == "ce" else None,
    )
    strategy, alpha = cfg.fusion, cfg.alpha if not scorer.plain else 0.0

    def loss_only():
        return batch_loss_and_grads(scorer, features, batch, strategy, alpha, cfg.loss, cfg.l2, with_grads=False)[0]

    loss, grads = batch_loss_and_grads(scorer, features, batch, strategy, alpha, cfg.loss, cfg.l2)
    if atol is None:
        roundoff = np.finfo(np.float64).eps * max(abs(loss), 1.0) / h
        atol = max(1e-7, roundoff / rtol)
    worst = 0.0
    for name, arr in scorer.params.items():
        num = _numeric_grad(loss_only, arr, h)
        ana = grads[name]
        scale = np.maximum(np.abs(ana), np.abs(num))
        err = np.where(scale < atol, np.abs(ana - num), np.abs(ana - num) / np.where(scale < atol, 1.0, scale))
        worst = max(worst, float(err.max(initial=0.0)))
    return worst
