"""Command-line harness: ``cfrec {synth,train,eval,compare,poison,analyze}``.

Every command writes its outputs plus a ``manifest.json`` into ``--out``.
The manifest records the command, resolved configs, seeds, paths, tool
version and wall-clock duration; all other outputs are bitwise reproducible
when ``--threads 1`` (the default).

Exit codes: 0 success, 2 usage or config error, 3 data or I/O error,
4 training diverged.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import config as cfgfile
from .data import (
    DataError,
    DataSplit,
    FeatureTable,
    InteractionLog,
    filter_by_ratio,
    like_click_ratio,
    load_features,
    load_interactions,
    ratio_groups,
    save_features,
    save_interactions,
    split_dataset,
)
from .effects import EffectKind, EffectScorer
from .evaluation import RerankedRanker, build_report, evaluate
from .scorer import load_checkpoint, save_checkpoint
from .synthetic import WorldConfig, generate_world, poison_test, rank_diff, rank_diff_summary
from .training import ALPHA_GRID, MODES, TrainConfig, TrainingDiverged, train, train_alpha_sweep

log = logging.getLogger("cfrec")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

INTERACTIONS_FILE = "interactions.csv"
FEATURES_FILE = "features.csv"
TRUTH_FILE = "truth.json"


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ helpers


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc.strerror or exc}") from None
    return out


def load_dataset(data_dir) -> tuple[InteractionLog, FeatureTable]:
    """Read ``features.csv`` then ``interactions.csv`` from ``data_dir``; items follow the feature file."""
    d = Path(data_dir)
    fpath, ipath = d / FEATURES_FILE, d / INTERACTIONS_FILE
    for p in (fpath, ipath):
        if not p.is_file():
            raise DataError(f"missing data file: {p}")
    features = load_features(fpath)
    keys = _feature_keys(fpath)
    data = load_interactions(ipath, item_keys=keys)
    if len(data) == 0:
        raise DataError(f"{ipath}: no interactions")
    return data, features


def _feature_keys(path: Path) -> tuple:
    keys: dict[str, None] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for row in reader:
            if row:
                keys.setdefault(row[0].strip(), None)
    return tuple(keys)


def _train_config(args, extra: Optional[dict] = None) -> TrainConfig:
    raw = cfgfile.read_config(args.config) if getattr(args, "config", None) else {}
    raw.update(cfgfile.parse_overrides(getattr(args, "set", None)))
    flags = {
        "mode": getattr(args, "mode", None),
        "strategy": getattr(args, "strategy", None),
        "alpha": getattr(args, "alpha", None),
        "inference": getattr(args, "inference", None),
        "loss": getattr(args, "loss", None),
        "optimizer": getattr(args, "optimizer", None),
        "learning_rate": getattr(args, "lr", None),
        "max_epochs": getattr(args, "epochs", None),
    }
    raw.update({k: v for k, v in flags.items() if v is not None})
    if args.seed is not None:
        raw["seed"] = args.seed
    raw.update(extra or {})
    return cfgfile.build(TrainConfig, raw)


def _split(data: InteractionLog, seed: int) -> DataSplit:
    return split_dataset(data, seed)


def _parse_method(spec: str) -> tuple[str, Path, Optional[str]]:
    """``name=path[:inference]`` -> (name, path, inference)."""
    if "=" not in spec:
        raise UsageError(f"--method expects NAME=CHECKPOINT[:INFERENCE], got {spec!r}")
    name, rest = spec.split("=", 1)
    inference = None
    path = rest
    if ":" in rest:
        head, tail = rest.rsplit(":", 1)
        if tail.lower() in {k.value for k in EffectKind}:
            path, inference = head, tail
    name = name.strip()
    if not name:
        raise UsageError(f"empty method name in {spec!r}")
    return name, Path(path), inference


def _scorer_for(path: Path, features: FeatureTable, inference: Optional[str]):
    if not path.is_file():
        raise DataError(f"unknown checkpoint: {path}")
    model = load_checkpoint(path)
    conf = model.meta.get("config") or {}
    strategy = conf.get("strategy", "mul-sigmoid")
    if inference:
        kind = EffectKind.parse(inference)
    else:
        kind = TrainConfig.from_dict(conf).inference_kind if conf else EffectKind.FUSED
    return model, EffectScorer.build(model, features, strategy, kind), kind


def _parse_ks(text: str) -> list[int]:
    try:
        ks = sorted({int(k) for k in text.split(",") if k.strip()})
    except ValueError:
        raise UsageError(f"--k expects comma-separated integers, got {text!r}") from None
    if not ks or ks[0] < 1:
        raise UsageError("--k values must be >= 1")
    return ks


def _parse_floats(text: str, what: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"{what} expects comma-separated numbers, got {text!r}") from None


def _alpha_tag(a: float) -> str:
    return f"{a:g}".replace(".", "p")


# ----------------------------------------------------------------- commands


def cmd_synth(args) -> dict:
    raw = cfgfile.read_config(args.config) if args.config else {}
    raw.update(cfgfile.parse_overrides(args.set))
    if args.seed is not None:
        raw["seed"] = args.seed
    world = cfgfile.build(WorldConfig, raw)
    out = _out_dir(args)
    data, features, truth = generate_world(world)
    save_interactions(data, out / INTERACTIONS_FILE)
    save_features(features, out / FEATURES_FILE, data.item_keys)
    truth.save(out / TRUTH_FILE)
    (out / "world.cfg").write_text(cfgfile.dump(world))
    return {
        "config": {"world": world.to_dict()},
        "seeds": {"world": world.seed},
        "outputs": [INTERACTIONS_FILE, FEATURES_FILE, TRUTH_FILE, "world.cfg"],
        "counts": {"rows": len(data), "clicks": int(data.clicked.sum()), "likes": int((data.liked == 1).sum())},
    }


def _report_rows(report):
    return [(r["epoch"], r["loss"], r["val_recall@10"]) for r in report.to_rows()]


def cmd_train(args) -> dict:
    data, features = load_dataset(args.data)
    cfg = _train_config(args)
    out = _out_dir(args)
    split = _split(data, cfg.seed)
    outputs = []
    if args.alpha_sweep:
        grid = _parse_floats(args.grid, "--grid") if args.grid else list(ALPHA_GRID)
        best_alpha, runs = train_alpha_sweep(split, features, cfg, grid)
        rows = []
        for a in grid:
            model, report = runs[a]
            tag = _alpha_tag(a)
            save_checkpoint(model, out / f"checkpoint_alpha{tag}.json")
            _write_csv(out / f"train_report_alpha{tag}.csv", ["epoch", "loss", "val_recall@10"], _report_rows(report))
            outputs += [f"checkpoint_alpha{tag}.json", f"train_report_alpha{tag}.csv"]
            rows.append((a, report.best_epoch, report.best_val_recall, report.stopping_epoch))
        _write_csv(out / "sweep.csv", ["alpha", "best_epoch", "best_val_recall@10", "stopping_epoch"], rows)
        save_checkpoint(runs[best_alpha][0], out / "checkpoint.json")
        outputs += ["sweep.csv", "checkpoint.json"]
        resolved = replace(cfg, alpha=float(best_alpha), mode="cr")
        extra = {"best_alpha": best_alpha, "grid": grid}
    else:
        model, report = train(split, features, cfg)
        save_checkpoint(model, out / "checkpoint.json")
        _write_csv(out / "train_report.csv", ["epoch", "loss", "val_recall@10"], _report_rows(report))
        outputs += ["checkpoint.json", "train_report.csv"]
        resolved = cfg
        extra = {"best_epoch": report.best_epoch, "best_val_recall@10": report.best_val_recall, "stopping_epoch": report.stopping_epoch}
    (out / "train.cfg").write_text(cfgfile.dump(resolved))
    outputs.append("train.cfg")
    return {"config": {"train": resolved.to_dict()}, "seeds": {"split": cfg.seed, "train": cfg.seed}, "inputs": [str(args.data)], "outputs": outputs, "result": extra}


def cmd_eval(args) -> dict:
    data, features = load_dataset(args.data)
    out = _out_dir(args)
    seed = _checkpoint_seed(args)
    split = _split(data, seed)
    ks = _parse_ks(args.k)
    _, ranker, kind = _scorer_for(Path(args.checkpoint), features, args.inference)
    if args.rr:
        ranker = RerankedRanker(ranker, like_click_ratio(split.train, features.n_items), window=args.rr_window)
    metrics = evaluate(ranker, split, ks, on=args.on)
    _write_csv(out / "metrics.csv", ["K", "precision", "recall", "ndcg"], [(m.K, m.precision, m.recall, m.ndcg) for m in metrics])
    return {"config": {"inference": kind.value, "on": args.on, "K": ks, "rr": bool(args.rr)}, "seeds": {"split": seed}, "inputs": [str(args.data), str(args.checkpoint)], "outputs": ["metrics.csv"]}


def _checkpoint_seed(args) -> int:
    """The split seed: ``--seed`` if given, else the seed the checkpoint was trained with."""
    if args.seed is not None:
        return args.seed
    path = Path(args.checkpoint if hasattr(args, "checkpoint") and args.checkpoint else _parse_method(args.method[0])[1])
    if not path.is_file():
        raise DataError(f"unknown checkpoint: {path}")
    return int(json.loads(path.read_text()).get("config", {}).get("seed", 0))


def cmd_compare(args) -> dict:
    if not args.method:
        raise UsageError("compare needs at least one --method NAME=CHECKPOINT[:INFERENCE]")
    data, features = load_dataset(args.data)
    out = _out_dir(args)
    seed = _checkpoint_seed(args)
    split = _split(data, seed)
    ks = _parse_ks(args.k)
    rankers, used = [], {}
    for spec in args.method:
        name, path, inference = _parse_method(spec)
        if name in used:
            raise UsageError(f"duplicate method name {name!r}")
        _, ranker, kind = _scorer_for(path, features, inference)
        rankers.append((name, ranker))
        used[name] = {"checkpoint": str(path), "inference": kind.value}
    if args.rr:
        stats = like_click_ratio(split.train, features.n_items)
        base = dict(rankers)
        for name in args.rr:
            if name not in base:
                raise UsageError(f"--rr names an unknown method {name!r}")
            rankers.append((f"{name}+rr", RerankedRanker(base[name], stats, window=args.rr_window)))
            used[f"{name}+rr"] = dict(used[name], rr_window=args.rr_window)
    names = [n for n, _ in rankers]
    if args.baseline not in names:
        raise UsageError(f"unknown baseline {args.baseline!r}; methods: {', '.join(names)}")
    metrics = {name: evaluate(r, split, ks) for name, r in rankers}
    report = build_report(metrics, args.baseline)
    report.to_csv(out / "compare.csv")
    report.to_json(out / "compare.json")
    return {"config": {"methods": used, "baseline": args.baseline, "K": ks}, "seeds": {"split": seed}, "inputs": [str(args.data)] + [u["checkpoint"] for u in used.values()], "outputs": ["compare.csv", "compare.json"]}


def cmd_poison(args) -> dict:
    if not 1 <= len(args.method or []) <= 2:
        raise UsageError("poison takes one or two --method NAME=CHECKPOINT[:INFERENCE]")
    data, features = load_dataset(args.data)
    out = _out_dir(args)
    seed = _checkpoint_seed(args)
    split = _split(data, seed)
    stats = like_click_ratio(split.train, features.n_items)
    triples, extended = poison_test(split, features, stats, seed=seed)
    exclude = {u: np.unique(split.train.items[(split.train.users == u) & split.train.clicked]) for u in sorted({t.user for t in triples})}
    values, used = {}, {}
    for spec in args.method:
        name, path, inference = _parse_method(spec)
        if name in values:
            raise UsageError(f"duplicate method name {name!r}")
        model, _, kind = _scorer_for(path, features, inference)
        strategy = (model.meta.get("config") or {}).get("strategy", "mul-sigmoid")
        scorer = EffectScorer.build(model, extended, strategy, kind)
        values[name] = rank_diff(scorer, triples, features.n_items, exclude)
        used[name] = {"checkpoint": str(path), "inference": kind.value}
    names = list(values)
    _write_csv(
        out / "rank_diff.csv",
        ["user", "real_item", "fake_item", "donor_item"] + names,
        [(t.user, t.real_item, t.fake_item, t.donor_item) + tuple(int(values[n][k]) for n in names) for k, t in enumerate(triples)],
    )
    outputs = ["rank_diff.csv"]
    summary = {}
    for n in names:
        s = rank_diff_summary(values[n], bin_width=args.bin_width)
        _write_csv(out / f"rank_diff_hist_{n}.csv", ["bin_lo", "bin_hi", "count"], [(int(lo), int(hi), int(c)) for lo, hi, c in zip(s.edges[:-1], s.edges[1:], s.counts)])
        outputs.append(f"rank_diff_hist_{n}.csv")
        summary[n] = {"mean": s.mean, "n": int(len(values[n]))}
    if len(names) == 2:
        s = rank_diff_summary(values[names[0]], values[names[1]], bin_width=args.bin_width, n_pairs=args.pairs, seed=seed)
        _write_csv(out / "rank_diff_scatter.csv", names, [tuple(int(x) for x in row) for row in s.pairs])
        outputs.append("rank_diff_scatter.csv")
    _write_json(out / "rank_diff_summary.json", summary)
    outputs.append("rank_diff_summary.json")
    return {"config": {"methods": used, "bin_width": args.bin_width, "pairs": args.pairs}, "seeds": {"split": seed, "poison": seed}, "inputs": [str(args.data)] + [u["checkpoint"] for u in used.values()], "outputs": outputs, "result": summary}


def cmd_analyze(args) -> dict:
    data, features = load_dataset(args.data)
    out = _out_dir(args)
    stats = like_click_ratio(data, features.n_items)
    if not stats.defined.any():
        raise DataError("no item has a click, the like/click ratio is undefined everywhere")
    hist = ratio_groups(stats, args.groups)
    _write_csv(
        out / "ratio_histogram.csv",
        ["lo", "hi", "count"],
        [(float(lo), float(hi), int(c)) for lo, hi, c in zip(hist.edges[:-1], hist.edges[1:], hist.counts)],
    )
    r = stats.ratio[stats.defined]
    summary = {
        "items": int(features.n_items),
        "ratio_defined": int(stats.defined.sum()),
        "ratio_undefined": int(hist.undefined),
        "fraction_below_0.5": float(np.mean(r < 0.5)),
    }
    outputs = ["ratio_histogram.csv"]
    seeds = {}
    config = {"groups": args.groups}
    if args.sweep is not None:
        proportions = _parse_floats(args.sweep, "--sweep")
        cfg = _train_config(args)
        seeds = {"split": cfg.seed, "train": cfg.seed}
        ks = _parse_ks(args.k)
        rows = []
        for p in proportions:
            kept = filter_by_ratio(data, p, stats)
            split = _split(kept, cfg.seed)
            n_items_kept = int(np.unique(kept.items).size)
            if not np.any(split.test.liked == 1):
                # discarding the high-ratio items can remove every like
                log.warning("proportion %g leaves no liked test interactions; metrics are NaN", p)
                rows.extend((p, k, n_items_kept, float("nan"), float("nan"), float("nan")) for k in ks)
                continue
            nt, _ = train(split, features, replace(cfg, mode="nt"))
            cr, _ = train(split, features, replace(cfg, mode="cr"))
            m_nt = evaluate(EffectScorer.build(nt, features, cfg.strategy, EffectKind.FUSED), split, ks)
            m_cr = evaluate(EffectScorer.build(cr, features, cfg.strategy, EffectKind.TIE), split, ks)
            for a, b in zip(m_nt, m_cr):
                gain = (b.ndcg - a.ndcg) / a.ndcg if a.ndcg else float("nan")
                rows.append((p, a.K, n_items_kept, a.ndcg, b.ndcg, gain))
        _write_csv(out / "cleanness.csv", ["proportion", "K", "items_kept", "nt_ndcg", "cr_ndcg", "cr_gain"], rows)
        outputs.append("cleanness.csv")
        config.update({"train": cfg.to_dict(), "proportions": proportions, "K": ks})
    _write_json(out / "ratio_summary.json", summary)
    outputs.append("ratio_summary.json")
    return {"config": config, "seeds": seeds, "inputs": [str(args.data)], "outputs": outputs, "result": summary}


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "poison": cmd_poison,
    "analyze": cmd_analyze,
}


# ------------------------------------------------------------------- parser


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value training config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--strategy", help="mul-sigmoid, mul-tanh, sum-linear, sum-sigmoid or sum-tanh")
    p.add_argument("--alpha", type=float)
    p.add_argument("--inference", help="fused, te, nde, tie, nie or tde (default: the mode's rule)")
    p.add_argument("--loss", choices=("bpr", "ce"))
    p.add_argument("--optimizer", choices=("sgd", "adam"))
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--epochs", type=int, help="maximum epochs")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="global seed (world, split, training)")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="BLAS threads; >1 gives up bitwise determinism")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="cfrec", description="Counterfactual recommendation against clickbait.", parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic clickbait world")
    p.add_argument("--config", help="flat key = value world config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")

    p = sub.add_parser("train", parents=[common], help="train one model, or a CR alpha sweep")
    p.add_argument("--data", required=True, help="directory with interactions.csv and features.csv")
    _add_train_flags(p)
    p.add_argument("--alpha-sweep", action="store_true", help="train CR once per alpha in the grid")
    p.add_argument("--grid", help="comma-separated alphas for --alpha-sweep (default 0,0.25,0.5,0.75,1,2,3,4,5)")

    p = sub.add_parser("eval", parents=[common], help="P/R/NDCG@K of one checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--inference")
    p.add_argument("--k", default="10,20")
    p.add_argument("--on", choices=("test", "validation"), default="test")
    p.add_argument("--rr", action="store_true", help="re-rank the top window by like/click ratio")
    p.add_argument("--rr-window", type=int, default=20)

    p = sub.add_parser("compare", parents=[common], help="compare checkpoints against a baseline")
    p.add_argument("--data", required=True)
    p.add_argument("--method", action="append", metavar="NAME=CKPT[:INFERENCE]")
    p.add_argument("--baseline", default="nt")
    p.add_argument("--k", default="10,20")
    p.add_argument("--rr", action="append", metavar="NAME", help="also report NAME re-ranked by like/click ratio")
    p.add_argument("--rr-window", type=int, default=20)

    p = sub.add_parser("poison", parents=[common], help="rank_diff on fake items with donor exposure features")
    p.add_argument("--data", required=True)
    p.add_argument("--method", action="append", metavar="NAME=CKPT[:INFERENCE]")
    p.add_argument("--bin-width", type=int, default=100)
    p.add_argument("--pairs", type=int, default=5000, help="paired samples exported for scatter plots")

    p = sub.add_parser("analyze", parents=[common], help="like/click ratio histogram and cleanness sweep")
    p.add_argument("--data", required=True)
    p.add_argument("--groups", type=int, default=101)
    p.add_argument("--sweep", nargs="?", const="0,0.2,0.4,0.6,0.8", help="discard proportions (default 0,0.2,0.4,0.6,0.8)")
    p.add_argument("--k", default="10,20")
    _add_train_flags(p)
    return parser


def _manifest(args, argv, body: dict, seconds: float) -> dict:
    return {
        "tool": "cfrec",
        "version": __version__,
        "command": args.command,
        "argv": list(argv),
        "config": body.get("config", {}),
        "seeds": body.get("seeds", {}),
        "inputs": body.get("inputs", []),
        "outputs": body.get("outputs", []),
        "result": body.get("result", {}),
        "threads": args.threads,
        "deterministic": args.threads == 1,
        "duration_seconds": seconds,
    }


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else EXIT_USAGE
    args.seed = getattr(args, "seed", None)
    args.threads = getattr(args, "threads", 1)
    args.out = getattr(args, "out", ".")
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("cfrec: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE

    from threadpoolctl import threadpool_limits

    start = time.perf_counter()
    try:
        with threadpool_limits(limits=args.threads):
            body = COMMANDS[args.command](args)
        manifest = _manifest(args, argv, body, time.perf_counter() - start)
        _write_json(Path(args.out) / "manifest.json", manifest)
    except (UsageError, cfgfile.ConfigError, KeyError) as exc:
        print(f"cfrec: error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"cfrec: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, ValueError, OSError) as exc:
        print(f"cfrec: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
