"""Command-line interface: ``drp {generate,train,eval,heatmap,gradcheck,ablate}``.

Precedence for settings is flags > config file > built-in defaults. Every
command first writes the fully resolved configuration to
``<out>/effective_config.json``.

Exit codes: 0 success, 1 gradient check failed, 2 input or configuration
error, 3 undefined metric, 4 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from drp import pipeline_io
from drp.config import RunConfig, load_config
from drp.data import Dataset
from drp.encoding import FeatureSpec
from drp.errors import ConfigurationError, DRPError, TrainingError, UndefinedMetricError
from drp.metrics import (
    MetricsReport,
    aggregate,
    evaluate_scores,
    heatmap,
    reports_to_csv,
)
from drp.model import VARIANTS, DRPModel
from drp.numerics import check_gradients, make_rng
from drp.synthworld import generate_world, summarize
from drp.training import Checkpoint, train

log = logging.getLogger("drp")

EXIT_OK = 0
EXIT_GRADCHECK = 1
EXIT_INPUT = 2
EXIT_UNDEFINED_METRIC = 3
EXIT_DIVERGED = 4

GRADCHECK_H = 1e-4
GRADCHECK_TOL = 1e-3
GRADCHECK_BATCH = 8


# --- configuration plumbing ------------------------------------------------

def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Load the config file and apply flag overrides."""
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.world.seed = args.seed
        cfg.train.seed = args.seed
    if args.variant is not None:
        cfg.train.variant = args.variant
    if args.delta is not None:
        cfg.train.delta = args.delta
    if args.rank_d is not None:
        cfg.train.rank_d = args.rank_d
    if args.dataset is not None:
        cfg.paths.dataset = args.dataset
    if args.checkpoint is not None:
        cfg.paths.checkpoint = args.checkpoint
    if args.out is not None:
        cfg.paths.reports = args.out
    cfg.validate()
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.paths.reports)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def echo_config(cfg: RunConfig) -> Path:
    out = _out_dir(cfg)
    _write(out / "effective_config.json", cfg.to_json())
    return out


def _load_splits(cfg: RunConfig, lenient: bool):
    result = pipeline_io.load(cfg.paths.dataset, lenient=lenient)
    result.spec.validate()
    split = pipeline_io.time_split(result.dataset, cfg.eval.split)
    return result, split


def _require_file(path: str, what: str) -> None:
    if not Path(path).is_file():
        raise FileNotFoundError(f"{what} not found: {path}")


# --- commands ----------------------------------------------------------------

def cmd_generate(cfg: RunConfig, args) -> int:
    out = echo_config(cfg)
    data = generate_world(cfg.world)
    Path(cfg.paths.dataset).parent.mkdir(parents=True, exist_ok=True)
    pipeline_io.write(data, cfg.paths.dataset)
    summary = summarize(data)
    _write(out / "world_summary.json", json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n")
    try:
        split = pipeline_io.time_split(data, cfg.eval.split)
        _write(out / "split_summary.csv", pipeline_io.split_summary_csv(data, split))
    except DRPError as exc:  # a tiny world may not split; the dataset itself is still valid
        log.warning("split summary skipped: %s", exc)
    print(f"wrote {cfg.paths.dataset}")
    print(summary.format())
    return EXIT_OK


def _epoch_csv(epoch_log: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("epoch", "train_loss", "val_auc"))
    for row in epoch_log:
        w.writerow((row["epoch"], repr(row["train_loss"]), repr(row["val_auc"])))
    return buf.getvalue()


def cmd_train(cfg: RunConfig, args) -> int:
    out = echo_config(cfg)
    _require_file(cfg.paths.dataset, "dataset")
    loaded, split = _load_splits(cfg, args.lenient)
    tr, va, _ = split.apply(loaded.dataset)
    epoch_log: list[dict] = []
    ckpt = train(cfg.train, loaded.spec, cfg.model, tr, va, epoch_log=epoch_log)
    Path(cfg.paths.checkpoint).parent.mkdir(parents=True, exist_ok=True)
    ckpt.save(cfg.paths.checkpoint)
    _write(out / "epochs.csv", _epoch_csv(epoch_log))
    best = max(ckpt.val_auc)
    print(f"variant={cfg.train.variant} epochs={ckpt.epochs_trained} best_val_auc={best!r}")
    print(f"wrote {cfg.paths.checkpoint}")
    return EXIT_OK


def evaluate_checkpoint(ckpt: Checkpoint, data: Dataset, cutoff: int = 10, label: str = "") -> MetricsReport:
    model = ckpt.build_model()
    model.encoder.check_ids(data)
    scores = model.predict(data)["final"]
    return evaluate_scores(scores, data.label, data.session_id, cutoff, label)


def cmd_eval(cfg: RunConfig, args) -> int:
    out = echo_config(cfg)
    _require_file(cfg.paths.checkpoint, "checkpoint")
    _require_file(cfg.paths.dataset, "dataset")
    ckpt = Checkpoint.load(cfg.paths.checkpoint)
    loaded, split = _load_splits(cfg, args.lenient)
    test = loaded.dataset.take(split.test)
    report = evaluate_checkpoint(ckpt, test, cfg.eval.cutoff, ckpt.train.variant)
    _write(out / "metrics.csv", reports_to_csv([report]))
    _write(out / "metrics.json", report.to_json() + "\n")
    print(reports_to_csv([report]), end="")
    return EXIT_OK


def cmd_heatmap(cfg: RunConfig, args) -> int:
    out = echo_config(cfg)
    _require_file(cfg.paths.checkpoint, "checkpoint")
    _require_file(cfg.paths.dataset, "dataset")
    ckpt = Checkpoint.load(cfg.paths.checkpoint)
    loaded, split = _load_splits(cfg, args.lenient)
    test = loaded.dataset.take(split.test)
    table = heatmap(ckpt, test, cfg.eval.heatmap_mode)
    _write(out / "heatmap.csv", table.to_csv())
    _write(out / "heatmap.json", table.to_json() + "\n")
    print(table.to_csv(), end="")
    if table.warning:
        print(f"warning: fewer than 10 examples in area(s) {table.sparse_areas}", file=sys.stderr)
    return EXIT_OK


def gradcheck_model(model: DRPModel, batch: Dataset, seed: int = 0, n_samples: int = 32):
    """Finite-difference check of every trainable block on ``batch`` (sum-reduced loss)."""
    def closure(backward: bool) -> float:
        return model.loss(batch, backward=backward, reduction="sum")

    return check_gradients(closure, model.params, h=GRADCHECK_H, tolerance=GRADCHECK_TOL,
                           n_samples=n_samples, seed=seed, signature=model.activation_signature)


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    out = echo_config(cfg)
    if Path(cfg.paths.dataset).is_file():
        data = pipeline_io.load(cfg.paths.dataset, lenient=args.lenient)
        spec, pool = data.spec, data.dataset
    else:
        world = replace(cfg.world, n_interactions=max(GRADCHECK_BATCH, 400))
        pool = generate_world(world)
        spec = FeatureSpec(world.n_users, world.n_queries, world.n_items)
    spec.validate()
    rng = make_rng(cfg.train.seed)
    batch = pool.take(np.sort(rng.choice(len(pool), size=min(GRADCHECK_BATCH, len(pool)), replace=False)))
    t = cfg.train
    model = DRPModel(spec, cfg.model, t.variant, seed=t.seed, delta=t.delta, rank=t.rank_d,
                     alpha_init=t.alpha_init, beta_init=t.beta_init)
    report = gradcheck_model(model, batch, seed=t.seed)
    lines = [report.summary()] + [f"{name}\t{err:.3e}" for name, err in report.errors.items()]
    _write(out / "gradcheck.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK if report.passed else EXIT_GRADCHECK


def _ablation_run(job) -> MetricsReport:
    """One (variant, seed) train + test evaluation; runs in a worker process."""
    cfg, variant, seed, spec, tr, va, te = job
    tcfg = replace(cfg.train, variant=variant, seed=seed)
    ckpt = train(tcfg, spec, cfg.model, tr, va)
    return evaluate_checkpoint(ckpt, te, cfg.eval.cutoff, f"{variant}/seed{seed}")


def run_ablation(cfg: RunConfig, spec: FeatureSpec, tr: Dataset, va: Dataset, te: Dataset,
                 variants=VARIANTS, workers: int = 1) -> dict[str, list[MetricsReport]]:
    """Train every variant for seeds ``train.seed .. train.seed + n_seeds - 1``."""
    seeds = range(cfg.train.seed, cfg.train.seed + cfg.eval.n_seeds)
    jobs = [(cfg, v, s, spec, tr, va, te) for v in variants for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_ablation_run, jobs))
    else:
        reports = [_ablation_run(job) for job in jobs]
    out: dict[str, list[MetricsReport]] = {v: [] for v in variants}
    for (_, v, _, *_rest), rep in zip(jobs, reports):
        out[v].append(rep)
    return out


ABLATION_HEADER = ("variant", "auc_mean", "auc_std", "logloss_mean", "logloss_std",
                   "ndcg@10_mean", "ndcg@10_std", "hr@10_mean", "hr@10_std", "n_seeds")


def ablation_table(results: dict[str, list[MetricsReport]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ABLATION_HEADER)
    for variant, reports in results.items():
        agg = aggregate(reports)
        row = [variant]
        for key in ("auc", "logloss", "ndcg", "hr"):
            row += [repr(agg[key][0]), repr(agg[key][1])]
        w.writerow(row + [len(reports)])
    return buf.getvalue()


def _workers() -> int:
    raw = os.environ.get("DRP_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigurationError(f"DRP_THREADS must be an integer, got {raw!r}") from None


def cmd_ablate(cfg: RunConfig, args) -> int:
    out = echo_config(cfg)
    _require_file(cfg.paths.dataset, "dataset")
    loaded, split = _load_splits(cfg, args.lenient)
    tr, va, te = split.apply(loaded.dataset)
    results = run_ablation(cfg, loaded.spec, tr, va, te, workers=_workers())
    runs = [r for reps in results.values() for r in reps]
    _write(out / "ablation_runs.csv", reports_to_csv(runs))
    table = ablation_table(results)
    _write(out / "ablation.csv", table)
    print(table, end="")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "heatmap": cmd_heatmap,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drp", description=__doc__.split("\n\n")[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (sections world/model/train/eval/paths)")
    common.add_argument("--seed", type=int, help="overrides world.seed and train.seed")
    common.add_argument("--variant", choices=VARIANTS, help="overrides train.variant")
    common.add_argument("--delta", type=float, help="overrides train.delta")
    common.add_argument("--rank-d", type=int, dest="rank_d", help="overrides train.rank_d")
    common.add_argument("--out", help="report directory (overrides paths.reports)")
    common.add_argument("--dataset", help="dataset path (overrides paths.dataset)")
    common.add_argument("--checkpoint", help="checkpoint path (overrides paths.checkpoint)")
    common.add_argument("--lenient", action="store_true", help="skip malformed dataset lines with a warning")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "generate a synthetic world and write it as JSONL",
        "train": "train one variant and save the best checkpoint",
        "eval": "score the test split with a checkpoint",
        "heatmap": "per-area mean predictions of a checkpoint",
        "gradcheck": "finite-difference check of every trainable block",
        "ablate": "train all variants over several seeds and tabulate mean/stddev",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except TrainingError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except UndefinedMetricError as exc:
        print(f"error: metric undefined: {exc}", file=sys.stderr)
        return EXIT_UNDEFINED_METRIC
    except (DRPError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
