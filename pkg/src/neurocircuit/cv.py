"""Cross-validation drivers: stratified k-fold and leave-one-site-out.

Each fold trains from a fold-specific seed, computes group templates from its
training split only, and evaluates the restored best checkpoint on the held
out subjects.  Folds are independent, so they can run in worker processes;
results are keyed by fold index and identical to the serial path.

A run directory is self-describing:

    run_root/
      config.json           resolved configuration
      metrics.json          per-fold and aggregate metrics
      fold0/ ... foldK/     checkpoint.bin, history.csv, split.json, metrics.json
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .cohort import CircuitAtlas, Cohort
from .errors import DataError
from .features import group_templates
from .metrics import (basic_metrics, loso_splits, site_weighted_average,
                      stratified_kfold)
from .model import ModelDims, PipelineConfig, SubjectInput, build_inputs
from .rng import RngStream
from .train import (FitResult, TrainConfig, checkpoint_payload,
                    deterministic_scores, fit, save_checkpoint)

METRIC_KEYS = ("acc", "sen", "spe", "f1", "auc", "ap")


@dataclass
class FoldOutcome:
    fold: str
    test_ids: list[str]
    train_ids: list[str]
    metrics: dict[str, float | None]
    scores: np.ndarray
    labels: np.ndarray
    result: FitResult | None = None


def split_train_val(train_idx: np.ndarray, labels: np.ndarray, fraction: float,
                    seed: int, tag: str) -> tuple[np.ndarray, np.ndarray]:
    """Stratified validation carve-out from a training index set."""
    if not 0.0 < fraction < 1.0:
        raise DataError(f"val fraction must be in (0, 1), got {fraction}")
    val: list[int] = []
    for cls in np.unique(labels[train_idx]):
        cls_idx = train_idx[labels[train_idx] == cls]
        perm = RngStream(seed, f"val/{tag}/class{cls}").permutation(len(cls_idx))
        take = max(1, int(round(fraction * len(cls_idx))))
        val.extend(cls_idx[perm[:take]])
    val_arr = np.array(sorted(val), dtype=int)
    train_arr = np.setdiff1d(train_idx, val_arr)
    return train_arr, val_arr


def check_no_leakage(train_ids: list[str], test_ids: list[str]) -> int:
    """Number of identity violations between train and test (must be 0)."""
    return len(set(train_ids) & set(test_ids))


def run_fold(inputs: list[SubjectInput], atlas: CircuitAtlas, dims: ModelDims,
             cfg: TrainConfig, train_idx: np.ndarray, test_idx: np.ndarray,
             tag: str) -> FoldOutcome:
    labels = np.array([s.label for s in inputs], dtype=int)
    if check_no_leakage([inputs[i].id for i in train_idx],
                        [inputs[i].id for i in test_idx]):
        raise DataError(f"fold {tag}: train/test overlap detected")
    tr_idx, val_idx = split_train_val(train_idx, labels, cfg.val_fraction,
                                      cfg.seed, tag)
    train = [inputs[i] for i in tr_idx]
    val = [inputs[i] for i in val_idx]
    test = [inputs[i] for i in test_idx]
    # templates come from the full training split (gradient + validation
    # subjects); held-out subjects never contribute
    tpl_pool = [inputs[i] for i in train_idx]
    templates = group_templates([s.fc for s in tpl_pool],
                                [s.label for s in tpl_pool])
    result = fit(train, val, templates, atlas, dims, cfg, label=f"fit/{tag}")
    scores = deterministic_scores(result.params, test, templates, atlas, dims,
                                  cfg, result.tau_at_best)
    y = np.array([s.label for s in test], dtype=int)
    return FoldOutcome(fold=tag,
                       test_ids=[s.id for s in test],
                       train_ids=[inputs[i].id for i in train_idx],
                       metrics=basic_metrics(y, scores),
                       scores=scores, labels=y, result=result)


def _fold_job(args) -> FoldOutcome:
    return run_fold(*args)


def aggregate(outcomes: list[FoldOutcome]) -> dict:
    """Mean/sd over folds plus a sample-size-weighted mean; absent metrics
    are skipped, never coerced to 0."""
    table: dict[str, dict] = {}
    for key in METRIC_KEYS:
        vals = [(o.metrics[key], o.metrics["n"]) for o in outcomes
                if o.metrics.get(key) is not None]
        if not vals:
            table[key] = {"mean": None, "sd": None, "weighted": None}
            continue
        v = np.array([x for x, _ in vals], dtype=np.float64)
        w = [int(n) for _, n in vals]
        table[key] = {"mean": float(v.mean()),
                      "sd": float(v.std(ddof=1)) if len(v) > 1 else 0.0,
                      "weighted": site_weighted_average(v.tolist(), w)}
    return table


def _run_splits(inputs, atlas, dims, cfg, splits, jobs: int) -> list[FoldOutcome]:
    args = [(inputs, atlas, dims, cfg, tr, te, tag) for tr, te, tag in splits]
    if jobs <= 1:
        return [_fold_job(a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_fold_job, args))


def run_kfold(cohort: Cohort, dims: ModelDims, pipe: PipelineConfig,
              cfg: TrainConfig, k: int = 5, jobs: int = 1,
              out_dir: str | Path | None = None) -> tuple[list[FoldOutcome], dict]:
    inputs = build_inputs(cohort, pipe)
    atlas = cohort.atlas or CircuitAtlas.even(cohort.n_regions)
    labels = [s.label for s in inputs]
    splits = [(tr, te, f"fold{i}") for i, (tr, te)
              in enumerate(stratified_kfold(labels, k, cfg.seed))]
    outcomes = _run_splits(inputs, atlas, dims, cfg, splits, jobs)
    agg = aggregate(outcomes)
    if out_dir is not None:
        write_run_dir(Path(out_dir), outcomes, agg, dims, pipe, cfg,
                      protocol={"kind": "kfold", "k": k})
    return outcomes, agg


def run_loso(cohort: Cohort, dims: ModelDims, pipe: PipelineConfig,
             cfg: TrainConfig, jobs: int = 1,
             out_dir: str | Path | None = None) -> tuple[list[FoldOutcome], dict]:
    inputs = build_inputs(cohort, pipe)
    atlas = cohort.atlas or CircuitAtlas.even(cohort.n_regions)
    sites = [s.site for s in inputs]
    splits = [(tr, te, f"site-{site}") for tr, te, site in loso_splits(sites)]
    outcomes = _run_splits(inputs, atlas, dims, cfg, splits, jobs)
    agg = aggregate(outcomes)
    agg["site_weighted_acc"] = site_weighted_average(
        [o.metrics["acc"] for o in outcomes],
        [o.metrics["n"] for o in outcomes])
    if out_dir is not None:
        write_run_dir(Path(out_dir), outcomes, agg, dims, pipe, cfg,
                      protocol={"kind": "loso"})
    return outcomes, agg


def compare_variants(cohort: Cohort, dims: ModelDims, pipe: PipelineConfig,
                     cfg: TrainConfig, variants: tuple[str, ...],
                     seeds: tuple[int, ...] = (1, 2, 3, 4, 5),
                     jobs: int = 1) -> dict[str, dict]:
    """Train every model variant once per seed on a fresh 75/25 stratified
    split and report held-out AUC per seed plus the mean over seeds.

    The split is re-drawn from each seed so the comparison averages over both
    initialization and partition noise; within one seed all variants share the
    identical split, so differences are attributable to the architecture.
    """
    inputs = build_inputs(cohort, pipe)
    atlas = cohort.atlas or CircuitAtlas.even(cohort.n_regions)
    labels = [s.label for s in inputs]
    args = []
    for seed in seeds:
        train_idx, test_idx = stratified_kfold(labels, 4, seed)[0]
        for variant in variants:
            fold_cfg = replace(cfg, seed=seed, variant=variant)
            args.append((inputs, atlas, dims, fold_cfg, train_idx, test_idx,
                         f"variant/{variant}/seed{seed}"))
    if jobs <= 1:
        outcomes = [_fold_job(a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_fold_job, args))
    table: dict[str, dict] = {v: {"auc_per_seed": [], "seeds": list(seeds)}
                              for v in variants}
    for (_, _, _, fold_cfg, _, _, _), outcome in zip(args, outcomes):
        table[fold_cfg.variant]["auc_per_seed"].append(outcome.metrics["auc"])
    for stats in table.values():
        stats["mean_auc"] = float(np.mean(stats["auc_per_seed"]))
    return table


# ---------------------------------------------------------------- run dirs


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    return x


def write_run_dir(root: Path, outcomes: list[FoldOutcome], agg: dict,
                  dims: ModelDims, pipe: PipelineConfig, cfg: TrainConfig,
                  protocol: dict) -> None:
    root.mkdir(parents=True, exist_ok=True)
    config = {"protocol": protocol, "dims": asdict(dims), "pipeline": asdict(pipe),
              "train": asdict(cfg)}
    (root / "config.json").write_text(json.dumps(config, indent=1) + "\n")
    summary = {"folds": {}, "aggregate": agg}
    for o in outcomes:
        fold_dir = root / o.fold
        fold_dir.mkdir(exist_ok=True)
        if o.result is not None:
            params, extra = checkpoint_payload(o.result, cfg)
            save_checkpoint(fold_dir / "checkpoint.bin", params, extra)
            with open(fold_dir / "history.csv", "w", newline="") as fh:
                if o.result.history:
                    cols = list(o.result.history[0])
                    writer = csv.DictWriter(fh, fieldnames=cols)
                    writer.writeheader()
                    writer.writerows(o.result.history)
        (fold_dir / "split.json").write_text(json.dumps(
            {"train_ids": o.train_ids, "test_ids": o.test_ids}, indent=1) + "\n")
        (fold_dir / "metrics.json").write_text(json.dumps(
            {"metrics": {k: _jsonable(v) for k, v in o.metrics.items()},
             "scores": o.scores.tolist(),
             "labels": o.labels.tolist(),
             "test_ids": o.test_ids}, indent=1) + "\n")
        summary["folds"][o.fold] = {k: _jsonable(v) for k, v in o.metrics.items()}
    (root / "metrics.json").write_text(json.dumps(summary, indent=1) + "\n")
