"""Command-line interface for the whole pipeline.

Subcommands: ``synth`` (write a cohort directory), ``train`` (k-fold CV into
run directories), ``loso`` (leave-one-site-out), ``eval`` (re-score stored
checkpoints and verify stored metrics), ``interpret`` (post-hoc reports),
``gradcheck`` (finite-difference audit).

Configuration is layered, last writer wins: built-in defaults, then a
``--config`` JSON file whose top-level keys mirror flag names (plus an
optional ``train`` object holding training-field overrides), then explicit
flags.  Progress lines are ``key=value`` pairs on stdout; failures print a
single ``error=<kind> message="..."`` line on stderr.  Exit codes: 0 success,
1 usage error, 2 data/invariant error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .cohort import CircuitAtlas, load_cohort, save_cohort
from .cv import run_kfold, run_loso
from .errors import DataError, NumericalError
from .gradcheck import model_grad_check
from .interpret import (
    FoldModel,
    attention_report,
    collect_snapshots,
    frequency_ablation,
    hierarchy_stats,
    write_attention,
    write_freq_ablation,
    write_hierarchy,
)
from .metrics import basic_metrics
from .model import ModelDims, PipelineConfig, build_inputs
from .presets import get_preset
from .synth import PRESETS as SYNTH_PRESETS
from .synth import generate_cohort, synth_preset
from .train import (
    TrainConfig,
    deterministic_scores,
    load_checkpoint,
    split_checkpoint,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

METRIC_TOL = 1e-10  # stored vs recomputed metric agreement required by eval

# TrainConfig fields that may appear as flags and in the config file
_TRAIN_FLAGS = ["lr", "weight_decay", "batch_size", "max_epochs", "patience",
                "dropout", "val_fraction", "depth", "variant", "tree_form",
                "causal_prior", "causal_beta", "eligibility", "edge_dropout",
                "seed", "hard_mask", "shared_eps"]


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    if isinstance(v, bool):
        return str(v).lower()
    return str(v)


def log(**kv) -> None:
    print(" ".join(f"{k}={_fmt(v)}" for k, v in kv.items()), flush=True)


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad flags; the contract reserves 2 for data
    errors, so usage problems are remapped to exit code 1."""

    def error(self, message):
        print(f'error=usage message="{message}"', file=sys.stderr)
        self.exit(EXIT_USAGE)


# -------------------------------------------------------------- config layer

def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise DataError(f"config file not found: {p}")
    try:
        blob = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"config file {p} is not valid JSON: {e}")
    if not isinstance(blob, dict):
        raise DataError(f"config file {p} must hold a JSON object at top level")
    return blob


def _resolve(args: argparse.Namespace, name: str, default=None):
    """defaults < config file < flag, last writer wins."""
    flag = getattr(args, name, None)
    if flag is not None:
        return flag
    file_cfg = getattr(args, "_file_cfg", {})
    if name in file_cfg and not isinstance(file_cfg[name], dict):
        return file_cfg[name]
    return default


def _train_overrides(args: argparse.Namespace) -> dict:
    file_train = getattr(args, "_file_cfg", {}).get("train", {})
    if not isinstance(file_train, dict):
        raise DataError("config key 'train' must be an object")
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(file_train) - known
    if unknown:
        raise DataError(f"unknown train config keys: {sorted(unknown)}")
    over = dict(file_train)
    for name in _TRAIN_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            over[name] = v
    return over


# ------------------------------------------------------- run-directory loads

def _load_run_config(root: Path) -> tuple[ModelDims, PipelineConfig, TrainConfig]:
    cfg_path = root / "config.json"
    if not cfg_path.exists():
        raise DataError(f"no config.json under {root}; not a run directory?")
    blob = json.loads(cfg_path.read_text())
    return (ModelDims(**blob["dims"]), PipelineConfig(**blob["pipeline"]),
            TrainConfig(**blob["train"]))


def _fold_dirs(root: Path) -> list[Path]:
    dirs = sorted(d for d in root.iterdir()
                  if d.is_dir() and (d / "checkpoint.bin").exists())
    if not dirs:
        raise DataError(f"no fold directories with checkpoints under {root}")
    return dirs


def _fold_model_from_dir(fold_dir: Path) -> FoldModel:
    entries = load_checkpoint(fold_dir / "checkpoint.bin")
    params, templates, meta = split_checkpoint(entries)
    split_path = fold_dir / "split.json"
    if not split_path.exists():
        raise DataError(f"missing {split_path}")
    split = json.loads(split_path.read_text())
    return FoldModel(tag=fold_dir.name, params=params, templates=templates,
                     tau=meta["tau"], test_ids=list(split["test_ids"]))


# ------------------------------------------------------------------ commands

def cmd_synth(args) -> int:
    preset = _resolve(args, "preset")
    if preset is None:
        raise DataError(f"synth needs --preset (one of {sorted(SYNTH_PRESETS)})")
    overrides = {}
    seed = _resolve(args, "seed")
    if seed is not None:
        overrides["seed"] = seed
    delta = _resolve(args, "delta")
    if delta is not None:
        overrides["delta"] = delta
    spec = synth_preset(preset, **overrides)
    cohort = generate_cohort(spec)
    out = Path(_resolve(args, "out", f"cohorts/{preset}-seed{spec.seed}"))
    save_cohort(cohort, out)
    log(cmd="synth", preset=preset, seed=spec.seed, delta=spec.delta,
        subjects=len(cohort.subjects), regions=cohort.n_regions,
        timepoints=cohort.n_timepoints, out=out)
    return EXIT_OK


def _log_outcomes(outcomes, agg) -> None:
    for o in outcomes:
        vals = {k: (float("nan") if v is None else v)
                for k, v in o.metrics.items()}
        log(fold=o.fold, **vals)
    for metric in ("auc", "acc"):
        if metric in agg:
            log(aggregate=metric, mean=agg[metric]["mean"],
                sd=agg[metric]["sd"], weighted=agg[metric]["weighted"])
    if "site_weighted_acc" in agg:
        log(aggregate="site_weighted_acc", value=agg["site_weighted_acc"])


def _cv_command(args, protocol: str) -> int:
    preset_name = _resolve(args, "preset", "desk")
    preset = get_preset(preset_name, **_train_overrides(args))
    cohort = load_cohort(_require(args, "cohort"))
    jobs = int(_resolve(args, "jobs", 1))
    if jobs < 1:
        raise DataError(f"--jobs must be >= 1, got {jobs}")
    if protocol == "kfold":
        folds = int(_resolve(args, "folds", 5))
        out = Path(_resolve(args, "out",
                            f"runs/kfold-{preset_name}-seed{preset.train.seed}"))
        outcomes, agg = run_kfold(cohort, preset.dims, preset.pipe, preset.train,
                                  k=folds, jobs=jobs, out_dir=out)
        log(cmd="train", protocol="kfold", folds=folds, jobs=jobs, out=out)
    else:
        out = Path(_resolve(args, "out",
                            f"runs/loso-{preset_name}-seed{preset.train.seed}"))
        outcomes, agg = run_loso(cohort, preset.dims, preset.pipe, preset.train,
                                 jobs=jobs, out_dir=out)
        log(cmd="loso", protocol="loso", jobs=jobs, out=out)
    _log_outcomes(outcomes, agg)
    return EXIT_OK


def cmd_train(args) -> int:
    return _cv_command(args, "kfold")


def cmd_loso(args) -> int:
    return _cv_command(args, "loso")


def _require(args, name: str) -> str:
    v = _resolve(args, name)
    if v is None:
        raise DataError(f"missing required option --{name.replace('_', '-')}")
    return v


def cmd_eval(args) -> int:
    run = Path(_require(args, "run"))
    if not run.exists():
        raise DataError(f"run directory not found: {run}")
    if (run / "checkpoint.bin").exists():
        root, fold_dirs = run.parent, [run]
    else:
        root, fold_dirs = run, _fold_dirs(run)
    dims, pipe, tcfg = _load_run_config(root)
    cohort = load_cohort(_require(args, "cohort"))
    inputs = build_inputs(cohort, pipe)
    atlas = cohort.atlas or CircuitAtlas.even(cohort.n_regions)
    by_id = {s.id: s for s in inputs}
    failures = 0
    for fd in fold_dirs:
        fm = _fold_model_from_dir(fd)
        missing = [i for i in fm.test_ids if i not in by_id]
        if missing:
            raise DataError(f"{fd.name}: cohort lacks subjects {missing[:3]}")
        subjects = [by_id[i] for i in fm.test_ids]
        scores = deterministic_scores(fm.params, subjects, fm.templates, atlas,
                                      dims, tcfg, fm.tau)
        labels = np.array([s.label for s in subjects], dtype=int)
        metrics = basic_metrics(labels, scores)
        vals = {k: (float("nan") if v is None else v) for k, v in metrics.items()}
        stored_path = fd / "metrics.json"
        reproduced = None
        if stored_path.exists():
            stored = json.loads(stored_path.read_text())["metrics"]
            reproduced = True
            for k, v in metrics.items():
                sv = stored.get(k)
                if v is None or sv is None:
                    ok = v is None and sv is None
                else:
                    ok = abs(v - sv) <= METRIC_TOL
                if not ok:
                    reproduced = False
            failures += 0 if reproduced else 1
        log(fold=fd.name, reproduced=reproduced, **vals)
    if failures:
        raise DataError(f"{failures} fold(s) failed to reproduce stored "
                        f"metrics within {METRIC_TOL}")
    return EXIT_OK


def cmd_interpret(args) -> int:
    run = Path(_require(args, "run"))
    if not run.exists():
        raise DataError(f"run directory not found: {run}")
    mode = _resolve(args, "mode", "all")
    dims, pipe, tcfg = _load_run_config(run)
    models = [_fold_model_from_dir(d) for d in _fold_dirs(run)]
    cohort = load_cohort(_require(args, "cohort"))
    atlas = cohort.atlas or CircuitAtlas.even(cohort.n_regions)
    out = Path(_resolve(args, "out", run / "interpret"))

    if mode in ("freq", "all"):
        freq = frequency_ablation(models, cohort, pipe, atlas, dims, tcfg)
        write_freq_ablation(out, freq)
        entry = {"mode": "freq",
                 "mean_low": float(np.mean(freq.auc_low)),
                 "mean_high": float(np.mean(freq.auc_high)),
                 "mean_diff": freq.mean_diff}
        if freq.ttest is not None:
            entry.update(t=freq.ttest.t, p=freq.ttest.p)
        log(**entry)
    if mode in ("hier", "attn", "all"):
        snaps = collect_snapshots(models, cohort, pipe, atlas, dims, tcfg)
        if mode in ("hier", "all"):
            hier = hierarchy_stats(snaps.masks, snaps.labels)
            write_hierarchy(out, hier, atlas)
            log(mode="hier", regions=hier.chi2.size,
                min_p=float(hier.p.min()), max_abs_diff=float(
                    np.abs(hier.diff_norm).max()))
        if mode in ("attn", "all"):
            attn = attention_report(snaps.attention, snaps.labels)
            write_attention(out, attn)
            log(mode="attn", edges=len(attn.edges), pruned=len(attn.pruned))
    log(cmd="interpret", out=out)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    preset_name = _resolve(args, "preset", "desk")
    preset = get_preset(preset_name, **_train_overrides(args))
    seed = int(_resolve(args, "seed", 0))
    coords = int(_resolve(args, "coords", 2))
    step = float(_resolve(args, "step", 1e-5))
    threshold = float(_resolve(args, "threshold", 1e-4))
    rep = model_grad_check(preset.dims, preset.train, seed=seed,
                           n_coords=coords, step=step, threshold=threshold)
    for g in rep.groups:
        log(group=g.group, coords=g.n_coords, max_rel_err=g.max_rel_err)
    log(cmd="gradcheck", worst=rep.worst, threshold=rep.threshold,
        passed=rep.passed)
    if not rep.passed:
        raise NumericalError(f"gradient check failed: max relative error "
                             f"{rep.worst:.3e} >= {rep.threshold:.0e}")
    return EXIT_OK


# -------------------------------------------------------------------- parser

def build_parser() -> _Parser:
    parser = _Parser(prog="neurocircuit",
                     description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def common(p):
        p.add_argument("--config",
                       help="JSON config file; flags override it (default none)")
        p.add_argument("--seed", type=int, help="stream seed (default preset's)")

    p = sub.add_parser("synth", help="generate and store a synthetic cohort")
    common(p)
    p.add_argument("--preset", choices=sorted(SYNTH_PRESETS),
                   help="cohort recipe (required)")
    p.add_argument("--delta", type=float,
                   help="planted effect size override (default preset's)")
    p.add_argument("--out", help="cohort directory (default cohorts/<preset>-seed<seed>)")
    p.set_defaults(func=cmd_synth)

    def train_flags(p):
        common(p)
        p.add_argument("--cohort", help="cohort directory from `synth` (required)")
        p.add_argument("--preset", choices=["desk", "full"],
                       help="model/training scale (default desk)")
        p.add_argument("--out",
                       help="run directory root (default runs/<protocol>-<preset>-seed<seed>)")
        p.add_argument("--jobs", type=int, help="parallel fold workers (default 1)")
        p.add_argument("--variant",
                       choices=["full", "standard_attention",
                                "deterministic_causal", "variational_only"],
                       help="architecture ablation switch (default full)")
        p.add_argument("--tree-form", dest="tree_form",
                       choices=["literal", "split"],
                       help="aggregation cell form (default literal)")
        p.add_argument("--depth", type=int, help="hierarchy depth (default 3)")
        p.add_argument("--causal-prior", dest="causal_prior",
                       choices=["zero", "input_mean"],
                       help="latent prior of the causal branch (default zero)")
        p.add_argument("--causal-beta", dest="causal_beta", type=float,
                       help="causal KL weight (default 0.1)")
        p.add_argument("--eligibility", type=float,
                       help="level-ascent mask threshold (default 0.5)")
        p.add_argument("--edge-dropout", dest="edge_dropout", type=float,
                       help="training-time edge dropout rate (default 0.1)")
        p.add_argument("--hard-mask", dest="hard_mask", action="store_const",
                       const=True,
                       help="straight-through hard level masks (default off)")
        p.add_argument("--shared-eps", dest="shared_eps", action="store_const",
                       const=True,
                       help="share branch reparameterization noise (default off)")
        p.add_argument("--lr", type=float, help="Adam step size (default 0.001)")
        p.add_argument("--weight-decay", dest="weight_decay", type=float,
                       help="coupled L2 strength (default desk 0.005, full 0.1)")
        p.add_argument("--batch-size", dest="batch_size", type=int,
                       help="subjects per step (default desk 8, full 32)")
        p.add_argument("--epochs", dest="max_epochs", type=int,
                       help="training epoch cap (default desk 50, full 300)")
        p.add_argument("--patience", type=int,
                       help="early-stopping patience (default 20)")
        p.add_argument("--dropout", type=float,
                       help="feature dropout rate (default 0.2)")
        p.add_argument("--val-fraction", dest="val_fraction", type=float,
                       help="per-class validation share (default 0.2)")

    p = sub.add_parser("train", help="stratified k-fold cross-validation")
    train_flags(p)
    p.add_argument("--folds", type=int, help="fold count (default 5)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("loso", help="leave-one-site-out cross-validation")
    train_flags(p)
    p.set_defaults(func=cmd_loso)

    p = sub.add_parser("eval", help="re-score a stored run on a cohort")
    common(p)
    p.add_argument("--run", help="run root or single fold directory (required)")
    p.add_argument("--cohort", help="cohort directory (required)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("interpret", help="post-hoc reports from a stored run")
    common(p)
    p.add_argument("--run", help="run root directory (required)")
    p.add_argument("--cohort", help="cohort directory (required)")
    p.add_argument("--mode", choices=["freq", "hier", "attn", "all"],
                   help="which report(s) to emit (default all)")
    p.add_argument("--out", help="report directory (default <run>/interpret)")
    p.set_defaults(func=cmd_interpret)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    common(p)
    p.add_argument("--preset", choices=["desk", "full"],
                   help="model scale (default desk)")
    p.add_argument("--coords", type=int,
                   help="sampled coordinates per tensor (default 2)")
    p.add_argument("--step", type=float,
                   help="central-difference step (default 1e-05)")
    p.add_argument("--threshold", type=float,
                   help="max relative error allowed (default 0.0001)")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args._file_cfg = _load_config_file(getattr(args, "config", None))
        return args.func(args)
    except DataError as e:
        print(f'error=data message="{e}"', file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f'error=numerical message="{e}"', file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f'error=data message="{e}"', file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
