"""Post-hoc reports over trained fold checkpoints.

Three analyses, all pure reads of stored models:

* frequency-band ablation — re-evaluate each fold's model on band-filtered
  series (static features recomputed, templates and weights untouched) and
  compare per-band AUCs with a paired t-test across folds;
* hierarchy statistics — per region, the level each subject's soft masks
  assign it to (argmax), group proportions, the MDD-HC difference normalized
  by the global maximum so the largest magnitude maps to exactly +-1, and a
  chi-square independence test on the group x level contingency table;
* attention report — group-mean circuit attention with only the top-2
  outgoing edges per source retained (self-edges excluded, ties broken
  toward the lower target index), normalized jointly across both groups.

Retained edges with weight 0 are reported as zeros; everything dropped by
the top-2 rule is listed separately as pruned, so the two cases are never
conflated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .cohort import CIRCUITS, CircuitAtlas, Cohort
from .errors import DataError
from .features import bandpass_filter
from .metrics import roc_auc
from .model import ModelDims, PipelineConfig, SubjectInput, build_inputs, predict_outputs
from .stats import TTestResult, chi2_independence, paired_t_test
from .train import TrainConfig, evaluation_runtime_for

BAND_LOW = (0.01, 0.08)
BAND_HIGH = (0.10, 0.25)

GROUP_NAMES = {1: "MDD", 0: "HC"}


@dataclass(frozen=True)
class FoldModel:
    """The pieces of a trained fold needed for post-hoc evaluation."""
    tag: str
    params: dict[str, np.ndarray]
    templates: dict[int, np.ndarray]
    tau: float
    test_ids: list[str]


def fold_model(outcome) -> FoldModel:
    """Adapter from an in-memory cross-validation FoldOutcome."""
    if outcome.result is None:
        raise DataError(f"fold {outcome.fold} carries no trained model")
    return FoldModel(tag=outcome.fold, params=outcome.result.params,
                     templates=outcome.result.templates,
                     tau=outcome.result.tau_at_best,
                     test_ids=list(outcome.test_ids))


# --------------------------------------------------------- shared evaluation

def _subject_index(inputs: list[SubjectInput]) -> dict[str, int]:
    return {s.id: i for i, s in enumerate(inputs)}


def _eval_fold(model: FoldModel, inputs: list[SubjectInput], atlas: CircuitAtlas,
               dims: ModelDims, cfg: TrainConfig):
    by_id = _subject_index(inputs)
    missing = [i for i in model.test_ids if i not in by_id]
    if missing:
        raise DataError(f"fold {model.tag}: test subjects absent from cohort: "
                        f"{missing[:3]}")
    subjects = [inputs[by_id[i]] for i in model.test_ids]
    rt = evaluation_runtime_for(cfg, dims.n_regions, model.tau)
    scores, out = predict_outputs(model.params, subjects, model.templates,
                                  atlas, dims, rt)
    return subjects, scores, out


# -------------------------------------------------------- frequency ablation

@dataclass(frozen=True)
class FrequencyAblation:
    folds: list[str]
    band_low: tuple[float, float]
    band_high: tuple[float, float]
    auc_low: list[float]
    auc_high: list[float]
    ttest: TTestResult | None  # None when fewer than 2 folds

    @property
    def mean_diff(self) -> float:
        return float(np.mean(self.auc_low) - np.mean(self.auc_high))


def band_limited_cohort(cohort: Cohort, band: tuple[float, float]) -> Cohort:
    """Copy of the cohort with every series band-pass filtered."""
    subjects = [replace(s, series=bandpass_filter(s.series, band[0], band[1],
                                                  cohort.tr))
                for s in cohort.subjects]
    return replace(cohort, subjects=subjects)


def _band_aucs(models: list[FoldModel], cohort: Cohort, pipe: PipelineConfig,
               atlas: CircuitAtlas, dims: ModelDims, cfg: TrainConfig,
               band: tuple[float, float]) -> list[float]:
    inputs = build_inputs(band_limited_cohort(cohort, band), pipe)
    aucs = []
    for model in models:
        subjects, scores, _ = _eval_fold(model, inputs, atlas, dims, cfg)
        labels = np.array([s.label for s in subjects], dtype=int)
        auc = roc_auc(labels, scores)
        if auc is None:
            raise DataError(f"fold {model.tag}: AUC undefined (single-class "
                            f"test split)")
        aucs.append(auc)
    return aucs


def frequency_ablation(models: list[FoldModel], cohort: Cohort,
                       pipe: PipelineConfig, atlas: CircuitAtlas,
                       dims: ModelDims, cfg: TrainConfig,
                       bands: tuple[tuple[float, float], tuple[float, float]]
                       = (BAND_LOW, BAND_HIGH)) -> FrequencyAblation:
    """Per-fold AUC on low- vs high-band-filtered inputs, paired t across folds."""
    if not models:
        raise DataError("frequency ablation needs at least one trained fold")
    lo_band, hi_band = bands
    auc_low = _band_aucs(models, cohort, pipe, atlas, dims, cfg, lo_band)
    auc_high = _band_aucs(models, cohort, pipe, atlas, dims, cfg, hi_band)
    ttest = paired_t_test(auc_low, auc_high) if len(models) >= 2 else None
    return FrequencyAblation(folds=[m.tag for m in models], band_low=lo_band,
                             band_high=hi_band, auc_low=auc_low,
                             auc_high=auc_high, ttest=ttest)


# ------------------------------------------------------------ mask snapshots

@dataclass(frozen=True)
class Snapshots:
    """Out-of-sample per-subject mask and attention snapshots, each subject
    evaluated by the fold that held it out, in cohort order."""
    ids: list[str]
    labels: np.ndarray     # (S,)
    masks: np.ndarray      # (S, n_regions, depth)
    attention: np.ndarray  # (S, 5, 5)
    scores: np.ndarray     # (S,)


def collect_snapshots(models: list[FoldModel], cohort: Cohort,
                      pipe: PipelineConfig, atlas: CircuitAtlas,
                      dims: ModelDims, cfg: TrainConfig) -> Snapshots:
    inputs = build_inputs(cohort, pipe)
    seen: dict[str, tuple[int, np.ndarray, np.ndarray, float]] = {}
    for model in models:
        subjects, scores, out = _eval_fold(model, inputs, atlas, dims, cfg)
        for j, s in enumerate(subjects):
            if s.id in seen:
                raise DataError(f"subject {s.id} appears in several folds' "
                                f"test splits")
            seen[s.id] = (s.label, out.masks[j], out.attention[j],
                          float(scores[j]))
    order = [s.id for s in inputs if s.id in seen]
    labels = np.array([seen[i][0] for i in order], dtype=int)
    masks = np.stack([seen[i][1] for i in order])
    attention = np.stack([seen[i][2] for i in order])
    scores = np.array([seen[i][3] for i in order])
    return Snapshots(ids=order, labels=labels, masks=masks,
                     attention=attention, scores=scores)


# ----------------------------------------------------------- hierarchy stats

@dataclass(frozen=True)
class HierarchyStats:
    p_mdd: np.ndarray      # (n_regions, depth) level proportions, MDD group
    p_hc: np.ndarray       # (n_regions, depth) level proportions, HC group
    diff_norm: np.ndarray  # (n_regions, depth) in [-1, 1]
    chi2: np.ndarray       # (n_regions,)
    p: np.ndarray          # (n_regions,)


def hierarchy_stats(masks: np.ndarray, labels: np.ndarray) -> HierarchyStats:
    """Group-level statistics of per-region level assignments (mask argmax)."""
    masks = np.asarray(masks, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if masks.ndim != 3:
        raise DataError(f"masks must be (subjects, regions, levels), "
                        f"got shape {masks.shape}")
    if masks.shape[0] != labels.size:
        raise DataError("one mask block per subject required")
    mdd, hc = labels == 1, labels == 0
    if not mdd.any() or not hc.any():
        raise DataError("hierarchy statistics need both diagnostic groups")
    _, n_regions, depth = masks.shape
    assigned = masks.argmax(axis=2)  # (S, n_regions)
    counts = {g: np.zeros((n_regions, depth)) for g in ("mdd", "hc")}
    for name, sel in (("mdd", mdd), ("hc", hc)):
        for level in range(depth):
            counts[name][:, level] = (assigned[sel] == level).sum(axis=0)
    p_mdd = counts["mdd"] / mdd.sum()
    p_hc = counts["hc"] / hc.sum()
    diff = p_mdd - p_hc
    peak = np.abs(diff).max()
    diff_norm = diff / peak if peak > 0 else np.zeros_like(diff)
    chi2 = np.empty(n_regions)
    pvals = np.empty(n_regions)
    for r in range(n_regions):
        res = chi2_independence(np.stack([counts["mdd"][r], counts["hc"][r]]))
        chi2[r], pvals[r] = res.stat, res.p
    return HierarchyStats(p_mdd=p_mdd, p_hc=p_hc, diff_norm=diff_norm,
                          chi2=chi2, p=pvals)


# ---------------------------------------------------------- attention report

@dataclass(frozen=True)
class Edge:
    group: str
    source: int
    target: int
    raw: float
    norm: float


@dataclass(frozen=True)
class AttentionReport:
    mean_mdd: np.ndarray          # (5, 5)
    mean_hc: np.ndarray           # (5, 5)
    edges: list[Edge]             # retained after top-2 pruning
    pruned: list[tuple[str, int, int]]  # (group, source, target) dropped


def _top2_targets(row: np.ndarray, source: int) -> list[int]:
    candidates = [t for t in range(row.size) if t != source]
    candidates.sort(key=lambda t: (-row[t], t))
    return candidates[:2]


def attention_report(attention: np.ndarray, labels: np.ndarray) -> AttentionReport:
    """Group means with top-2-per-source pruning and joint normalization."""
    attention = np.asarray(attention, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if attention.ndim != 3 or attention.shape[1] != attention.shape[2]:
        raise DataError(f"attention snapshots must be (subjects, c, c), "
                        f"got shape {attention.shape}")
    mdd, hc = labels == 1, labels == 0
    if not mdd.any() or not hc.any():
        raise DataError("attention report needs both diagnostic groups")
    means = {"MDD": attention[mdd].mean(axis=0), "HC": attention[hc].mean(axis=0)}
    n = attention.shape[1]
    kept: list[tuple[str, int, int, float]] = []
    pruned: list[tuple[str, int, int]] = []
    for group in ("MDD", "HC"):
        for src in range(n):
            top = _top2_targets(means[group][src], src)
            for tgt in range(n):
                if tgt == src:
                    continue
                if tgt in top:
                    kept.append((group, src, tgt, float(means[group][src, tgt])))
                else:
                    pruned.append((group, src, tgt))
    peak = max((w for *_, w in kept), default=0.0)
    edges = [Edge(group=g, source=s, target=t, raw=w,
                  norm=w / peak if peak > 0 else 0.0)
             for g, s, t, w in kept]
    return AttentionReport(mean_mdd=means["MDD"], mean_hc=means["HC"],
                           edges=edges, pruned=pruned)


# ------------------------------------------------------------------- writers

def write_freq_ablation(outdir: str | Path, freq: FrequencyAblation) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    blob: dict = {
        "band_low": list(freq.band_low), "band_high": list(freq.band_high),
        "folds": freq.folds, "auc_low": freq.auc_low, "auc_high": freq.auc_high,
        "mean_low": float(np.mean(freq.auc_low)),
        "sd_low": float(np.std(freq.auc_low, ddof=1)) if len(freq.auc_low) > 1 else None,
        "mean_high": float(np.mean(freq.auc_high)),
        "sd_high": float(np.std(freq.auc_high, ddof=1)) if len(freq.auc_high) > 1 else None,
        "mean_diff": freq.mean_diff,
    }
    if freq.ttest is not None:
        blob["ttest"] = {"t": freq.ttest.t, "df": freq.ttest.df,
                         "p": freq.ttest.p, "degenerate": freq.ttest.degenerate}
    else:
        blob["ttest"] = None
    (outdir / "freq_ablation.json").write_text(json.dumps(blob, indent=2))


def write_hierarchy(outdir: str | Path, hier: HierarchyStats,
                    atlas: CircuitAtlas) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    circuit_of = atlas.circuit_of()
    n_regions, depth = hier.p_mdd.shape
    lines = ["region,circuit,level,p_mdd,p_hc,diff_norm,chi2,p"]
    for r in range(n_regions):
        for level in range(depth):
            lines.append(f"{r},{CIRCUITS[circuit_of[r]]},{level + 1},"
                         f"{hier.p_mdd[r, level]:.17g},{hier.p_hc[r, level]:.17g},"
                         f"{hier.diff_norm[r, level]:.17g},"
                         f"{hier.chi2[r]:.17g},{hier.p[r]:.17g}")
    (outdir / "hierarchy_stats.csv").write_text("\n".join(lines) + "\n")


def write_attention(outdir: str | Path, attn: AttentionReport) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    lines = ["group,source,target,raw_weight,norm_weight"]
    for e in attn.edges:
        lines.append(f"{e.group},{CIRCUITS[e.source]},{CIRCUITS[e.target]},"
                     f"{e.raw:.17g},{e.norm:.17g}")
    (outdir / "attention_edges.csv").write_text("\n".join(lines) + "\n")

    chord = {"nodes": list(CIRCUITS), "groups": {}}
    for group in ("MDD", "HC"):
        chord["groups"][group] = {
            "edges": [{"source": CIRCUITS[e.source], "target": CIRCUITS[e.target],
                       "raw": e.raw, "norm": e.norm}
                      for e in attn.edges if e.group == group],
            "pruned": [{"source": CIRCUITS[s], "target": CIRCUITS[t]}
                       for g, s, t in attn.pruned if g == group],
        }
    (outdir / "chord.json").write_text(json.dumps(chord, indent=2))


def write_interpret_dir(outdir: str | Path, freq: FrequencyAblation,
                        hier: HierarchyStats, attn: AttentionReport,
                        atlas: CircuitAtlas) -> None:
    """Emit freq_ablation.json, hierarchy_stats.csv, attention_edges.csv,
    chord.json into ``outdir``."""
    write_freq_ablation(outdir, freq)
    write_hierarchy(outdir, hier, atlas)
    write_attention(outdir, attn)
