"""Classification metrics and cross-validation splitters.

AUC counts concordant positive/negative pairs exactly (ties credit 1/2), so
it matches a brute-force pair enumeration bit for bit.  Metrics that are
undefined for a given label mix (AUC with one class, sensitivity with no
positives, ...) are reported as None, never as 0.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError
from .rng import RngStream

THRESHOLD = 0.5  # scores >= THRESHOLD predict the positive class


def _validate(y, scores) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=int)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1:
        raise DataError(f"labels {y.shape} and scores {s.shape} must be equal-length 1-D")
    if y.size == 0:
        raise DataError("empty label array")
    if not np.all(np.isin(y, (0, 1))):
        raise DataError("labels must be binary 0/1")
    if not np.all(np.isfinite(s)):
        raise DataError("scores contain non-finite values")
    return y, s


def confusion_counts(y, scores, threshold: float = THRESHOLD) -> dict[str, int]:
    y, s = _validate(y, scores)
    pred = (s >= threshold).astype(int)
    return {"tp": int(np.sum((pred == 1) & (y == 1))),
            "fp": int(np.sum((pred == 1) & (y == 0))),
            "tn": int(np.sum((pred == 0) & (y == 0))),
            "fn": int(np.sum((pred == 0) & (y == 1)))}


def roc_auc(y, scores) -> float | None:
    """Exact Mann-Whitney pair counting; None when only one class present."""
    y, s = _validate(y, scores)
    pos = s[y == 1]
    neg = np.sort(s[y == 0])
    if len(pos) == 0 or len(neg) == 0:
        return None
    below = np.searchsorted(neg, pos, side="left")
    equal = np.searchsorted(neg, pos, side="right") - below
    return float((below.sum() + 0.5 * equal.sum()) / (len(pos) * len(neg)))


def average_precision(y, scores) -> float | None:
    """Step-interpolated AP; tied scores are processed as one block."""
    y, s = _validate(y, scores)
    n_pos = int(y.sum())
    if n_pos == 0:
        return None
    order = np.argsort(-s, kind="mergesort")
    ys, ss = y[order], s[order]
    ap = 0.0
    tp = fp = 0
    i = 0
    while i < len(ys):
        j = i
        while j < len(ys) and ss[j] == ss[i]:
            j += 1
        block_tp = int(ys[i:j].sum())
        tp += block_tp
        fp += (j - i) - block_tp
        if block_tp:
            ap += (block_tp / n_pos) * (tp / (tp + fp))
        i = j
    return float(ap)


def basic_metrics(y, scores, threshold: float = THRESHOLD) -> dict[str, float | None]:
    """ACC/SEN/SPE/F1/AUC/AP; undefined entries are None."""
    y, s = _validate(y, scores)
    c = confusion_counts(y, s, threshold)
    tp, fp, tn, fn = c["tp"], c["fp"], c["tn"], c["fn"]
    n = tp + fp + tn + fn
    acc = (tp + tn) / n
    sen = tp / (tp + fn) if (tp + fn) else None
    spe = tn / (tn + fp) if (tn + fp) else None
    prec = tp / (tp + fp) if (tp + fp) else None
    f1 = None
    if sen is not None and prec is not None and (prec + sen) > 0:
        f1 = 2 * prec * sen / (prec + sen)
    return {"acc": acc, "sen": sen, "spe": spe, "f1": f1,
            "auc": roc_auc(y, s), "ap": average_precision(y, s), "n": n}


def decision_curve(y, scores, thresholds) -> list[dict[str, float]]:
    """Net benefit NB(t) = TP/N - FP/N * t/(1-t) at each threshold in (0,1),
    with treat-all and treat-none references."""
    y, s = _validate(y, scores)
    n = len(y)
    prev = y.mean()
    rows = []
    for t in np.asarray(thresholds, dtype=np.float64):
        if not 0.0 < t < 1.0:
            raise DataError(f"decision threshold must be in (0, 1), got {t}")
        c = confusion_counts(y, s, threshold=t)
        odds = t / (1.0 - t)
        rows.append({"threshold": float(t),
                     "net_benefit": c["tp"] / n - c["fp"] / n * odds,
                     "treat_all": prev - (1.0 - prev) * odds,
                     "treat_none": 0.0})
    return rows


# ------------------------------------------------------------- splitters


def stratified_kfold(labels, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Deterministic stratified folds; per-fold class counts differ from the
    even split by at most one subject."""
    y = np.asarray(labels, dtype=int)
    if k < 2:
        raise DataError(f"k must be >= 2, got {k}")
    if k > len(y):
        raise DataError(f"k={k} exceeds cohort size {len(y)}")
    fold_of = np.empty(len(y), dtype=int)
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        if len(idx) < k:
            raise DataError(
                f"class {cls} has {len(idx)} subjects, fewer than k={k} folds")
        perm = RngStream(seed, f"kfold/class{cls}").permutation(len(idx))
        for pos, i in enumerate(idx[perm]):
            fold_of[i] = pos % k
    splits = []
    for f in range(k):
        test = np.flatnonzero(fold_of == f)
        train = np.flatnonzero(fold_of != f)
        splits.append((train, test))
    return splits


def loso_splits(sites: list[str]) -> list[tuple[np.ndarray, np.ndarray, str]]:
    """Leave-one-site-out: one split per site, test = that site."""
    arr = np.asarray(sites)
    unique = sorted(set(sites))
    if len(unique) < 2:
        raise DataError("leave-one-site-out needs at least two sites")
    out = []
    for site in unique:
        test = np.flatnonzero(arr == site)
        train = np.flatnonzero(arr != site)
        out.append((train, test, site))
    return out


def site_weighted_average(values: list[float], sizes: list[int]) -> float:
    """Sample-size-weighted mean, e.g. 0.6/0.8 at sizes 10/30 -> 0.75."""
    if len(values) != len(sizes) or not values:
        raise DataError("values and sizes must be equal-length and non-empty")
    w = np.asarray(sizes, dtype=np.float64)
    return float((np.asarray(values) * w).sum() / w.sum())
