"""Functional-connectivity features from region time series.

Conventions used throughout:

* series arrays are (n_regions, n_timepoints), float64;
* Pearson FC is symmetric with unit diagonal;
* Fisher z-transform clamps correlations to +/-(1 - 1e-7) and zeroes the
  diagonal so downstream sums are finite;
* the canonical per-subject FC is the mean over sliding windows of the
  Fisher-z FC, which is what graphs, priors, and group templates consume.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

_CLAMP = 1.0 - 1e-7


def pearson_fc(series: np.ndarray) -> np.ndarray:
    """Pairwise Pearson correlation of rows; rejects zero-variance rows."""
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 2:
        raise DataError(f"series must be 2-D (regions x time), got shape {x.shape}")
    sd = x.std(axis=1)
    if np.any(sd == 0):
        bad = int(np.flatnonzero(sd == 0)[0])
        raise DataError(f"region {bad} has zero variance; correlation undefined")
    xc = (x - x.mean(axis=1, keepdims=True)) / sd[:, None]
    r = (xc @ xc.T) / x.shape[1]
    r = np.clip(r, -1.0, 1.0)
    np.fill_diagonal(r, 1.0)
    return (r + r.T) / 2.0


def fisher_z(fc: np.ndarray) -> np.ndarray:
    """atanh of off-diagonal correlations (clamped); diagonal forced to 0."""
    r = np.clip(np.asarray(fc, dtype=np.float64), -_CLAMP, _CLAMP)
    z = np.arctanh(r)
    np.fill_diagonal(z, 0.0)
    return z


def band_bins(n_timepoints: int, tr: float, lo: float, hi: float) -> np.ndarray:
    """Indices of rFFT bins with lo <= f <= hi (Hz)."""
    if tr <= 0:
        raise DataError(f"tr must be positive, got {tr}")
    if not 0 <= lo <= hi:
        raise DataError(f"invalid band [{lo}, {hi}]")
    freqs = np.fft.rfftfreq(n_timepoints, d=tr)
    return np.flatnonzero((freqs >= lo) & (freqs <= hi))


def bandpass_filter(series: np.ndarray, lo: float, hi: float, tr: float) -> np.ndarray:
    """Ideal rectangular FFT band-pass along the last axis.

    Bins with lo <= f <= hi are kept and everything else is zeroed, so the
    mean (DC bin) is removed unless lo == 0.
    """
    x = np.asarray(series, dtype=np.float64)
    t = x.shape[-1]
    keep = band_bins(t, tr, lo, hi)
    spec = np.fft.rfft(x, axis=-1)
    mask = np.zeros(spec.shape[-1])
    mask[keep] = 1.0
    return np.fft.irfft(spec * mask, n=t, axis=-1)


def band_power(series: np.ndarray, lo: float, hi: float, tr: float) -> np.ndarray:
    """Per-region variance contribution of the [lo, hi] Hz band.

    Computed from the periodogram with the usual one-sided weights, excluding
    the DC bin; summing over the full (0, nyquist] range recovers the
    population variance of each row.
    """
    x = np.asarray(series, dtype=np.float64)
    t = x.shape[-1]
    spec = np.fft.rfft(x, axis=-1)
    weights = np.full(spec.shape[-1], 2.0)
    weights[0] = 0.0  # DC carries the mean, not variance
    if t % 2 == 0:
        weights[-1] = 1.0
    power = weights * np.abs(spec) ** 2 / t**2
    keep = band_bins(t, tr, lo, hi)
    keep = keep[keep > 0]
    return power[..., keep].sum(axis=-1)


def sliding_windows(n_timepoints: int, win: int, stride: int) -> list[tuple[int, int]]:
    """Start/stop pairs of full windows; at least one window must fit."""
    if win < 2 or stride < 1:
        raise DataError(f"invalid window parameters win={win} stride={stride}")
    if win > n_timepoints:
        raise DataError(f"window {win} longer than series {n_timepoints}")
    return [(s, s + win) for s in range(0, n_timepoints - win + 1, stride)]


def windowed_fisher_fc(series: np.ndarray, win: int, stride: int) -> np.ndarray:
    """Mean over sliding windows of the Fisher-z FC."""
    spans = sliding_windows(series.shape[-1], win, stride)
    acc = np.zeros((series.shape[0], series.shape[0]))
    for a, b in spans:
        acc += fisher_z(pearson_fc(series[:, a:b]))
    return acc / len(spans)


LOW_POWER_BAND = (0.01, 0.1)

# demographic scaling keeps the static feature block O(1)
AGE_SCALE = 100.0
EDU_SCALE = 20.0


@dataclass
class StaticFeatures:
    """Per-subject node features and the FC matrix they derive from."""

    fc: np.ndarray        # (n, n) windowed-mean Fisher-z FC
    variance: np.ndarray  # (n,)
    low_power: np.ndarray  # (n,)
    x1: np.ndarray        # (n, n + 5) node feature matrix


def static_features(series: np.ndarray, tr: float, win: int, stride: int,
                    age: float, sex: int, education: float) -> StaticFeatures:
    """Node feature matrix: FC row, variance, low-frequency power, and
    broadcast demographics, in that column order."""
    fc = windowed_fisher_fc(series, win, stride)
    var = series.var(axis=1)
    lfp = band_power(series, *LOW_POWER_BAND, tr)
    n = series.shape[0]
    demo = np.tile([age / AGE_SCALE, float(sex), education / EDU_SCALE], (n, 1))
    x1 = np.concatenate([fc, var[:, None], lfp[:, None], demo], axis=1)
    return StaticFeatures(fc=fc, variance=var, low_power=lfp, x1=x1)


def group_templates(fcs: list[np.ndarray], labels: list[int]) -> dict[int, np.ndarray]:
    """Label-conditional mean FC matrices {0: control, 1: case}.

    Both labels must be present; templates must only ever be computed from
    training subjects.
    """
    y = np.asarray(labels)
    if not (np.any(y == 0) and np.any(y == 1)):
        raise DataError("group templates need both labels in the training split")
    stacked = np.stack(fcs)
    return {0: stacked[y == 0].mean(axis=0), 1: stacked[y == 1].mean(axis=0)}
