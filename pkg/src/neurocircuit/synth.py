"""Synthetic multi-site rs-fMRI cohorts with a planted group effect.

Each subject's region series mixes band-limited circuit latents (0.01-0.08 Hz)
through per-region loadings, a fixed ring of weak cross-circuit couplings,
site gain/offset, and white noise.  The diagnosis label enters the generative
process only through two delta-scaled terms:

* the RN -> DMN coupling is raised from ``base_cross`` to ``base_cross + delta``;
* the DMN latent amplitude is multiplied by ``1 + delta``.

With ``delta = 0`` the label is therefore independent of the data by
construction, which is what the chance-level acceptance check relies on.
All draws go through labeled RngStreams keyed by the recipe seed, so cohorts
are bit-reproducible and label flips at delta=0 leave the series unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .cohort import CIRCUITS, CircuitAtlas, Cohort, Subject
from .errors import DataError
from .features import bandpass_filter
from .rng import RngStream


@dataclass(frozen=True)
class SynthSpec:
    n_regions: int = 16
    n_timepoints: int = 120
    tr: float = 2.0
    sites: tuple[str, ...] = ("siteA", "siteB")
    per_site: tuple[int, ...] = (40, 40)
    delta: float = 1.2
    noise: float = 0.6
    ring_coupling: float = 0.25
    base_cross: float = 0.1
    latent_band: tuple[float, float] = (0.01, 0.08)
    site_gain_sd: float = 0.15
    site_offset_sd: float = 0.3
    seed: int = 11

    def __post_init__(self):
        if len(self.sites) != len(self.per_site):
            raise DataError("sites and per_site lengths differ")
        if any(n < 4 for n in self.per_site):
            raise DataError("each site needs >= 4 subjects so both labels appear")
        if self.noise <= 0:
            raise DataError("noise must be positive (regions need temporal variance)")
        if self.delta < 0:
            raise DataError(f"delta must be >= 0, got {self.delta}")


PRESETS: dict[str, SynthSpec] = {
    "desk-strong": SynthSpec(),
    "desk-null": SynthSpec(delta=0.0, per_site=(60, 60), seed=12),
    "desk-loso": SynthSpec(sites=("siteA", "siteB", "siteC", "siteD"),
                           per_site=(24, 24, 24, 24), delta=1.5, seed=13),
    "full": SynthSpec(n_regions=116, n_timepoints=180,
                      sites=("siteA", "siteB", "siteC", "siteD"),
                      per_site=(120, 120, 120, 120), seed=14),
}


def synth_preset(name: str, **overrides) -> SynthSpec:
    if name not in PRESETS:
        raise DataError(f"unknown synth preset '{name}'; known: {sorted(PRESETS)}")
    return replace(PRESETS[name], **overrides)


def _site_labels(count: int) -> list[int]:
    # alternate so every site contains both classes at any size >= 2
    return [i % 2 for i in range(count)]


def _subject_series(spec: SynthSpec, atlas: CircuitAtlas, label: int,
                    site_gain: float, site_offset: float, rng: RngStream) -> np.ndarray:
    n, t = spec.n_regions, spec.n_timepoints
    lo, hi = spec.latent_band

    latents = {}
    for name in CIRCUITS:
        raw = rng.child(f"latent/{name}").normal(t)
        band = bandpass_filter(raw, lo, hi, spec.tr)
        sd = band.std()
        if sd == 0:
            raise DataError("latent band produced a constant series; widen the band")
        latents[name] = band / sd

    amp = {name: 1.0 for name in CIRCUITS}
    amp["DMN"] = 1.0 + spec.delta * label
    cross = {name: spec.ring_coupling for name in CIRCUITS}
    rn_to_dmn = spec.base_cross + spec.delta * label

    series = np.empty((n, t))
    circuit_of = atlas.circuit_of()
    loadings = 0.8 + 0.4 * rng.child("loadings").uniform(n)
    noise = rng.child("noise").normal((n, t))
    ring_prev = {CIRCUITS[i]: CIRCUITS[i - 1] for i in range(len(CIRCUITS))}
    for i in range(n):
        cname = CIRCUITS[circuit_of[i]]
        base = amp[cname] * loadings[i] * latents[cname]
        base = base + cross[cname] * latents[ring_prev[cname]]
        if cname == "DMN":
            base = base + rn_to_dmn * latents["RN"]
        series[i] = site_gain * base + site_offset + spec.noise * noise[i]
    return series


def generate_cohort(spec: SynthSpec) -> Cohort:
    """Deterministic cohort from a spec; same spec -> bit-identical cohort."""
    atlas = CircuitAtlas.even(spec.n_regions)
    root = RngStream(spec.seed, "synth")
    site_params = {}
    for site in spec.sites:
        s = root.child(f"site/{site}")
        site_params[site] = (1.0 + spec.site_gain_sd * float(s.normal()),
                             spec.site_offset_sd * float(s.normal()))
    subjects = []
    for site, count in zip(spec.sites, spec.per_site):
        gain, offset = site_params[site]
        labels = _site_labels(count)
        for i, label in enumerate(labels):
            sid = f"{site}_{i:03d}"
            srng = root.child(f"subject/{sid}")
            demo = srng.child("demographics")
            age = 18.0 + 47.0 * float(demo.uniform())
            sex = int(demo.uniform() < 0.5)
            education = 8.0 + 12.0 * float(demo.uniform())
            series = _subject_series(spec, atlas, label, gain, offset, srng)
            subjects.append(Subject(id=sid, site=site, label=label, age=age,
                                    sex=sex, education=education, series=series))
    return Cohort(n_regions=spec.n_regions, n_timepoints=spec.n_timepoints,
                  tr=spec.tr, subjects=subjects, atlas=atlas)
