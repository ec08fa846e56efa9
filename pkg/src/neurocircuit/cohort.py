"""Cohort container, circuit atlas, and on-disk round-trip.

Disk layout of a cohort directory:

    cohort.json   manifest: dims, tr, subject records (series file per subject)
    atlas.txt     lines "region_index,circuit_name"
    series/*.csv  one file per subject, rows = regions, columns = timepoints

Series are written with 17 significant digits so the round-trip is lossless
for float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

CIRCUITS = ("DMN", "SN", "FPN", "LN", "RN")

MIN_REGIONS = 10  # five circuits with at least two regions each
MIN_TIMEPOINTS = 20


@dataclass
class Subject:
    id: str
    site: str
    label: int
    age: float
    sex: int
    education: float
    series: np.ndarray  # (n_regions, n_timepoints)


@dataclass
class CircuitAtlas:
    """Partition of region indices into the five canonical circuits."""

    members: dict[str, list[int]]

    def __post_init__(self):
        if tuple(self.members) != CIRCUITS:
            raise DataError(f"atlas must define circuits {CIRCUITS} in order, "
                            f"got {tuple(self.members)}")
        seen: list[int] = []
        for name, idx in self.members.items():
            if len(idx) < 2:
                raise DataError(f"circuit {name} has {len(idx)} regions; need >= 2")
            seen.extend(idx)
        n = len(seen)
        if sorted(seen) != list(range(n)):
            raise DataError("atlas must cover every region exactly once")
        self.n_regions = n

    def circuit_of(self) -> np.ndarray:
        """(n,) array mapping region index -> circuit position (0..4)."""
        out = np.empty(self.n_regions, dtype=int)
        for c, name in enumerate(CIRCUITS):
            out[self.members[name]] = c
        return out

    @staticmethod
    def even(n_regions: int) -> "CircuitAtlas":
        """Default atlas: consecutive blocks of regions, sizes as even as possible."""
        if n_regions < MIN_REGIONS:
            raise DataError(f"need >= {MIN_REGIONS} regions for five circuits, got {n_regions}")
        blocks = np.array_split(np.arange(n_regions), len(CIRCUITS))
        return CircuitAtlas({name: blk.tolist() for name, blk in zip(CIRCUITS, blocks)})


@dataclass
class Cohort:
    n_regions: int
    n_timepoints: int
    tr: float
    subjects: list[Subject] = field(default_factory=list)
    atlas: CircuitAtlas | None = None

    def __post_init__(self):
        if self.n_regions < MIN_REGIONS:
            raise DataError(f"cohort needs >= {MIN_REGIONS} regions, got {self.n_regions}")
        if self.n_timepoints < MIN_TIMEPOINTS:
            raise DataError(f"cohort needs >= {MIN_TIMEPOINTS} timepoints, got {self.n_timepoints}")
        if self.tr <= 0:
            raise DataError(f"tr must be positive, got {self.tr}")
        ids = [s.id for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise DataError("subject ids must be unique")
        for s in self.subjects:
            validate_subject(s, self.n_regions, self.n_timepoints)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.subjects], dtype=int)

    @property
    def sites(self) -> list[str]:
        return sorted({s.site for s in self.subjects})


def validate_subject(s: Subject, n_regions: int, n_timepoints: int) -> None:
    if s.label not in (0, 1):
        raise DataError(f"subject {s.id}: label must be 0 or 1, got {s.label}")
    if s.series.shape != (n_regions, n_timepoints):
        raise DataError(f"subject {s.id}: series shape {s.series.shape} != "
                        f"({n_regions}, {n_timepoints})")
    if not np.all(np.isfinite(s.series)):
        raise DataError(f"subject {s.id}: series contains non-finite values")
    if np.any(s.series.std(axis=1) == 0):
        raise DataError(f"subject {s.id}: a region has zero temporal variance")


def save_cohort(cohort: Cohort, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    (out / "series").mkdir(parents=True, exist_ok=True)
    records = []
    for s in cohort.subjects:
        fname = f"series/{s.id}.csv"
        np.savetxt(out / fname, s.series, fmt="%.17g", delimiter=",")
        records.append({"id": s.id, "site": s.site, "label": s.label,
                        "age": s.age, "sex": s.sex, "education": s.education,
                        "series": fname})
    manifest = {"n_regions": cohort.n_regions, "n_timepoints": cohort.n_timepoints,
                "tr": cohort.tr, "subjects": records}
    (out / "cohort.json").write_text(json.dumps(manifest, indent=1) + "\n")
    atlas = cohort.atlas or CircuitAtlas.even(cohort.n_regions)
    lines = [f"{i},{name}" for name in CIRCUITS for i in atlas.members[name]]
    (out / "atlas.txt").write_text("\n".join(lines) + "\n")
    return out


def load_atlas(path: str | Path) -> CircuitAtlas:
    p = Path(path)
    if not p.exists():
        raise DataError(f"atlas file not found: {p}")
    members: dict[str, list[int]] = {name: [] for name in CIRCUITS}
    for ln, line in enumerate(p.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise DataError(f"{p}:{ln}: expected 'index,circuit', got {line!r}")
        idx, name = parts[0].strip(), parts[1].strip()
        if name not in members:
            raise DataError(f"{p}:{ln}: unknown circuit {name!r}; expected one of {CIRCUITS}")
        members[name].append(int(idx))
    return CircuitAtlas(members)


def load_cohort(cohort_dir: str | Path) -> Cohort:
    root = Path(cohort_dir)
    manifest_path = root / "cohort.json"
    if not manifest_path.exists():
        raise DataError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"malformed manifest {manifest_path}: {e}") from e
    for key in ("n_regions", "n_timepoints", "tr", "subjects"):
        if key not in manifest:
            raise DataError(f"manifest {manifest_path} missing key '{key}'")
    n, t = int(manifest["n_regions"]), int(manifest["n_timepoints"])
    subjects = []
    for rec in manifest["subjects"]:
        spath = root / rec["series"]
        if not spath.exists():
            raise DataError(f"series file not found: {spath}")
        series = np.loadtxt(spath, delimiter=",", ndmin=2)
        if series.shape != (n, t):
            raise DataError(f"subject {rec['id']}: series file {spath.name} has shape "
                            f"{series.shape}, expected ({n}, {t})")
        subjects.append(Subject(id=str(rec["id"]), site=str(rec["site"]),
                                label=int(rec["label"]), age=float(rec["age"]),
                                sex=int(rec["sex"]), education=float(rec["education"]),
                                series=series))
    atlas = load_atlas(root / "atlas.txt") if (root / "atlas.txt").exists() else None
    return Cohort(n_regions=n, n_timepoints=t, tr=float(manifest["tr"]),
                  subjects=subjects, atlas=atlas)
