"""Shared miniature test rig: a 10-region model and hand-built subjects so
unit tests exercise the full network without synthetic-cohort generation."""

import numpy as np

from neurocircuit.cohort import CircuitAtlas
from neurocircuit.graph import knn_graph
from neurocircuit.model import ModelDims, SubjectInput
from neurocircuit.rng import RngStream
from neurocircuit.train import TrainConfig

N, T = 10, 12


def tiny_dims() -> ModelDims:
    return ModelDims(n_regions=N, n_timepoints=T, embed=8, heads=2, ff=16,
                     ve_hidden=6, ve_latent=4, mix_hidden=4, attn_dim=8,
                     causal_latent=4, clf_hidden=(8, 4))


def make_subject(i: int, label: int, rng: RngStream,
                 site: str = "lab") -> SubjectInput:
    x1 = rng.child(f"x1/{i}").normal((N, N + 5))
    x2 = rng.child(f"x2/{i}").normal((N, T))
    fc = rng.child(f"fc/{i}").normal((N, N))
    fc = (fc + fc.T) / 2
    np.fill_diagonal(fc, 0.0)
    return SubjectInput(id=f"s{i:02d}", site=site, label=label,
                        x1=x1, x2=x2, fc=fc, graph=knn_graph(fc, 3))


def tiny_rig(n_subjects: int = 6, seed: int = 0):
    rng = RngStream(seed, "test/train-rig")
    subjects = [make_subject(i, i % 2, rng) for i in range(n_subjects)]
    tpl = {}
    for lbl in (0, 1):
        m = rng.child(f"tpl{lbl}").normal((N, N))
        m = (m + m.T) / 2
        np.fill_diagonal(m, 0.0)
        tpl[lbl] = m
    return subjects, tpl, CircuitAtlas.even(N)


def tiny_cfg(**kw) -> TrainConfig:
    base = dict(batch_size=4, max_epochs=2, patience=5, kl_warmup=2,
                dropout=0.1, clf_dropout=0.1, edge_dropout=0.1, seed=5)
    base.update(kw)
    return TrainConfig(**base)
