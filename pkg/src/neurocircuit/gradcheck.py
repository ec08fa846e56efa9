"""Finite-difference audit of the composite objective at the model level.

The per-op engine checks cover each primitive in isolation; this harness
differentiates the full training loss — fusion, pooling, causal branch,
classifier, schedule weights, dropout and sampling noise included — and
compares a handful of sampled coordinates per parameter tensor against
central differences.  All stochastic draws come from streams re-seeded with
the same labels on every evaluation, so the two loss evaluations of each
difference see bit-identical noise and the objective is a deterministic
function of the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cohort import CircuitAtlas
from .features import group_templates
from .model import (
    ModelDims,
    SubjectInput,
    build_inputs,
    forward,
    init_params,
    wrap_params,
)
from .rng import RngStream
from .synth import generate_cohort, synth_preset
from .train import TrainConfig, composite_loss, schedule_at, training_runtime
from .autodiff import Tape

DEFAULT_EPOCH = 10  # mid-schedule: every loss term carries nonzero weight


@dataclass(frozen=True)
class GroupReport:
    group: str
    n_coords: int
    max_rel_err: float


@dataclass(frozen=True)
class GradCheckReport:
    groups: list[GroupReport]
    worst: float
    threshold: float
    step: float

    @property
    def passed(self) -> bool:
        return self.worst < self.threshold


def build_check_batch(dims: ModelDims, seed: int = 0,
                      batch_size: int = 4) -> tuple[
        list[SubjectInput], dict[int, np.ndarray], CircuitAtlas]:
    """Small balanced batch plus templates on a fresh synthetic cohort."""
    from .model import pipeline_for

    scale = "desk" if dims.n_regions <= 32 else "full"
    base = synth_preset(f"{scale}-strong" if scale == "desk" else "full")
    per_site = tuple([max(4, batch_size)] * len(base.sites))
    cohort = generate_cohort(synth_preset(
        "desk-strong" if scale == "desk" else "full",
        seed=seed, per_site=per_site))
    inputs = build_inputs(cohort, pipeline_for(scale))
    templates = group_templates([s.fc for s in inputs],
                                [s.label for s in inputs])
    return inputs[:batch_size], templates, CircuitAtlas.even(dims.n_regions)


def _loss_value(params: dict[str, np.ndarray], batch, labels, templates,
                atlas, dims, cfg, sched, noise_seed: int) -> float:
    rt = training_runtime(cfg, sched, dims.n_regions,
                          RngStream(noise_seed, "gradcheck/noise"))
    tape = Tape()
    wrapped = wrap_params(tape, params, trainable=False)
    out = forward(tape, wrapped, batch, templates, atlas, dims, rt,
                  edge_dropout=cfg.edge_dropout)
    total, _ = composite_loss(out, labels, cfg, sched)
    return float(total.values)


def model_grad_check(dims: ModelDims, cfg: TrainConfig, seed: int = 0,
                     n_coords: int = 2, step: float = 1e-5,
                     threshold: float = 1e-4,
                     epoch: int = DEFAULT_EPOCH) -> GradCheckReport:
    """Compare analytic gradients of the composite loss with central
    differences on ``n_coords`` sampled coordinates per parameter tensor."""
    batch, templates, atlas = build_check_batch(dims, seed=seed)
    labels = np.array([s.label for s in batch], dtype=int)
    sched = schedule_at(epoch, cfg)
    root = RngStream(seed, "gradcheck")
    params = init_params(dims, root.child("init"), depth=cfg.depth)

    # analytic gradients, single reverse pass
    rt = training_runtime(cfg, sched, dims.n_regions,
                          RngStream(seed, "gradcheck/noise"))
    tape = Tape()
    wrapped = wrap_params(tape, params)
    out = forward(tape, wrapped, batch, templates, atlas, dims, rt,
                  edge_dropout=cfg.edge_dropout)
    total, _ = composite_loss(out, labels, cfg, sched)
    tape.backward(total)
    analytic = {k: wrapped[k].grad for k in params}

    worst_by_group: dict[str, float] = {}
    coords_by_group: dict[str, int] = {}
    for name in sorted(params):
        flat = params[name].reshape(-1)
        count = min(n_coords, flat.size)
        picks = root.child(f"coords/{name}").permutation(flat.size)[:count]
        group = name.split("/")[0]
        for idx in picks:
            original = flat[idx]
            flat[idx] = original + step
            up = _loss_value(params, batch, labels, templates, atlas, dims,
                             cfg, sched, seed)
            flat[idx] = original - step
            down = _loss_value(params, batch, labels, templates, atlas, dims,
                               cfg, sched, seed)
            flat[idx] = original
            fd = (up - down) / (2.0 * step)
            a = analytic[name].reshape(-1)[idx]
            rel = abs(a - fd) / max(1.0, abs(fd))
            worst_by_group[group] = max(worst_by_group.get(group, 0.0), rel)
            coords_by_group[group] = coords_by_group.get(group, 0) + 1

    groups = [GroupReport(group=g, n_coords=coords_by_group[g],
                          max_rel_err=worst_by_group[g])
              for g in sorted(worst_by_group)]
    worst = max(worst_by_group.values())
    return GradCheckReport(groups=groups, worst=worst, threshold=threshold,
                           step=step)
