"""Bundled desk- and full-scale configurations.

Desk scale is the fully testable configuration (16 regions, 120 timepoints,
width 32).  Full scale mirrors the published hyperparameters (width 128,
batch 32, 300 epochs, weight decay 0.1); it shares every interface and only
changes dataclass values.  The desk preset lowers the weight decay: with
coupled-L2 Adam at 0.1 the small model's parameters decay to zero before the
classification signal accumulates, so it would sit at the ln(2) plateau
forever.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import DataError
from .model import ModelDims, PipelineConfig, desk_dims, full_dims, pipeline_for
from .train import TrainConfig


@dataclass(frozen=True)
class Preset:
    name: str
    dims: ModelDims
    pipe: PipelineConfig
    train: TrainConfig


def desk_preset(**train_overrides) -> Preset:
    cfg = TrainConfig(batch_size=8, max_epochs=50, patience=20, weight_decay=0.005)
    return Preset("desk", desk_dims(), pipeline_for("desk"),
                  replace(cfg, **train_overrides))


def full_preset(**train_overrides) -> Preset:
    cfg = TrainConfig(batch_size=32, max_epochs=300, patience=20, weight_decay=0.1)
    return Preset("full", full_dims(), pipeline_for("full"),
                  replace(cfg, **train_overrides))


def get_preset(name: str, **train_overrides) -> Preset:
    if name == "desk":
        return desk_preset(**train_overrides)
    if name == "full":
        return full_preset(**train_overrides)
    raise DataError(f"unknown preset '{name}'; known: desk, full")
