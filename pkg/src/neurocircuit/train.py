"""Training loop: composite objective, schedules, early stopping, checkpoints.

The total loss is

    L = L_cls + w_kl * L_kl + w_causal * L_causal + w_prior * L_prior

with scheduled weights: the KL weight ramps linearly over the warmup epochs,
the adjacency-prior weight follows a half-cosine ramp, and the Gumbel
temperature decays exponentially.  Any auxiliary term whose weighted value
exceeds ``balance_ratio`` times the classification loss has its effective
weight multiplied by ``balance_factor`` for that step only.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import causal as causal_mod
from .autodiff import Tape, Tensor
from .cohort import CircuitAtlas
from .errors import DataError, NumericalError
from .model import (ModelDims, ModelOut, Runtime, SubjectInput, forward,
                    evaluation_runtime, init_params, predict_scores, wrap_params)
from .optim import AdamConfig, AdamState, adam_step
from .rng import RngStream


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 0.1
    batch_size: int = 8
    max_epochs: int = 50
    patience: int = 20
    clip_norm: float = 1.0
    dropout: float = 0.2
    clf_dropout: float = 0.5
    kl_max: float = 0.1
    kl_warmup: int = 20
    prior_lo: float = 0.2
    prior_hi: float = 1.0
    tau_start: float = 1.0
    tau_end: float = 0.5
    causal_weight: float = 1.0
    causal_beta: float = 0.1
    edge_dropout: float = 0.1
    depth: int = 3
    eligibility: float = 0.5
    hard_mask: bool = False
    tree_form: str = "literal"
    variant: str = "full"
    shared_eps: bool = False
    causal_prior: str = "zero"
    val_fraction: float = 0.2
    balance_ratio: float = 10.0
    balance_factor: float = 0.5
    seed: int = 7


@dataclass(frozen=True)
class Schedule:
    kl_weight: float
    prior_weight: float
    tau: float


def schedule_at(epoch: int, cfg: TrainConfig) -> Schedule:
    """Scheduled weights for one epoch (epoch 0 = first)."""
    kl_w = cfg.kl_max * min(1.0, epoch / cfg.kl_warmup)
    ramp = (1.0 - math.cos(math.pi * epoch / cfg.max_epochs)) / 2.0
    prior_w = cfg.prior_lo + (cfg.prior_hi - cfg.prior_lo) * ramp
    tau = cfg.tau_start * (cfg.tau_end / cfg.tau_start) ** (epoch / cfg.max_epochs)
    return Schedule(kl_weight=kl_w, prior_weight=prior_w, tau=tau)


def training_runtime(cfg: TrainConfig, sched: Schedule, n_regions: int,
                     rng: RngStream) -> Runtime:
    return Runtime(training=True, rng=rng, n_regions=n_regions, tau=sched.tau,
                   dropout=cfg.dropout, clf_dropout=cfg.clf_dropout,
                   depth=cfg.depth, eligibility=cfg.eligibility,
                   hard_mask=cfg.hard_mask, tree_form=cfg.tree_form,
                   variant=cfg.variant, shared_eps=cfg.shared_eps,
                   causal_prior=cfg.causal_prior, causal_beta=cfg.causal_beta)


def composite_loss(out: ModelOut, labels: np.ndarray, cfg: TrainConfig,
                   sched: Schedule) -> tuple[Tensor, dict[str, dict[str, float]]]:
    """Weighted total plus a per-term breakdown of values and effective weights.

    The breakdown satisfies total == sum(value * weight) to float precision,
    so logs can be audited against the scalar actually differentiated.
    """
    cls = ad.cross_entropy_with_logits(out.logits, labels)
    terms: list[tuple[str, Tensor, float]] = []
    if out.kl is not None:
        terms.append(("kl", out.kl, sched.kl_weight))
    if out.causal is not None and cfg.variant != "standard_attention":
        beta = 0.0 if cfg.variant == "deterministic_causal" else cfg.causal_beta
        causal = causal_mod.causal_loss(out.causal, labels, beta, cfg.variant)
        terms.append(("causal", causal, cfg.causal_weight))
    elif out.plain_loss is not None:
        terms.append(("causal", out.plain_loss, cfg.causal_weight))
    if out.prior is not None:
        terms.append(("prior", out.prior, sched.prior_weight))

    cls_value = float(cls.values)
    total = cls
    breakdown = {"cls": {"value": cls_value, "weight": 1.0}}
    for name, term, weight in terms:
        eff = weight
        if weight * float(term.values) > cfg.balance_ratio * cls_value:
            eff = weight * cfg.balance_factor
        if eff != 0.0:
            total = ad.add(total, ad.mul(term, eff))
        breakdown[name] = {"value": float(term.values), "weight": eff}
    return total, breakdown


def evaluation_runtime_for(cfg: TrainConfig, n_regions: int, tau: float) -> Runtime:
    """Evaluation runtime matching a training configuration's switches."""
    return evaluation_runtime(n_regions, tau=tau, depth=cfg.depth,
                              tree_form=cfg.tree_form, variant=cfg.variant,
                              eligibility=cfg.eligibility,
                              causal_prior=cfg.causal_prior,
                              causal_beta=cfg.causal_beta)


def deterministic_scores(params: dict[str, np.ndarray], subjects: list[SubjectInput],
                         templates: dict[int, np.ndarray], atlas: CircuitAtlas,
                         dims: ModelDims, cfg: TrainConfig, tau: float) -> np.ndarray:
    rt = evaluation_runtime_for(cfg, dims.n_regions, tau)
    return predict_scores(params, subjects, templates, atlas, dims, rt)


def train_epoch(params: dict[str, np.ndarray], opt_state: AdamState,
                train: list[SubjectInput], templates: dict[int, np.ndarray],
                atlas: CircuitAtlas, dims: ModelDims, cfg: TrainConfig,
                epoch: int, root: RngStream) -> dict[str, float]:
    """One pass over the training subjects; returns mean term values."""
    sched = schedule_at(epoch, cfg)
    order = root.child(f"epoch{epoch}/shuffle").permutation(len(train))
    adam_cfg = AdamConfig(lr=cfg.lr, weight_decay=cfg.weight_decay,
                          clip_norm=cfg.clip_norm)
    sums: dict[str, float] = {}
    weights_seen: dict[str, float] = {}
    n_batches = 0
    skipped = 0
    for start in range(0, len(order), cfg.batch_size):
        batch = [train[i] for i in order[start:start + cfg.batch_size]]
        labels = np.array([s.label for s in batch], dtype=int)
        rng = root.child(f"epoch{epoch}/batch{n_batches}")
        rt = training_runtime(cfg, sched, dims.n_regions, rng)
        tape = Tape()
        wrapped = wrap_params(tape, params)
        out = forward(tape, wrapped, batch, templates, atlas, dims, rt,
                      edge_dropout=cfg.edge_dropout)
        total, breakdown = composite_loss(out, labels, cfg, sched)
        tape.backward(total)
        grads = {k: wrapped[k].grad for k in params}
        try:
            adam_step(params, grads, opt_state, adam_cfg)
        except NumericalError:
            skipped += 1
            n_batches += 1
            continue
        sums["total"] = sums.get("total", 0.0) + float(total.values)
        for name, info in breakdown.items():
            sums[name] = sums.get(name, 0.0) + info["value"]
            weights_seen[name] = info["weight"]
        n_batches += 1
    done = max(n_batches - skipped, 1)
    stats = {f"loss_{k}": v / done for k, v in sums.items()}
    stats.update({f"weight_{k}": w for k, w in weights_seen.items()})
    stats["skipped_steps"] = float(skipped)
    stats.update({"kl_weight": sched.kl_weight, "prior_weight": sched.prior_weight,
                  "tau": sched.tau})
    return stats


@dataclass
class FitResult:
    params: dict[str, np.ndarray]
    templates: dict[int, np.ndarray]
    history: list[dict[str, float]] = field(default_factory=list)
    best_epoch: int = 0
    best_val_auc: float = 0.0
    tau_at_best: float = 0.5


def fit(train: list[SubjectInput], val: list[SubjectInput],
        templates: dict[int, np.ndarray], atlas: CircuitAtlas,
        dims: ModelDims, cfg: TrainConfig, label: str = "fit") -> FitResult:
    """Train with early stopping on validation AUC, accuracy as tie-break.

    Small validation splits make AUC coarse, so an untrained epoch can tie a
    trained one; on an exact (auc, acc) tie the latest snapshot is kept (its
    training loss is lower) without resetting the patience counter.
    """
    from .metrics import roc_auc  # local import avoids a cycle

    if not train or not val:
        raise DataError("fit needs non-empty train and val splits")
    root = RngStream(cfg.seed, label)
    params = init_params(dims, root.child("init"), depth=cfg.depth)
    opt_state = AdamState()
    val_labels = np.array([s.label for s in val], dtype=int)
    best = FitResult(params={k: v.copy() for k, v in params.items()},
                     templates=templates, best_epoch=-1, best_val_auc=-np.inf,
                     tau_at_best=schedule_at(0, cfg).tau)
    best_key = (-np.inf, -np.inf)
    history: list[dict[str, float]] = []
    since_best = 0
    for epoch in range(cfg.max_epochs):
        stats = train_epoch(params, opt_state, train, templates, atlas, dims,
                            cfg, epoch, root)
        tau = schedule_at(epoch, cfg).tau
        scores = deterministic_scores(params, val, templates, atlas, dims, cfg, tau)
        auc = roc_auc(val_labels, scores)
        acc = float(((scores >= 0.5).astype(int) == val_labels).mean())
        stats.update({"epoch": float(epoch),
                      "val_auc": float("nan") if auc is None else auc,
                      "val_acc": acc})
        history.append(stats)
        key = None if auc is None else (auc, acc)
        if key is not None and key >= best_key:
            best.params = {k: v.copy() for k, v in params.items()}
            best.best_epoch = epoch
            best.best_val_auc = auc
            best.tau_at_best = tau
        if key is not None and key > best_key:
            best_key = key
            since_best = 0
        else:
            since_best += 1
        if since_best >= cfg.patience:
            break
    best.history = history
    return best


# ------------------------------------------------------------ checkpoints

_MAGIC = b"NCCKPT01"


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray],
                    extra: dict[str, np.ndarray] | None = None) -> None:
    """Named float64 arrays, little-endian, sorted by name for stable bytes."""
    entries = dict(params)
    if extra:
        entries.update(extra)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(entries)))
        for name in sorted(entries):
            arr = np.ascontiguousarray(entries[name], dtype="<f8")
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<I", extent))
            fh.write(arr.tobytes())


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"checkpoint not found: {p}")
    data = p.read_bytes()
    if data[:8] != _MAGIC:
        raise DataError(f"{p} is not a checkpoint (bad magic)")
    off = 8
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = []
        for _ in range(ndim):
            (extent,) = struct.unpack_from("<I", data, off)
            off += 4
            shape.append(extent)
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=off).copy()
        off += size * 8
        out[name] = arr.reshape(shape)
    if off != len(data):
        raise DataError(f"{p} has {len(data) - off} trailing bytes; file corrupt")
    return out


def checkpoint_payload(result: FitResult, cfg: TrainConfig) -> tuple[
        dict[str, np.ndarray], dict[str, np.ndarray]]:
    extra = {
        "template/0": result.templates[0],
        "template/1": result.templates[1],
        "meta/tau": np.asarray(result.tau_at_best),
        "meta/best_epoch": np.asarray(float(result.best_epoch)),
        "meta/depth": np.asarray(float(cfg.depth)),
    }
    return result.params, extra


def split_checkpoint(entries: dict[str, np.ndarray]) -> tuple[
        dict[str, np.ndarray], dict[int, np.ndarray], dict[str, float]]:
    """Separate a loaded checkpoint into params, templates, and meta scalars."""
    params, templates, meta = {}, {}, {}
    for k, v in entries.items():
        if k.startswith("template/"):
            templates[int(k.split("/")[1])] = v
        elif k.startswith("meta/"):
            # scalars are stored 1-element; ascontiguousarray promotes 0-d
            meta[k.split("/", 1)[1]] = float(np.asarray(v).reshape(-1)[0])
        else:
            params[k] = v
    return params, templates, meta
