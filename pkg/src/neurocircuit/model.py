"""End-to-end network assembly: fusion -> circuit pooling -> classifier,
with the counterfactual attention stage as an auxiliary objective.

Parameters live in a flat dict of named float64 arrays so the optimizer,
checkpoints, and gradient checks can treat groups uniformly.  A fresh Tape is
built per forward; ``Runtime`` carries everything that distinguishes training
from evaluation (sampling, dropout, temperatures, variant switches).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import causal as causal_mod
from . import fusion as fusion_mod
from . import pooling as pooling_mod
from .autodiff import Tape, Tensor
from .cohort import CircuitAtlas, Cohort
from .errors import DataError
from .features import static_features
from .graph import BrainGraph, drop_edges, knn_graph
from .rng import RngStream

LEAKY_SLOPE = 0.2

VARIANTS = ("full", "standard_attention", "deterministic_causal", "variational_only")


@dataclass(frozen=True)
class ModelDims:
    n_regions: int
    n_timepoints: int
    embed: int = 32
    heads: int = 4
    ff: int = 64
    ve_hidden: int = 16
    ve_latent: int = 8
    mix_hidden: int = 8
    attn_dim: int = 16
    causal_latent: int = 8
    clf_hidden: tuple[int, int] = (32, 16)

    @property
    def n_static(self) -> int:
        return self.n_regions + 5


@dataclass(frozen=True)
class PipelineConfig:
    knn_k: int = 5
    win: int = 60
    stride: int = 30


def desk_dims(n_regions: int = 16, n_timepoints: int = 120) -> ModelDims:
    return ModelDims(n_regions=n_regions, n_timepoints=n_timepoints)


def full_dims(n_regions: int = 116, n_timepoints: int = 180) -> ModelDims:
    return ModelDims(n_regions=n_regions, n_timepoints=n_timepoints,
                     embed=128, heads=4, ff=256, ve_hidden=32, ve_latent=16,
                     mix_hidden=16, attn_dim=64, causal_latent=32,
                     clf_hidden=(128, 64))


def pipeline_for(scale: str) -> PipelineConfig:
    if scale == "desk":
        return PipelineConfig(knn_k=5, win=60, stride=30)
    if scale == "full":
        return PipelineConfig(knn_k=40, win=90, stride=45)
    raise DataError(f"unknown scale '{scale}'")


@dataclass
class Runtime:
    """Per-forward switches; evaluation() gives the deterministic setting."""

    training: bool
    rng: RngStream | None = None
    n_regions: int = 0
    tau: float = 1.0
    dropout: float = 0.2
    clf_dropout: float = 0.5
    depth: int = 3
    eligibility: float = 0.5
    hard_mask: bool = False
    tree_form: str = "literal"
    variant: str = "full"
    shared_eps: bool = False
    identity_attention: bool = False
    causal_prior: str = "zero"
    causal_beta: float = 0.1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise DataError(f"unknown variant '{self.variant}'; known: {VARIANTS}")
        if self.causal_prior not in ("zero", "input_mean"):
            raise DataError(f"unknown causal prior '{self.causal_prior}'")
        if self.training and self.rng is None:
            raise DataError("training mode requires an RngStream")

    @property
    def deterministic_causal(self) -> bool:
        return (not self.training) or self.variant == "deterministic_causal"

    def for_subject(self, rng: RngStream | None) -> "Runtime":
        return replace(self, rng=rng)


def evaluation_runtime(n_regions: int, tau: float = 0.5, **kw) -> Runtime:
    return Runtime(training=False, rng=None, n_regions=n_regions, tau=tau, **kw)


# ---------------------------------------------------------------- params


def classifier_param_shapes(d: int, hidden: tuple[int, int]) -> dict[str, tuple]:
    h1, h2 = hidden
    return {
        "clf/w1": (5 * d, h1), "clf/b1": (h1,),
        "clf/w2": (h1, h2), "clf/b2": (h2,),
        "clf/w3": (h2, 2), "clf/b3": (2,),
    }


def param_shapes(dims: ModelDims, depth: int = 3) -> dict[str, tuple]:
    shapes: dict[str, tuple] = {}
    shapes.update(fusion_mod.fusion_param_shapes(
        dims.n_static, dims.n_timepoints, dims.embed, dims.ff,
        dims.ve_hidden, dims.ve_latent))
    shapes.update(pooling_mod.pooling_param_shapes(
        dims.ve_latent, dims.embed, dims.mix_hidden, depth))
    shapes.update(causal_mod.causal_param_shapes(
        dims.embed, dims.attn_dim, dims.causal_latent))
    shapes.update(classifier_param_shapes(dims.embed, dims.clf_hidden))
    return shapes


LOG_VAR_BIAS_INIT = -2.0  # start posteriors narrow so early signal is not drowned


def init_params(dims: ModelDims, rng: RngStream, depth: int = 3) -> dict[str, np.ndarray]:
    """Uniform(-1/sqrt(fan_in)) init; layer-norm gains 1, biases 0 except the
    log-variance heads, which start at a small variance."""
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(dims, depth).items():
        short = name.rsplit("/", 1)[-1]
        if short.startswith("ln") and short.endswith("_g"):
            params[name] = np.ones(shape)
        elif short == "lv_b":
            params[name] = np.full(shape, LOG_VAR_BIAS_INIT)
        elif short.startswith("b") or short.endswith("_b") or short.startswith("ln"):
            params[name] = np.zeros(shape)
        else:
            fan_in = shape[0] if len(shape) > 1 else shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = (rng.child(f"init/{name}").uniform(shape) * 2 - 1) * bound
    return params


# ---------------------------------------------------------------- inputs


@dataclass
class SubjectInput:
    """Model-ready view of one subject."""

    id: str
    site: str
    label: int | None
    x1: np.ndarray        # (n, n+5) static node features
    x2: np.ndarray        # (n, T) z-scored series
    fc: np.ndarray        # (n, n) windowed-mean Fisher-z FC
    graph: BrainGraph


def build_inputs(cohort: Cohort, pipe: PipelineConfig) -> list[SubjectInput]:
    out = []
    for s in cohort.subjects:
        feats = static_features(s.series, cohort.tr, pipe.win, pipe.stride,
                                s.age, s.sex, s.education)
        x2 = (s.series - s.series.mean(axis=1, keepdims=True)) / s.series.std(axis=1, keepdims=True)
        out.append(SubjectInput(id=s.id, site=s.site, label=s.label,
                                x1=feats.x1, x2=x2, fc=feats.fc,
                                graph=knn_graph(feats.fc, pipe.knn_k)))
    return out


# --------------------------------------------------------------- forward


@dataclass
class ModelOut:
    logits: Tensor                       # (B, 2) main classifier
    kl: Tensor                           # scalar fusion KL
    prior: Tensor | None                 # scalar adjacency prior
    causal: causal_mod.CausalOut | None  # None for the standard ablation
    plain_loss: Tensor | None            # standard-attention CE
    attention: np.ndarray                # (B, 5, 5)
    masks: np.ndarray                    # (B, n, depth)
    mix_weights: np.ndarray              # (B, 5, 3)


def classifier_logits(p: dict, embs: Tensor, rt: Runtime) -> Tensor:
    b, c, d = embs.values.shape
    h = ad.reshape(embs, (b, c * d))
    h = ad.leaky_relu(ad.linear(h, p["clf/w1"], p["clf/b1"]), LEAKY_SLOPE)
    h = ad.dropout(h, rt.clf_dropout, rt.rng.child("clf_drop1") if rt.rng else None,
                   rt.training)
    h = ad.leaky_relu(ad.linear(h, p["clf/w2"], p["clf/b2"]), LEAKY_SLOPE)
    h = ad.dropout(h, rt.clf_dropout, rt.rng.child("clf_drop2") if rt.rng else None,
                   rt.training)
    return ad.linear(h, p["clf/w3"], p["clf/b3"])


def forward(tape: Tape, params: dict[str, Tensor], batch: list[SubjectInput],
            templates: dict[int, np.ndarray], atlas: CircuitAtlas,
            dims: ModelDims, rt: Runtime, edge_dropout: float = 0.0) -> ModelOut:
    """Whole-model forward over a batch of subjects on one tape."""
    if not batch:
        raise DataError("forward needs a non-empty batch")
    if rt.n_regions == 0:
        rt = replace(rt, n_regions=dims.n_regions)
    per_subject = []
    kls, priors, masks, mixes = [], [], [], []
    for s in batch:
        srng = rt.rng.child(f"subject/{s.id}") if rt.rng else None
        srt = rt.for_subject(srng)
        graph = s.graph
        if rt.training and edge_dropout > 0:
            graph = drop_edges(graph, edge_dropout, srng.child("edge_drop"))
        x1 = tape.constant(s.x1)
        x2 = tape.constant(s.x2)
        z_ve, kl = fusion_mod.fuse_subject(params, x1, x2, graph, dims.heads, srt)
        pooled = pooling_mod.pool_circuits(params, z_ve, s.fc, templates,
                                           s.label, atlas, srt)
        per_subject.append(pooled.embeddings)
        kls.append(kl)
        if pooled.prior_loss is not None:
            priors.append(pooled.prior_loss)
        masks.append(pooled.masks)
        mixes.append(pooled.mix_weights)
    embs = ad.stack(per_subject, axis=0)  # (B, 5, d)
    kl = ad.tmean(ad.stack(kls))
    prior = ad.tmean(ad.stack(priors)) if priors else None
    logits = classifier_logits(params, embs, rt)

    labels = np.array([s.label for s in batch if s.label is not None], dtype=int)
    causal_out, plain = None, None
    brt = rt.for_subject(rt.rng.child("causal") if rt.rng else None)
    if rt.variant == "standard_attention":
        if len(labels) == len(batch):
            plain, attn = causal_mod.plain_attention_loss(params, embs, labels)
        else:
            _, _, a = causal_mod.circuit_attention(params, embs)
            attn = a.values
    else:
        causal_out = causal_mod.causal_effect(params, embs, brt)
        attn = causal_out.attention
    return ModelOut(logits=logits, kl=kl, prior=prior, causal=causal_out,
                    plain_loss=plain, attention=attn,
                    masks=np.stack(masks), mix_weights=np.stack(mixes))


def wrap_params(tape: Tape, params: dict[str, np.ndarray],
                trainable: bool = True) -> dict[str, Tensor]:
    return {k: tape.leaf(v, requires_grad=trainable) for k, v in params.items()}


def predict_outputs(params: dict[str, np.ndarray], subjects: list[SubjectInput],
                    templates: dict[int, np.ndarray], atlas: CircuitAtlas,
                    dims: ModelDims, rt: Runtime | None = None,
                    ) -> tuple[np.ndarray, ModelOut]:
    """Deterministic class-1 probabilities plus the full forward outputs."""
    rt = rt or evaluation_runtime(dims.n_regions)
    tape = Tape()
    p = wrap_params(tape, params, trainable=False)
    out = forward(tape, p, subjects, templates, atlas, dims, rt)
    z = out.logits.values
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return (e / e.sum(axis=1, keepdims=True))[:, 1], out


def predict_scores(params: dict[str, np.ndarray], subjects: list[SubjectInput],
                   templates: dict[int, np.ndarray], atlas: CircuitAtlas,
                   dims: ModelDims, rt: Runtime | None = None) -> np.ndarray:
    """Deterministic class-1 probabilities; independent of batch grouping."""
    return predict_outputs(params, subjects, templates, atlas, dims, rt)[0]
