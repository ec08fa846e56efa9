"""Gated multi-path fusion of temporal and static node features.

Per subject, three representations of the n brain regions are built and
merged:

* a temporal path: the BOLD series of each region is projected to the embed
  width and run through one post-norm transformer encoder block (no
  positional encoding, so the block is permutation-equivariant over regions),
  then refined by neighbor-mean and attention graph convolutions;
* a static path: FC/variance/power/demographic node features pass through an
  MLP, are gated against the temporal encoding, and flow through an
  attention graph convolution;
* a two-stage (feature-axis then node-axis) softmax attention at temperature
  0.1 re-weights the temporal encoding.

Sigmoid gates blend pairs of representations elementwise; the fused node
code is compressed by a variational encoder whose KL to the standard normal
is returned alongside the latent node matrix.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError
from .graph import BrainGraph

LEAKY_SLOPE = 0.2
STAGE_TEMPERATURE = 0.1
NEG_MASK = -1e30


def fusion_param_shapes(n_static: int, n_time: int, d: int, ff: int,
                        ve_hidden: int, ve_latent: int) -> dict[str, tuple]:
    return {
        "fusion/temporal/proj_w": (n_time, d), "fusion/temporal/proj_b": (d,),
        "fusion/temporal/wq": (d, d), "fusion/temporal/wk": (d, d),
        "fusion/temporal/wv": (d, d), "fusion/temporal/wo": (d, d),
        "fusion/temporal/ln1_g": (d,), "fusion/temporal/ln1_b": (d,),
        "fusion/temporal/ff1_w": (d, ff), "fusion/temporal/ff1_b": (ff,),
        "fusion/temporal/ff2_w": (ff, d), "fusion/temporal/ff2_b": (d,),
        "fusion/temporal/ln2_g": (d,), "fusion/temporal/ln2_b": (d,),
        "fusion/h2_proj/w": (n_static, d), "fusion/h2_proj/b": (d,),
        "fusion/sage/w": (4 * d, d), "fusion/sage/b": (d,),
        "fusion/gat_temporal/w": (2 * d, d),
        "fusion/gat_temporal/a_src": (d,), "fusion/gat_temporal/a_dst": (d,),
        "fusion/temporal_mix/w": (2 * d, d), "fusion/temporal_mix/b": (d,),
        "fusion/static_mlp/w1": (n_static, d), "fusion/static_mlp/b1": (d,),
        "fusion/static_mlp/w2": (d, d), "fusion/static_mlp/b2": (d,),
        "fusion/static_gate/w": (2 * d, d), "fusion/static_gate/b": (d,),
        "fusion/gat_static/w": (d, d),
        "fusion/gat_static/a_src": (d,), "fusion/gat_static/a_dst": (d,),
        "fusion/stage_feat/w": (d, d), "fusion/stage_feat/b": (d,),
        "fusion/stage_node/w": (d, d), "fusion/stage_node/b": (d,),
        "fusion/stage_node/v": (d,),
        "fusion/final_gate/w": (2 * d, d), "fusion/final_gate/b": (d,),
        "fusion/ve/ln_g": (2 * d,), "fusion/ve/ln_b": (2 * d,),
        "fusion/ve/w": (2 * d, ve_hidden), "fusion/ve/b": (ve_hidden,),
        "fusion/ve/mu_w": (ve_hidden, ve_latent), "fusion/ve/mu_b": (ve_latent,),
        "fusion/ve/lv_w": (ve_hidden, ve_latent), "fusion/ve/lv_b": (ve_latent,),
    }


def gate(p: dict, prefix: str, z1: Tensor, z2: Tensor) -> Tensor:
    """G = sigmoid(W [z1|z2] + b); returns G*z1 + (1-G)*z2."""
    g = ad.sigmoid(ad.linear(ad.concat([z1, z2], axis=-1),
                             p[f"{prefix}/w"], p[f"{prefix}/b"]))
    return ad.add(ad.mul(g, z1), ad.mul(ad.sub(1.0, g), z2))


def transformer_encode(p: dict, x2: Tensor, heads: int, rt) -> Tensor:
    """One post-norm encoder block over region tokens; (n, T) -> (n, d)."""
    h = ad.linear(x2, p["fusion/temporal/proj_w"], p["fusion/temporal/proj_b"])
    n, d = h.values.shape
    if d % heads != 0:
        raise DataError(f"embed width {d} not divisible by {heads} heads")
    dk = d // heads

    def split(t):  # (n, d) -> (heads, n, dk)
        return ad.transpose(ad.reshape(t, (n, heads, dk)), (1, 0, 2))

    q = split(ad.matmul(h, p["fusion/temporal/wq"]))
    k = split(ad.matmul(h, p["fusion/temporal/wk"]))
    v = split(ad.matmul(h, p["fusion/temporal/wv"]))
    scores = ad.mul(ad.matmul(q, ad.swap_last2(k)), 1.0 / np.sqrt(dk))
    attn = ad.softmax(scores, axis=-1)
    attn = ad.dropout(attn, rt.dropout, rt.rng.child("attn_drop") if rt.rng else None,
                      rt.training)
    mixed = ad.reshape(ad.transpose(ad.matmul(attn, v), (1, 0, 2)), (n, d))
    mixed = ad.matmul(mixed, p["fusion/temporal/wo"])
    h = ad.layer_norm(ad.add(h, mixed),
                      p["fusion/temporal/ln1_g"], p["fusion/temporal/ln1_b"])
    ffn = ad.linear(h, p["fusion/temporal/ff1_w"], p["fusion/temporal/ff1_b"])
    ffn = ad.leaky_relu(ffn, LEAKY_SLOPE)
    ffn = ad.linear(ffn, p["fusion/temporal/ff2_w"], p["fusion/temporal/ff2_b"])
    return ad.layer_norm(ad.add(h, ffn),
                         p["fusion/temporal/ln2_g"], p["fusion/temporal/ln2_b"])


def _neighbor_mean_matrix(graph: BrainGraph) -> np.ndarray:
    """Row-stochastic neighbor averaging; isolated nodes fall back to self."""
    n = graph.n_nodes
    m = graph.neighbor_mask().astype(np.float64)
    deg = m.sum(axis=1)
    for i in np.flatnonzero(deg == 0):
        m[i, i] = 1.0
        deg[i] = 1.0
    return m / deg[:, None]


def _gat_mask(graph: BrainGraph) -> np.ndarray:
    """Additive attention mask: 0 on kNN edges and self-loops, -1e30 elsewhere."""
    allowed = graph.neighbor_mask()
    np.fill_diagonal(allowed, True)
    return np.where(allowed, 0.0, NEG_MASK)


def sage_conv(p: dict, x: Tensor, graph: BrainGraph, rt) -> Tensor:
    """Mean-aggregator conv: leaky(W [x | mean of neighbors] + b)."""
    mean_h = ad.matmul(x.tape.constant(_neighbor_mean_matrix(graph)), x)
    out = ad.leaky_relu(ad.linear(ad.concat([x, mean_h], axis=-1),
                                  p["fusion/sage/w"], p["fusion/sage/b"]), LEAKY_SLOPE)
    return ad.dropout(out, rt.dropout, rt.rng.child("sage_drop") if rt.rng else None,
                      rt.training)


def gat_conv(p: dict, prefix: str, x: Tensor, graph: BrainGraph, rt,
             drop_label: str) -> Tensor:
    """Single-head attention conv over kNN neighborhoods plus self-loops."""
    hw = ad.matmul(x, p[f"{prefix}/w"])
    n = hw.values.shape[0]
    s_src = ad.reshape(ad.matmul(hw, p[f"{prefix}/a_src"]), (n, 1))
    s_dst = ad.reshape(ad.matmul(hw, p[f"{prefix}/a_dst"]), (1, n))
    scores = ad.leaky_relu(ad.add(s_src, s_dst), LEAKY_SLOPE)
    attn = ad.softmax(ad.add(scores, x.tape.constant(_gat_mask(graph))), axis=-1)
    attn = ad.dropout(attn, rt.dropout, rt.rng.child(drop_label) if rt.rng else None,
                      rt.training)
    return ad.leaky_relu(ad.matmul(attn, hw), LEAKY_SLOPE)


def graph_encode(p: dict, x1: Tensor, h_temp: Tensor, graph: BrainGraph, rt) -> Tensor:
    """Temporal-path conv stack on H2 = [proj(X1) | H_temp]; (n, d) out."""
    h2 = ad.concat([ad.linear(x1, p["fusion/h2_proj/w"], p["fusion/h2_proj/b"]),
                    h_temp], axis=-1)
    sage = sage_conv(p, h2, graph, rt)
    gat = gat_conv(p, "fusion/gat_temporal", h2, graph, rt, "gat_t_drop")
    return ad.linear(ad.concat([sage, gat], axis=-1),
                     p["fusion/temporal_mix/w"], p["fusion/temporal_mix/b"])


def static_encode(p: dict, x1: Tensor, h_temp: Tensor, graph: BrainGraph, rt) -> Tensor:
    """Static-path MLP gated against the temporal encoding, then GAT."""
    h = ad.leaky_relu(ad.linear(x1, p["fusion/static_mlp/w1"],
                                p["fusion/static_mlp/b1"]), LEAKY_SLOPE)
    h = ad.linear(h, p["fusion/static_mlp/w2"], p["fusion/static_mlp/b2"])
    gated = gate(p, "fusion/static_gate", h, h_temp)
    return gat_conv(p, "fusion/gat_static", gated, graph, rt, "gat_s_drop")


def two_stage_attention(p: dict, h: Tensor) -> Tensor:
    """Feature-axis then node-axis softmax re-weighting at temperature 0.1.

    Both weight vectors lie on the simplex, so outputs are bounded by the
    input magnitudes; with zero score parameters the stage reduces to uniform
    weights, i.e. h / (d * n).
    """
    n, d = h.values.shape
    feat_logits = ad.linear(h, p["fusion/stage_feat/w"], p["fusion/stage_feat/b"])
    alpha = ad.softmax(feat_logits, axis=-1, temperature=STAGE_TEMPERATURE)
    h1 = ad.mul(alpha, h)
    node_scores = ad.matmul(ad.tanh(ad.linear(h1, p["fusion/stage_node/w"],
                                              p["fusion/stage_node/b"])),
                            p["fusion/stage_node/v"])
    beta = ad.softmax(node_scores, axis=0, temperature=STAGE_TEMPERATURE)
    return ad.mul(ad.reshape(beta, (n, 1)), h1)


def variational_encode(p: dict, z_final: Tensor, rt) -> tuple[Tensor, Tensor]:
    """Compress fused node codes; returns (z_ve, mean KL per node).

    Training mode samples via reparameterization; evaluation uses the mean.
    """
    z_norm = ad.layer_norm(z_final, p["fusion/ve/ln_g"], p["fusion/ve/ln_b"])
    h = ad.leaky_relu(ad.linear(z_norm, p["fusion/ve/w"], p["fusion/ve/b"]),
                      LEAKY_SLOPE)
    mu = ad.linear(h, p["fusion/ve/mu_w"], p["fusion/ve/mu_b"])
    lv = ad.linear(h, p["fusion/ve/lv_w"], p["fusion/ve/lv_b"])
    if rt.training:
        z = ad.sample_gaussian_reparam(mu, lv, rt.rng.child("ve_eps"))
    else:
        z = mu
    kl = ad.tmean(ad.gaussian_kl(mu, lv))
    return z, kl


def fuse_subject(p: dict, x1: Tensor, x2: Tensor, graph: BrainGraph,
                 heads: int, rt) -> tuple[Tensor, Tensor]:
    """Full fusion stage for one subject: (n, ve_latent) latent and KL."""
    h_temp = transformer_encode(p, x2, heads, rt)
    z_temp = graph_encode(p, x1, h_temp, graph, rt)
    z_static = static_encode(p, x1, h_temp, graph, rt)
    h_attn = two_stage_attention(p, h_temp)
    h_final = gate(p, "fusion/final_gate", z_temp, h_attn)
    z_final = ad.concat([h_final, z_static], axis=-1)
    return variational_encode(p, z_final, rt)
