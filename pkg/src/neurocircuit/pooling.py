"""Hierarchical pooling of circuit subgraphs into per-circuit embeddings.

For each of the five circuits:

1. a small MLP on the mean latent node code emits simplex weights that mix
   three adjacency candidates (the subject's own FC plus the two
   label-conditional group templates) into a reconstructed circuit adjacency;
2. one GCN layer over that adjacency (symmetrically normalized with
   absolute-value degrees, since FC weights are signed) embeds the nodes;
3. Gumbel-Softmax stages assign each node a soft hierarchy level; stage l+1
   only samples where the mass already assigned is below the eligibility
   threshold, and the mask products make the levels a partition of unity;
4. a child-sum tree LSTM aggregates the masked node embeddings bottom-up,
   deepest level first, into one root embedding per circuit.

A squared-error prior pulls the reconstructed adjacency toward the template
of the subject's diagnosis; it is omitted for unlabeled subjects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .cohort import CIRCUITS, CircuitAtlas
from .errors import DataError

LEAKY_SLOPE = 0.2


def pooling_param_shapes(ve_latent: int, d: int, mix_hidden: int, depth: int) -> dict[str, tuple]:
    shapes = {
        "pool/mix/w1": (ve_latent, mix_hidden), "pool/mix/b1": (mix_hidden,),
        "pool/mix/w2": (mix_hidden, 3), "pool/mix/b2": (3,),
        "pool/gcn/w": (ve_latent, d), "pool/gcn/b": (d,),
        "pool/tree/w_i": (d, d), "pool/tree/u_i": (d, d), "pool/tree/b_i": (d,),
        "pool/tree/w_o": (d, d), "pool/tree/u_o": (d, d), "pool/tree/b_o": (d,),
        "pool/tree/w_u": (d, d), "pool/tree/u_u": (d, d), "pool/tree/b_u": (d,),
        "pool/tree/u_f": (d, d), "pool/tree/b_f": (d,),
        "pool/out_ln_g": (d,), "pool/out_ln_b": (d,),
    }
    for level in range(depth - 1):
        shapes[f"pool/level{level}/w"] = (d, 2)
        shapes[f"pool/level{level}/b"] = (2,)
    return shapes


def reconstruct_adjacency(p: dict, z_c: Tensor, candidates: np.ndarray) -> tuple[Tensor, Tensor]:
    """Mix the (3, nc, nc) candidate stack with MLP(mean(z_c)) simplex weights."""
    if candidates.shape[0] != 3 or candidates.shape[1] != candidates.shape[2]:
        raise DataError(f"expected (3, nc, nc) candidate stack, got {candidates.shape}")
    if candidates.shape[1] < 2:
        raise DataError("circuit adjacency needs at least 2 nodes")
    pooled = ad.tmean(z_c, axis=0)
    h = ad.leaky_relu(ad.linear(pooled, p["pool/mix/w1"], p["pool/mix/b1"]), LEAKY_SLOPE)
    w = ad.softmax(ad.linear(h, p["pool/mix/w2"], p["pool/mix/b2"]), axis=-1)
    stack = z_c.tape.constant(candidates)
    a_c = ad.tsum(ad.mul(ad.reshape(w, (3, 1, 1)), stack), axis=0)
    return a_c, w


def gcn_embed(p: dict, a_c: Tensor, z_c: Tensor) -> Tensor:
    """leaky(D^-1/2 (A + I) D^-1/2 Z W); degrees use |A| so the root is real.

    With A = 0 the normalization is the identity and the layer reduces to the
    plain affine map leaky(Z W + b).
    """
    nc = a_c.values.shape[0]
    eye = z_c.tape.constant(np.eye(nc))
    a_hat = ad.add(a_c, eye)
    deg = ad.add(ad.tsum(ad.absval(a_c), axis=1), 1.0)
    dinv = ad.rsqrt(deg)
    norm = ad.mul(ad.mul(ad.reshape(dinv, (nc, 1)), a_hat), ad.reshape(dinv, (1, nc)))
    return ad.leaky_relu(ad.linear(ad.matmul(norm, z_c),
                                   p["pool/gcn/w"], p["pool/gcn/b"]), LEAKY_SLOPE)


def assign_levels(p: dict, h: Tensor, region_idx: np.ndarray, depth: int,
                  tau: float, eligibility: float, rt) -> list[Tensor]:
    """Soft level masks [M_1 .. M_depth], each (nc,), summing to one.

    Gumbel noise is drawn per (region, level) from a region-indexed table so
    reordering a circuit's member list permutes but never changes the masks.
    Stage l+1 samples only where cumulative assigned mass is still below the
    eligibility threshold; the final level absorbs the remainder.  Evaluation
    mode drops the noise and uses the tempered softmax directly.
    """
    if depth < 1 or depth > 4:
        raise DataError(f"hierarchy depth must be in 1..4, got {depth}")
    nc = h.values.shape[0]
    tape = h.tape
    one = tape.constant(np.ones(nc))
    if depth == 1:
        return [one]
    masks: list[Tensor] = []
    remaining = one
    assigned_values = np.zeros(nc)
    for level in range(depth - 1):
        logits = ad.linear(h, p[f"pool/level{level}/w"], p[f"pool/level{level}/b"])
        if rt.training:
            table = rt.rng.child(f"gumbel_level{level}").gumbel((rt.n_regions, 2))
            logits = ad.add(logits, tape.constant(table[region_idx]))
        soft = ad.softmax(logits, axis=-1, temperature=tau)
        if rt.hard_mask:
            soft = ad.straight_through_onehot(soft, axis=-1)
        sel = ad.gather(soft, [0], axis=1)
        sel = ad.reshape(sel, (nc,))
        if level > 0:
            eligible = (assigned_values < eligibility).astype(np.float64)
            sel = ad.mul(sel, tape.constant(eligible))
        m = ad.mul(remaining, sel)
        masks.append(m)
        remaining = ad.sub(remaining, m)
        assigned_values = assigned_values + m.values
    masks.append(remaining)
    return masks


def childsum_step(p: dict, h_children: Tensor, c_children: Tensor,
                  tree_form: str = "literal") -> tuple[Tensor, Tensor]:
    """One child-sum tree LSTM node over (k, d) child states.

    The default "literal" form applies both weight matrices to the summed
    child state, i = sigmoid(W h + U h + b); the "split" switch keeps only
    the recurrent U term (the conventional form with a zero input vector).
    """
    if tree_form not in ("literal", "split"):
        raise DataError(f"unknown tree_form '{tree_form}'")
    h_sum = ad.tsum(h_children, axis=0)

    def gate_pre(name: str) -> Tensor:
        pre = ad.add(ad.matmul(h_sum, p[f"pool/tree/u_{name}"]), p[f"pool/tree/b_{name}"])
        if tree_form == "literal":
            pre = ad.add(pre, ad.matmul(h_sum, p[f"pool/tree/w_{name}"]))
        return pre

    i = ad.sigmoid(gate_pre("i"))
    o = ad.sigmoid(gate_pre("o"))
    u = ad.tanh(gate_pre("u"))
    f = ad.sigmoid(ad.add(ad.matmul(h_children, p["pool/tree/u_f"]), p["pool/tree/b_f"]))
    c = ad.add(ad.mul(i, u), ad.tsum(ad.mul(f, c_children), axis=0))
    h = ad.mul(o, ad.tanh(c))
    return h, c


def aggregate_bottom_up(p: dict, h_nodes: Tensor, masks: list[Tensor],
                        tree_form: str) -> Tensor:
    """Deepest level first; each higher level adds the lower summary as an
    extra child.  Memory cells start at zero."""
    nc, d = h_nodes.values.shape
    tape = h_nodes.tape
    zeros = tape.constant(np.zeros((nc, d)))

    def masked(level: int) -> Tensor:
        return ad.mul(h_nodes, ad.reshape(masks[level], (nc, 1)))

    depth = len(masks)
    h_agg, c_agg = childsum_step(p, masked(depth - 1), zeros, tree_form)
    for level in range(depth - 2, -1, -1):
        h_children = ad.concat([ad.reshape(h_agg, (1, d)), masked(level)], axis=0)
        c_children = ad.concat([ad.reshape(c_agg, (1, d)), zeros], axis=0)
        h_agg, c_agg = childsum_step(p, h_children, c_children, tree_form)
    return h_agg


def adjacency_prior_loss(a_c: Tensor, target: np.ndarray) -> Tensor:
    """Squared Frobenius distance to the label-matched template slice."""
    return ad.squared_error(a_c, a_c.tape.constant(target))


@dataclass
class CircuitPoolOut:
    embeddings: Tensor              # (5, d)
    prior_loss: Tensor | None       # scalar, None when the subject is unlabeled
    masks: np.ndarray               # (n_regions, depth) level masses
    mix_weights: np.ndarray         # (5, 3) simplex weights per circuit


def pool_circuits(p: dict, z_ve: Tensor, subject_fc: np.ndarray,
                  templates: dict[int, np.ndarray], label: int | None,
                  atlas: CircuitAtlas, rt) -> CircuitPoolOut:
    """Run reconstruction, level assignment, and tree aggregation per circuit."""
    embeddings = []
    prior_terms = []
    masks_full = np.zeros((atlas.n_regions, rt.depth))
    mix_rows = []
    for name in CIRCUITS:
        idx = np.asarray(atlas.members[name], dtype=int)
        block = np.ix_(idx, idx)
        z_c = ad.gather(z_ve, idx, axis=0)
        candidates = np.stack([subject_fc[block], templates[1][block], templates[0][block]])
        a_c, w = reconstruct_adjacency(p, z_c, candidates)
        h = gcn_embed(p, a_c, z_c)
        masks = assign_levels(p, h, idx, rt.depth, rt.tau, rt.eligibility, rt)
        embeddings.append(aggregate_bottom_up(p, h, masks, rt.tree_form))
        if label is not None:
            prior_terms.append(adjacency_prior_loss(a_c, templates[label][block]))
        for lvl, m in enumerate(masks):
            masks_full[idx, lvl] = m.values
        mix_rows.append(w.values)
    prior = None
    if prior_terms:
        prior = ad.mul(ad.tsum(ad.stack(prior_terms)), 1.0 / len(prior_terms))
    # normalize root embeddings so the classifier and attention stage see
    # O(1) inputs regardless of how small the tree-gate products are
    stacked = ad.layer_norm(ad.stack(embeddings, axis=0),
                            p["pool/out_ln_g"], p["pool/out_ln_b"])
    return CircuitPoolOut(embeddings=stacked,
                          prior_loss=prior,
                          masks=masks_full,
                          mix_weights=np.stack(mix_rows))
