"""Variational counterfactual attention over the five circuit embeddings.

A single-head scaled dot-product attention mixes the circuit embeddings of
each subject (factual branch).  The counterfactual branch replaces the
attention matrix with the identity, i.e. it sees the unmixed values.  Both
branches are encoded by the same variational encoder; the treatment effect
is the difference of the per-circuit prediction heads, and the loss is the
cross-entropy of that effect against the diagnosis plus a KL regularizer on
the factual posterior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError


def causal_param_shapes(d: int, attn_dim: int, latent: int) -> dict[str, tuple]:
    return {
        "causal/wq": (d, attn_dim), "causal/wk": (d, attn_dim), "causal/wv": (d, attn_dim),
        "causal/mu_w": (attn_dim, latent), "causal/mu_b": (latent,),
        "causal/lv_w": (attn_dim, latent), "causal/lv_b": (latent,),
        "causal/pred_w": (latent, 2), "causal/pred_b": (2,),
        "causal/plain_w": (attn_dim, 2), "causal/plain_b": (2,),
    }


def circuit_attention(p: dict, embs: Tensor, identity: bool = False) -> tuple[Tensor, Tensor, Tensor]:
    """Factual attention over circuits; returns (H_real, V, attention).

    ``identity`` swaps the attention matrix for the identity, which forces
    H_real == V bitwise and is used by the counterfactual null check.
    """
    if embs.values.ndim != 3 or embs.values.shape[1] <= 1:
        raise DataError(f"expected (batch, circuits, d) embeddings, got {embs.values.shape}")
    b, c, _ = embs.values.shape
    q = ad.matmul(embs, p["causal/wq"])
    k = ad.matmul(embs, p["causal/wk"])
    v = ad.matmul(embs, p["causal/wv"])
    dk = q.values.shape[-1]
    if identity:
        attn = embs.tape.constant(np.broadcast_to(np.eye(c), (b, c, c)).copy())
        return v, v, attn
    scores = ad.mul(ad.matmul(q, ad.swap_last2(k)), 1.0 / np.sqrt(dk))
    attn = ad.softmax(scores, axis=-1)
    return ad.matmul(attn, v), v, attn


def _encode(p: dict, h: Tensor) -> tuple[Tensor, Tensor]:
    mu = ad.linear(h, p["causal/mu_w"], p["causal/mu_b"])
    lv = ad.linear(h, p["causal/lv_w"], p["causal/lv_b"])
    return mu, lv


def _pred_logits(p: dict, z: Tensor) -> Tensor:
    """Per-circuit affine heads averaged into subject logits (B, 2)."""
    return ad.tmean(ad.linear(z, p["causal/pred_w"], p["causal/pred_b"]), axis=1)


@dataclass
class CausalOut:
    y_effect: Tensor          # (B, 2) treatment-effect logits
    logits_real: Tensor       # (B, 2) factual-branch logits
    kl: Tensor                # scalar KL of the factual posterior
    attention: np.ndarray     # (B, 5, 5) factual attention values


def causal_effect(p: dict, embs: Tensor, rt) -> CausalOut:
    """Factual vs counterfactual branch difference with shared encoder.

    Deterministic mode (evaluation, or the deterministic variant) uses the
    posterior means; otherwise each branch draws its own reparameterization
    noise unless ``rt.shared_eps`` re-uses the factual draw.
    """
    h_real, v, attn = circuit_attention(p, embs, identity=rt.identity_attention)
    mu_r, lv_r = _encode(p, h_real)
    mu_c, lv_c = _encode(p, v)
    sample = rt.training and not rt.deterministic_causal
    if sample:
        eps_rng = rt.rng.child("causal_eps_real")
        z_r = ad.sample_gaussian_reparam(mu_r, lv_r, eps_rng)
        if rt.shared_eps:
            cf_rng = rt.rng.child("causal_eps_real")  # same label -> same bits
        else:
            cf_rng = rt.rng.child("causal_eps_cf")
        z_c = ad.sample_gaussian_reparam(mu_c, lv_c, cf_rng)
    else:
        z_r, z_c = mu_r, mu_c
    logits_real = _pred_logits(p, z_r)
    y_effect = ad.sub(logits_real, _pred_logits(p, z_c))
    prior_mu = None
    if rt.causal_prior == "input_mean":
        # detached: push the mean encoder input through the mu head as values
        mean_in = h_real.values.mean(axis=(0, 1))
        prior_mu = mean_in @ p["causal/mu_w"].values + p["causal/mu_b"].values
    kl = ad.tmean(ad.gaussian_kl(mu_r, lv_r, prior_mu))
    return CausalOut(y_effect=y_effect, logits_real=logits_real, kl=kl,
                     attention=attn.values)


def causal_loss(out: CausalOut, labels: np.ndarray, beta: float, variant: str) -> Tensor:
    """Auxiliary objective for the causal stage, per model variant.

    * full / deterministic: CE of the treatment effect (+ beta * KL unless
      the deterministic variant dropped it);
    * variational_only: CE of the factual logits + beta * KL;
    * standard_attention handles its own plain head elsewhere.
    """
    if variant == "variational_only":
        ce = ad.cross_entropy_with_logits(out.logits_real, labels)
    else:
        ce = ad.cross_entropy_with_logits(out.y_effect, labels)
    return ad.add(ce, ad.mul(out.kl, beta))


def plain_attention_loss(p: dict, embs: Tensor, labels: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Standard-attention ablation: CE on an affine head over the mean
    attended circuit vector; no latent, no counterfactual."""
    h_real, _, attn = circuit_attention(p, embs)
    logits = ad.linear(ad.tmean(h_real, axis=1), p["causal/plain_w"], p["causal/plain_b"])
    return ad.cross_entropy_with_logits(logits, labels), attn.values
