"""Pooling-stage tests: adjacency mixing on the simplex, GCN degenerate
cases, level-mask partition and eligibility, child-sum tree algebra, the
adjacency prior arithmetic, and permutation symmetries of the circuit roots."""

import numpy as np
import pytest

from neurocircuit import autodiff as ad
from neurocircuit import pooling
from neurocircuit.autodiff import Tape
from neurocircuit.cohort import CIRCUITS, CircuitAtlas
from neurocircuit.errors import DataError
from neurocircuit.model import Runtime, evaluation_runtime
from neurocircuit.rng import RngStream

NC, VL, D, MH, DEPTH = 5, 4, 6, 5, 3


def tiny_params(seed: int = 0, depth: int = DEPTH,
                scale: float = 0.1) -> dict[str, np.ndarray]:
    rng = RngStream(seed, "test/pool-params")
    return {k: (rng.child(k).uniform(s) * 2 - 1) * scale
            for k, s in pooling.pooling_param_shapes(VL, D, MH, depth).items()}


def as_tensors(tape: Tape, params: dict[str, np.ndarray]) -> dict:
    return {k: tape.constant(v) for k, v in params.items()}


def symmetric(rng: RngStream, n: int) -> np.ndarray:
    m = rng.normal((n, n))
    m = (m + m.T) / 2
    np.fill_diagonal(m, 0.0)
    return m


def train_rt(seed: int, n_regions: int = NC, tau: float = 0.7,
             eligibility: float = 0.5, depth: int = DEPTH, **kw) -> Runtime:
    return Runtime(training=True, rng=RngStream(seed, "test/pool-rt"),
                   n_regions=n_regions, tau=tau, eligibility=eligibility,
                   depth=depth, **kw)


# ----------------------------------------------------- adjacency mixing


def test_mix_weights_live_on_simplex_and_envelope_holds():
    params = tiny_params()
    rng = RngStream(1, "mix")
    z = rng.child("z").normal((NC, VL))
    candidates = np.stack([symmetric(rng.child(f"c{i}"), NC) for i in range(3)])
    tape = Tape()
    a_c, w = pooling.reconstruct_adjacency(as_tensors(tape, params),
                                           tape.constant(z), candidates)
    assert np.all(w.values >= 0)
    assert w.values.sum() == pytest.approx(1.0, abs=1e-12)
    lo = candidates.min(axis=0) - 1e-12
    hi = candidates.max(axis=0) + 1e-12
    assert np.all(a_c.values >= lo) and np.all(a_c.values <= hi)


def test_mix_identical_candidates_returns_them():
    params = tiny_params()
    rng = RngStream(2, "same")
    z = rng.child("z").normal((NC, VL))
    a = symmetric(rng.child("a"), NC)
    tape = Tape()
    a_c, _ = pooling.reconstruct_adjacency(as_tensors(tape, params),
                                           tape.constant(z),
                                           np.stack([a, a, a]))
    assert np.allclose(a_c.values, a, atol=1e-12)


def test_mix_saturated_logits_select_first_candidate():
    params = tiny_params()
    params["pool/mix/w2"] = np.zeros_like(params["pool/mix/w2"])
    params["pool/mix/b2"] = np.array([60.0, 0.0, 0.0])
    rng = RngStream(3, "sat")
    z = rng.child("z").normal((NC, VL))
    candidates = np.stack([symmetric(rng.child(f"c{i}"), NC) for i in range(3)])
    tape = Tape()
    a_c, w = pooling.reconstruct_adjacency(as_tensors(tape, params),
                                           tape.constant(z), candidates)
    assert w.values[0] == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(a_c.values, candidates[0], atol=1e-10)


def test_mix_rejects_malformed_candidate_stack():
    params = tiny_params()
    tape = Tape()
    z = tape.constant(np.zeros((NC, VL)))
    with pytest.raises(DataError):
        pooling.reconstruct_adjacency(as_tensors(tape, params), z,
                                      np.zeros((2, NC, NC)))
    with pytest.raises(DataError):
        pooling.reconstruct_adjacency(as_tensors(tape, params), z,
                                      np.zeros((3, 1, 1)))


# ----------------------------------------------------------------- GCN


def test_gcn_zero_adjacency_reduces_to_affine():
    params = tiny_params()
    z = RngStream(4, "z").normal((NC, VL))
    tape = Tape()
    h = pooling.gcn_embed(as_tensors(tape, params),
                          tape.constant(np.zeros((NC, NC))), tape.constant(z))
    pre = z @ params["pool/gcn/w"] + params["pool/gcn/b"]
    manual = np.where(pre > 0, pre, pooling.LEAKY_SLOPE * pre)
    assert np.allclose(h.values, manual, atol=1e-12)


def test_gcn_identical_features_regular_graph_identical_rows():
    params = tiny_params()
    z = np.tile(RngStream(5, "z").normal((1, VL)), (NC, 1))
    ring = np.zeros((NC, NC))
    for i in range(NC):
        ring[i, (i + 1) % NC] = ring[i, (i - 1) % NC] = 0.5
    tape = Tape()
    h = pooling.gcn_embed(as_tensors(tape, params), tape.constant(ring),
                          tape.constant(z))
    assert np.allclose(h.values, h.values[0], atol=1e-12)


def test_gcn_gradient_matches_finite_differences():
    params = tiny_params()
    rng = RngStream(6, "grad")
    z = rng.child("z").normal((NC, VL))
    a = symmetric(rng.child("a"), NC)
    head = rng.child("head").normal((NC, D))

    def scalar(w):
        tape = w.tape
        p = {k: (w if k == "pool/gcn/w" else tape.constant(v))
             for k, v in params.items()}
        h = pooling.gcn_embed(p, tape.constant(a), tape.constant(z))
        return ad.tsum(ad.mul(h, tape.constant(head)))

    assert ad.grad_check(scalar, params["pool/gcn/w"]) < 1e-4


# ----------------------------------------------------------- level masks


@pytest.mark.parametrize("depth", [2, 3, 4])
@pytest.mark.parametrize("training", [True, False])
def test_masks_partition_unity(depth, training):
    params = tiny_params(depth=depth)
    h = RngStream(depth, "h").normal((NC, D))
    if training:
        rt = train_rt(depth, depth=depth, tau=0.6)
    else:
        rt = evaluation_runtime(NC, depth=depth, tau=0.6)
    tape = Tape()
    masks = pooling.assign_levels(as_tensors(tape, params), tape.constant(h),
                                  np.arange(NC), depth, rt.tau,
                                  rt.eligibility, rt)
    stack = np.stack([m.values for m in masks])
    assert stack.shape == (depth, NC)
    assert np.allclose(stack.sum(axis=0), 1.0, atol=1e-12)
    assert np.all(stack >= -1e-12) and np.all(stack <= 1.0 + 1e-12)


def test_masks_depth_one_collapses_to_all_ones():
    params = tiny_params(depth=1)
    h = RngStream(7, "h").normal((NC, D))
    tape = Tape()
    masks = pooling.assign_levels(as_tensors(tape, params), tape.constant(h),
                                  np.arange(NC), 1, 0.5, 0.5,
                                  evaluation_runtime(NC, depth=1))
    assert len(masks) == 1
    assert np.array_equal(masks[0].values, np.ones(NC))


def test_masks_reject_bad_depth():
    params = tiny_params()
    tape = Tape()
    h = tape.constant(np.zeros((NC, D)))
    for depth in (0, 5):
        with pytest.raises(DataError):
            pooling.assign_levels(as_tensors(tape, params), h, np.arange(NC),
                                  depth, 0.5, 0.5, evaluation_runtime(NC))


def test_masks_saturated_first_level_takes_all_mass():
    params = tiny_params()
    params["pool/level0/w"] = np.zeros_like(params["pool/level0/w"])
    params["pool/level0/b"] = np.array([50.0, -50.0])
    h = RngStream(8, "h").normal((NC, D))
    rt = train_rt(8, tau=0.5)
    tape = Tape()
    masks = pooling.assign_levels(as_tensors(tape, params), tape.constant(h),
                                  np.arange(NC), DEPTH, rt.tau,
                                  rt.eligibility, rt)
    assert np.allclose(masks[0].values, 1.0, atol=1e-12)
    assert np.allclose(masks[1].values, 0.0, atol=1e-12)
    assert np.allclose(masks[2].values, 0.0, atol=1e-12)


def test_eligibility_one_keeps_every_node_samplable():
    params = tiny_params()
    h = RngStream(9, "h").normal((NC, D))
    tape = Tape()
    open_masks = pooling.assign_levels(as_tensors(tape, params),
                                       tape.constant(h), np.arange(NC), DEPTH,
                                       0.7, 1.0, train_rt(9))
    assert np.all(open_masks[1].values > 0.0)
    closed_masks = pooling.assign_levels(as_tensors(tape, params),
                                         tape.constant(h), np.arange(NC),
                                         DEPTH, 0.7, 1e-12, train_rt(9))
    assert np.array_equal(closed_masks[1].values, np.zeros(NC))


def test_mask_noise_indexed_by_region_not_list_order():
    params = tiny_params()
    h = RngStream(10, "h").normal((NC, D))
    perm = RngStream(10, "perm").permutation(NC)
    tape = Tape()
    p = as_tensors(tape, params)
    base = pooling.assign_levels(p, tape.constant(h), np.arange(NC), DEPTH,
                                 0.7, 0.5, train_rt(10))
    permuted = pooling.assign_levels(p, tape.constant(h[perm]),
                                     np.arange(NC)[perm], DEPTH, 0.7, 0.5,
                                     train_rt(10))
    for m_base, m_perm in zip(base, permuted):
        assert np.allclose(m_perm.values, m_base.values[perm], atol=1e-12)


# ------------------------------------------------------------- tree LSTM


def test_childsum_zero_children_zero_biases_gives_zero():
    params = tiny_params()
    for name in ("pool/tree/b_i", "pool/tree/b_o", "pool/tree/b_u",
                 "pool/tree/b_f"):
        params[name] = np.zeros_like(params[name])
    tape = Tape()
    zeros = tape.constant(np.zeros((3, D)))
    h, c = pooling.childsum_step(as_tensors(tape, params), zeros, zeros)
    assert np.array_equal(h.values, np.zeros(D))
    assert np.array_equal(c.values, np.zeros(D))


def test_childsum_invariant_to_child_order():
    params = tiny_params()
    rng = RngStream(11, "kids")
    hc = rng.child("h").normal((4, D))
    cc = rng.child("c").normal((4, D))
    perm = rng.child("perm").permutation(4)
    tape = Tape()
    p = as_tensors(tape, params)
    h1, c1 = pooling.childsum_step(p, tape.constant(hc), tape.constant(cc))
    h2, c2 = pooling.childsum_step(p, tape.constant(hc[perm]),
                                   tape.constant(cc[perm]))
    assert np.allclose(h1.values, h2.values, atol=1e-12)
    assert np.allclose(c1.values, c2.values, atol=1e-12)


def test_childsum_single_child_equals_two_half_duplicates():
    params = tiny_params()
    child = RngStream(12, "child").normal((1, D))
    tape = Tape()
    p = as_tensors(tape, params)
    zeros1 = tape.constant(np.zeros((1, D)))
    zeros2 = tape.constant(np.zeros((2, D)))
    h1, c1 = pooling.childsum_step(p, tape.constant(child), zeros1)
    halves = np.concatenate([child / 2, child / 2], axis=0)
    h2, c2 = pooling.childsum_step(p, tape.constant(halves), zeros2)
    assert np.allclose(h1.values, h2.values, atol=1e-12)
    assert np.allclose(c1.values, c2.values, atol=1e-12)


def test_childsum_rejects_unknown_form():
    params = tiny_params()
    tape = Tape()
    zeros = tape.constant(np.zeros((1, D)))
    with pytest.raises(DataError):
        pooling.childsum_step(as_tensors(tape, params), zeros, zeros,
                              tree_form="fancy")


def test_split_form_ignores_w_matrices():
    params = tiny_params()
    rng = RngStream(13, "split")
    hc = rng.child("h").normal((3, D))
    tape = Tape()
    zeros = tape.constant(np.zeros((3, D)))

    def run(form, w_scale):
        p = dict(params)
        p["pool/tree/w_i"] = params["pool/tree/w_i"] * w_scale
        h, _ = pooling.childsum_step(as_tensors(tape, p), tape.constant(hc),
                                     zeros, tree_form=form)
        return h.values

    assert np.array_equal(run("split", 1.0), run("split", 5.0))
    assert not np.array_equal(run("literal", 1.0), run("literal", 5.0))


def test_masked_out_nodes_cannot_reach_the_root():
    params = tiny_params()
    rng = RngStream(14, "mask")
    h = rng.child("h").normal((NC, D))
    tape = Tape()
    p = as_tensors(tape, params)
    sel = np.array([1.0, 1.0, 0.0, 1.0, 0.0])
    masks = [tape.constant(sel), tape.constant(np.zeros(NC)),
             tape.constant(np.zeros(NC))]
    root = pooling.aggregate_bottom_up(p, tape.constant(h), masks, "literal")
    tampered = h.copy()
    tampered[2] = 99.0
    tampered[4] = -99.0
    root2 = pooling.aggregate_bottom_up(p, tape.constant(tampered), masks,
                                        "literal")
    assert np.array_equal(root.values, root2.values)


def test_aggregate_invariant_to_node_permutation():
    params = tiny_params()
    rng = RngStream(15, "aggperm")
    h = rng.child("h").normal((NC, D))
    mask_stack = rng.child("m").uniform((DEPTH, NC))
    mask_stack /= mask_stack.sum(axis=0, keepdims=True)
    perm = rng.child("perm").permutation(NC)
    tape = Tape()
    p = as_tensors(tape, params)
    base = pooling.aggregate_bottom_up(
        p, tape.constant(h),
        [tape.constant(m) for m in mask_stack], "literal")
    permuted = pooling.aggregate_bottom_up(
        p, tape.constant(h[perm]),
        [tape.constant(m[perm]) for m in mask_stack], "literal")
    assert np.allclose(base.values, permuted.values, atol=1e-12)


def test_tree_gradient_matches_finite_differences():
    params = tiny_params()
    rng = RngStream(16, "treegrad")
    h = rng.child("h").normal((NC, D))
    mask_stack = rng.child("m").uniform((DEPTH, NC))
    mask_stack /= mask_stack.sum(axis=0, keepdims=True)
    head = rng.child("head").normal((D,))
    for name in ("pool/tree/u_i", "pool/tree/w_u", "pool/tree/u_f"):
        def scalar(w, name=name):
            tape = w.tape
            p = {k: (w if k == name else tape.constant(v))
                 for k, v in params.items()}
            root = pooling.aggregate_bottom_up(
                p, tape.constant(h),
                [tape.constant(m) for m in mask_stack], "literal")
            return ad.tsum(ad.mul(root, tape.constant(head)))

        assert ad.grad_check(scalar, params[name]) < 1e-4, name


# ------------------------------------------------------------ prior loss


def test_prior_loss_zero_on_matching_template():
    a = symmetric(RngStream(17, "a"), NC)
    tape = Tape()
    loss = pooling.adjacency_prior_loss(tape.constant(a), a)
    assert loss.values == 0.0


def test_prior_loss_all_ones_offset_on_2x2_is_four():
    template = np.array([[0.0, 0.3], [0.3, 0.0]])
    tape = Tape()
    loss = pooling.adjacency_prior_loss(tape.constant(template + 1.0), template)
    assert loss.values == pytest.approx(4.0, abs=1e-12)


def test_prior_loss_invariant_to_joint_permutation():
    rng = RngStream(18, "permprior")
    a = symmetric(rng.child("a"), NC)
    t = symmetric(rng.child("t"), NC)
    perm = rng.child("perm").permutation(NC)
    tape = Tape()
    base = pooling.adjacency_prior_loss(tape.constant(a), t)
    moved = pooling.adjacency_prior_loss(
        tape.constant(a[np.ix_(perm, perm)]), t[np.ix_(perm, perm)])
    assert moved.values == pytest.approx(float(base.values), abs=1e-12)


# --------------------------------------------------------- full pooling


def shuffled_atlas(n_regions: int, seed: int) -> CircuitAtlas:
    """Even atlas with each circuit's member list in a shuffled order."""
    even = CircuitAtlas.even(n_regions)
    rng = RngStream(seed, "atlas")
    members = {}
    for name in CIRCUITS:
        idx = np.asarray(even.members[name])
        members[name] = idx[rng.child(name).permutation(len(idx))].tolist()
    return CircuitAtlas(members)


def pool_setup(seed: int = 19, n_regions: int = 15):
    rng = RngStream(seed, "poolsetup")
    z = rng.child("z").normal((n_regions, VL))
    fc = symmetric(rng.child("fc"), n_regions)
    templates = {0: symmetric(rng.child("t0"), n_regions),
                 1: symmetric(rng.child("t1"), n_regions)}
    return z, fc, templates


def run_pool(params, z, fc, templates, atlas, label, rt):
    tape = Tape()
    return pooling.pool_circuits(as_tensors(tape, params), tape.constant(z),
                                 fc, templates, label, atlas, rt)


def test_pool_circuits_shapes_and_simplex():
    params = tiny_params()
    z, fc, templates = pool_setup()
    atlas = CircuitAtlas.even(15)
    out = run_pool(params, z, fc, templates, atlas, 1,
                   evaluation_runtime(15, depth=DEPTH))
    assert out.embeddings.values.shape == (5, D)
    assert out.masks.shape == (15, DEPTH)
    assert np.allclose(out.masks.sum(axis=1), 1.0, atol=1e-12)
    assert out.mix_weights.shape == (5, 3)
    assert np.allclose(out.mix_weights.sum(axis=1), 1.0, atol=1e-12)
    assert out.prior_loss is not None and out.prior_loss.values >= 0.0


def test_pool_circuits_unlabeled_subject_drops_prior():
    params = tiny_params()
    z, fc, templates = pool_setup()
    out = run_pool(params, z, fc, templates, CircuitAtlas.even(15), None,
                   evaluation_runtime(15, depth=DEPTH))
    assert out.prior_loss is None


def test_pool_circuits_invariant_to_member_list_order():
    params = tiny_params()
    z, fc, templates = pool_setup()
    rt = Runtime(training=True, rng=RngStream(20, "rt"), n_regions=15,
                 tau=0.7, depth=DEPTH)
    base = run_pool(params, z, fc, templates, CircuitAtlas.even(15), 1, rt)
    moved = run_pool(params, z, fc, templates, shuffled_atlas(15, 21), 1, rt)
    assert np.allclose(base.embeddings.values, moved.embeddings.values,
                       atol=1e-12)
    assert np.allclose(base.masks, moved.masks, atol=1e-12)
    assert np.allclose(base.mix_weights, moved.mix_weights, atol=1e-12)
    assert base.prior_loss.values == pytest.approx(
        float(moved.prior_loss.values), abs=1e-12)


def test_pool_depth_one_is_single_childsum_per_circuit():
    params = tiny_params(depth=1)
    z, fc, templates = pool_setup()
    atlas = CircuitAtlas.even(15)
    out = run_pool(params, z, fc, templates, atlas, 0,
                   evaluation_runtime(15, depth=1))
    # reproduce one circuit root by hand: single child-sum over all nodes
    tape = Tape()
    p = as_tensors(tape, params)
    idx = np.asarray(atlas.members["DMN"])
    block = np.ix_(idx, idx)
    z_c = tape.constant(z[idx])
    candidates = np.stack([fc[block], templates[1][block], templates[0][block]])
    a_c, _ = pooling.reconstruct_adjacency(p, z_c, candidates)
    h = pooling.gcn_embed(p, a_c, z_c)
    ones = tape.constant(np.ones(len(idx)))
    expected = pooling.aggregate_bottom_up(p, h, [ones], "literal")
    direct, _ = pooling.childsum_step(
        p, ad.mul(h, ad.reshape(ones, (len(idx), 1))),
        tape.constant(np.zeros((len(idx), D))))
    assert np.array_equal(expected.values, direct.values)
    assert out.masks.shape == (15, 1)
    assert np.array_equal(out.masks[:, 0], np.ones(15))
