import numpy as np
import pytest

from puddleseg.combiner import PromptCombiner
from puddleseg.errors import WidthMismatch
from puddleseg.prompters import PromptEmbedding

from gradcheck import check_param_gradients

DIM = 6


def make_prompts(rng, b=2, t_spa=3, t_sem=2, t_sty=4, dense=False):
    spa = PromptEmbedding(rng.normal(size=(b, t_spa, DIM)),
                          "spatial-dense" if dense else "spatial-sparse")
    sem = PromptEmbedding(rng.normal(size=(b, t_sem, DIM)), "semantic")
    sty = PromptEmbedding(rng.normal(size=(b, t_sty, DIM)), "style")
    return spa, sem, sty


def make_combiner(rng, ta=1):
    return PromptCombiner(DIM, rng, adaptive_tokens=ta, dtype=np.float64)


def test_identity_weights_plain_concat():
    rng = np.random.default_rng(0)
    dpc = make_combiner(rng, ta=2)
    dpc.e_ada.value[...] = 0.0
    spa, sem, sty = make_prompts(rng)
    out, _ = dpc.combine(spa, sem, sty)
    expected = np.concatenate(
        [spa.tokens, sem.tokens, sty.tokens, np.zeros((2, 2, DIM))], axis=1)
    np.testing.assert_allclose(out.tokens, expected, atol=1e-12)
    assert out.kind == "combined"


def test_zero_weight_annihilates_block():
    rng = np.random.default_rng(1)
    dpc = make_combiner(rng)
    dpc.w2.value[...] = 0.0
    spa, sem, sty = make_prompts(rng)
    out, _ = dpc.combine(spa, sem, sty)
    blocks = dict((k, (s0, s1)) for k, s0, s1 in out.blocks)
    s0, s1 = blocks["semantic"]
    assert np.abs(out.tokens[:, s0:s1]).max() == 0.0
    sp0, sp1 = blocks["spatial-sparse"]
    np.testing.assert_allclose(out.tokens[:, sp0:sp1], spa.tokens, atol=1e-12)


def test_elementwise_product_oracle():
    rng = np.random.default_rng(2)
    dpc = make_combiner(rng)
    for w in (dpc.w1, dpc.w2, dpc.w3):
        w.value[...] = rng.normal(size=DIM)
    spa, sem, sty = make_prompts(rng, b=1)
    out, _ = dpc.combine(spa, sem, sty)
    weights = (dpc.w1.value, dpc.w2.value, dpc.w3.value)
    offset = 0
    for emb, w in zip((spa, sem, sty), weights):
        for t in range(emb.tokens.shape[1]):
            for d in range(DIM):
                assert out.tokens[0, offset + t, d] == pytest.approx(
                    w[d] * emb.tokens[0, t, d], abs=1e-12)
        offset += emb.tokens.shape[1]


def test_token_count_contract():
    rng = np.random.default_rng(3)
    dpc = make_combiner(rng, ta=3)
    spa, sem, sty = make_prompts(rng, t_spa=5, t_sem=2, t_sty=4)
    out, _ = dpc.combine(spa, sem, sty)
    assert out.token_count == 5 + 2 + 4 + 3


def test_linearity_per_block():
    rng = np.random.default_rng(4)
    dpc = make_combiner(rng)
    for w in (dpc.w1, dpc.w2, dpc.w3):
        w.value[...] = rng.normal(size=DIM)
    spa, sem, sty = make_prompts(rng)
    spa2 = PromptEmbedding(rng.normal(size=spa.tokens.shape), spa.kind)
    a, b = 2.5, -1.25
    mixed = PromptEmbedding(a * spa.tokens + b * spa2.tokens, spa.kind)
    out_mixed, _ = dpc.combine(mixed, sem, sty)
    out_a, _ = dpc.combine(spa, sem, sty)
    out_b, _ = dpc.combine(spa2, sem, sty)
    t_spa = spa.tokens.shape[1]
    np.testing.assert_allclose(
        out_mixed.tokens[:, :t_spa],
        a * out_a.tokens[:, :t_spa] + b * out_b.tokens[:, :t_spa],
        atol=1e-9)


def test_width_mismatch_rejected():
    rng = np.random.default_rng(5)
    dpc = make_combiner(rng)
    spa, sem, sty = make_prompts(rng)
    bad = PromptEmbedding(rng.normal(size=(2, 2, DIM + 1)), "semantic")
    with pytest.raises(WidthMismatch):
        dpc.combine(spa, bad, sty)


def test_absent_blocks_skipped():
    rng = np.random.default_rng(6)
    dpc = make_combiner(rng)
    spa, sem, sty = make_prompts(rng)
    out, cache = dpc.combine(spa, None, sty)
    kinds = [k for k, _, _ in out.blocks]
    assert kinds == ["spatial-sparse", "style", "adaptive"]
    assert out.token_count == spa.tokens.shape[1] + sty.tokens.shape[1] + 1
    d_spa, d_sem, d_sty = dpc.backward(cache, np.zeros_like(out.tokens))
    assert d_sem is None and d_spa is not None and d_sty is not None


def test_default_prompt_zero_adaptive():
    rng = np.random.default_rng(7)
    dpc = make_combiner(rng, ta=2)
    out = dpc.default_prompt(3)
    assert out.tokens.shape == (3, 2, DIM)
    assert np.abs(out.tokens).max() == 0.0
    assert out.blocks == (("adaptive", 0, 2),)


def test_dynamic_off_bypasses_state():
    rng = np.random.default_rng(8)
    dpc = make_combiner(rng)
    dpc.w1.value[...] = 5.0
    spa, sem, sty = make_prompts(rng)
    out, _ = dpc.combine(spa, sem, sty, dynamic=False)
    t_spa = spa.tokens.shape[1]
    np.testing.assert_allclose(out.tokens[:, :t_spa], spa.tokens, atol=1e-12)
    np.testing.assert_allclose(out.tokens[:, -1], 0.0, atol=1e-12)


def test_finite_difference_gradients():
    rng = np.random.default_rng(9)
    dpc = make_combiner(rng, ta=2)
    for w in (dpc.w1, dpc.w2, dpc.w3):
        w.value[...] = rng.normal(size=DIM)
    spa, sem, sty = make_prompts(rng)
    shape = (2, 3 + 2 + 4 + 2, DIM)
    probe = rng.normal(size=shape)

    def run(backward):
        out, cache = dpc.combine(spa, sem, sty)
        # quadratic probe loss
        loss = 0.5 * float(((out.tokens * probe) ** 2).sum())
        if backward:
            dpc.backward(cache, out.tokens * probe * probe)
        return loss

    params = [dpc.w1, dpc.w2, dpc.w3, dpc.e_ada]
    check_param_gradients(params, run, rng, n_probes=30)
    # gradients are nonzero where the loss depends on the block
    assert all(np.abs(p.grad).max() > 0 for p in params)


def test_block_input_gradients_match_weights():
    rng = np.random.default_rng(10)
    dpc = make_combiner(rng)
    for w in (dpc.w1, dpc.w2, dpc.w3):
        w.value[...] = rng.normal(size=DIM)
    spa, sem, sty = make_prompts(rng, b=1)
    out, cache = dpc.combine(spa, sem, sty)
    dout = rng.normal(size=out.tokens.shape)
    d_spa, d_sem, d_sty = dpc.backward(cache, dout)
    t_spa, t_sem = spa.tokens.shape[1], sem.tokens.shape[1]
    np.testing.assert_allclose(d_spa, dout[:, :t_spa] * dpc.w1.value, atol=1e-12)
    np.testing.assert_allclose(d_sem, dout[:, t_spa:t_spa + t_sem] * dpc.w2.value,
                               atol=1e-12)
