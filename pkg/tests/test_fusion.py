import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tagqa import fusion
from tagqa.config import ModelConfig
from tagqa.core.optim import DivergenceError
from tagqa.core.tensor import ShapeError, Tensor

CFG = ModelConfig(d=16, layers=2, heads=2, k_cap=5, m_cap=3, n_cap=4, t_cap=4, dropout=0.1, seed=0)
CTX = CFG.k_cap + CFG.m_cap + CFG.n_cap


@pytest.fixture(scope="module")
def params():
    return fusion.init_fusion_params(CFG, np.random.default_rng(0))


def run(params, seq, lengths, t_len=CFG.t_cap):
    visible = fusion.build_mask(np.array([lengths]), CFG, t_len)
    return fusion.forward(Tensor(seq[None]), visible, params, CFG).data[0]


def test_segment_offsets():
    assert fusion.segment_offsets(CFG) == {"text": 0, "obj": 5, "ocr": 8, "decode": 12}


def test_joint_sequence_places_blocks(rng):
    blocks = [Tensor(rng.normal(size=(n, 16))) for n in (5, 3, 4, 2)]
    seq = fusion.build_joint_sequence(*blocks, CFG)
    off = fusion.segment_offsets(CFG)
    assert seq.shape == (14, 16)
    np.testing.assert_array_equal(seq.data[off["ocr"] : off["ocr"] + 4], blocks[2].data)


def test_joint_sequence_shape_errors(rng):
    good = [Tensor(rng.normal(size=(n, 16))) for n in (5, 3, 4, 2)]
    with pytest.raises(ShapeError, match="expected"):
        fusion.build_joint_sequence(Tensor(np.zeros((6, 16))), *good[1:], CFG)
    with pytest.raises(ShapeError, match="t_cap"):
        fusion.build_joint_sequence(*good[:3], Tensor(np.zeros((5, 16))), CFG)
    with pytest.raises(ShapeError, match="d=16"):
        fusion.build_joint_sequence(*good[:3], Tensor(np.zeros((2, 8))), CFG)


def visibility_oracle(i, j, lengths):
    """Rule-by-rule visibility of key j from query i."""
    caps = (CFG.k_cap, CFG.m_cap, CFG.n_cap)
    starts = np.cumsum((0,) + caps)

    def valid(p):
        if p >= CTX:
            return True
        blk = int(np.searchsorted(starts, p, side="right") - 1)
        return p - starts[blk] < lengths[blk]

    if not (valid(i) and valid(j)):
        return False
    if i < CTX:
        return j < CTX
    return j < CTX or j <= i


@given(st.integers(0, 5), st.integers(0, 3), st.integers(0, 4))
@settings(max_examples=40, deadline=None)
def test_mask_matches_rules(k, m, n):
    mask = fusion.build_mask(np.array([[k, m, n]]), CFG)[0]
    s = CTX + CFG.t_cap
    expect = np.array([[visibility_oracle(i, j, (k, m, n)) for j in range(s)] for i in range(s)])
    np.testing.assert_array_equal(mask, expect)


def test_mask_rejects_overflow():
    with pytest.raises(ValueError, match="cap"):
        fusion.build_mask(np.array([[6, 0, 0]]), CFG)


def test_additive_mask():
    np.testing.assert_array_equal(fusion.additive_mask(np.array([True, False])), [0.0, -np.inf])


def test_decode_causality_is_exact(params, rng):
    seq = rng.normal(size=(CTX + CFG.t_cap, 16))
    base = run(params, seq, (4, 2, 3))
    for t in range(CFG.t_cap - 1):
        pert = seq.copy()
        pert[CTX + t + 1 :] += rng.normal(size=(CFG.t_cap - t - 1, 16)) * 100
        out = run(params, pert, (4, 2, 3))
        np.testing.assert_array_equal(out[: CTX + t + 1], base[: CTX + t + 1])


def test_padding_is_invisible(params, rng):
    lengths = (3, 1, 2)
    seq = rng.normal(size=(CTX + CFG.t_cap, 16))
    base = run(params, seq, lengths)
    pert = seq.copy()
    pads = [3, 4, 6, 7, 10, 11]
    pert[pads] = rng.normal(size=(len(pads), 16)) * 1e3
    out = run(params, pert, lengths)
    keep = [i for i in range(len(seq)) if i not in pads]
    np.testing.assert_array_equal(out[keep], base[keep])


def test_ocr_permutation_equivariance(params, rng):
    """Without position signals inside the OCR block, reordering permutes outputs."""
    seq = rng.normal(size=(CTX + CFG.t_cap, 16))
    perm = np.array([2, 0, 3, 1])
    pseq = seq.copy()
    off = fusion.segment_offsets(CFG)["ocr"]
    pseq[off : off + 4] = seq[off + perm]
    a = run(params, seq, (5, 3, 4))
    b = run(params, pseq, (5, 3, 4))
    np.testing.assert_allclose(b[off : off + 4], a[off + perm], atol=1e-12)
    np.testing.assert_allclose(b[:off], a[:off], atol=1e-12)


def test_batch_matches_single(params, rng):
    seqs = rng.normal(size=(2, CTX + 3, 16))
    lengths = np.array([[5, 3, 4], [2, 0, 1]])
    batched = fusion.forward(Tensor(seqs), fusion.build_mask(lengths, CFG, 3), params, CFG).data
    for i in range(2):
        single = run(params, seqs[i], tuple(lengths[i]), 3)
        np.testing.assert_allclose(batched[i], single, atol=1e-12)


def test_dropout_only_in_training(params, rng):
    seq = Tensor(rng.normal(size=(1, CTX + 2, 16)))
    vis = fusion.build_mask(np.array([[5, 3, 4]]), CFG, 2)
    e1 = fusion.forward(seq, vis, params, CFG).data
    e2 = fusion.forward(seq, vis, params, CFG).data
    np.testing.assert_array_equal(e1, e2)
    tr = fusion.forward(seq, vis, params, CFG, training=True, rng=np.random.default_rng(0)).data
    assert not np.array_equal(tr, e1)


def test_non_finite_input_raises(params):
    seq = np.zeros((CTX + 2, 16))
    seq[0, 0] = np.nan
    with pytest.raises(DivergenceError, match="layer 0"):
        run(params, seq, (5, 3, 4), 2)


def test_attention_log_rows_are_distributions(params, rng):
    log = []
    seq = Tensor(rng.normal(size=(1, CTX + 2, 16)))
    vis = fusion.build_mask(np.array([[2, 1, 1]]), CFG, 2)
    fusion.forward(seq, vis, params, CFG, attention_log=log)
    assert len(log) == CFG.layers
    att = log[0][0, 0]
    rows = vis[0].any(axis=1)
    np.testing.assert_allclose(att[rows].sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(att[~vis[0]] == 0.0)
