import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsta.attention import (
    AttentionConfigError,
    CoordHead,
    SAttStack,
    aggregate,
    coupled_forward,
    head_forward,
    s_att_forward,
    sd_forward,
    td_forward,
)
from dsta.numerics import ParamFactory, Tensor

GROUPS = ((0, 1, 2), (3, 4, 5), (6, 7, 8), (9, 10, 11), (12, 13, 14))
D = 32


def stack(seed=0, prefix="s."):
    return SAttStack(D, ParamFactory(seed), prefix)


def rand(*shape, seed=0):
    return np.random.default_rng(seed).normal(size=shape).astype(np.float32)


def test_single_token_attends_to_itself():
    s = stack()
    s.capture = True
    out = s_att_forward(s, Tensor(rand(1, D)), Tensor(np.zeros((1, D), np.float32)))
    assert out.shape == (1, D)
    for w in s.attention_weights:
        assert np.all(w == 1.0)


def test_pair_counter_single_call():
    s = stack()
    s_att_forward(s, Tensor(rand(45, D)), Tensor(np.zeros((45, D), np.float32)))
    assert s.pair_count == 4 * 2 * 2025 == 16200


def test_duplicate_tokens_give_duplicate_outputs():
    s = stack()
    tok = np.repeat(rand(1, D), 5, axis=0)
    out = s_att_forward(s, Tensor(tok), Tensor(np.zeros((5, D), np.float32))).data
    for row in out[1:]:
        np.testing.assert_array_equal(row, out[0])


def test_attention_rows_sum_to_one():
    s = stack()
    s.capture = True
    s(Tensor(rand(3, 9, D)))
    assert len(s.attention_weights) == 4
    for w in s.attention_weights:
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-6)


def test_token_dim_mismatch():
    with pytest.raises(AttentionConfigError):
        stack()(Tensor(rand(1, 3, 16)))
    with pytest.raises(AttentionConfigError):
        SAttStack(30, ParamFactory(0), "x.", heads=4)


def test_td_pair_count_and_shape():
    s = stack()
    out = td_forward(Tensor(rand(1, 3, 15, D)), s, Tensor(rand(3, D, seed=1)), key_index=1)
    assert out.shape == (1, 15, D)
    assert s.pair_count == 1080


def test_td_zero_span_depends_only_on_own_token():
    s = stack()
    x = rand(2, 1, 15, D)
    pos = Tensor(rand(1, D, seed=1))
    base = td_forward(Tensor(x), s, pos, 0).data
    y = x.copy()
    y[:, :, 4:] += 1.0
    out = td_forward(Tensor(y), s, pos, 0).data
    np.testing.assert_array_equal(out[:, :4], base[:, :4])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 14), st.integers(0, 2**31))
def test_td_locality(j, seed):
    s = stack()
    x = rand(1, 3, 15, D, seed=seed)
    pos = Tensor(rand(3, D, seed=1))
    base = td_forward(Tensor(x), s, pos, 1).data
    y = x + rand(1, 3, 15, D, seed=seed + 1)
    y[:, :, j] = x[:, :, j]
    out = td_forward(Tensor(y), s, pos, 1).data
    assert out[0, j].tobytes() == base[0, j].tobytes()


def test_sd_pair_count():
    s = stack()
    out = sd_forward(Tensor(rand(1, 15, D)), s, Tensor(rand(15, D, seed=2)), GROUPS)
    assert out.shape == (1, 15, D) and s.pair_count == 360


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 4), st.integers(0, 2**31))
def test_sd_group_isolation(k, seed):
    s = stack()
    pos = Tensor(rand(15, D, seed=2))
    x = rand(2, 15, D, seed=seed)
    base = sd_forward(Tensor(x), s, pos, GROUPS).data
    y = x + rand(2, 15, D, seed=seed + 1)
    g = list(GROUPS[k])
    y[:, g] = x[:, g]
    out = sd_forward(Tensor(y), s, pos, GROUPS).data
    assert out[:, g].tobytes() == base[:, g].tobytes()


def test_sd_singleton_groups_attend_to_self():
    s = stack()
    s.capture = True
    sd_forward(Tensor(rand(1, 4, D)), s, Tensor(np.zeros((4, D), np.float32)), ((0,), (1,), (2,), (3,)))
    assert all(np.all(w == 1.0) for w in s.attention_weights)


def test_sd_uneven_groups_scatter_back():
    s = stack()
    groups = ((2,), (0, 3, 1))
    pos = Tensor(np.zeros((4, D), np.float32))
    x = rand(1, 4, D)
    out = sd_forward(Tensor(x), s, pos, groups).data
    # joint 2 alone equals running the stack on its single token
    alone = s(Tensor(x[:, [2]])).data
    np.testing.assert_allclose(out[:, 2], alone[:, 0], atol=1e-6)


def test_sd_invalid_partition():
    with pytest.raises(AttentionConfigError):
        sd_forward(Tensor(rand(1, 4, D)), stack(), Tensor(np.zeros((4, D), np.float32)), ((0, 1), (1, 2, 3)))


def test_sd_permutation_equivariance_within_group():
    s = stack()
    pos = Tensor(np.zeros((15, D), np.float32))
    x = rand(1, 15, D)
    base = sd_forward(Tensor(x), s, pos, GROUPS).data
    perm = list(range(15))
    perm[3], perm[5] = 5, 3
    out = sd_forward(Tensor(x[:, perm]), s, pos, GROUPS).data
    np.testing.assert_allclose(out, base[:, perm], atol=1e-6)


def test_coupled_pair_count_and_mixing():
    s = stack()
    tp, sp = Tensor(rand(3, D, seed=1)), Tensor(rand(15, D, seed=2))
    x = rand(1, 3, 15, D)
    base = coupled_forward(Tensor(x), s, tp, sp, 1).data
    assert s.pair_count == 16200
    y = x.copy()
    y[0, 0, 7] += 1.0  # one auxiliary-frame token of another joint
    out = coupled_forward(Tensor(y), s, tp, sp, 1).data
    assert np.abs(out[0, 2] - base[0, 2]).max() > 0


def test_coupled_zero_span_matches_single_group_topology():
    s1, s2 = stack(0), stack(0)
    s2.capture = s1.capture = True
    x = rand(1, 1, 6, D)
    coupled_forward(Tensor(x), s1, Tensor(np.zeros((1, D), np.float32)), Tensor(np.zeros((6, D), np.float32)), 0)
    sd_forward(Tensor(x[:, 0]), s2, Tensor(np.zeros((6, D), np.float32)), (tuple(range(6)),))
    assert s1.pair_count == s2.pair_count
    assert [w.shape for w in s1.attention_weights] == [w.shape for w in s2.attention_weights]


def test_aggregate_order_and_round_trip():
    td, sd = rand(2, 15, D), rand(2, 15, D, seed=1)
    out = aggregate(Tensor(td), Tensor(sd)).data
    assert out.shape == (2, 15, 64)
    assert out[..., :D].tobytes() == td.tobytes() and out[..., D:].tobytes() == sd.tobytes()
    ones = aggregate(Tensor(np.ones((15, D))), Tensor(np.zeros((15, D)))).data
    assert np.all(ones[:, :D] == 1) and np.all(ones[:, D:] == 0)
    with pytest.raises(AttentionConfigError):
        aggregate(Tensor(td), Tensor(sd[:, :14]))


def test_head_zero_weights_centre_unit_scale():
    head = CoordHead(64, ParamFactory(0))
    for p in head.parameters().values():
        p.data[...] = 0.0
    coords, scale = head_forward(Tensor(rand(15, 64)), head)
    assert coords.shape == (15, 2)
    assert not coords.data.any() and np.all(scale.data == 1.0)


def test_head_is_joint_wise():
    head = CoordHead(64, ParamFactory(0))
    x = rand(15, 64)
    base, _ = head(Tensor(x))
    y = x.copy()
    y[4] += 3.0
    out, _ = head(Tensor(y))
    changed = np.any(out.data != base.data, axis=-1)
    assert changed.tolist() == [j == 4 for j in range(15)]
