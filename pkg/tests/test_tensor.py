import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lckasr import tensor as T
from lckasr.errors import ConfigError
from lckasr.tensor import ConvGeometry

from oracles import conv2d_naive, conv_iterations, normal_cdf


def test_conv2d_3x3_ones():
    x = np.arange(1, 10, dtype=np.float32).reshape(1, 1, 3, 3)
    w = np.ones((1, 1, 3, 3), np.float32)
    y = T.conv2d(x, w, None, ConvGeometry.same(3, bias=False))
    assert y[0, 0, 1, 1] == 45
    assert y[0, 0, 0, 0] == 12
    np.testing.assert_allclose(y[0, 0], conv2d_naive(x, w, None, 3, 3, ph=1, pw=1)[0, 0])


def test_conv2d_identity_kernel():
    x = np.random.default_rng(0).standard_normal((2, 1, 5, 4)).astype(np.float32)
    y = T.conv2d(x, np.ones((1, 1, 1, 1), np.float32), None, ConvGeometry(1, 1, has_bias=False))
    np.testing.assert_array_equal(y, x)


def test_conv2d_dilated_row():
    x = np.arange(1, 8, dtype=np.float32).reshape(1, 1, 1, 7)
    w = np.ones((1, 1, 1, 3), np.float32)
    geom = ConvGeometry(1, 3, dilation_w=3, pad_w=3, has_bias=False)
    y = T.conv2d(x, w, None, geom)
    assert y.shape == (1, 1, 1, 7)
    assert y[0, 0, 0, 3] == 12


def test_conv2d_output_size_formula():
    geom = ConvGeometry(3, 5, 2, 1, 1, 0)
    x = np.zeros((1, 2, 11, 9), np.float32)
    y = T.conv2d(x, np.zeros((4, 2, 3, 5), np.float32), np.zeros(4, np.float32), geom)
    assert y.shape == (1, 4, 11 + 2 - 2 * 2, 9 - 4)


@pytest.mark.parametrize(
    "x_shape, w_shape, groups, match",
    [
        ((1, 4, 5, 5), (4, 3, 3, 3), 1, "in-channels per group"),
        ((1, 6, 5, 5), (6, 1, 3, 3), 4, "not divisible by groups"),
        ((1, 4, 5, 5), (6, 1, 3, 3), 4, "output channels 6"),
    ],
)
def test_conv2d_shape_errors(x_shape, w_shape, groups, match):
    geom = ConvGeometry.same(3, groups=groups, bias=False)
    with pytest.raises(ConfigError, match=match):
        T.conv2d(np.zeros(x_shape, np.float32), np.zeros(w_shape, np.float32), None, geom)


def test_conv2d_bias_mismatch():
    geom = ConvGeometry.same(1)
    with pytest.raises(ConfigError, match="bias"):
        T.conv2d(np.zeros((1, 2, 3, 3)), np.zeros((3, 2, 1, 1)), np.zeros(2), geom)


def test_separable_rank1_kernel():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 9, 9)).astype(np.float32)
    h = rng.standard_normal((3, 5)).astype(np.float32)
    v = rng.standard_normal((3, 5)).astype(np.float32)
    k2d = v[:, :, None] * h[:, None, :]
    row = T.conv2d(x, h[:, None, None, :], None, ConvGeometry.same((1, 5), groups=3, bias=False))
    both = T.conv2d(row, v[:, None, :, None], None, ConvGeometry.same((5, 1), groups=3, bias=False))
    full = T.conv2d(x, k2d[:, None], None, ConvGeometry.same(5, groups=3, bias=False))
    assert np.abs(both - full).max() < 1e-5


def test_composed_support_width():
    x = np.zeros((1, 1, 1, 41), np.float64)
    x[0, 0, 0, 20] = 1.0
    w = np.ones((1, 1, 1, 5))
    y = T.conv2d(x, w, None, ConvGeometry.same((1, 5), bias=False))
    y = T.conv2d(y, w, None, ConvGeometry.same((1, 5), (1, 3), bias=False))
    nz = np.nonzero(y[0, 0, 0])[0]
    assert nz.max() - nz.min() + 1 == 17
    assert len(nz) == 17


def test_count_macs_matches_loop_count():
    x = np.zeros((1, 8, 10, 10), np.float32)
    with T.count_macs() as c:
        T.conv2d(x, np.zeros((8, 1, 3, 3), np.float32), None, ConvGeometry.same(3, groups=8, bias=False))
    assert c[0] == conv_iterations(1, 8, 1, 3, 3, 10, 10)


def test_gelu_values():
    x = np.array([0.0, 1.0, -10.0], np.float32).reshape(1, 1, 1, 3)
    y = T.gelu(x)[0, 0, 0]
    assert y[0] == 0
    assert abs(y[1] - 1.0 * normal_cdf(1.0)) < 1e-5
    assert abs(y[1] - 0.841345) < 1e-5
    assert abs(y[2]) < 1e-8


def test_gelu_matches_cdf_oracle():
    xs = np.linspace(-6, 6, 97)
    y = T.gelu(xs.reshape(1, 1, 1, -1))[0, 0, 0]
    np.testing.assert_allclose(y, [v * normal_cdf(v) for v in xs], atol=1e-12)


def test_pixel_shuffle_mapping():
    x = np.array([1, 2, 3, 4], np.float32).reshape(1, 4, 1, 1)
    np.testing.assert_array_equal(T.pixel_shuffle(x, 2)[0, 0], [[1, 2], [3, 4]])


def test_pixel_shuffle_identity_and_roundtrip():
    x = np.random.default_rng(1).standard_normal((1, 8, 2, 2)).astype(np.float32)
    np.testing.assert_array_equal(T.pixel_shuffle(x, 1), x)
    y = T.pixel_shuffle(x, 2)
    assert y.shape == (1, 2, 4, 4)
    np.testing.assert_array_equal(T.pixel_unshuffle(y, 2), x)


def test_pixel_shuffle_explicit_index_map():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 12, 3, 2))
    r = 2
    y = T.pixel_shuffle(x, r)
    for n in range(2):
        for c in range(3):
            for h in range(3):
                for w in range(2):
                    for i in range(r):
                        for j in range(r):
                            assert y[n, c, h * r + i, w * r + j] == x[n, c * r * r + i * r + j, h, w]


def test_pixel_shuffle_bad_channels():
    with pytest.raises(ConfigError, match="divisible"):
        T.pixel_shuffle(np.zeros((1, 6, 2, 2)), 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_pixel_shuffle_preserves_multiset(c, r, h, w, seed):
    x = np.random.default_rng(seed).standard_normal((1, c * r * r, h, w))
    np.testing.assert_array_equal(np.sort(T.pixel_shuffle(x, r).ravel()), np.sort(x.ravel()))


def test_split_even_thirds():
    parts = T.channel_split(np.zeros((1, 48, 2, 2)), [16, 16, 16])
    assert [p.shape[1] for p in parts] == [16, 16, 16]


def test_split_single_part_and_roundtrip():
    x = np.random.default_rng(4).standard_normal((1, 6, 2, 2)).astype(np.float32)
    (only,) = T.channel_split(x, [6])
    np.testing.assert_array_equal(only, x)
    back = T.channel_concat(T.channel_split(x, [1, 2, 3]))
    assert back.tobytes() == x.tobytes()


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=5), st.integers(0, 2**31 - 1))
def test_concat_split_identity(parts, seed):
    x = np.random.default_rng(seed).standard_normal((2, sum(parts), 3, 2)).astype(np.float32)
    assert T.channel_concat(T.channel_split(x, parts)).tobytes() == x.tobytes()


def test_split_concat_errors():
    with pytest.raises(ConfigError, match="sum"):
        T.channel_split(np.zeros((1, 5, 1, 1)), [2, 2])
    with pytest.raises(ConfigError, match="mismatch"):
        T.channel_concat([np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 3, 2))])


def test_ewise_ops():
    a = np.array([2.0, 3.0]).reshape(1, 1, 1, 2)
    b = np.array([4.0, 5.0]).reshape(1, 1, 1, 2)
    np.testing.assert_array_equal(T.ewise_mul(a, b).ravel(), [8, 15])
    np.testing.assert_array_equal(T.ewise_add(a, b).ravel(), [6, 8])
    np.testing.assert_array_equal(T.ewise_mul(a, np.ones_like(a)), a)
    np.testing.assert_array_equal(T.ewise_add(a, np.zeros_like(a)), a)
    with pytest.raises(ConfigError):
        T.ewise_add(a, np.zeros((1, 1, 2, 1)))


def test_replicate_channels():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
    np.testing.assert_array_equal(T.replicate_channels(x, 1), x)
    y = T.replicate_channels(x, 3)
    assert y.shape == (2, 9, 4, 4)
    np.testing.assert_array_equal(y[:, 0], y[:, 3])
    np.testing.assert_array_equal(y[:, 0], y[:, 6])
    y4 = T.replicate_channels(x, 4)
    for c in range(12):
        assert y4[:, c].tobytes() == x[:, c % 3].tobytes()
