import numpy as np
import pytest

from subbit import engine
from subbit import kernels as K
from subbit.kernelspace import SamplingStrategy, sample_subsets
from subbit.packfmt import PackedLayer


def random_packed_layer(rng, c_in, c_out, tau, k=3, stride=1, pad=1,
                        binarize_input=True):
    sub = sample_subsets(1, tau, SamplingStrategy.RANDOM_LAYER_SPECIFIC,
                         seed=int(rng.integers(1 << 30)), n=k * k)[0]
    codes = rng.integers(0, 1 << tau, size=(c_out, c_in)).astype(np.uint32)
    scales = np.ones(c_out, dtype=np.float32)
    return PackedLayer(0, "kernel", k, tau, c_out, c_in, stride, pad,
                       binarize_input, sub.members, codes, scales)


def test_all_plus_single_pixel():
    layer = PackedLayer(0, "kernel", 3, 1, 1, 1, 1, 0, True,
                        np.stack([np.ones(9, dtype=np.int8),
                                  -np.ones(9, dtype=np.int8)]),
                        np.zeros((1, 1), dtype=np.uint32), np.ones(1, dtype=np.float32))
    act = np.ones((1, 3, 3), dtype=np.int8)
    out, _ = engine.conv_xnor_popcount(act, layer)
    assert out.shape == (1, 1, 1)
    assert out[0, 0, 0] == 9
    # negated kernel against the same patch
    layer.codes[0, 0] = 1
    out, _ = engine.conv_xnor_popcount(act, layer)
    assert out[0, 0, 0] == -9


@pytest.mark.parametrize("stride,pad", [(1, 1), (1, 0), (2, 1)])
def test_xnor_equals_real_conv(stride, pad):
    rng = np.random.default_rng(0)
    for _ in range(50):
        c_in = int(rng.integers(1, 9))
        c_out = int(rng.integers(1, 12))
        h = int(rng.integers(3, 9))
        layer = random_packed_layer(rng, c_in, c_out, tau=3, stride=stride, pad=pad)
        act = rng.choice([-1, 1], size=(c_in, h, h)).astype(np.int8)
        out, _ = engine.conv_xnor_popcount(act, layer)
        wbar = engine.expand_weights(layer).astype(np.float64)
        ref = K.conv2d_forward(act[None].astype(np.float64), wbar, stride, pad)[0]
        assert np.array_equal(out, ref.astype(np.int64))


def test_shared_equals_direct_randomized():
    rng = np.random.default_rng(1)
    for trial in range(100):
        tau = int(rng.integers(1, 6))
        c_out = int(rng.integers(1, 2 ** tau + 8))
        c_in = int(rng.integers(1, 10))
        h = int(rng.integers(3, 8))
        stride = int(rng.integers(1, 3))
        layer = random_packed_layer(rng, c_in, c_out, tau, stride=stride,
                                    pad=int(rng.integers(0, 2)))
        act = rng.choice([-1, 1], size=(c_in, h, h)).astype(np.int8)
        direct, _ = engine.conv_xnor_popcount(act, layer)
        shared, stats = engine.conv_shared(act, layer)
        assert np.array_equal(direct, shared), f"trial {trial}"
        ho, wo = direct.shape[1], direct.shape[2]
        if 2 ** tau < c_out:
            assert stats.path == "shared"
            assert stats.pre_dots == ho * wo * c_in * 2 ** tau
        else:
            assert stats.path == "direct"
            assert stats.pre_dots == ho * wo * c_in * c_out


def test_shared_c_out_one_identical_work():
    rng = np.random.default_rng(2)
    layer = random_packed_layer(rng, 4, 1, tau=3)
    act = rng.choice([-1, 1], size=(4, 5, 5)).astype(np.int8)
    direct, dstats = engine.conv_xnor_popcount(act, layer)
    shared, sstats = engine.conv_shared(act, layer)
    assert np.array_equal(direct, shared)
    assert sstats.path == "direct"
    assert sstats.pre_dots == dstats.pre_dots


def test_shared_sharing_factor():
    # c_out / 2^tau is exactly the pre-compute reduction
    rng = np.random.default_rng(3)
    layer = random_packed_layer(rng, 8, 64, tau=5)
    act = rng.choice([-1, 1], size=(8, 6, 6)).astype(np.int8)
    _, dstats = engine.conv_xnor_popcount(act, layer)
    _, sstats = engine.conv_shared(act, layer)
    assert dstats.pre_dots / sstats.pre_dots == 64 / 32


def test_vector_mode_shared_equals_dense():
    rng = np.random.default_rng(4)
    sub = sample_subsets(1, 3, SamplingStrategy.RANDOM_LAYER_SPECIFIC, seed=11, n=8)[0]
    c_in, c_out = 16, 12
    codes = rng.integers(0, 8, size=(c_out, c_in // 8)).astype(np.uint32)
    layer = PackedLayer(0, "vector", 1, 3, c_out, c_in, 1, 0, True,
                        sub.members, codes, np.ones(c_out, dtype=np.float32))
    act = rng.choice([-1, 1], size=(c_in, 4, 4)).astype(np.int8)
    shared, stats = engine.conv_shared(act, layer)
    assert stats.path == "shared"
    wbar = engine.expand_weights(layer).astype(np.float64)
    ref = K.conv2d_forward(act[None].astype(np.float64), wbar, 1, 0)[0]
    assert np.array_equal(shared, ref.astype(np.int64))


def test_shared_real_matches_dense_conv():
    rng = np.random.default_rng(5)
    layer = random_packed_layer(rng, 6, 40, tau=4, binarize_input=False)
    act = rng.normal(size=(6, 7, 7))
    got = engine.conv_shared_real(act, layer)
    wbar = engine.expand_weights(layer).astype(np.float64)
    ref = K.conv2d_forward(act[None], wbar, 1, 1)[0]
    assert np.allclose(got, ref, atol=1e-9)
