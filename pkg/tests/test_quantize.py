import numpy as np
import pytest

from subbit import autograd as ag
from subbit import quantize as Q
from subbit.autograd import Tensor
from subbit.kernelspace import SamplingStrategy, all_kernels, all_patterns, sample_subsets
from subbit.nn import QuantConv2d


def exhaustive_nearest(w_flat, members):
    """Brute-force min-L2 oracle with lowest-index tie break."""
    d2 = ((members[None, :, :] - w_flat[:, None, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def test_sign_basics():
    assert np.array_equal(Q.binarize_sign(np.array([-0.3, 0.7, 0.0])),
                          [-1.0, 1.0, 1.0])
    pm = np.array([1.0, -1.0, 1.0])
    assert np.array_equal(Q.binarize_sign(pm), pm)


def test_sign_equals_full_universe_argmin_k2_exhaustive():
    # every sign pattern at k=2 against brute force over all 16 kernels
    rng = np.random.default_rng(0)
    members = all_kernels(2).astype(np.float64)
    w = rng.normal(size=(200, 4))
    ref = members[exhaustive_nearest(w, members)]
    assert np.array_equal(Q.binarize_sign(w), ref)


def test_sign_equals_full_universe_argmin_k3_sampled():
    rng = np.random.default_rng(1)
    members = all_kernels(3).astype(np.float64)
    w = rng.normal(size=(1000, 9))
    ref = members[exhaustive_nearest(w, members)]
    assert np.array_equal(Q.binarize_sign(w), ref)


@pytest.mark.parametrize("tau", [1, 3, 5])
def test_subset_binarize_matches_bruteforce(tau):
    rng = np.random.default_rng(tau)
    sub = sample_subsets(1, tau, SamplingStrategy.RANDOM_LAYER_SPECIFIC, seed=tau)[0]
    w = rng.normal(size=(10, 10, 3, 3))
    wbar, codes = Q.binarize_subset(w, sub)
    ref_codes = exhaustive_nearest(w.reshape(100, 9),
                                   sub.members.astype(np.float64))
    assert np.array_equal(codes.reshape(-1), ref_codes)
    assert np.array_equal(wbar.reshape(100, 9),
                          sub.members[ref_codes].astype(np.float64))


def test_subset_exact_member_hit():
    sub = sample_subsets(1, 3, SamplingStrategy.RANDOM_LAYER_SPECIFIC, seed=5)[0]
    w = sub.members[3].astype(np.float64).reshape(1, 1, 3, 3)
    wbar, codes = Q.binarize_subset(w, sub)
    assert codes[0, 0] == 3
    assert np.array_equal(wbar.reshape(-1), sub.members[3])


def test_full_set_degeneracy_equals_sign():
    sub = sample_subsets(1, 9, SamplingStrategy.RANDOM_LAYER_SPECIFIC, seed=2)[0]
    rng = np.random.default_rng(3)
    w = rng.normal(size=(8, 4, 3, 3))
    wbar, _ = Q.binarize_subset(w, sub)
    assert np.array_equal(wbar, Q.binarize_sign(w))


def test_selection_scale_invariance():
    sub = sample_subsets(1, 4, SamplingStrategy.RANDOM_LAYER_SPECIFIC, seed=4)[0]
    rng = np.random.default_rng(5)
    w = rng.normal(size=(6, 6, 3, 3))
    _, codes = Q.binarize_subset(w, sub)
    _, codes_scaled = Q.binarize_subset(3.7 * w, sub)
    assert np.array_equal(codes, codes_scaled)


def test_ste_mask():
    g = np.array([2.0, 3.0, 4.0, 5.0])
    w = np.array([0.5, 1.5, 1.0, -1.0])
    out = Q.ste_mask(g, w)
    assert np.array_equal(out, [2.0, 0.0, 0.0, 0.0])


def test_sign_memory_threshold_behavior():
    sub = sample_subsets(1, 2, SamplingStrategy.RANDOM_LAYER_SPECIFIC, seed=6)[0]
    sub.members[:] = -1
    sub.latent[:] = 0.0
    sub.latent[0, 0] = 0.0005   # inside threshold: memory holds
    sub.latent[0, 1] = 0.002    # outside: follows sign
    flips = Q.update_sign_memory(sub, theta=1e-3)
    assert flips == 1
    assert sub.members[0, 0] == -1
    assert sub.members[0, 1] == 1
    # all-zero latent never flips anything
    sub.latent[:] = 0.0
    assert Q.update_sign_memory(sub, theta=1e-3) == 0


def test_sign_memory_consistency_invariant():
    rng = np.random.default_rng(7)
    sub = sample_subsets(1, 4, SamplingStrategy.RANDOM_LAYER_SPECIFIC, seed=7)[0]
    for _ in range(100):
        sub.latent += rng.normal(scale=0.5, size=sub.latent.shape)
        Q.update_sign_memory(sub, theta=1e-3)
        disagree = np.sign(sub.latent) != sub.members
        assert np.all(np.abs(sub.latent[disagree]) <= 1e-3)


def test_codebook_grad_scatter():
    codes = np.array([0, 2, 2, 1])
    grads = np.arange(4 * 9, dtype=np.float64).reshape(4, 9)
    out = Q.accumulate_codebook_grad(codes, grads, 4)
    assert np.array_equal(out[0], grads[0])
    assert np.array_equal(out[1], grads[3])
    assert np.array_equal(out[2], grads[1] + grads[2])
    assert np.array_equal(out[3], np.zeros(9))


def test_codebook_grad_matches_scatter_oracle():
    rng = np.random.default_rng(8)
    for _ in range(50):
        n_members = int(rng.integers(2, 32))
        n_rows = int(rng.integers(1, 100))
        codes = rng.integers(0, n_members, size=n_rows)
        grads = rng.normal(size=(n_rows, 9))
        ref = np.zeros((n_members, 9))
        for c, g in zip(codes, grads):
            ref[c] += g
        assert np.allclose(Q.accumulate_codebook_grad(codes, grads, n_members), ref)


def test_channel_scales():
    w = np.array([[[[0.5, -0.5], [1.0, -2.0]]], [[[0.0, 0.0], [0.0, 0.0]]]])
    s = Q.channel_scales(w)
    assert np.isclose(s[0], 1.0)
    assert s[1] > 0  # positive even for a zero channel


@pytest.mark.parametrize("tau_prime", [2, 4, 8])
def test_vector_mode_matches_bruteforce(tau_prime):
    rng = np.random.default_rng(tau_prime)
    sub = sample_subsets(1, tau_prime, SamplingStrategy.RANDOM_LAYER_SPECIFIC,
                         seed=tau_prime, n=8)[0]
    w = rng.normal(size=(4, 16, 1, 1))
    wbar, codes = Q.binarize_vectors(w, sub)
    rows = w.reshape(4 * 2, 8)
    ref = exhaustive_nearest(rows, sub.members.astype(np.float64))
    assert np.array_equal(codes.reshape(-1), ref)
    assert np.array_equal(wbar.reshape(-1, 8), sub.members[ref].astype(np.float64))


def test_vector_mode_full_set_is_sign():
    from subbit.kernelspace import KernelSubset
    sub = KernelSubset(8, 8, all_patterns(8))
    rng = np.random.default_rng(9)
    w = rng.normal(size=(3, 8, 1, 1))
    wbar, _ = Q.binarize_vectors(w, sub)
    assert np.array_equal(wbar, Q.binarize_sign(w))


def test_vector_mode_requires_divisible_channels():
    sub = sample_subsets(1, 2, SamplingStrategy.RANDOM_LAYER_SPECIFIC, seed=1, n=8)[0]
    with pytest.raises(Exception):
        Q.binarize_vectors(np.zeros((2, 12, 1, 1)), sub)


def test_quant_conv_forward_matches_plain_conv():
    # unit scales, +-1 weights and inputs: numerically equal to the dense conv
    from subbit import kernels as K
    rng = np.random.default_rng(10)
    sub = sample_subsets(1, 3, SamplingStrategy.RANDOM_LAYER_SPECIFIC, seed=10)[0]
    layer = QuantConv2d(3, 4, 3, sub, stride=1, pad=1, refine=False,
                        binarize_input=True, rng=rng)
    x = rng.choice([-1.0, 1.0], size=(2, 3, 6, 6))
    out = layer.forward(Tensor(x))
    wbar, _ = layer.binarize()
    ref = K.conv2d_forward(x, wbar, 1, 1) * layer.scales.reshape(1, -1, 1, 1)
    assert np.allclose(out.data, ref)


def test_quant_conv_scale_preserves_argmax_with_uniform_scales():
    rng = np.random.default_rng(11)
    sub = sample_subsets(1, 4, SamplingStrategy.RANDOM_LAYER_SPECIFIC, seed=11)[0]
    layer = QuantConv2d(2, 5, 3, sub, stride=1, pad=1, refine=False, rng=rng)
    x = rng.normal(size=(8, 2, 6, 6))
    out = layer.forward(Tensor(x))
    pooled = out.data.mean(axis=(2, 3))
    # uniform positive scaling of every channel cannot move the argmax
    layer2 = QuantConv2d(2, 5, 3, sub.copy(), stride=1, pad=1, refine=False, rng=rng)
    layer2.w.data[...] = layer.w.data
    out2 = layer2.forward(Tensor(x))
    scaled = (out2.data / layer2.scales.reshape(1, -1, 1, 1)) * 2.5
    assert np.array_equal(pooled.argmax(axis=1),
                          (scaled.mean(axis=(2, 3))).argmax(axis=1))


def test_quant_conv_codebook_grad_rows_unselected_zero():
    rng = np.random.default_rng(12)
    sub = sample_subsets(1, 5, SamplingStrategy.RANDOM_LAYER_SPECIFIC, seed=12)[0]
    layer = QuantConv2d(2, 3, 3, sub, stride=1, pad=1, refine=True, rng=rng)
    x = rng.normal(size=(2, 2, 5, 5))
    out = layer.forward(Tensor(x, requires_grad=False))
    loss = ag.softmax_cross_entropy(ag.flatten(ag.global_avg_pool(out)),
                                    np.array([0, 1]))
    loss.backward()
    selected = np.unique(layer.codes)
    pgrad = layer.latent_codebook.grad
    unselected = np.setdiff1d(np.arange(sub.size), selected)
    assert np.all(pgrad[unselected] == 0.0)
    assert np.any(pgrad[selected] != 0.0)


def test_quant_conv_stale_backward_guard():
    rng = np.random.default_rng(13)
    sub = sample_subsets(1, 2, SamplingStrategy.RANDOM_LAYER_SPECIFIC, seed=13)[0]
    layer = QuantConv2d(1, 2, 3, sub, refine=True, rng=rng)
    x = Tensor(rng.normal(size=(1, 1, 4, 4)))
    out1 = layer.forward(x)
    out2 = layer.forward(Tensor(x.data))
    loss2 = ag.softmax_cross_entropy(ag.flatten(ag.global_avg_pool(out2)),
                                     np.array([0]))
    loss2.backward()
    # the first graph's codes are stale now
    loss1 = ag.softmax_cross_entropy(ag.flatten(ag.global_avg_pool(out1)),
                                     np.array([0]))
    with pytest.raises(RuntimeError):
        loss1.backward()
