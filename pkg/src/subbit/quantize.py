"""Weight binarization over fixed or learnable kernel codebooks.

Forward selection maps each latent kernel slice to its nearest codebook
member (max dot product, which equals min L2 distance for +-1 patterns).
Gradients reach the latent weights through a clipped straight-through
estimator and reach the codebook's real-valued tensor by accumulating the
selected rows' binarized-weight gradients.
"""

from __future__ import annotations

import numpy as np

from subbit import kernels as K
from subbit.kernelspace import KernelSubset, group_channels


def binarize_sign(w: np.ndarray) -> np.ndarray:
    """Elementwise sign with sign(0) = +1; the full-universe binarizer."""
    return np.where(np.asarray(w) >= 0, 1.0, -1.0)


def binarize_subset(w: np.ndarray, subset: KernelSubset) -> tuple[np.ndarray, np.ndarray]:
    """Snap (c_out, c_in, k, k) weights to codebook members.

    Returns (binarized weights, member index per kernel slice). Ties resolve
    to the lowest member index.
    """
    c_out, c_in, kh, kw = w.shape
    rows = w.reshape(c_out * c_in, kh * kw)
    codes = K.nearest_member(np.ascontiguousarray(rows),
                             subset.members.astype(np.float64))
    wbar = subset.members[codes].astype(np.float64).reshape(w.shape)
    return wbar, codes.reshape(c_out, c_in)


def binarize_vectors(w: np.ndarray, subset: KernelSubset, group: int = 8):
    """1x1 variant: snap 8-channel weight groups to codebook vectors."""
    rows = group_channels(w, group)
    codes = K.nearest_member(np.ascontiguousarray(rows),
                             subset.members.astype(np.float64))
    wbar = subset.members[codes].astype(np.float64).reshape(w.shape)
    return wbar, codes.reshape(w.shape[0], w.shape[1] // group)


def ste_mask(grad_wbar: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Straight-through gradient: passes only where |w| < 1 (open interval)."""
    return grad_wbar * (np.abs(w) < 1)


def update_sign_memory(subset: KernelSubset, theta: float) -> int:
    """Refresh members from the latent tensor's signs, keeping small-magnitude
    entries at their remembered sign (|latent| <= theta). Returns flip count.
    """
    flip = (np.abs(subset.latent) > theta) & (np.sign(subset.latent) != subset.members)
    subset.members[flip] = np.sign(subset.latent[flip]).astype(np.int8)
    return int(flip.sum())


def accumulate_codebook_grad(codes: np.ndarray, grad_wbar: np.ndarray,
                             n_members: int) -> np.ndarray:
    """Scatter-add binarized-weight gradients into their selected codebook rows.

    codes: flat member index per kernel slice; grad_wbar: matching
    (n_slices, n) rows. Rows never selected get exactly zero.
    """
    out = np.zeros((n_members, grad_wbar.shape[1]), dtype=np.float64)
    np.add.at(out, codes.reshape(-1), grad_wbar)
    return out


def channel_scales(w: np.ndarray) -> np.ndarray:
    """Per-output-channel positive scaling: mean |w| over the channel's slice."""
    flat = np.abs(w.reshape(w.shape[0], -1)).mean(axis=1)
    return np.maximum(flat, 1e-12)
