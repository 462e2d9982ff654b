"""Dataset ingestion: IDX files, CIFAR-10 binary batches, and a seeded
synthetic generator for CI-scale runs."""

from __future__ import annotations

import struct

import numpy as np


class DataError(ValueError):
    pass


_IDX_DTYPES = {0x08: np.uint8, 0x09: np.int8, 0x0B: ">i2", 0x0C: ">i4",
               0x0D: ">f4", 0x0E: ">f8"}


def load_idx(path) -> np.ndarray:
    """Read an IDX tensor file (the MNIST container format)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise DataError(f"{path}: bad IDX magic")
    dtype_code, ndim = raw[2], raw[3]
    if dtype_code not in _IDX_DTYPES:
        raise DataError(f"{path}: unknown IDX dtype 0x{dtype_code:02x}")
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise DataError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    arr = np.frombuffer(raw, dtype=_IDX_DTYPES[dtype_code], offset=head)
    expect = int(np.prod(dims)) if dims else 0
    if arr.size != expect:
        raise DataError(f"{path}: payload size {arr.size} != header {expect}")
    return arr.reshape(dims)


def save_idx(path, arr: np.ndarray):
    arr = np.ascontiguousarray(arr)
    codes = {v if isinstance(v, type) else np.dtype(v).str: k
             for k, v in _IDX_DTYPES.items()}
    if arr.dtype == np.uint8:
        code = 0x08
    elif arr.dtype == np.int8:
        code = 0x09
    else:
        key = arr.dtype.newbyteorder(">").str
        if key not in codes:
            raise DataError(f"unsupported IDX dtype {arr.dtype}")
        code = codes[key]
        arr = arr.astype(arr.dtype.newbyteorder(">"))
    with open(path, "wb") as f:
        f.write(bytes([0, 0, code, arr.ndim]))
        f.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        f.write(arr.tobytes())


CIFAR_RECORD = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes


def load_cifar10_batch(path) -> tuple[np.ndarray, np.ndarray]:
    """Parse a CIFAR-10 binary batch into (N,3,32,32) uint8 images + labels."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) == 0 or len(raw) % CIFAR_RECORD:
        raise DataError(f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD}")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    images = rec[:, 1:].reshape(-1, 3, 32, 32)
    return images, labels


def synthetic_dataset(seed: int, n_train: int, n_val: int, classes: int = 4,
                      channels: int = 1, size: int = 12, noise: float = 1.0,
                      signal: float = 1.0):
    """Seeded template-plus-noise image set; difficulty set by the noise level.

    Returns (x_train, y_train, x_val, y_val) with float64 images normalized
    to roughly unit scale.
    """
    rng = np.random.default_rng([seed, 0xDA7A])
    templates = rng.normal(size=(classes, channels, size, size))
    templates /= np.sqrt((templates ** 2).mean(axis=(1, 2, 3), keepdims=True))

    def make(n):
        y = rng.integers(0, classes, size=n)
        x = signal * templates[y] + noise * rng.normal(size=(n, channels, size, size))
        return x / np.sqrt(signal ** 2 + noise ** 2), y

    x_tr, y_tr = make(n_train)
    x_va, y_va = make(n_val)
    return x_tr, y_tr, x_va, y_va
