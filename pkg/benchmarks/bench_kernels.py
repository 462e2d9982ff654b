#!/usr/bin/env python3
"""Benchmark the compiled kernel core against the numpy fallback.

Run after building the extension (`pip install -e . --no-build-isolation`):

    python benchmarks/bench_kernels.py

Every function both backends implement is timed on engine- and
training-representative shapes; identical outputs are asserted before
timing. The float convolutions and nearest-member selection ride BLAS in
production (see subbit/kernels/__init__.py); they are included here to
justify that wiring with numbers.
"""

import time

import numpy as np

try:
    import subbit.kernels._core as core
except ImportError:
    core = None
import subbit.kernels._numpy as fallback


def timeit(fn, *args, budget=0.4):
    fn(*args)  # warmup
    t0 = time.perf_counter()
    n = 0
    while time.perf_counter() - t0 < budget:
        fn(*args)
        n += 1
    return (time.perf_counter() - t0) / n * 1e3


def compare(name, fname, *args, exact=True):
    f_np = getattr(fallback, fname)
    ref = f_np(*args)
    row = f"{name:<42s}"
    if core is not None:
        f_c = getattr(core, fname)
        got = f_c(*args)
        if isinstance(ref, tuple):
            pairs = zip(ref, got)
        else:
            pairs = [(ref, got)]
        for r, g in pairs:
            if exact:
                assert np.array_equal(r, g), f"{name}: backend mismatch"
            else:
                assert np.allclose(r, g, atol=1e-10), f"{name}: backend mismatch"
        t_c = timeit(f_c, *args)
        t_np = timeit(f_np, *args)
        row += f" compiled {t_c:8.3f} ms | numpy {t_np:8.3f} ms | x{t_np / t_c:5.2f}"
    else:
        t_np = timeit(f_np, *args)
        row += f" compiled      n/a | numpy {t_np:8.3f} ms"
    print(row)


def main():
    rng = np.random.default_rng(0)
    print(f"compiled core available: {core is not None}\n")

    x = rng.normal(size=(32, 32, 12, 12))
    w = rng.normal(size=(64, 32, 3, 3))
    dout = fallback.conv2d_forward(x, w, 1, 1)
    compare("conv2d_forward 32x32x12x12 -> 64", "conv2d_forward", x, w, 1, 1, exact=False)
    compare("conv2d_backward_input", "conv2d_backward_input", dout, w, 12, 12, 1, 1,
            exact=False)
    compare("conv2d_backward_weight", "conv2d_backward_weight", dout, x, 3, 3, 1, 1,
            exact=False)

    rows = rng.normal(size=(4096, 9))
    members = np.ascontiguousarray(rng.choice([-1.0, 1.0], size=(32, 9)))
    compare("nearest_member 4096 rows x 32 members", "nearest_member", rows, members)

    act = rng.choice([-1, 1], size=(64, 16, 16)).astype(np.int8)
    compare("pack_patch_bits c64 16x16 k3", "pack_patch_bits", act, 3, 1, 1)
    patches, valid = fallback.pack_patch_bits(act, 3, 1, 1)
    wwords = rng.integers(0, 2**63, size=(128, patches.shape[1]), dtype=np.uint64)
    compare("xnor_gemm 128 out-channels", "xnor_gemm", patches, valid, wwords)

    compare("pack_channel_slices c64 16x16 k3", "pack_channel_slices", act, 3, 1, 1)
    slices, vmask = fallback.pack_channel_slices(act, 3, 1, 1)
    member_bits = rng.integers(0, 512, size=32, dtype=np.uint64)
    codes = rng.integers(0, 32, size=(128, 64), dtype=np.int64)
    compare("shared_gather 128x64 codebook 32", "shared_gather",
            slices, vmask, member_bits, codes)

    act8 = rng.choice([-1, 1], size=(64, 8, 8)).astype(np.int8)
    compare("pack_group_slices c64 8-wide", "pack_group_slices", act8, 8, 1)


if __name__ == "__main__":
    main()
