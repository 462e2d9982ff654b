"""Binary kernel universe, index codes, and subset sampling.

A binary kernel is a k x k pattern of +-1 values. Flattened row-major and
read MSB-first with -1 -> 0 and +1 -> 1, the pattern becomes an integer B;
its code is B + 1, so the all-minus kernel has code 1 and the all-plus
kernel has code 2^(k*k). The same encoding applies to flat +-1 vectors
(the 8-wide grouping used for 1x1 layers).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class SamplingStrategy(Enum):
    RANDOM_LAYER_SPECIFIC = "random"
    RANDOM_LAYER_SHARED = "shared"
    UNIFORM_INTERVAL = "uniform"
    FREQUENCY_TOP_K = "frequency"


# rng stream salts so training, sampling and repair draw from disjoint streams
_SAMPLE_SALT = 0x5A11
_SHARED_SALT = 0x5A12


class ConfigError(ValueError):
    pass


def encode_bits(flat: np.ndarray) -> int:
    """Code of a flat +-1 vector: MSB-first binary value plus one."""
    code = 0
    for v in flat:
        code = (code << 1) | (1 if v > 0 else 0)
    return code + 1


def decode_bits(code: int, n: int) -> np.ndarray:
    """Inverse of encode_bits; returns an int8 +-1 vector of length n."""
    if not 1 <= code <= (1 << n):
        raise ValueError(f"code {code} out of range [1, {1 << n}]")
    b = code - 1
    out = np.empty(n, dtype=np.int8)
    for i in range(n):
        out[n - 1 - i] = 1 if (b >> i) & 1 else -1
    return out


def encode_kernel(kernel: np.ndarray) -> int:
    """Index code of a k x k +-1 kernel (row-major flatten)."""
    return encode_bits(np.asarray(kernel).reshape(-1))


def decode_kernel(code: int, k: int) -> np.ndarray:
    return decode_bits(code, k * k).reshape(k, k)


def all_kernels(k: int) -> np.ndarray:
    """The full universe as an int8 array (2^(k*k), k*k), row j = code j+1."""
    return all_patterns(k * k)


def all_patterns(n: int) -> np.ndarray:
    codes = np.arange(1 << n, dtype=np.uint32)
    bits = (codes[:, None] >> np.arange(n - 1, -1, -1)[None, :]) & 1
    return (bits.astype(np.int8) * 2 - 1)


@dataclass
class KernelSubset:
    """An ordered codebook of 2^tau distinct +-1 patterns plus its learnable state.

    `members` is the authoritative sign-memory (what the forward pass selects
    from); `latent` is the real-valued tensor whose thresholded signs drive
    member updates during refinement.
    """

    tau: int
    n: int  # pattern length: k*k for kernels, 8 for 1x1 vector groups
    members: np.ndarray  # (2^tau, n) int8 +-1
    latent: np.ndarray = field(default=None)  # (2^tau, n) float64

    def __post_init__(self):
        if self.latent is None:
            self.latent = self.members.astype(np.float64)

    @property
    def size(self) -> int:
        return 1 << self.tau

    def codes(self) -> list[int]:
        return [encode_bits(row) for row in self.members]

    def validate(self):
        if self.members.shape != (self.size, self.n):
            raise ConfigError("member table shape mismatch")
        if not np.all(np.abs(self.members) == 1):
            raise ConfigError("members must be +-1")
        if len(set(self.codes())) != self.size:
            raise ConfigError("duplicate members")

    def copy(self) -> "KernelSubset":
        return KernelSubset(self.tau, self.n, self.members.copy(), self.latent.copy())


def _check_tau(tau: int, n: int):
    if not 1 <= tau <= n:
        raise ConfigError(f"tau must satisfy 1 <= tau <= {n}, got {tau}")


def subset_rng(seed: int, layer_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, layer_index, _SAMPLE_SALT])


def _from_codes(codes, tau, n) -> KernelSubset:
    members = np.stack([decode_bits(int(c), n) for c in codes])
    return KernelSubset(tau, n, members)


def sample_one(ordinal: int, tau: int, strategy: SamplingStrategy, seed: int,
               n: int = 9, freq: np.ndarray | None = None) -> KernelSubset:
    """Sample the codebook for one layer, identified by its quantized ordinal."""
    _check_tau(tau, n)
    universe = 1 << n
    size = 1 << tau
    if strategy is SamplingStrategy.UNIFORM_INTERVAL:
        stride = universe // size
        return _from_codes([1 + i * stride for i in range(size)], tau, n)
    if strategy is SamplingStrategy.FREQUENCY_TOP_K:
        if freq is None:
            raise ConfigError("frequency strategy requires per-layer histograms")
        hist = np.asarray(freq, dtype=np.int64)
        if hist.shape[0] != universe:
            raise ConfigError(f"histogram for layer {ordinal} must cover {universe} codes")
        order = np.lexsort((np.arange(universe), -hist))  # count desc, code asc
        return _from_codes(order[:size] + 1, tau, n)
    if strategy is SamplingStrategy.RANDOM_LAYER_SHARED:
        rng = np.random.default_rng([seed, _SHARED_SALT])
    else:
        rng = subset_rng(seed, ordinal)
    codes = rng.choice(universe, size=size, replace=False) + 1
    return _from_codes(codes, tau, n)


def sample_subsets(n_layers: int, tau: int, strategy: SamplingStrategy, seed: int,
                   n: int = 9, freq: dict[int, np.ndarray] | None = None) -> list[KernelSubset]:
    """One codebook per layer, deterministic in (n_layers, tau, strategy, seed, freq).

    freq maps layer index -> histogram over codes 1..2^n (required for the
    frequency strategy). Layer-shared sampling returns identical member lists
    for every layer.
    """
    return [sample_one(i, tau, strategy, seed, n,
                       None if freq is None else freq[i])
            for i in range(n_layers)]


def repair_duplicates(subset: KernelSubset, rng: np.random.Generator) -> int:
    """Resample duplicate member rows from outside the current codebook.

    The first occurrence of each pattern is kept; later occurrences get a
    fresh random pattern (latent row reset to its +-1 values). Returns the
    number of replaced rows.
    """
    universe = 1 << subset.n
    if subset.size > universe:
        raise ConfigError("codebook larger than the kernel universe")
    codes = subset.codes()
    seen = set()
    dupes = []
    for j, c in enumerate(codes):
        if c in seen:
            dupes.append(j)
        else:
            seen.add(c)
    if not dupes:
        return 0
    free = np.setdiff1d(np.arange(1, universe + 1), np.fromiter(seen, dtype=np.int64))
    picks = rng.choice(free.shape[0], size=len(dupes), replace=False)
    for j, pick in zip(dupes, picks):
        fresh = decode_bits(int(free[pick]), subset.n)
        subset.members[j] = fresh
        subset.latent[j] = fresh.astype(np.float64)
    return len(dupes)


def group_channels(w: np.ndarray, group: int = 8) -> np.ndarray:
    """Reshape (c_out, c_in, 1, 1) weights into (c_out * c_in/group, group) rows."""
    c_out, c_in = w.shape[0], w.shape[1]
    if c_in % group:
        raise ConfigError(f"c_in={c_in} not divisible by group={group}")
    return w.reshape(c_out * (c_in // group), group)


def write_histogram_csv(path, hists: dict[int, np.ndarray]):
    """Emit per-layer kernel histograms as layer_index,code,count rows."""
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["layer_index", "code", "count"])
        for layer in sorted(hists):
            hist = hists[layer]
            for code, count in enumerate(hist, start=1):
                if count:
                    wr.writerow([layer, code, int(count)])


def read_histogram_csv(path, universe: int) -> dict[int, np.ndarray]:
    hists: dict[int, np.ndarray] = {}
    with open(path, newline="") as f:
        rd = csv.reader(f)
        header = next(rd)
        if header[:3] != ["layer_index", "code", "count"]:
            raise ConfigError("bad histogram header")
        for layer_s, code_s, count_s in rd:
            layer, code = int(layer_s), int(code_s)
            hists.setdefault(layer, np.zeros(universe, dtype=np.int64))
            hists[layer][code - 1] = int(count_s)
    return hists
