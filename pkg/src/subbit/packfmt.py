"""Deployment container: bit-packed codebooks, index streams, and the
full-precision remainder of a network.

File layout (all integers little-endian):

    magic   4 bytes  "SBNN"
    version u16      (currently 1)
    flags   u16      (0)
    arch    u32 len + utf-8 architecture config text
    quant section:   u32 count, then per record
        conv_index u32, mode u8 (0 kernel / 1 vector), k u8, tau u8,
        binarize_input u8, stride u8, pad u8, reserved u16,
        c_out u32, c_in u32,
        codebook bits  ceil(2^tau * n / 8) bytes   (n = k*k or 8)
        index stream   ceil(n_codes * tau / 8) bytes
        scales         c_out * float32
    fp section:      u32 count, then per record
        name u16 len + utf-8, dtype u8 (0 = f32), ndim u8, dims u32 each,
        raw float32 data

Bit conventions: a pattern's n bits are MSB-first in element order (matching
the index-code encoding, so a packed kernel's bits equal its code minus
one); index-stream codes are tau bits each, MSB-first, concatenated without
padding between codes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from subbit.arch import ArchitectureSpec, format_config, parse_config

MAGIC = b"SBNN"
VERSION = 1


class ModelFormatError(ValueError):
    pass


def pack_bitstring(values: np.ndarray, width: int) -> bytes:
    """Concatenate integers as fixed-width MSB-first bit groups."""
    values = np.asarray(values, dtype=np.uint32).reshape(-1)
    bits = (values[:, None] >> np.arange(width - 1, -1, -1)[None, :]) & 1
    return np.packbits(bits.astype(np.uint8).reshape(-1)).tobytes()


def unpack_bitstring(raw: bytes, width: int, count: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), count=width * count)
    groups = bits.reshape(count, width).astype(np.uint32)
    return (groups << np.arange(width - 1, -1, -1)[None, :]).sum(axis=1)


@dataclass
class PackedLayer:
    conv_index: int
    mode: str  # kernel | vector
    k: int
    tau: int
    c_out: int
    c_in: int
    stride: int
    pad: int
    binarize_input: bool
    members: np.ndarray  # (2^tau, n) int8 +-1
    codes: np.ndarray    # (c_out, n_codes_per_out) uint32
    scales: np.ndarray   # (c_out,) float32

    @property
    def n(self) -> int:
        return 8 if self.mode == "vector" else self.k * self.k

    @property
    def n_codes(self) -> int:
        return int(self.codes.size)

    @property
    def index_bits(self) -> int:
        return self.tau * self.n_codes

    @property
    def subset_bits(self) -> int:
        return self.n * (1 << self.tau)

    def validate(self):
        if self.codes.max(initial=0) >= (1 << self.tau):
            raise ModelFormatError("index stream contains out-of-range codes")
        if self.members.shape != (1 << self.tau, self.n):
            raise ModelFormatError("codebook shape mismatch")


@dataclass
class PackedModel:
    arch_text: str
    layers: list[PackedLayer] = field(default_factory=list)
    fp_params: dict[str, np.ndarray] = field(default_factory=dict)  # insertion-ordered

    def arch(self) -> ArchitectureSpec:
        arch, _ = parse_config(self.arch_text)
        return arch

    def quantized_payload_bits(self) -> int:
        return sum(l.index_bits + l.subset_bits for l in self.layers)

    def index_payload_bits(self) -> int:
        return sum(l.index_bits for l in self.layers)


def _pack_members(members: np.ndarray) -> bytes:
    bits = (members > 0).astype(np.uint8).reshape(-1)
    return np.packbits(bits).tobytes()


def _unpack_members(raw: bytes, size: int, n: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), count=size * n)
    return (bits.astype(np.int8) * 2 - 1).reshape(size, n)


def serialize(model: PackedModel) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HH", VERSION, 0)
    arch_b = model.arch_text.encode()
    out += struct.pack("<I", len(arch_b)) + arch_b
    out += struct.pack("<I", len(model.layers))
    for l in model.layers:
        l.validate()
        out += struct.pack("<IBBBBBBHII", l.conv_index,
                           1 if l.mode == "vector" else 0, l.k, l.tau,
                           1 if l.binarize_input else 0, l.stride, l.pad, 0,
                           l.c_out, l.c_in)
        out += _pack_members(l.members)
        out += pack_bitstring(l.codes, l.tau)
        out += np.asarray(l.scales, dtype="<f4").tobytes()
    out += struct.pack("<I", len(model.fp_params))
    for name, arr in model.fp_params.items():
        name_b = name.encode()
        arr32 = np.asarray(arr, dtype="<f4")
        out += struct.pack("<H", len(name_b)) + name_b
        out += struct.pack("<BB", 0, arr32.ndim)
        out += struct.pack(f"<{arr32.ndim}I", *arr32.shape)
        out += arr32.tobytes()
    return bytes(out)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise ModelFormatError("corrupt model: truncated file")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def deserialize(raw: bytes) -> PackedModel:
    rd = _Reader(raw)
    if rd.take(4) != MAGIC:
        raise ModelFormatError("corrupt model: bad magic")
    version, _flags = rd.unpack("<HH")
    if version != VERSION:
        raise ModelFormatError(f"corrupt model: unsupported version {version}")
    (arch_len,) = rd.unpack("<I")
    arch_text = rd.take(arch_len).decode()
    (n_layers,) = rd.unpack("<I")
    layers = []
    for _ in range(n_layers):
        (conv_index, mode_b, k, tau, binin, stride, pad, _resv,
         c_out, c_in) = rd.unpack("<IBBBBBBHII")
        mode = "vector" if mode_b else "kernel"
        n = 8 if mode == "vector" else k * k
        size = 1 << tau
        members = _unpack_members(rd.take((size * n + 7) // 8), size, n)
        n_codes = c_out * (c_in // 8 if mode == "vector" else c_in)
        codes = unpack_bitstring(rd.take((n_codes * tau + 7) // 8), tau, n_codes)
        scales = np.frombuffer(rd.take(4 * c_out), dtype="<f4").copy()
        layer = PackedLayer(conv_index, mode, k, tau, c_out, c_in, stride, pad,
                            bool(binin), members,
                            codes.reshape(c_out, n_codes // c_out), scales)
        layer.validate()
        layers.append(layer)
    (n_params,) = rd.unpack("<I")
    params: dict[str, np.ndarray] = {}
    for _ in range(n_params):
        (name_len,) = rd.unpack("<H")
        name = rd.take(name_len).decode()
        dtype_code, ndim = rd.unpack("<BB")
        if dtype_code != 0:
            raise ModelFormatError(f"corrupt model: unknown dtype {dtype_code}")
        dims = rd.unpack(f"<{ndim}I") if ndim else ()
        count = int(np.prod(dims)) if dims else 1
        params[name] = np.frombuffer(rd.take(4 * count), dtype="<f4").reshape(dims).copy()
    if rd.pos != len(raw):
        raise ModelFormatError("corrupt model: trailing bytes")
    model = PackedModel(arch_text, layers, params)
    model.arch()  # validates the embedded config
    return model


def save(model: PackedModel, path):
    with open(path, "wb") as f:
        f.write(serialize(model))


def load(path) -> PackedModel:
    with open(path, "rb") as f:
        return deserialize(f.read())


def compile_network(arch: ArchitectureSpec, net) -> PackedModel:
    """Freeze a trained network into the deployment container.

    Quantized convs are re-binarized from their latent weights; everything
    else lands in the float32 parameter table under canonical names:
    conv{i}.w / bn{i}.{gamma,beta,mean,var} / fc{i}.{w,b} /
    down{i}.w / down{i}.bn.*, numbered in walk order per kind.
    """
    from subbit import nn as N
    from subbit import quantize as Q

    model = PackedModel(format_config(arch))
    counters = {"conv": 0, "bn": 0, "fc": 0, "res": 0}
    conv_index = 0

    def add_bn(prefix, bn):
        model.fp_params[f"{prefix}.gamma"] = bn.gamma.data
        model.fp_params[f"{prefix}.beta"] = bn.beta.data
        model.fp_params[f"{prefix}.mean"] = bn.running_mean
        model.fp_params[f"{prefix}.var"] = bn.running_var

    for spec, layer in zip(arch.layers, net.layers):
        if spec.kind == "conv":
            if isinstance(layer, N.QuantConv2d):
                from subbit.kernelspace import all_patterns
                _, codes = layer.binarize()
                scales = Q.channel_scales(layer.w.data).astype(np.float32)
                if layer.subset is None:
                    n = 8 if layer.mode == "vector" else layer.k * layer.k
                    tau, members = n, all_patterns(n)
                else:
                    tau, members = layer.subset.tau, layer.subset.members.copy()
                packed = PackedLayer(conv_index, layer.mode, layer.k, tau,
                                     spec.c_out, spec.c_in, spec.stride, spec.pad,
                                     layer.binarize_input, members,
                                     codes.astype(np.uint32), scales)
                packed.validate()
                model.layers.append(packed)
            else:
                model.fp_params[f"conv{counters['conv']}.w"] = layer.w.data
            counters["conv"] += 1
            conv_index += 1
        elif spec.kind == "bn":
            add_bn(f"bn{counters['bn']}", layer)
            counters["bn"] += 1
        elif spec.kind == "fc":
            model.fp_params[f"fc{counters['fc']}.w"] = layer.w.data
            model.fp_params[f"fc{counters['fc']}.b"] = layer.b.data
            counters["fc"] += 1
            conv_index += 1
        elif spec.kind == "res_add":
            if spec.down == "conv":
                model.fp_params[f"down{counters['res']}.w"] = layer.downsample[0].w.data
                add_bn(f"down{counters['res']}.bn", layer.downsample[1])
                conv_index += 1
            counters["res"] += 1
    return model
