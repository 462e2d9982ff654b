"""Architecture descriptions, text-config parsing, and geometry resolution.

An ArchitectureSpec is a flat layer list (convs, bn, activations, pools,
fc, residual markers) plus the input shape. The same spec drives training,
packing, the cost model and the cycle simulator. Text configs carry a
schema version, top-level key=value pairs, and one layer per line under
[layers].
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

SCHEMA_VERSION = 1

LAYER_KINDS = {"conv", "fc", "bn", "act", "avgpool", "maxpool", "gap",
               "flatten", "res_save", "res_add"}


class ValidationError(ValueError):
    pass


@dataclass
class LayerSpec:
    kind: str
    c_in: int = 0
    c_out: int = 0
    k: int = 0
    stride: int = 1
    pad: int = 0
    quantize: bool = False
    mode: str = "kernel"  # kernel | vector (8-wide 1x1 grouping)
    fn: str = "relu"      # act layers: relu | hardtanh | sign
    down: str = "none"    # res_add: none | conv
    down_c_in: int = 0
    down_c_out: int = 0
    down_stride: int = 1


@dataclass
class ArchitectureSpec:
    name: str
    in_channels: int
    in_size: int
    classes: int
    layers: list[LayerSpec] = field(default_factory=list)

    def conv_layers(self):
        return [l for l in self.layers if l.kind == "conv"]

    def quantized_layers(self):
        return [l for l in self.layers if l.kind == "conv" and l.quantize]

    def validate(self):
        depth = 0
        for l in self.layers:
            if l.kind not in LAYER_KINDS:
                raise ValidationError(f"unknown layer kind {l.kind!r}")
            if l.kind == "res_save":
                depth += 1
            elif l.kind == "res_add":
                depth -= 1
                if depth < 0:
                    raise ValidationError("res_add without matching res_save")
            if l.kind == "conv" and l.quantize and l.mode == "vector":
                if l.k != 1 or l.c_in % 8:
                    raise ValidationError("vector mode needs k=1 and c_in divisible by 8")
        if depth:
            raise ValidationError("unclosed res_save")


@dataclass
class ConvGeom:
    """A conv or fc layer with its resolved spatial geometry."""
    index: int
    kind: str          # conv | fc | downsample
    c_in: int
    c_out: int
    k: int
    h_out: int
    w_out: int
    quantize: bool
    mode: str = "kernel"


def walk_geometry(arch: ArchitectureSpec) -> list[ConvGeom]:
    """Resolve per-layer output sizes by walking the layer list."""
    h = w = arch.in_size
    geoms: list[ConvGeom] = []
    idx = 0
    saved: list[tuple[int, int]] = []
    for l in arch.layers:
        if l.kind == "conv":
            h = (h + 2 * l.pad - l.k) // l.stride + 1
            w = (w + 2 * l.pad - l.k) // l.stride + 1
            geoms.append(ConvGeom(idx, "conv", l.c_in, l.c_out, l.k, h, w,
                                  l.quantize, l.mode))
            idx += 1
        elif l.kind == "fc":
            geoms.append(ConvGeom(idx, "fc", l.c_in, l.c_out, 1, 1, 1, False))
            idx += 1
        elif l.kind == "avgpool":
            h //= l.k
            w //= l.k
        elif l.kind == "maxpool":
            h = (h + 2 * l.pad - l.k) // l.stride + 1
            w = (w + 2 * l.pad - l.k) // l.stride + 1
        elif l.kind == "gap":
            h = w = 1
        elif l.kind == "res_save":
            saved.append((h, w))
        elif l.kind == "res_add":
            saved.pop()
            if l.down == "conv":
                geoms.append(ConvGeom(idx, "downsample", l.down_c_in,
                                      l.down_c_out, 1, h, w, False))
                idx += 1
    return geoms


# ---------------------------------------------------------------------------
# text config format
# ---------------------------------------------------------------------------

_BOOL = {"1": True, "0": False, "true": True, "false": False}


def _parse_kv(tokens):
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ValidationError(f"expected key=value, got {tok!r}")
        key, val = tok.split("=", 1)
        out[key] = val
    return out


def parse_config(text: str) -> tuple[ArchitectureSpec, dict]:
    """Parse a config file into (architecture, extra top-level options)."""
    header: dict[str, str] = {}
    layer_lines: list[str] = []
    in_layers = False
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line == "[layers]":
            in_layers = True
            continue
        if in_layers:
            layer_lines.append(line)
        else:
            if "=" not in line:
                raise ValidationError(f"bad header line {line!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            header[key] = val

    if int(header.get("schema", "0")) != SCHEMA_VERSION:
        raise ValidationError(f"unsupported schema version {header.get('schema')}")
    for req in ("name", "in_channels", "in_size", "classes"):
        if req not in header:
            raise ValidationError(f"missing header key {req!r}")

    layers = []
    for line in layer_lines:
        parts = line.split()
        kind = parts[0]
        if kind not in LAYER_KINDS:
            raise ValidationError(f"unknown layer kind {kind!r}")
        kv = _parse_kv(parts[1:])
        spec = LayerSpec(kind=kind)
        for key, val in kv.items():
            if key in ("fn", "mode", "down"):
                setattr(spec, key, val)
            elif key == "quantize":
                if val not in _BOOL:
                    raise ValidationError(f"bad boolean {val!r}")
                spec.quantize = _BOOL[val]
            else:
                if not hasattr(spec, key):
                    raise ValidationError(f"unknown layer field {key!r}")
                setattr(spec, key, int(val))
        layers.append(spec)

    arch = ArchitectureSpec(name=header["name"], in_channels=int(header["in_channels"]),
                            in_size=int(header["in_size"]), classes=int(header["classes"]),
                            layers=layers)
    arch.validate()
    extra = {k: v for k, v in header.items()
             if k not in ("schema", "name", "in_channels", "in_size", "classes")}
    return arch, extra


def format_config(arch: ArchitectureSpec, extra: dict | None = None) -> str:
    lines = [f"schema = {SCHEMA_VERSION}", f"name = {arch.name}",
             f"in_channels = {arch.in_channels}", f"in_size = {arch.in_size}",
             f"classes = {arch.classes}"]
    for key, val in (extra or {}).items():
        lines.append(f"{key} = {val}")
    lines.append("")
    lines.append("[layers]")
    defaults = LayerSpec(kind="x")
    for l in arch.layers:
        toks = [l.kind]
        for fname in ("c_in", "c_out", "k", "stride", "pad", "quantize", "mode",
                      "fn", "down", "down_c_in", "down_c_out", "down_stride"):
            val = getattr(l, fname)
            if val == getattr(defaults, fname):
                continue
            if isinstance(val, bool):
                val = int(val)
            toks.append(f"{fname}={val}")
        lines.append(" ".join(toks))
    return "\n".join(lines) + "\n"


def load_config(path) -> tuple[ArchitectureSpec, dict]:
    with open(path) as f:
        return parse_config(f.read())


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def _conv_bn_act(c_in, c_out, k, stride, pad, quantize, fn="relu"):
    return [LayerSpec("conv", c_in=c_in, c_out=c_out, k=k, stride=stride,
                      pad=pad, quantize=quantize),
            LayerSpec("bn", c_out=c_out),
            LayerSpec("act", fn=fn)]


def _basic_block(c_in, c_out, stride, quantize=True):
    layers = [LayerSpec("res_save")]
    layers += _conv_bn_act(c_in, c_out, 3, stride, 1, quantize)
    layers += [LayerSpec("conv", c_in=c_out, c_out=c_out, k=3, stride=1, pad=1,
                         quantize=quantize),
               LayerSpec("bn", c_out=c_out)]
    if stride != 1 or c_in != c_out:
        layers.append(LayerSpec("res_add", down="conv", down_c_in=c_in,
                                down_c_out=c_out, down_stride=stride))
    else:
        layers.append(LayerSpec("res_add"))
    layers.append(LayerSpec("act", fn="relu"))
    return layers


def _resnet(name, blocks_per_stage, widths, geometry, classes):
    layers: list[LayerSpec] = []
    if geometry == "imagenet":
        in_size, in_ch = 224, 3
        layers += _conv_bn_act(3, widths[0], 7, 2, 3, False)
        layers.append(LayerSpec("maxpool", k=3, stride=2, pad=1))
    else:
        in_size, in_ch = 32, 3
        layers += _conv_bn_act(3, widths[0], 3, 1, 1, False)
    c_in = widths[0]
    for stage, (nblocks, width) in enumerate(zip(blocks_per_stage, widths)):
        for b in range(nblocks):
            stride = 2 if (stage > 0 and b == 0) else 1
            layers += _basic_block(c_in, width, stride)
            c_in = width
    layers += [LayerSpec("gap"), LayerSpec("flatten"),
               LayerSpec("fc", c_in=c_in, c_out=classes)]
    return ArchitectureSpec(name, in_ch, in_size, classes, layers)


def _vgg_small(geometry, classes):
    in_size = 224 if geometry == "imagenet" else 32
    layers: list[LayerSpec] = []
    layers += _conv_bn_act(3, 128, 3, 1, 1, False)
    layers += _conv_bn_act(128, 128, 3, 1, 1, True)
    layers.append(LayerSpec("avgpool", k=2))
    layers += _conv_bn_act(128, 256, 3, 1, 1, True)
    layers += _conv_bn_act(256, 256, 3, 1, 1, True)
    layers.append(LayerSpec("avgpool", k=2))
    layers += _conv_bn_act(256, 512, 3, 1, 1, True)
    layers += _conv_bn_act(512, 512, 3, 1, 1, True)
    layers.append(LayerSpec("avgpool", k=2))
    feat = 512 * (in_size // 8) ** 2
    layers += [LayerSpec("flatten"), LayerSpec("fc", c_in=feat, c_out=classes)]
    return ArchitectureSpec("vgg_small", 3, in_size, classes, layers)


def _tiny(name, q_channels, in_channels=1, in_size=12, classes=4):
    """Small CI net: full-precision stem + quantized 3x3 conv stack."""
    layers: list[LayerSpec] = []
    stem = q_channels[0]
    layers += _conv_bn_act(in_channels, stem, 3, 1, 1, False)
    c_in = stem
    for i, c_out in enumerate(q_channels[1:]):
        layers += _conv_bn_act(c_in, c_out, 3, 1, 1, True)
        if i == 0:
            layers.append(LayerSpec("avgpool", k=2))
        c_in = c_out
    layers += [LayerSpec("gap"), LayerSpec("flatten"),
               LayerSpec("fc", c_in=c_in, c_out=classes)]
    return ArchitectureSpec(name, in_channels, in_size, classes, layers)


def make_preset(name: str, geometry: str = "cifar", classes: int | None = None) -> ArchitectureSpec:
    classes_default = 1000 if geometry == "imagenet" else 10
    classes = classes or classes_default
    if name == "resnet18":
        return _resnet("resnet18", [2, 2, 2, 2], [64, 128, 256, 512], geometry, classes)
    if name == "resnet34":
        return _resnet("resnet34", [3, 4, 6, 3], [64, 128, 256, 512], geometry, classes)
    if name == "resnet20":
        if geometry == "imagenet":
            raise ValidationError("resnet20 is a 32x32 architecture")
        return _resnet("resnet20", [3, 3, 3], [16, 32, 64], geometry, classes)
    if name == "vgg_small":
        return _vgg_small(geometry, classes)
    if name == "tiny3":
        return _tiny("tiny3", [16, 32, 32, 64], in_size=10, classes=8)
    if name == "tiny2":
        return _tiny("tiny2", [8, 16, 16], in_size=8, classes=2)
    raise ValidationError(f"unknown preset {name!r}")


PRESET_NAMES = ("resnet18", "resnet20", "resnet34", "vgg_small", "tiny3", "tiny2")


def resolve_arch(arg: str, geometry: str = "cifar") -> ArchitectureSpec:
    """Accept either a preset name or a config file path."""
    import os
    if os.path.exists(arg):
        arch, _ = load_config(arg)
        return arch
    if arg in PRESET_NAMES:
        return make_preset(arg, geometry)
    raise ValidationError(f"{arg!r} is neither a config file nor a preset name")
