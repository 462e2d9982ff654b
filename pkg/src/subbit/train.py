"""Training orchestration: network construction, the per-iteration loop
(sign-memory update, forward, backward, update, duplicate repair), ablation
harnesses, histograms, and versioned checkpoints.

RNG discipline: data shuffling, per-layer weight init, per-layer codebook
sampling, and per-layer repair each draw from their own seeded streams, so
runs that skip a stage (e.g. full-precision or full-universe runs that never
sample codebooks) still consume identical randomness everywhere else.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from subbit import nn as N
from subbit import autograd as ag
from subbit.arch import ArchitectureSpec, format_config, parse_config
from subbit.kernelspace import KernelSubset, SamplingStrategy, repair_duplicates, sample_one
from subbit.optim import SGD, TrainConfig

_DATA_SALT = 0x0DA7
_INIT_SALT = 0x1417
_REPAIR_SALT = 0x4E9A

QUANT_MODES = ("fp", "bnn", "vanilla", "snn")
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass
class QuantSpec:
    mode: str = "snn"
    tau: int = 5
    strategy: SamplingStrategy = SamplingStrategy.RANDOM_LAYER_SPECIFIC
    theta: float = 1e-3
    binarize_acts: bool = False
    repair_every: int = 1
    tau_prime: int = 4  # vector-mode layers

    def __post_init__(self):
        if self.mode not in QUANT_MODES:
            raise ValueError(f"mode must be one of {QUANT_MODES}")
        if self.theta < 0:
            raise ValueError("theta must be non-negative")

    def to_json(self) -> dict:
        d = asdict(self)
        d["strategy"] = self.strategy.value
        return d

    @staticmethod
    def from_json(d: dict) -> "QuantSpec":
        d = dict(d)
        d["strategy"] = SamplingStrategy(d["strategy"])
        return QuantSpec(**d)


@dataclass
class RunRecord:
    seed: int
    mode: str
    strategy: str
    tau: int
    theta: float
    epochs: list[dict] = field(default_factory=list)
    subset_snapshots: dict = field(default_factory=dict)  # layer -> {epoch: codes}
    final_train_acc: float = 0.0
    final_val_acc: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "RunRecord":
        return RunRecord(**json.loads(text))


def build_network(arch: ArchitectureSpec, quant: QuantSpec, seed: int,
                  freq: dict[int, np.ndarray] | None = None) -> N.Network:
    layers: list[N.Layer] = []
    q_ordinal = 0
    for idx, spec in enumerate(arch.layers):
        init_rng = np.random.default_rng([seed, idx, _INIT_SALT])
        if spec.kind == "conv":
            quantized = spec.quantize and quant.mode != "fp"
            if quantized:
                if quant.mode == "bnn":
                    subset = None
                else:
                    n = 8 if spec.mode == "vector" else spec.k * spec.k
                    tau = quant.tau_prime if spec.mode == "vector" else quant.tau
                    subset = sample_one(q_ordinal, tau, quant.strategy, seed, n,
                                        None if freq is None else freq.get(q_ordinal))
                layers.append(N.QuantConv2d(
                    spec.c_in, spec.c_out, spec.k, subset, spec.stride, spec.pad,
                    refine=quant.mode == "snn", theta=quant.theta,
                    binarize_input=quant.binarize_acts, mode=spec.mode,
                    rng=init_rng))
                q_ordinal += 1
            else:
                layers.append(N.Conv2d(spec.c_in, spec.c_out, spec.k, spec.stride,
                                       spec.pad, rng=init_rng))
        elif spec.kind == "bn":
            layers.append(N.BatchNorm2d(spec.c_out))
        elif spec.kind == "act":
            layers.append({"relu": N.ReLU, "hardtanh": N.Hardtanh,
                           "sign": N.SignAct}[spec.fn]())
        elif spec.kind == "avgpool":
            layers.append(N.AvgPool2d(spec.k))
        elif spec.kind == "maxpool":
            layers.append(N.MaxPool2d(spec.k, spec.stride, spec.pad))
        elif spec.kind == "gap":
            layers.append(N.GlobalAvgPool())
        elif spec.kind == "flatten":
            layers.append(N.Flatten())
        elif spec.kind == "res_save":
            layers.append(N.ResSave())
        elif spec.kind == "res_add":
            down: list[N.Layer] = []
            if spec.down == "conv":
                down = [N.Conv2d(spec.down_c_in, spec.down_c_out, 1,
                                 spec.down_stride, 0, rng=init_rng),
                        N.BatchNorm2d(spec.down_c_out)]
            layers.append(N.ResAdd(down))
        elif spec.kind == "fc":
            layers.append(N.Linear(spec.c_in, spec.c_out, rng=init_rng))
    return N.Network(layers)


def _make_optimizer(net: N.Network, cfg: TrainConfig) -> SGD:
    params = net.parameters()
    no_decay = {id(l.latent_codebook) for l in net.quant_layers()
                if l.latent_codebook is not None}
    return SGD(params, cfg, no_decay)


def evaluate(net: N.Network, x: np.ndarray, y: np.ndarray,
             batch_size: int = 256) -> tuple[float, float]:
    net.set_training(False)
    losses, correct = [], 0
    for i in range(0, len(x), batch_size):
        xb, yb = x[i:i + batch_size], y[i:i + batch_size]
        logits = net.forward(ag.Tensor(xb))
        loss = ag.softmax_cross_entropy(logits, yb)
        losses.append(float(loss.data) * len(xb))
        correct += int((logits.data.argmax(axis=1) == yb).sum())
    net.set_training(True)
    return sum(losses) / len(x), correct / len(x)


def train(arch: ArchitectureSpec, data, cfg: TrainConfig, quant: QuantSpec,
          seed: int, snapshot_subsets: bool = True,
          freq: dict[int, np.ndarray] | None = None) -> tuple[RunRecord, N.Network, SGD]:
    """Run the full training loop; returns (record, network, optimizer)."""
    x_tr, y_tr, x_va, y_va = data
    net = build_network(arch, quant, seed, freq)
    net.set_training(True)
    opt = _make_optimizer(net, cfg)
    qlayers = net.quant_layers()
    repair_rngs = [np.random.default_rng([seed, i, _REPAIR_SALT])
                   for i in range(len(qlayers))]
    data_rng = np.random.default_rng([seed, _DATA_SALT])
    record = RunRecord(seed, quant.mode, quant.strategy.value, quant.tau, quant.theta)

    step = 0
    for epoch in range(cfg.epochs):
        opt.set_epoch(epoch)
        order = data_rng.permutation(len(x_tr))
        flip_base = [l.flip_total for l in qlayers]
        repair_count = 0
        losses, correct, seen = [], 0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = x_tr[idx], y_tr[idx]
            logits = net.forward(ag.Tensor(xb))
            loss = ag.softmax_cross_entropy(logits, yb)
            if not np.isfinite(loss.data):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} step {step} (lr={opt.lr:.4g})")
            opt.zero_grad()
            loss.backward()
            opt.step()
            for l in qlayers:
                l.clamp_latent()
            step += 1
            if quant.mode == "snn" and step % quant.repair_every == 0:
                for l, rng in zip(qlayers, repair_rngs):
                    if l.subset is not None:
                        n_rep = repair_duplicates(l.subset, rng)
                        l.repair_total += n_rep
                        repair_count += n_rep
            losses.append(float(loss.data) * len(xb))
            correct += int((logits.data.argmax(axis=1) == yb).sum())
            seen += len(xb)

        val_loss, val_acc = evaluate(net, x_va, y_va)
        entry = {
            "epoch": epoch, "lr": opt.lr,
            "train_loss": sum(losses) / seen, "train_acc": correct / seen,
            "val_loss": val_loss, "val_acc": val_acc,
            "repairs": repair_count,
            "flips": sum(l.flip_total for l in qlayers) - sum(flip_base),
        }
        record.epochs.append(entry)
        if snapshot_subsets:
            for i, l in enumerate(qlayers):
                if l.subset is not None:
                    record.subset_snapshots.setdefault(str(i), {})[str(epoch)] = \
                        l.subset.codes()
        record.final_train_acc = entry["train_acc"]
        record.final_val_acc = val_acc
    return record, net, opt


def ablate_theta(arch: ArchitectureSpec, data, cfg: TrainConfig, quant: QuantSpec,
                 thetas: list[float], seeds: list[int], window: int = 5) -> dict:
    """Re-run training across theta values; reports per-theta oscillation
    (mean sliding-window std of val accuracy) and total sign flips."""
    out = {}
    for theta in thetas:
        records = [train(arch, data, cfg, replace(quant, theta=theta), seed,
                         snapshot_subsets=False)[0]
                   for seed in seeds]
        oscs, flips = [], []
        for rec in records:
            accs = np.array([e["val_acc"] for e in rec.epochs])
            if len(accs) >= window:
                stds = [accs[i:i + window].std() for i in range(len(accs) - window + 1)]
                oscs.append(float(np.mean(stds)))
            flips.append(sum(e["flips"] for e in rec.epochs))
        out[theta] = {
            "records": records,
            "oscillation": float(np.mean(oscs)) if oscs else 0.0,
            "total_flips": flips,
            "mean_val_acc": float(np.mean([r.final_val_acc for r in records])),
        }
    return out


def collect_kernel_histogram(net: N.Network) -> dict[int, np.ndarray]:
    """Per quantized layer, counts of binarized-kernel codes (1..2^n)."""
    hists = {}
    for i, l in enumerate(net.quant_layers()):
        _, codes = l.binarize()
        n = 8 if l.mode == "vector" else l.k * l.k
        hist = np.zeros(1 << n, dtype=np.int64)
        if l.subset is None:
            np.add.at(hist, codes.reshape(-1), 1)
        else:
            member_codes = np.array(l.subset.codes()) - 1
            np.add.at(hist, member_codes[codes.reshape(-1)], 1)
        hists[i] = hist
    return hists


def top_k_coverage(hist: np.ndarray, ks: list[int]) -> dict[int, float]:
    """Cumulative share of kernels covered by the k most frequent codes."""
    total = hist.sum()
    ranked = np.sort(hist)[::-1]
    csum = np.cumsum(ranked)
    return {k: float(csum[min(k, len(ranked)) - 1] / total) if total else 0.0
            for k in ks}


# ---------------------------------------------------------------------------
# checkpoints: deterministic zip of npy arrays + a json meta entry
# ---------------------------------------------------------------------------

def _canonical_arrays(arch: ArchitectureSpec, net: N.Network, opt: SGD | None):
    arrays: dict[str, np.ndarray] = {}
    counters = {"conv": 0, "bn": 0, "fc": 0, "res": 0, "q": 0}

    def add_bn(prefix, bn):
        arrays[f"{prefix}.gamma"] = bn.gamma.data
        arrays[f"{prefix}.beta"] = bn.beta.data
        arrays[f"{prefix}.mean"] = bn.running_mean
        arrays[f"{prefix}.var"] = bn.running_var

    for spec, layer in zip(arch.layers, net.layers):
        if spec.kind == "conv":
            arrays[f"conv{counters['conv']}.w"] = layer.w.data
            if isinstance(layer, N.QuantConv2d) and layer.subset is not None:
                arrays[f"q{counters['q']}.members"] = layer.subset.members
                arrays[f"q{counters['q']}.latent"] = layer.subset.latent
                counters["q"] += 1
            counters["conv"] += 1
        elif spec.kind == "bn":
            add_bn(f"bn{counters['bn']}", layer)
            counters["bn"] += 1
        elif spec.kind == "fc":
            arrays[f"fc{counters['fc']}.w"] = layer.w.data
            arrays[f"fc{counters['fc']}.b"] = layer.b.data
            counters["fc"] += 1
        elif spec.kind == "res_add":
            if spec.down == "conv":
                arrays[f"down{counters['res']}.w"] = layer.downsample[0].w.data
                add_bn(f"down{counters['res']}.bn", layer.downsample[1])
            counters["res"] += 1
    if opt is not None:
        for j, buf in enumerate(opt.state_arrays()):
            arrays[f"opt{j}.buf"] = buf
    return arrays


def save_checkpoint(path, arch: ArchitectureSpec, net: N.Network, quant: QuantSpec,
                    seed: int, record: RunRecord | None = None, opt: SGD | None = None):
    meta = {
        "version": CHECKPOINT_VERSION,
        "arch": format_config(arch),
        "quant": quant.to_json(),
        "seed": seed,
        "record": None if record is None else json.loads(record.to_json()),
    }
    arrays = _canonical_arrays(arch, net, opt)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        info = zipfile.ZipInfo("meta.json", date_time=(1980, 1, 1, 0, 0, 0))
        zf.writestr(info, json.dumps(meta, sort_keys=True))
        for name in arrays:
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]))
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def load_checkpoint(path):
    """Rebuild (arch, net, quant, seed, record, opt). Net structure is
    reconstructed from meta and arrays are overwritten in place."""
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta["version"] != CHECKPOINT_VERSION:
            raise TrainingError(f"unsupported checkpoint version {meta['version']}")
        arrays = {}
        for name in zf.namelist():
            if name.endswith(".npy"):
                arrays[name[:-4]] = np.lib.format.read_array(io.BytesIO(zf.read(name)))
    arch, _ = parse_config(meta["arch"])
    quant = QuantSpec.from_json(meta["quant"])
    seed = meta["seed"]
    net = build_network(arch, quant, seed)
    stored = _canonical_arrays(arch, net, None)
    for name, target in stored.items():
        if name not in arrays:
            raise TrainingError(f"checkpoint missing array {name}")
        target[...] = arrays[name]
    opt = _make_optimizer(net, TrainConfig())
    bufs = [arrays[f"opt{j}.buf"] for j in range(len(opt.buffers))
            if f"opt{j}.buf" in arrays]
    if len(bufs) == len(opt.buffers):
        opt.load_state_arrays(bufs)
    record = None
    if meta.get("record"):
        record = RunRecord(**meta["record"])
    return arch, net, quant, seed, record, opt
