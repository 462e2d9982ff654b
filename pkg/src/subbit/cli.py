"""Command-line surface: train / export / infer / cost / simulate / analyze.

Exit codes: 0 success, 1 validation error, 2 runtime error, 3 data error.
All stochastic commands accept --seed; outputs land in --out (default from
SUBBIT_OUT_DIR or ./runs) and are byte-stable for identical inputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from subbit import accelsim, costmodel, engine, packfmt
from subbit.arch import ValidationError, load_config, make_preset, resolve_arch
from subbit.data import DataError, synthetic_dataset
from subbit.kernelspace import ConfigError, SamplingStrategy, write_histogram_csv
from subbit.optim import TrainConfig
from subbit.packfmt import ModelFormatError
from subbit.train import (QuantSpec, RunRecord, TrainingError, collect_kernel_histogram,
                          load_checkpoint, save_checkpoint, top_k_coverage, train)

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_DATA = 0, 1, 2, 3

STRATEGIES = {
    "random": SamplingStrategy.RANDOM_LAYER_SPECIFIC,
    "shared": SamplingStrategy.RANDOM_LAYER_SHARED,
    "uniform": SamplingStrategy.UNIFORM_INTERVAL,
    "frequency": SamplingStrategy.FREQUENCY_TOP_K,
}


def _out_dir(args) -> str:
    out = args.out or os.environ.get("SUBBIT_OUT_DIR", "runs")
    os.makedirs(out, exist_ok=True)
    return out


def _check_tau(tau: int, k: int = 3):
    if not 1 <= tau <= k * k:
        raise ValidationError(f"tau must satisfy 1 <= tau <= k*k, got {tau}")


def _load_data(args, arch):
    if args.data == "synthetic":
        return synthetic_dataset(args.seed, args.train_samples, args.val_samples,
                                 classes=arch.classes, channels=arch.in_channels,
                                 size=arch.in_size, noise=args.noise)
    raise DataError(f"unknown dataset spec {args.data!r} "
                    "(expected 'synthetic'; file ingestion goes through subbit.data)")


def cmd_train(args) -> int:
    arch = resolve_arch(args.arch, args.geometry)
    if args.mode != "fp":
        _check_tau(args.tau)
    quant = QuantSpec(mode=args.mode, tau=args.tau, strategy=STRATEGIES[args.strategy],
                      theta=args.theta, binarize_acts=args.binarize_acts,
                      repair_every=args.repair_every)
    cfg = TrainConfig(lr=args.lr, epochs=args.epochs, batch_size=args.batch_size)
    data = _load_data(args, arch)
    record, net, opt = train(arch, data, cfg, quant, args.seed)
    out = _out_dir(args)
    ckpt_path = os.path.join(out, f"{arch.name}_{args.mode}_s{args.seed}.ckpt")
    save_checkpoint(ckpt_path, arch, net, quant, args.seed, record, opt)
    log_path = ckpt_path.replace(".ckpt", ".jsonl")
    with open(log_path, "w") as f:
        for entry in record.epochs:
            f.write(json.dumps(entry, sort_keys=True) + "\n")
    print(f"checkpoint: {ckpt_path}")
    print(f"epoch log:  {log_path}")
    print(f"final train_acc={record.final_train_acc:.4f} val_acc={record.final_val_acc:.4f}")
    return EXIT_OK


def cmd_export(args) -> int:
    arch, net, quant, seed, record, _ = load_checkpoint(args.checkpoint)
    model = packfmt.compile_network(arch, net)
    out = args.model or os.path.join(_out_dir(args), f"{arch.name}.sbnn")
    packfmt.save(model, out)
    print(f"model: {out}")
    print(f"quantized payload: {model.quantized_payload_bits()} bits "
          f"(index {model.index_payload_bits()})")
    return EXIT_OK


def cmd_infer(args) -> int:
    model = packfmt.load(args.model)
    if os.path.isdir(args.input):
        files = sorted(f for f in os.listdir(args.input) if f.endswith(".npy"))
        if not files:
            raise DataError(f"no .npy inputs under {args.input}")
        batch = np.concatenate([np.load(os.path.join(args.input, f)) for f in files])
    else:
        batch = np.load(args.input)
    if batch.ndim == 3:
        batch = batch[None]
    logits = engine.run_model(model, batch.astype(np.float64))
    report = {
        "model": args.model,
        "count": int(logits.shape[0]),
        "predictions": logits.argmax(axis=1).tolist(),
        "logits": logits.tolist(),
    }
    text = json.dumps(report, sort_keys=True, indent=2)
    if args.report:
        with open(args.report, "w") as f:
            f.write(text)
        print(f"report: {args.report}")
    else:
        print(text)
    return EXIT_OK


def cmd_cost(args) -> int:
    arch = resolve_arch(args.arch, args.geometry)
    if args.mode == "snn":
        _check_tau(args.tau)
    report = costmodel.cost_report(arch, args.mode,
                                   args.tau if args.mode == "snn" else None,
                                   weight_only=args.weight_only)
    out = _out_dir(args)
    csv_path = os.path.join(out, f"cost_{arch.name}_{args.mode}.csv")
    with open(csv_path, "w") as f:
        f.write(report.to_csv())
    if args.json:
        print(report.to_json())
    else:
        scope = "including" if args.include_first_last else "excluding"
        bits = report.total_weight_bits(include_first_last=args.include_first_last)
        ops = report.total_bit_ops(include_first_last=args.include_first_last)
        print(f"{arch.name} [{args.mode}] {scope} first/last:")
        print(f"  params: {bits} bits = {bits/1e6:.4f} Mbit")
        print(f"  bit-ops: {ops} = {ops/1e9:.4f} G")
    print(f"per-layer csv: {csv_path}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    arch = resolve_arch(args.arch, args.geometry)
    _check_tau(args.tau)
    hw = accelsim.HardwareConfig(pe_count=args.pes, clock_ghz=args.clock,
                                 accumulators_per_pe=args.accumulators,
                                 line_buffer_width=args.lb_width)
    base = accelsim.simulate_bnn(arch, hw)
    shared = accelsim.simulate_snn(arch, hw, args.tau)
    merged = accelsim.timeline(base, shared)
    out = _out_dir(args)
    csv_path = os.path.join(out, f"timeline_{arch.name}_t{args.tau}.csv")
    with open(csv_path, "w") as f:
        f.write(accelsim.timeline_csv(merged))
    if args.json:
        print(json.dumps({"bnn": json.loads(base.to_json()),
                          "snn": json.loads(shared.to_json()),
                          "speedup": merged["speedup"]}, indent=2, sort_keys=True))
    else:
        print(f"{arch.name} @ {args.pes}PE/{args.clock}GHz:")
        print(f"  baseline {base.total_ms:.3f} ms | shared {shared.total_ms:.3f} ms "
              f"| speedup {merged['speedup']:.2f}x")
    print(f"timeline csv: {csv_path}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    out = _out_dir(args)
    if not args.checkpoint and not args.runlog:
        raise ValidationError("analyze needs --checkpoint or --runlog")
    if args.checkpoint:
        arch, net, quant, seed, record, _ = load_checkpoint(args.checkpoint)
        hists = collect_kernel_histogram(net)
        hist_path = os.path.join(out, "kernel_histogram.csv")
        write_histogram_csv(hist_path, hists)
        cov_path = os.path.join(out, "topk_coverage.csv")
        ks = [1, 2, 4, 8, 16, 32, 64, 128, 256, 512]
        with open(cov_path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["layer_index", "k", "coverage"])
            for layer, hist in hists.items():
                for k, cov in top_k_coverage(hist, ks).items():
                    wr.writerow([layer, k, f"{cov:.6f}"])
        print(f"histogram csv: {hist_path}")
        print(f"coverage csv:  {cov_path}")
    else:
        record = RunRecord.from_json(open(args.runlog).read())
    if record is not None and record.subset_snapshots:
        evo_path = os.path.join(out, "subset_evolution.json")
        with open(evo_path, "w") as f:
            json.dump(record.subset_snapshots, f, sort_keys=True)
        print(f"subset evolution: {evo_path}")
    elif record is None or not record.subset_snapshots:
        print("warning: no subset snapshots available; skipping evolution output",
              file=sys.stderr)
    return EXIT_OK


def end_to_end(config_path: str, out_dir: str, seed: int = 1, epochs: int | None = None):
    """Full pipeline on one config: train, export, cost, simulate, analyze.

    Runs the cross-stage consistency checks (packed payload vs cost model,
    engine vs trainer logits) and raises at the first failing stage.
    """
    from subbit import autograd as ag
    from subbit.costmodel import params_bits

    arch, extra = load_config(config_path)
    quant = QuantSpec(mode=extra.get("mode", "snn"), tau=int(extra.get("tau", 5)))
    _check_tau(quant.tau)
    cfg = TrainConfig(epochs=epochs or int(extra.get("epochs", 10)),
                      batch_size=int(extra.get("batch_size", 32)))
    data = synthetic_dataset(seed, int(extra.get("train_samples", 600)),
                             int(extra.get("val_samples", 200)),
                             classes=arch.classes, channels=arch.in_channels,
                             size=arch.in_size, noise=float(extra.get("noise", 1.0)))
    os.makedirs(out_dir, exist_ok=True)
    artifacts = {}

    record, net, opt = train(arch, data, cfg, quant, seed)
    ckpt = os.path.join(out_dir, "model.ckpt")
    save_checkpoint(ckpt, arch, net, quant, seed, record, opt)
    artifacts["checkpoint"] = ckpt

    model = packfmt.compile_network(arch, net)
    sbnn = os.path.join(out_dir, "model.sbnn")
    packfmt.save(model, sbnn)
    artifacts["model"] = sbnn

    expected_bits = params_bits(arch, quant.mode if quant.mode != "vanilla" else "snn",
                                quant.tau, count_subsets=True)
    got_bits = model.quantized_payload_bits()
    if quant.mode in ("snn", "vanilla") and got_bits != expected_bits:
        raise TrainingError(f"export stage: payload {got_bits} bits != cost model "
                            f"{expected_bits} bits")

    xv = data[2][:32]
    net.set_training(False)
    ref = net.forward(ag.Tensor(xv)).data
    got = engine.run_model(model, xv)
    rel = np.abs(got - ref) / np.maximum(np.abs(ref), 1e-9)
    if rel.max() > 1e-4:
        raise TrainingError(f"infer stage: logits diverge (max rel {rel.max():.2e})")
    artifacts["logits_max_rel_err"] = float(rel.max())

    report = costmodel.cost_report(arch, "snn" if quant.mode in ("snn", "vanilla")
                                   else quant.mode,
                                   quant.tau if quant.mode in ("snn", "vanilla") else None)
    with open(os.path.join(out_dir, "cost.csv"), "w") as f:
        f.write(report.to_csv())
    artifacts["cost_csv"] = os.path.join(out_dir, "cost.csv")

    hw = accelsim.HardwareConfig()
    merged = accelsim.timeline(accelsim.simulate_bnn(arch, hw),
                               accelsim.simulate_snn(arch, hw, quant.tau))
    with open(os.path.join(out_dir, "timeline.csv"), "w") as f:
        f.write(accelsim.timeline_csv(merged))
    artifacts["timeline_csv"] = os.path.join(out_dir, "timeline.csv")

    hists = collect_kernel_histogram(net)
    write_histogram_csv(os.path.join(out_dir, "kernel_histogram.csv"), hists)
    artifacts["histogram_csv"] = os.path.join(out_dir, "kernel_histogram.csv")
    return artifacts


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="subbit", description=__doc__)
    sub = top.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", default=None, help="output directory "
                       "(default $SUBBIT_OUT_DIR or ./runs)")

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--arch", required=True, help="preset name or config path")
    p.add_argument("--geometry", choices=("cifar", "imagenet"), default="cifar")
    p.add_argument("--mode", choices=("fp", "bnn", "vanilla", "snn"), default="snn")
    p.add_argument("--tau", type=int, default=5)
    p.add_argument("--strategy", choices=tuple(STRATEGIES), default="random")
    p.add_argument("--theta", type=float, default=1e-3)
    p.add_argument("--binarize-acts", action="store_true")
    p.add_argument("--repair-every", type=int, default=1)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--data", default="synthetic")
    p.add_argument("--train-samples", type=int, default=600)
    p.add_argument("--val-samples", type=int, default=200)
    p.add_argument("--noise", type=float, default=1.0)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("export", help="compile a checkpoint to a packed model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--model", default=None, help="output .sbnn path")
    common(p)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("infer", help="run a packed model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help=".npy file or directory of .npy files")
    p.add_argument("--report", default=None, help="write JSON report here")
    common(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("cost", help="storage / bit-op accounting")
    p.add_argument("--arch", required=True)
    p.add_argument("--geometry", choices=("cifar", "imagenet"), default="cifar")
    p.add_argument("--mode", choices=("fp", "bnn", "snn"), default="snn")
    p.add_argument("--tau", type=int, default=5)
    p.add_argument("--weight-only", action="store_true",
                   help="weights binarized, activations full precision")
    p.add_argument("--include-first-last", action="store_true")
    p.add_argument("--json", action="store_true")
    common(p)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("simulate", help="cycle-model a deployment")
    p.add_argument("--arch", required=True)
    p.add_argument("--geometry", choices=("cifar", "imagenet"), default="imagenet")
    p.add_argument("--tau", type=int, default=5)
    p.add_argument("--pes", type=int, default=64)
    p.add_argument("--clock", type=float, default=1.0)
    p.add_argument("--accumulators", type=int, default=4)
    p.add_argument("--lb-width", type=int, default=128)
    p.add_argument("--json", action="store_true")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="histograms, coverage, subset evolution")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--runlog", default=None, help="RunRecord json file")
    common(p)
    p.set_defaults(func=cmd_analyze)
    return top


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_VALIDATION if e.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (DataError, ModelFormatError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ValidationError, ConfigError, ValueError) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TrainingError, RuntimeError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
