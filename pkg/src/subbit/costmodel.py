"""Analytic storage and bit-operation accounting.

Conventions (calibrated against the reference operating points):
  - binarized scope: quantized convs only; stem, classifier, and 1x1
    downsample convs stay full precision and are excluded from the default
    totals (include_first_last adds them at 32 bits/weight and 64x ops).
  - storage: binarized layer k*k*c_out*c_in bits; sub-bit layer
    tau*c_out*c_in bits plus an optional k*k*2^tau codebook term; vector
    1x1 layers tau'*c_out*c_in/8 plus 8*2^tau'.
  - bit ops (1/1): binarized layer Ho*Wo*c_out*(c_in*k*k + 1); sub-bit
    layer Ho*Wo*(2^tau*(c_in*k*k + 1) + c_out*c_in/2) when 2^tau < c_out,
    otherwise the binarized rate (sharing cannot help). The half-weighted
    accumulation term is a calibration choice, not first-principles.
  - weight-only totals scale the 1/1 totals by 32, full precision by 64.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

from subbit.arch import ArchitectureSpec, ConvGeom, walk_geometry

MODES = ("fp", "bnn", "snn")


@dataclass
class LayerCost:
    index: int
    kind: str
    c_in: int
    c_out: int
    k: int
    h_out: int
    w_out: int
    in_scope: bool  # quantize-flagged layer: counted in the headline totals
    weight_bits: int
    subset_bits: int
    bit_ops: int


@dataclass
class CostReport:
    arch: str
    mode: str
    tau: int | None
    layers: list[LayerCost] = field(default_factory=list)

    def total_weight_bits(self, include_first_last=False, count_subsets=False) -> int:
        total = 0
        for l in self.layers:
            if not l.in_scope and not include_first_last:
                continue
            total += l.weight_bits + (l.subset_bits if count_subsets and l.in_scope else 0)
        return total

    def total_bit_ops(self, include_first_last=False) -> int:
        return sum(l.bit_ops for l in self.layers
                   if l.in_scope or include_first_last)

    def to_json(self) -> str:
        payload = {
            "arch": self.arch, "mode": self.mode, "tau": self.tau,
            "totals": {
                "weight_bits": self.total_weight_bits(),
                "weight_bits_with_subsets": self.total_weight_bits(count_subsets=True),
                "weight_bits_incl_first_last": self.total_weight_bits(include_first_last=True),
                "bit_ops": self.total_bit_ops(),
                "bit_ops_incl_first_last": self.total_bit_ops(include_first_last=True),
            },
            "layers": [vars(l) for l in self.layers],
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf)
        wr.writerow(["index", "kind", "c_in", "c_out", "k", "h_out", "w_out",
                     "in_scope", "weight_bits", "subset_bits", "bit_ops"])
        for l in self.layers:
            wr.writerow([l.index, l.kind, l.c_in, l.c_out, l.k, l.h_out, l.w_out,
                         int(l.in_scope), l.weight_bits, l.subset_bits, l.bit_ops])
        return buf.getvalue()


def _check_tau(tau, geom: ConvGeom):
    cap = 8 if geom.mode == "vector" else geom.k * geom.k
    if not 1 <= tau <= cap:
        raise ValueError(f"tau={tau} invalid for layer {geom.index} (max {cap})")


def _layer_weight_bits(geom: ConvGeom, mode: str, tau: int | None) -> tuple[int, int]:
    n_weights = geom.c_out * geom.c_in * geom.k * geom.k
    if not geom.quantize or mode == "fp":
        return 32 * n_weights, 0
    if mode == "bnn":
        return n_weights, 0
    _check_tau(tau, geom)
    if geom.mode == "vector":
        return tau * geom.c_out * geom.c_in // 8, 8 * (1 << tau)
    return tau * geom.c_out * geom.c_in, geom.k * geom.k * (1 << tau)


def _layer_bit_ops(geom: ConvGeom, mode: str, tau: int | None) -> int:
    pix = geom.h_out * geom.w_out
    base = pix * geom.c_out * (geom.c_in * geom.k * geom.k + 1)
    if not geom.quantize or mode == "fp":
        return 64 * base
    if mode == "bnn":
        return base
    _check_tau(tau, geom)
    size = 1 << tau
    if size >= geom.c_out:
        return base
    return pix * (size * (geom.c_in * geom.k * geom.k + 1) + geom.c_out * geom.c_in // 2)


def cost_report(arch: ArchitectureSpec, mode: str, tau: int | None = None,
                weight_only: bool = False) -> CostReport:
    """Per-layer storage and 1/1 (or W/32) bit-op accounting for an architecture."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mode == "snn" and tau is None:
        raise ValueError("snn mode requires tau")
    report = CostReport(arch.name, mode, tau if mode == "snn" else None)
    for geom in walk_geometry(arch):
        wb, sb = _layer_weight_bits(geom, mode, tau)
        ops = _layer_bit_ops(geom, mode, tau)
        if geom.quantize and mode != "fp" and weight_only:
            ops *= 32
        report.layers.append(LayerCost(geom.index, geom.kind, geom.c_in, geom.c_out,
                                       geom.k, geom.h_out, geom.w_out, geom.quantize,
                                       wb, sb, ops))
    return report


def params_bits(arch: ArchitectureSpec, mode: str, tau: int | None = None,
                count_subsets: bool = False, include_first_last: bool = False) -> int:
    return cost_report(arch, mode, tau).total_weight_bits(include_first_last,
                                                          count_subsets)


def bitops(arch: ArchitectureSpec, mode: str, tau: int | None = None,
           weight_only: bool = False, include_first_last: bool = False) -> int:
    return cost_report(arch, mode, tau,
                       weight_only=weight_only).total_bit_ops(include_first_last)


def ratios(report_a: CostReport, report_b: CostReport) -> dict:
    """Compression and bit-op reduction of report_b relative to report_a."""
    if report_a.arch != report_b.arch or len(report_a.layers) != len(report_b.layers):
        raise ValueError("reports describe different architectures")
    return {
        "params_ratio": report_a.total_weight_bits() / report_b.total_weight_bits(),
        "bitops_ratio": report_a.total_bit_ops() / report_b.total_bit_ops(),
    }
