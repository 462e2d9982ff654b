"""Transaction-level cycle model of the two-unit shared-convolution engine
and a matched direct-convolution baseline.

Per quantized layer the engine pipelines a pre-compute unit (one codebook
dot per activation slice) against an accumulator unit (table fetch + add,
several accumulators per PE); the layer's time is the slower unit plus a
fill overhead. The baseline issues one k*k dot per PE per cycle. Absolute
milliseconds are calibration-grade; ratios are the modeled quantity.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

from subbit.arch import ArchitectureSpec, walk_geometry

# fixed per-layer pipeline fill: one buffer-drain constant, plus one codebook
# traversal on the shared path; frozen after calibration
FILL_CYCLES = 1024
ACCUM_BITS = 32


@dataclass
class HardwareConfig:
    pe_count: int = 64
    clock_ghz: float = 1.0
    accumulators_per_pe: int = 4
    line_buffer_width: int = 128

    def __post_init__(self):
        if min(self.pe_count, self.accumulators_per_pe, self.line_buffer_width) <= 0:
            raise ValueError("hardware parameters must be positive")
        if self.clock_ghz <= 0:
            raise ValueError("clock must be positive")


@dataclass
class LayerCycles:
    index: int
    c_in: int
    c_out: int
    h_out: int
    w_out: int
    path: str  # direct | shared
    pre_cycles: int
    accum_cycles: int
    fill_cycles: int
    stall_cycles: int

    @property
    def total_cycles(self) -> int:
        return max(self.pre_cycles, self.accum_cycles) + self.fill_cycles


@dataclass
class CycleReport:
    arch: str
    engine: str  # bnn | snn
    tau: int | None
    hw: HardwareConfig
    layers: list[LayerCycles] = field(default_factory=list)

    @property
    def total_cycles(self) -> int:
        return sum(l.total_cycles for l in self.layers)

    @property
    def total_ms(self) -> float:
        return self.total_cycles / (self.hw.clock_ghz * 1e9) * 1e3

    def to_json(self) -> str:
        return json.dumps({
            "arch": self.arch, "engine": self.engine, "tau": self.tau,
            "pe_count": self.hw.pe_count, "clock_ghz": self.hw.clock_ghz,
            "total_cycles": self.total_cycles, "total_ms": self.total_ms,
            "layers": [{**vars(l), "total_cycles": l.total_cycles} for l in self.layers],
        }, indent=2, sort_keys=True)


def _bnn_layer(geom, hw) -> LayerCycles:
    tasks = geom.h_out * geom.w_out * geom.c_out * geom.c_in
    cycles = math.ceil(tasks / hw.pe_count)
    return LayerCycles(geom.index, geom.c_in, geom.c_out, geom.h_out, geom.w_out,
                       "direct", cycles, 0, FILL_CYCLES, 0)


def simulate_bnn(arch: ArchitectureSpec, hw: HardwareConfig) -> CycleReport:
    """Baseline: every output-channel dot computed directly, one per PE-cycle."""
    report = CycleReport(arch.name, "bnn", None, hw)
    for geom in walk_geometry(arch):
        if geom.kind == "conv" and geom.quantize:
            report.layers.append(_bnn_layer(geom, hw))
    return report


def simulate_snn(arch: ArchitectureSpec, hw: HardwareConfig, tau: int) -> CycleReport:
    """Shared engine: pre-compute 2^tau dots per slice, accumulate by index.

    Layers whose codebook is at least as large as c_out gain nothing from
    sharing and run at the baseline rate.
    """
    size = 1 << tau
    report = CycleReport(arch.name, "snn", tau, hw)
    for geom in walk_geometry(arch):
        if geom.kind != "conv" or not geom.quantize:
            continue
        if size >= geom.c_out:
            report.layers.append(_bnn_layer(geom, hw))
            continue
        pix = geom.h_out * geom.w_out
        pre = math.ceil(pix * geom.c_in * size / hw.pe_count)
        accum = math.ceil(pix * geom.c_in * geom.c_out /
                          (hw.pe_count * hw.accumulators_per_pe))
        # line-buffer write-back is a secondary lower bound on the accumulator
        writeback = math.ceil(pix * geom.c_out * ACCUM_BITS /
                              (hw.line_buffer_width * hw.pe_count))
        accum = max(accum, writeback)
        report.layers.append(LayerCycles(
            geom.index, geom.c_in, geom.c_out, geom.h_out, geom.w_out, "shared",
            pre, accum, FILL_CYCLES + size, abs(pre - accum)))
    return report


def timeline(report_a: CycleReport, report_b: CycleReport) -> dict:
    """Merge two per-layer reports (same architecture) into one comparison."""
    if len(report_a.layers) != len(report_b.layers) or report_a.arch != report_b.arch:
        raise ValueError("reports cover different layer lists")
    ghz_a, ghz_b = report_a.hw.clock_ghz, report_b.hw.clock_ghz
    rows = []
    for la, lb in zip(report_a.layers, report_b.layers):
        rows.append({
            "index": la.index, "c_out": la.c_out,
            f"{report_a.engine}_cycles": la.total_cycles,
            f"{report_b.engine}_cycles": lb.total_cycles,
            f"{report_a.engine}_ms": la.total_cycles / (ghz_a * 1e9) * 1e3,
            f"{report_b.engine}_ms": lb.total_cycles / (ghz_b * 1e9) * 1e3,
        })
    return {
        "arch": report_a.arch,
        "layers": rows,
        "totals": {report_a.engine: report_a.total_ms, report_b.engine: report_b.total_ms},
        "speedup": (report_a.total_cycles / report_b.total_cycles
                    if report_b.total_cycles else float("nan")),
    }


def timeline_csv(merged: dict) -> str:
    buf = io.StringIO()
    rows = merged["layers"]
    if not rows:
        return ""
    wr = csv.DictWriter(buf, fieldnames=list(rows[0].keys()))
    wr.writeheader()
    for row in rows:
        wr.writerow(row)
    return buf.getvalue()
