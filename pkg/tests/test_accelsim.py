import math

import pytest

from subbit.accelsim import (FILL_CYCLES, CycleReport, HardwareConfig, simulate_bnn,
                             simulate_snn, timeline, timeline_csv)
from subbit.arch import ArchitectureSpec, LayerSpec, make_preset


def single_layer_arch(c_in, c_out, size, k=3, pad=1):
    return ArchitectureSpec("one", c_in, size, 2, [
        LayerSpec("conv", c_in=c_in, c_out=c_out, k=k, stride=1, pad=pad,
                  quantize=True),
        LayerSpec("gap"), LayerSpec("flatten"),
        LayerSpec("fc", c_in=c_out, c_out=2),
    ])


def test_bnn_task_cycles():
    arch = single_layer_arch(64, 64, 1, k=1, pad=0)
    report = simulate_bnn(arch, HardwareConfig(pe_count=64))
    assert len(report.layers) == 1
    assert report.layers[0].pre_cycles == 64  # 4096 dots over 64 PEs
    assert report.layers[0].total_cycles == 64 + FILL_CYCLES


def test_bnn_pe_scaling():
    arch = single_layer_arch(32, 32, 8)
    lo = simulate_bnn(arch, HardwareConfig(pe_count=32)).layers[0].pre_cycles
    hi = simulate_bnn(arch, HardwareConfig(pe_count=64)).layers[0].pre_cycles
    assert lo == 2 * hi


def test_snn_precompute_traversal():
    # one slice, one PE: the whole codebook is traversed serially
    arch = single_layer_arch(1, 64, 1, k=1, pad=0)
    report = simulate_snn(arch, HardwareConfig(pe_count=1), tau=5)
    assert report.layers[0].pre_cycles == 32


def test_degenerate_codebook_equals_baseline():
    arch = make_preset("resnet18", "imagenet")
    hw = HardwareConfig()
    base = simulate_bnn(arch, hw)
    full = simulate_snn(arch, hw, tau=9)
    assert [l.total_cycles for l in base.layers] == \
           [l.total_cycles for l in full.layers]


@pytest.mark.parametrize("name,target,band", [
    ("resnet18", 3.13, (2.5, 3.9)),
    ("resnet34", 3.33, (2.7, 4.2)),
])
def test_reference_speedups(name, target, band):
    arch = make_preset(name, "imagenet")
    hw = HardwareConfig(pe_count=64, clock_ghz=1.0, accumulators_per_pe=4,
                        line_buffer_width=128)
    merged = timeline(simulate_bnn(arch, hw), simulate_snn(arch, hw, 5))
    assert band[0] <= merged["speedup"] <= band[1], (name, merged["speedup"], target)


def test_resnet34_speedup_at_least_resnet18():
    hw = HardwareConfig()
    speedups = {}
    for name in ("resnet18", "resnet34"):
        arch = make_preset(name, "imagenet")
        speedups[name] = timeline(simulate_bnn(arch, hw),
                                  simulate_snn(arch, hw, 5))["speedup"]
    assert speedups["resnet34"] >= speedups["resnet18"]


def test_per_layer_snn_never_slower():
    hw = HardwareConfig()
    for name in ("resnet18", "resnet34"):
        arch = make_preset(name, "imagenet")
        base = simulate_bnn(arch, hw)
        shared = simulate_snn(arch, hw, 5)
        for lb, ls in zip(base.layers, shared.layers):
            assert ls.total_cycles <= lb.total_cycles


def test_per_stage_speedup_non_decreasing():
    hw = HardwareConfig()
    arch = make_preset("resnet18", "imagenet")
    base = simulate_bnn(arch, hw)
    shared = simulate_snn(arch, hw, 5)
    by_stage = {}
    for lb, ls in zip(base.layers, shared.layers):
        by_stage.setdefault(lb.c_out, []).append(lb.total_cycles / ls.total_cycles)
    means = [sum(v) / len(v) for _, v in sorted(by_stage.items())]
    assert all(b >= a - 1e-9 for a, b in zip(means, means[1:]))


def test_speedup_bounded_by_channel_ratio():
    hw = HardwareConfig()
    arch = make_preset("resnet18", "imagenet")
    base = simulate_bnn(arch, hw)
    shared = simulate_snn(arch, hw, 5)
    for lb, ls in zip(base.layers, shared.layers):
        assert lb.total_cycles / ls.total_cycles <= lb.c_out / 32 + 1e-9


def test_determinism():
    arch = make_preset("resnet34", "imagenet")
    hw = HardwareConfig()
    a = simulate_snn(arch, hw, 5).to_json()
    b = simulate_snn(arch, hw, 5).to_json()
    assert a == b


def test_total_time_formula():
    arch = make_preset("resnet20", "cifar")
    hw = HardwareConfig(clock_ghz=2.0)
    report = simulate_snn(arch, hw, 4)
    assert math.isclose(report.total_ms,
                        report.total_cycles / (2.0 * 1e9) * 1e3)
    assert report.total_cycles == sum(l.total_cycles for l in report.layers)


def test_empty_architecture():
    arch = ArchitectureSpec("none", 3, 8, 2, [
        LayerSpec("gap"), LayerSpec("flatten"), LayerSpec("fc", c_in=3, c_out=2)])
    hw = HardwareConfig()
    base = simulate_bnn(arch, hw)
    shared = simulate_snn(arch, hw, 5)
    merged = timeline(base, shared)
    assert base.total_cycles == 0 and shared.total_ms == 0.0
    assert merged["layers"] == []
    assert timeline_csv(merged) == ""


def test_layer_count_mismatch_rejected():
    hw = HardwareConfig()
    a = simulate_bnn(make_preset("resnet18", "imagenet"), hw)
    b = simulate_snn(make_preset("resnet34", "imagenet"), hw, 5)
    with pytest.raises(ValueError):
        timeline(a, b)


def test_bad_hardware_config():
    with pytest.raises(ValueError):
        HardwareConfig(pe_count=0)
    with pytest.raises(ValueError):
        HardwareConfig(clock_ghz=-1.0)
