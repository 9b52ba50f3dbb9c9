"""Closed-form performance and cache working-set estimates for a many-core chip."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layout import FuseSpec, lane_utilization
from .wilson import count_flops

KB = 1024


@dataclass(frozen=True)
class ChipModel:
    cores: int = 61
    usable_cores: int = 60
    clock_ghz: float = 1.238
    sp_lanes: int = 16
    dp_lanes: int = 8
    flops_per_fma: int = 2
    stream_bw_gbs: float = 170.0
    nominal_bw_gbs: float = 352.0

    def __post_init__(self):
        vals = (self.cores, self.usable_cores, self.clock_ghz, self.sp_lanes, self.dp_lanes,
                self.flops_per_fma, self.stream_bw_gbs, self.nominal_bw_gbs)
        if min(vals) <= 0:
            raise ValueError("chip parameters must be positive")
        if self.usable_cores > self.cores:
            raise ValueError("more usable cores than cores")

    def lanes(self, precision: str) -> int:
        if precision == "single":
            return self.sp_lanes
        if precision == "double":
            return self.dp_lanes
        raise ValueError(f"unknown precision {precision!r}")


def peak_flops(chip: ChipModel = ChipModel(), precision: str = "double", per_core: bool = False) -> float:
    """Peak Gflop/s: cores x clock x lanes x flops per FMA."""
    cores = 1 if per_core else chip.cores
    return cores * chip.clock_ghz * chip.lanes(precision) * chip.flops_per_fma


def fma_efficiency_limit(f: float) -> float:
    """Fraction of peak reachable when a fraction f of arithmetic instructions are FMAs."""
    if not 0.0 <= f <= 1.0:
        raise ValueError("FMA fraction must lie in [0, 1]")
    return (2 * f + (1 - f)) / 2


# combined cost of masking, shuffles, permutes and imperfect pairing
OVERHEAD_FACTOR = 0.56 / 0.82


def overheaded_limit(chip: ChipModel = ChipModel(), f: float | None = None,
                     overhead_factor: float = OVERHEAD_FACTOR, precision: str = "single") -> float:
    """Per-core Gflop/s bound after the FMA limit and an instruction-overhead factor."""
    if not 0.0 < overhead_factor <= 1.0:
        raise ValueError("overhead factor must be in (0, 1]")
    if f is None:
        f = round(count_flops().fma_fraction, 2)
    return peak_flops(chip, precision, per_core=True) * fma_efficiency_limit(f) * overhead_factor


@dataclass(frozen=True)
class WorkingSetSpec:
    domain_dims: tuple = (8, 4, 4, 4)
    n_spinors: float = 3.5      # spinor-equivalents resident during MR
    spinor_bytes: int = 96      # 24 single-precision reals
    gauge_bytes: int = 288      # 4 links x 18 reals x 4 bytes
    clover_bytes: int = 288     # 2 x 36 reals x 4 bytes

    def __post_init__(self):
        if min(self.domain_dims) < 1 or self.n_spinors < 0:
            raise ValueError("invalid working-set spec")

    @property
    def sites(self) -> int:
        return int(np.prod(self.domain_dims))


WORKING_SET_MODES = ("all-single", "gauge-clover-half")


def working_set(spec: WorkingSetSpec = WorkingSetSpec(), mode: str = "all-single") -> float:
    """Per-domain working set in kB (1 kB = 1024 bytes)."""
    if mode not in WORKING_SET_MODES:
        raise ValueError(f"unknown precision mode {mode!r}")
    shrink = 2 if mode == "gauge-clover-half" else 1
    per_site = spec.n_spinors * spec.spinor_bytes + (spec.gauge_bytes + spec.clover_bytes) / shrink
    return spec.sites * per_site / KB


def simd_utilization(spec: FuseSpec, direction) -> float:
    return lane_utilization(spec, direction, 1)


# measured single-core Gflop/s (single precision) for reference in reports;
# rows: prefetching variant, columns: (MR single, MR half, DD single, DD half)
REFERENCE_SINGLE_CORE = {
    "no software prefetching": (6.1, 8.9, 4.6, 6.6),
    "L1 prefetches": (10.4, 13.3, 6.5, 8.7),
    "L1+L2 prefetches": (10.2, 13.3, 7.1, 9.5),
}


def model_record(chip: ChipModel = ChipModel(), spec: WorkingSetSpec = WorkingSetSpec(),
                 fuse: FuseSpec | None = None) -> dict:
    flops = count_flops()
    f = flops.fma_fraction
    rec = {
        "peak_dp_gflops": peak_flops(chip, "double"),
        "peak_sp_gflops": peak_flops(chip, "single"),
        "peak_sp_core_gflops": peak_flops(chip, "single", per_core=True),
        "flops_per_site": flops.total,
        "fma_fraction": f,
        "fma_limit": fma_efficiency_limit(round(f, 2)),
        "overhead_factor": OVERHEAD_FACTOR,
        "core_limit_gflops": overheaded_limit(chip, round(f, 2)),
        "working_set_kb": {m: working_set(spec, m) for m in WORKING_SET_MODES},
        "domain_dims": list(spec.domain_dims),
        "reference_single_core_gflops": {k: list(v) for k, v in REFERENCE_SINGLE_CORE.items()},
    }
    if fuse is not None:
        rec["simd_utilization"] = {a: simd_utilization(fuse, a) for a in "xyzt"}
    return rec
