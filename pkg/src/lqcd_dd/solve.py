"""End-to-end solve of A x = b on one box: outer FGMRES-DR, optionally
right-preconditioned by the multiplicative Schwarz sweep."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fgmres import FgmresParams, SolveStats, fgmres_dr
from .lattice.fields import GaugeField, SpinorField
from .schwarz import SchwarzParams, SchwarzPreconditioner, decompose
from .wilson import CloverField, OperatorParams, apply_dirac, build_clover, count_flops


@dataclass(frozen=True)
class SolveConfig:
    params: OperatorParams = OperatorParams()
    domain_dims: tuple | None = (4, 4, 4, 4)   # None: unpreconditioned
    schwarz: SchwarzParams = SchwarzParams()
    fgmres: FgmresParams = FgmresParams()

    @property
    def preconditioned(self) -> bool:
        return self.domain_dims is not None


@dataclass
class SolveResult:
    x: np.ndarray
    stats: SolveStats
    info: dict = field(default_factory=dict)


def make_operator(gauge: GaugeField, clover: CloverField, params: OperatorParams):
    geo = gauge.geometry
    return lambda v: apply_dirac(gauge, clover, params, SpinorField(geo, v)).data


def solve_single(gauge: GaugeField, b: np.ndarray, config: SolveConfig = SolveConfig(),
                 clover: CloverField | None = None, callback=None) -> SolveResult:
    """Reference single-rank solve; multi-rank runs are checked against it."""
    if clover is None:
        clover = build_clover(gauge, config.params)
    op = make_operator(gauge, clover, config.params)
    precond = None
    if config.preconditioned:
        decomp = decompose(gauge.geometry, config.domain_dims)
        precond = SchwarzPreconditioner(gauge, clover, config.params, decomp, config.schwarz)
    flops = count_flops(config.params).total * gauge.geometry.volume
    x, stats = fgmres_dr(op, precond, b, config.fgmres, callback=callback, op_flops=flops)
    info = {"ranks": 1}
    if precond is not None:
        s = precond.stats
        info.update(block_solves=s.block_solves, mr_steps=s.mr_steps, mr_breakdowns=s.breakdowns)
        stats.flop_estimate += s.site_ops * count_flops(config.params).total
    return SolveResult(x, stats, info)
