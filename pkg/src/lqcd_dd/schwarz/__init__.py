"""Domain decomposition and the multiplicative Schwarz preconditioner."""
from __future__ import annotations

import numpy as np

from ..lattice.fields import GaugeField, SpinorField
from ..wilson import CloverField, OperatorParams
from .box import Box, Face
from .decomposition import DecompositionError, DomainDecomposition, decompose
from .domain import (DomainOperator, MRResult, StorageOverflowError, compress_domain_fields,
                     mr_solve_domain)
from .engine import SchwarzEngine, SchwarzParams, SchwarzStats


class SchwarzPreconditioner:
    """Callable r -> z approximating A^-1 r on the whole lattice (single box)."""

    def __init__(self, gauge: GaugeField, clover: CloverField, params: OperatorParams,
                 decomp: DomainDecomposition, sparams: SchwarzParams = SchwarzParams()):
        self.decomp = decomp
        self.engine = SchwarzEngine(Box.whole(decomp.geometry), gauge, clover, params,
                                    decomp.domain_dims, sparams)

    @property
    def stats(self) -> SchwarzStats:
        return self.engine.stats

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return self.engine.run(r)


def schwarz_apply(decomp: DomainDecomposition, precond: SchwarzPreconditioner,
                  r: SpinorField) -> SpinorField:
    if r.geometry != decomp.geometry:
        raise ValueError("residual lives on a different geometry than the decomposition")
    return SpinorField(r.geometry, precond(r.data), "single")


__all__ = [
    "Box", "DecompositionError", "DomainDecomposition", "DomainOperator", "Face", "MRResult",
    "SchwarzEngine", "SchwarzParams", "SchwarzPreconditioner", "SchwarzStats",
    "StorageOverflowError", "compress_domain_fields", "decompose", "mr_solve_domain",
    "schwarz_apply",
]
