"""Multiplicative (red-black) Schwarz sweeps on one box.

For each Schwarz iteration and each color, all domains of that color solve
their block system against the current residual rho with a few MR steps;
the corrections are added to z and rho is updated.  The map r -> z is
homogeneous but not exactly additive: each MR step length depends on the
residual.  As the sweep converges towards A^-1 r it becomes linear to
within the solve accuracy.

Residual update modes:

* ``incremental``: on the solved domains rho becomes the MR block residual;
  neighboring sites receive the surface hops of the correction.
* ``recompute``: rho = r - A z from scratch after every color phase
  (single box only).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..lattice.fields import GaugeField
from ..wilson import HOP_PROJECTORS, CloverField, OperatorParams, apply_clover, hop_sum
from .box import Box
from .decomposition import DecompositionError, check_divisible, lex_coords
from .domain import DomainOperator


@dataclass(frozen=True)
class SchwarzParams:
    n_schwarz: int = 16
    n_mr: int = 5
    eo: bool = True
    residual: str = "incremental"
    storage: str = "single"
    workers: int | None = None   # cap on domains solved concurrently (one batch)

    def __post_init__(self):
        if self.n_schwarz < 1 or self.n_mr < 1:
            raise ValueError("n_schwarz and n_mr must be >= 1")
        if self.residual not in ("incremental", "recompute"):
            raise ValueError(f"unknown residual mode {self.residual!r}")
        if self.storage not in ("single", "half"):
            raise ValueError(f"unknown domain storage {self.storage!r}")
        if self.workers is not None and self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class SchwarzStats:
    calls: int = 0
    block_solves: int = 0
    mr_steps: int = 0
    breakdowns: int = 0
    site_ops: int = 0  # site-operator applications, for flop estimates

    def merge(self, other: "SchwarzStats"):
        for k in self.__dataclass_fields__:
            setattr(self, k, getattr(self, k) + getattr(other, k))


class _SurfaceHop:
    """Hops from a fixed set of source sites into target sites of other domains."""

    def __init__(self, targets_by_slot, links):
        self.parts = []
        for k, (targets, sources) in targets_by_slot.items():
            if len(targets):
                self.parts.append((k, targets, sources, links[targets, k]))

    def cast(self, dtype):
        self.parts = [(k, t, s, l.astype(dtype)) for k, t, s, l in self.parts]
        return self

    def apply(self, rho: np.ndarray, src: np.ndarray):
        """rho[t] -= (-1/2) P_k L[t, k] src[s] for each slot k, in slot order."""
        for k, t, s, l in self.parts:
            c = (l @ np.swapaxes(src[s], -1, -2))              # (m, 3, 4)
            c = np.swapaxes(c, -1, -2)                          # (m, 4[t], 3)
            proj = HOP_PROJECTORS[k].astype(rho.dtype)
            rho[t] += 0.5 * np.einsum("st,mta->msa", proj, c)


class SchwarzEngine:
    """Schwarz preconditioner data for the domains inside one box.

    Colors come from the parity of global domain-grid coordinates, so the
    coloring is consistent across the boxes of a multi-rank run.
    """

    def __init__(self, box: Box, gauge: GaugeField, clover: CloverField, params: OperatorParams,
                 domain_dims, sparams: SchwarzParams = SchwarzParams()):
        self.box = box
        self.params = params
        self.sparams = sparams
        self.domain_dims = tuple(int(d) for d in domain_dims)
        check_divisible(box.extents, self.domain_dims, "box")
        for mu in range(4):
            if box.offset[mu] % self.domain_dims[mu]:
                raise DecompositionError("box offset not aligned with the domain grid")
        self.local_grid = tuple(e // d for e, d in zip(box.extents, self.domain_dims))
        self.links = box.link_table(gauge)
        self.links64 = self.links.astype(np.complex64)
        self.clover = clover.blocks[box.global_index].astype(np.complex128)
        self.clover64 = self.clover.astype(np.complex64)

        self.domain_coords = lex_coords(self.local_grid)          # local domain-grid coords
        tmpl = lex_coords(self.domain_dims)
        origin = self.domain_coords * np.asarray(self.domain_dims)
        self.domain_sites = box.local_index(origin[:, None, :] + tmpl[None])
        gcoords = self.domain_coords + np.asarray(box.offset) // np.asarray(self.domain_dims)
        self.color = gcoords.sum(axis=1) % 2
        self.owner = np.empty(box.volume, dtype=np.int64)
        for d, s in enumerate(self.domain_sites):
            self.owner[s] = d
        self._dops = {}
        self._surface = {}
        self.stats = SchwarzStats()

    # -- domain batches ----------------------------------------------------
    def domains(self, color: int, subset=None) -> np.ndarray:
        ids = np.flatnonzero(self.color == color)
        if subset is not None:
            ids = ids[np.isin(ids, subset)]
        return ids

    def dop(self, ids) -> DomainOperator:
        key = tuple(int(i) for i in ids)
        if key not in self._dops:
            dop = DomainOperator(self.box, self.links, self.clover, self.domain_sites[list(key)],
                                 self.sparams.storage)
            self._dops[key] = dop
        return self._dops[key]

    def surface(self, ids) -> _SurfaceHop:
        """Local hops from the sites of domains ``ids`` into other domains."""
        key = tuple(int(i) for i in ids)
        if key not in self._surface:
            v = self.box.volume
            src_mask = np.zeros(v, dtype=bool)
            src_mask[self.domain_sites[list(key)].ravel()] = True
            by_slot = {}
            for k in range(8):
                nb = self.box.nbr[:, k]
                ok = nb < v
                nbc = np.where(ok, nb, 0)
                tgt = np.flatnonzero(ok & src_mask[nbc] & (self.owner[nbc] != self.owner))
                by_slot[k] = (tgt, nb[tgt])
            self._surface[key] = _SurfaceHop(by_slot, self.links).cast(np.complex64)
        return self._surface[key]

    # -- local operator ----------------------------------------------------
    def apply_local(self, x: np.ndarray, halo: np.ndarray | None = None) -> np.ndarray:
        """A x on the box; ``halo`` supplies remote neighbor values (zero if None)."""
        ext = np.zeros((self.box.volume + self.box.n_halo, 4, 3), dtype=x.dtype)
        ext[: self.box.volume] = x
        if halo is not None:
            ext[self.box.volume:] = halo
        links = self.links64 if x.dtype == np.complex64 else self.links
        cl = self.clover64 if x.dtype == np.complex64 else self.clover
        return apply_clover(cl, x) + hop_sum(ext, self.box.nbr, links)

    # -- one color phase ---------------------------------------------------
    def solve_domains(self, ids, rho: np.ndarray, z: np.ndarray, delta: np.ndarray | None = None):
        """Block-solve domains ``ids`` against rho, update z and (incrementally) rho.

        Returns the correction as a box-sized array (zero outside ``ids``).
        """
        if delta is None:
            delta = np.zeros_like(rho)
        if len(ids) == 0:
            return delta
        sp = self.sparams
        if sp.workers is not None and len(ids) > sp.workers:
            # same-color domains do not touch, so batches are independent
            for lo in range(0, len(ids), sp.workers):
                self.solve_domains(ids[lo: lo + sp.workers], rho, z, delta)
            return delta
        dop = self.dop(ids)
        sites = self.domain_sites[ids]
        res = dop.mr_solve(rho[sites], sp.n_mr, sp.eo)
        z[sites] += res.x
        delta[sites] = res.x
        self.stats.block_solves += len(ids)
        self.stats.mr_steps += len(ids) * sp.n_mr
        self.stats.breakdowns += int(res.breakdown.sum())
        vd = dop.vd
        self.stats.site_ops += len(ids) * vd * (sp.n_mr * (2 if sp.eo else 1) + 2)
        if sp.residual == "incremental":
            rho[sites] = res.residual
            self.surface(ids).apply(rho, delta)
        return delta

    def run(self, r: np.ndarray) -> np.ndarray:
        """Full Schwarz sweep on a box without remote neighbors."""
        if self.box.n_halo:
            raise ValueError("box has remote faces; drive it through a rank ensemble")
        sp = self.sparams
        r = np.asarray(r, dtype=np.complex64)
        z = np.zeros_like(r)
        rho = r.copy()
        self.stats.calls += 1
        for _ in range(sp.n_schwarz):
            for color in (0, 1):
                self.solve_domains(self.domains(color), rho, z)
                if sp.residual == "recompute":
                    rho = r - self.apply_local(z)
                    self.stats.site_ops += self.box.volume
        return z
