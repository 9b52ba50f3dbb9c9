"""Rank-local sub-lattice ("box") with halo slots for remote neighbors.

Local sites are numbered lexicographically over the box extents.  Hop
tables index an extended array ``[local sites | halo sites | zero]``.  An
axis is *split* when the box is narrower than the global lattice; hops that
leave the box along a split axis land in halo slots, grouped by face.  Along
unsplit axes the box wraps onto itself.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ..lattice.fields import GaugeField, dagger
from ..lattice.geometry import LatticeGeometry


@dataclass
class Face:
    mu: int
    sign: int
    sites: np.ndarray   # local sites on this face, face-lexicographic order
    halo_base: int      # first halo slot (index into the extended array)

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def slot(self) -> int:
        """Hop slot through which face sites reach their halo neighbor."""
        return self.mu if self.sign > 0 else 4 + self.mu


@dataclass
class Box:
    geometry: LatticeGeometry
    offset: tuple[int, int, int, int]
    extents: tuple[int, int, int, int]
    _links: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.offset = tuple(int(o) for o in self.offset)
        self.extents = tuple(int(e) for e in self.extents)
        for mu in range(4):
            if self.offset[mu] + self.extents[mu] > self.geometry.dims[mu] or self.extents[mu] < 1:
                raise ValueError("box does not fit inside the lattice")

    @classmethod
    def whole(cls, geometry):
        return cls(geometry, (0, 0, 0, 0), geometry.dims)

    @property
    def split(self) -> tuple[bool, ...]:
        return tuple(e < d for e, d in zip(self.extents, self.geometry.dims))

    @cached_property
    def volume(self) -> int:
        return int(np.prod(self.extents))

    @cached_property
    def local_coords(self) -> np.ndarray:
        idx = np.arange(self.volume)
        out = np.empty((self.volume, 4), dtype=np.int64)
        for mu, e in enumerate(self.extents):
            out[:, mu] = idx % e
            idx = idx // e
        return out

    @cached_property
    def global_coords(self) -> np.ndarray:
        return self.local_coords + np.asarray(self.offset)

    @cached_property
    def global_index(self) -> np.ndarray:
        return self.geometry.index_of(self.global_coords)

    def local_index(self, lc: np.ndarray) -> np.ndarray:
        strides = np.cumprod((1,) + self.extents[:3])
        return lc @ strides

    @cached_property
    def faces(self) -> dict:
        """Faces of split axes keyed by (mu, sign)."""
        faces = {}
        base = self.volume
        for mu in range(4):
            if not self.split[mu]:
                continue
            for sign in (1, -1):
                edge = self.extents[mu] - 1 if sign > 0 else 0
                sites = np.flatnonzero(self.local_coords[:, mu] == edge)
                faces[(mu, sign)] = Face(mu, sign, sites, base)
                base += len(sites)
        return faces

    @cached_property
    def n_halo(self) -> int:
        return sum(f.n_sites for f in self.faces.values())

    @cached_property
    def nbr(self) -> np.ndarray:
        """(V, 8) indices into the extended array."""
        lc = self.local_coords
        out = np.empty((self.volume, 8), dtype=np.int64)
        for mu in range(4):
            e = self.extents[mu]
            for sign, slot in ((1, mu), (-1, 4 + mu)):
                c = lc.copy()
                c[:, mu] = (lc[:, mu] + sign) % e
                out[:, slot] = self.local_index(c)
                if self.split[mu]:
                    face = self.faces[(mu, sign)]
                    out[face.sites, slot] = face.halo_base + np.arange(face.n_sites)
        return out

    @cached_property
    def phases(self) -> np.ndarray:
        """(V, 8) boundary phase of each hop (crossing the global wrap)."""
        gc = self.global_coords
        ph = np.ones((self.volume, 8))
        for mu in range(4):
            if self.geometry.boundary[mu] == -1:
                d = self.geometry.dims[mu]
                ph[gc[:, mu] == d - 1, mu] = -1.0
                ph[gc[:, mu] == 0, 4 + mu] = -1.0
        return ph

    def link_table(self, gauge: GaugeField) -> np.ndarray:
        """(V, 8, 3, 3) phase-weighted links for each hop slot (complex128).

        Backward slots need U_mu(x - mu) which may belong to a neighbor box;
        those links are copied once at setup (the gauge halo).
        """
        if self._links is not None:
            return self._links
        geo = self.geometry
        _, bwd, _, _ = geo.neighbors
        u = gauge.links.astype(np.complex128)
        g = self.global_index
        links = np.empty((self.volume, 8, 3, 3), dtype=np.complex128)
        ph = self.phases
        for mu in range(4):
            links[:, mu] = u[g, mu] * ph[:, mu, None, None]
            links[:, 4 + mu] = dagger(u[bwd[g, mu], mu]) * ph[:, 4 + mu, None, None]
        self._links = links
        return links
