"""Non-overlapping block decomposition with red-black domain coloring."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..lattice.geometry import AXES, LatticeGeometry


class DecompositionError(ValueError):
    pass


@dataclass(frozen=True)
class DomainDecomposition:
    geometry: LatticeGeometry
    domain_dims: tuple[int, int, int, int]
    grid: tuple[int, int, int, int]
    sites: np.ndarray          # (Nd, Vd) global site indices, domain-local lexicographic order
    domain_coords: np.ndarray  # (Nd, 4) position in the domain grid
    color: np.ndarray          # (Nd,) 0 = red, 1 = black

    @property
    def n_domains(self) -> int:
        return len(self.sites)

    Nd = n_domains

    @property
    def nd(self) -> int:
        """Domains that can be processed concurrently (one color)."""
        return self.n_domains // 2

    @property
    def domain_volume(self) -> int:
        return int(np.prod(self.domain_dims))

    def domains_of_color(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.color == c)

    def domain_of_site(self) -> np.ndarray:
        out = np.empty(self.geometry.volume, dtype=np.int64)
        for d, s in enumerate(self.sites):
            out[s] = d
        return out


def check_divisible(extents, block, what="lattice"):
    for mu, (e, b) in enumerate(zip(extents, block)):
        if b < 1 or e % b:
            raise DecompositionError(
                f"{what} extent {e} along {AXES[mu]} is not divisible by domain extent {b}")


def lex_coords(extents) -> np.ndarray:
    """Coordinates (prod(extents), 4) in lexicographic order, x fastest."""
    idx = np.arange(int(np.prod(extents)))
    out = np.empty((len(idx), 4), dtype=np.int64)
    for mu, e in enumerate(extents):
        out[:, mu] = idx % e
        idx = idx // e
    return out


def decompose(geometry: LatticeGeometry, domain_dims, allow_single: bool = False) -> DomainDecomposition:
    """Tile ``geometry`` with domains of extent ``domain_dims``.

    The domain grid is colored by the parity of the summed domain
    coordinates.  Under periodic wraparound this is a proper 2-coloring only
    if every grid axis has extent 1 or an even extent; with at least one
    even axis the two colors are equally large.  ``allow_single`` admits the
    degenerate one-domain tiling (used for oracle checks only).
    """
    domain_dims = tuple(int(d) for d in domain_dims)
    if len(domain_dims) != 4:
        raise DecompositionError("need 4 domain extents")
    check_divisible(geometry.dims, domain_dims)
    for mu, d in enumerate(domain_dims):
        if d % 2:
            raise DecompositionError(f"domain extent {d} along {AXES[mu]} must be even (even-odd splitting)")
    grid = tuple(L // d for L, d in zip(geometry.dims, domain_dims))
    n = int(np.prod(grid))
    if n == 1:
        if not allow_single:
            raise DecompositionError("a single domain cannot be 2-colored")
    else:
        for mu, g in enumerate(grid):
            if g > 1 and g % 2:
                raise DecompositionError(
                    f"domain grid extent {g} along {AXES[mu]} is odd; red-black coloring breaks across the wraparound")
    dcoords = lex_coords(grid)
    tmpl = lex_coords(domain_dims)
    origin = dcoords * np.asarray(domain_dims)
    sites = geometry.index_of(origin[:, None, :] + tmpl[None, :, :])
    color = dcoords.sum(axis=1) % 2
    return DomainDecomposition(geometry, domain_dims, grid, sites, dcoords, color)
