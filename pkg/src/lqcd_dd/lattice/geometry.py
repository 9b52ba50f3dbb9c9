"""Lattice geometry and site indexing.

Sites are numbered lexicographically with x running fastest, i.e. the
flat index of ``(x, y, z, t)`` is ``x + Lx*(y + Ly*(z + Lz*t))``.
Directions are numbered ``0..3`` for ``x, y, z, t``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

AXES = "xyzt"


def axis_index(axis) -> int:
    if isinstance(axis, str):
        try:
            return AXES.index(axis)
        except ValueError:
            raise ValueError(f"unknown axis {axis!r}") from None
    axis = int(axis)
    if not 0 <= axis < 4:
        raise ValueError(f"axis out of range: {axis}")
    return axis


@dataclass(frozen=True)
class LatticeGeometry:
    dims: tuple[int, int, int, int]
    boundary: tuple[int, int, int, int] = (1, 1, 1, 1)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 4:
            raise ValueError("lattice needs exactly 4 extents")
        for mu, d in enumerate(dims):
            if d < 2:
                raise ValueError(f"extent along {AXES[mu]} must be >= 2, got {d}")
        bc = tuple(int(b) for b in self.boundary)
        if len(bc) != 4 or any(b not in (1, -1) for b in bc):
            raise ValueError("boundary phases must be four values of +1 or -1")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "boundary", bc)

    @property
    def volume(self) -> int:
        return int(np.prod(self.dims))

    @cached_property
    def strides(self) -> tuple[int, int, int, int]:
        lx, ly, lz, _ = self.dims
        return (1, lx, lx * ly, lx * ly * lz)

    def site_index(self, coords) -> int:
        coords = tuple(int(c) for c in coords)
        if len(coords) != 4:
            raise ValueError("need 4 coordinates")
        for mu, (c, d) in enumerate(zip(coords, self.dims)):
            if not 0 <= c < d:
                raise IndexError(f"coordinate {c} out of range along {AXES[mu]} (extent {d})")
        return sum(c * s for c, s in zip(coords, self.strides))

    def site_coords(self, index: int) -> tuple[int, int, int, int]:
        index = int(index)
        if not 0 <= index < self.volume:
            raise IndexError(f"site index {index} out of range")
        out = []
        for d in self.dims:
            out.append(index % d)
            index //= d
        return tuple(out)

    @cached_property
    def coords(self) -> np.ndarray:
        """All site coordinates, shape ``(V, 4)``, in index order."""
        idx = np.arange(self.volume)
        out = np.empty((self.volume, 4), dtype=np.int64)
        for mu, d in enumerate(self.dims):
            out[:, mu] = idx % d
            idx = idx // d
        return out

    @cached_property
    def parity(self) -> np.ndarray:
        return self.coords.sum(axis=1) % 2

    def index_of(self, coords: np.ndarray) -> np.ndarray:
        """Vectorized site index for an ``(..., 4)`` integer array (no range check)."""
        return coords @ np.asarray(self.strides, dtype=np.int64)

    @cached_property
    def neighbors(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Forward/backward neighbor indices and wraparound phases, each ``(V, 4)``."""
        c = self.coords
        fwd = np.empty((self.volume, 4), dtype=np.int64)
        bwd = np.empty_like(fwd)
        fph = np.ones((self.volume, 4))
        bph = np.ones((self.volume, 4))
        for mu, d in enumerate(self.dims):
            up = c.copy()
            up[:, mu] = (c[:, mu] + 1) % d
            dn = c.copy()
            dn[:, mu] = (c[:, mu] - 1) % d
            fwd[:, mu] = self.index_of(up)
            bwd[:, mu] = self.index_of(dn)
            if self.boundary[mu] == -1:
                fph[c[:, mu] == d - 1, mu] = -1.0
                bph[c[:, mu] == 0, mu] = -1.0
        return fwd, bwd, fph, bph
