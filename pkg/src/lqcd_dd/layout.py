"""Site-fused structure-of-arrays layout.

A lattice (typically one domain) is cut into fuse blocks of
``fx*fy*fz*ft = W`` sites.  Every real component of a site lives in its own
W-lane register; lane ``lx + fx*(ly + fy*(lz + fz*lt))`` of register
``g`` holds site ``(gx*fx + lx, ...)``, registers are numbered
lexicographically over the block grid.  Data shape: ``(ncomp, G, W)``.

Hops along an unfused axis move whole registers.  Along a fused axis they
rotate lanes inside a register and blend the lanes that cross the register
edge from the neighboring register.  With Dirichlet (domain) boundaries the
lanes whose neighbor lies outside the lattice are masked; masked lanes are
wasted SIMD work and show up in the utilization figure.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice.fields import SpinorField
from .lattice.geometry import AXES, LatticeGeometry, axis_index
from .lattice.gamma import HOP_PROJECTORS

REAL_DTYPE = {"double": np.float64, "single": np.float32, "half": np.float16}
NCOMP_SPINOR = 24


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class FuseSpec:
    dims: tuple[int, int, int, int]
    factors: tuple[int, int, int, int] = (4, 4, 1, 1)

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "factors", tuple(int(f) for f in self.factors))
        for mu, (d, f) in enumerate(zip(self.dims, self.factors)):
            if f < 1 or d % f:
                raise LayoutError(f"extent {d} along {AXES[mu]} not divisible by fuse factor {f}")

    @property
    def width(self) -> int:
        return int(np.prod(self.factors))

    @property
    def groups(self) -> tuple[int, int, int, int]:
        return tuple(d // f for d, f in zip(self.dims, self.factors))

    @property
    def n_groups(self) -> int:
        return int(np.prod(self.groups))

    def describe(self) -> str:
        f = "x".join(str(v) for v in self.factors)
        g = "x".join(str(v) for v in self.groups)
        return f"FuseSpec(dims={self.dims}, lanes {f} (W={self.width}), register grid {g})"

    # reshape helpers -------------------------------------------------------
    def _split_shape(self, ncomp):
        gx, gy, gz, gt = self.groups
        fx, fy, fz, ft = self.factors
        return (gt, ft, gz, fz, gy, fy, gx, fx, ncomp)

    def fuse_array(self, sites: np.ndarray) -> np.ndarray:
        """(V, ncomp) site-major -> (ncomp, G, W)."""
        ncomp = sites.shape[1]
        a = sites.reshape(self._split_shape(ncomp))
        a = a.transpose(8, 0, 2, 4, 6, 1, 3, 5, 7)
        return np.ascontiguousarray(a).reshape(ncomp, self.n_groups, self.width)

    def unfuse_array(self, fused: np.ndarray) -> np.ndarray:
        ncomp = fused.shape[0]
        gx, gy, gz, gt = self.groups
        fx, fy, fz, ft = self.factors
        a = fused.reshape(ncomp, gt, gz, gy, gx, ft, fz, fy, fx)
        a = a.transpose(1, 5, 2, 6, 3, 7, 4, 8, 0)
        return np.ascontiguousarray(a).reshape(-1, ncomp)

    def view9(self, fused: np.ndarray) -> np.ndarray:
        """(ncomp, gt, gz, gy, gx, ft, fz, fy, fx) view of fused data."""
        gx, gy, gz, gt = self.groups
        fx, fy, fz, ft = self.factors
        return fused.reshape(fused.shape[0], gt, gz, gy, gx, ft, fz, fy, fx)

    def coords(self) -> np.ndarray:
        """Site coordinates in fused layout, (4, G, W)."""
        geo = LatticeGeometry(self.dims)
        return self.fuse_array(geo.coords)


# Axis positions in the 9-D view: group axis and lane axis of direction mu.
_GROUP_AXIS = {0: 4, 1: 3, 2: 2, 3: 1}
_LANE_AXIS = {0: 8, 1: 7, 2: 6, 3: 5}


@dataclass
class FusedField:
    spec: FuseSpec
    data: np.ndarray  # (ncomp, G, W) real
    precision: str = "single"
    boundary: tuple[int, int, int, int] = (1, 1, 1, 1)

    @property
    def width(self):
        return self.spec.width


@dataclass(frozen=True)
class HopInfo:
    direction: int
    sign: int
    fused_axis: bool
    masked_lanes: int
    active_registers: int
    width: int

    @property
    def utilization(self) -> float:
        if self.active_registers == 0:
            return 1.0
        return 1.0 - self.masked_lanes / (self.width * self.active_registers)


def spinor_to_reals(data: np.ndarray) -> np.ndarray:
    """(V, 4, 3) complex -> (V, 24) reals ordered spin, color, (re, im)."""
    return np.stack([data.real, data.imag], axis=-1).reshape(data.shape[0], 2 * int(np.prod(data.shape[1:])))


def reals_to_spinor(reals: np.ndarray) -> np.ndarray:
    r = reals.reshape(reals.shape[0], 4, 3, 2)
    return r[..., 0] + 1j * r[..., 1]


def fuse(field: SpinorField, factors=(4, 4, 1, 1), precision: str | None = None) -> FusedField:
    precision = precision or field.precision
    spec = FuseSpec(field.geometry.dims, factors)
    reals = spinor_to_reals(field.data).astype(REAL_DTYPE[precision])
    return FusedField(spec, spec.fuse_array(reals), precision, field.geometry.boundary)


def unfuse(fused: FusedField) -> SpinorField:
    reals = fused.spec.unfuse_array(fused.data)
    geo = LatticeGeometry(fused.spec.dims, fused.boundary)
    prec = "single" if fused.precision == "half" else fused.precision
    return SpinorField(geo, reals_to_spinor(reals.astype(np.float64)), prec)


def fuse_gauge(links: np.ndarray, factors, dims, precision="single") -> FusedField:
    """Gauge links (V, 4, 3, 3) -> fused field with 72 components (mu, a, b, re/im)."""
    spec = FuseSpec(dims, factors)
    reals = np.stack([links.real, links.imag], axis=-1).reshape(links.shape[0], -1)
    return FusedField(spec, spec.fuse_array(reals.astype(REAL_DTYPE[precision])), precision)


def _edge_mask(spec: FuseSpec, mu: int, sign: int) -> np.ndarray:
    """(G, W) bool: lanes whose neighbor in direction sign*mu leaves the lattice."""
    c = spec.coords()[mu]
    return (c == spec.dims[mu] - 1) if sign > 0 else (c == 0)


def hop_gather(fused: FusedField, direction, sign: int, boundary: str = "dirichlet"):
    """Neighbor data psi(x + sign*mu) in fused layout, plus lane accounting.

    ``boundary='dirichlet'`` zeroes (masks) lanes whose neighbor lies outside
    the lattice, as for hops inside one domain; ``'periodic'`` blends the
    wrapped lanes in, applying the field's boundary phase.
    """
    mu = axis_index(direction)
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    if boundary not in ("dirichlet", "periodic"):
        raise ValueError(f"unknown boundary mode {boundary!r}")
    spec = fused.spec
    arr = spec.view9(fused.data)
    gax, lax = _GROUP_AXIS[mu], _LANE_AXIS[mu]
    fused_axis = spec.factors[mu] > 1
    if not fused_axis:
        out = np.roll(arr, -sign, axis=gax)
    else:
        # rotate lanes inside each register, then blend the edge lane column
        # from the neighboring register along the same axis
        rot = np.roll(arr, -sign, axis=lax)
        from_next = np.roll(rot, -sign, axis=gax)
        edge = spec.factors[mu] - 1 if sign > 0 else 0
        sel = [slice(None)] * 9
        sel[lax] = edge
        out = rot.copy()
        out[tuple(sel)] = from_next[tuple(sel)]
    out = out.reshape(fused.data.shape)
    edge_mask = _edge_mask(spec, mu, sign)
    if boundary == "dirichlet":
        out = np.where(edge_mask[None], 0, out).astype(fused.data.dtype)
        masked = edge_mask
    else:
        phase = fused.boundary[mu]
        if phase != 1:
            out = np.where(edge_mask[None], phase * out, out).astype(fused.data.dtype)
        masked = np.zeros_like(edge_mask)
    active = ~np.all(masked, axis=1)
    info = HopInfo(mu, sign, fused_axis, int(masked[active].sum()), int(active.sum()), spec.width)
    return FusedField(spec, out, fused.precision, fused.boundary), info


def lane_utilization(spec: FuseSpec, direction, sign: int = 1) -> float:
    """SIMD utilization of a Dirichlet hop, from lane accounting."""
    mu = axis_index(direction)
    masked = _edge_mask(spec, mu, sign)
    active = ~np.all(masked, axis=1)
    if not active.any():
        return 1.0
    return 1.0 - masked[active].sum() / (spec.width * active.sum())


def _as_complex(data: np.ndarray, shape) -> np.ndarray:
    """(ncomp, G, W) reals -> complex (shape..., G, W), computing in >= single."""
    d = data.astype(np.promote_types(data.dtype, np.float32))
    d = d.reshape(shape + (2,) + d.shape[1:])
    n = len(shape)
    re = d[(slice(None),) * n + (0,)]
    im = d[(slice(None),) * n + (1,)]
    return re + 1j * im


def _from_complex(c: np.ndarray, dtype) -> np.ndarray:
    n = c.ndim - 2
    r = np.stack([c.real, c.imag], axis=n)
    return r.reshape((-1,) + c.shape[n:]).astype(dtype)


def fused_hopping(psi: FusedField, gauge: FusedField, direction, boundary: str = "periodic") -> FusedField:
    """Forward + backward hopping term of one direction, computed lane-wise."""
    mu = axis_index(direction)
    cdt = np.complex64 if psi.data.dtype != np.float64 else np.complex128
    gauge_mu = FusedField(gauge.spec, gauge.data.reshape(4, 18, *gauge.data.shape[1:])[mu],
                          gauge.precision)
    up, _ = hop_gather(psi, mu, +1, boundary)
    dn, _ = hop_gather(psi, mu, -1, boundary)
    u_dn, _ = hop_gather(gauge_mu, mu, -1, "periodic" if boundary == "periodic" else "dirichlet")
    u = _as_complex(gauge_mu.data, (3, 3)).astype(cdt)
    ub = _as_complex(u_dn.data, (3, 3)).astype(cdt)
    sp = _as_complex(up.data, (4, 3)).astype(cdt)
    sm = _as_complex(dn.data, (4, 3)).astype(cdt)
    pf = HOP_PROJECTORS[mu].astype(cdt)
    pb = HOP_PROJECTORS[4 + mu].astype(cdt)
    fw = np.einsum("st,ab...,tb...->sa...", pf, u, sp)
    bw = np.einsum("st,ba...,tb...->sa...", pb, np.conj(ub), sm)
    res = -0.5 * (fw + bw)
    return FusedField(psi.spec, _from_complex(res, psi.data.dtype), psi.precision, psi.boundary)


@dataclass
class BoundaryBuffer:
    direction: int
    sign: int
    precision: str
    payload: bytes
    n_sites: int
    face_shape: tuple = ()   # extents of the three axes spanning the face

    @property
    def nbytes(self) -> int:
        return len(self.payload)

    def records(self) -> np.ndarray:
        dt = np.dtype(REAL_DTYPE[self.precision]).newbyteorder("<")
        return np.frombuffer(self.payload, dtype=dt).reshape(self.n_sites, NCOMP_SPINOR)


def face_positions(spec: FuseSpec, direction, sign: int):
    """(group, lane) positions of the face sites in face-lexicographic order."""
    mu = axis_index(direction)
    geo = LatticeGeometry(spec.dims)
    coord = geo.coords[:, mu]
    sites = np.flatnonzero(coord == (spec.dims[mu] - 1 if sign > 0 else 0))
    idx = spec.fuse_array(np.arange(geo.volume)[:, None])[0]  # (G, W) site ids
    where = np.empty(geo.volume, dtype=np.int64)
    where[idx.reshape(-1)] = np.arange(idx.size)
    flat = where[sites]
    return flat // spec.width, flat % spec.width


def extract_boundary_aos(fused: FusedField, direction, sign: int) -> BoundaryBuffer:
    """Copy one face into an AOS record buffer: per site 24 reals (spin, color, re/im)."""
    mu = axis_index(direction)
    if sign not in (1, -1):
        raise LayoutError("face sign must be +1 or -1")
    if fused.data.shape[0] != NCOMP_SPINOR:
        raise LayoutError("boundary buffers hold spinor data only")
    g, l = face_positions(fused.spec, mu, sign)
    recs = fused.data[:, g, l].T.astype(np.dtype(REAL_DTYPE[fused.precision]).newbyteorder("<"))
    return BoundaryBuffer(mu, sign, fused.precision, np.ascontiguousarray(recs).tobytes(), len(g),
                          _face_shape(fused.spec, mu))


def _face_shape(spec: FuseSpec, mu: int) -> tuple:
    return tuple(d for a, d in enumerate(spec.dims) if a != mu)


def inject_boundary_aos(buffer: BoundaryBuffer, fused: FusedField) -> FusedField:
    g, l = face_positions(fused.spec, buffer.direction, buffer.sign)
    if (len(g) != buffer.n_sites or buffer.precision != fused.precision
            or buffer.face_shape != _face_shape(fused.spec, buffer.direction)):
        raise LayoutError("boundary buffer does not match this face")
    out = fused.data.copy()
    out[:, g, l] = buffer.records().T
    return FusedField(fused.spec, out, fused.precision, fused.boundary)
