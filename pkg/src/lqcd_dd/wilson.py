"""Wilson-Clover Dirac operator.

    A psi(x) = (4 + m) psi(x) + C(x) psi(x)
               - 1/2 sum_mu [ (1 - g_mu) U_mu(x) psi(x + mu)
                              + (1 + g_mu) U_mu(x - mu)^dag psi(x - mu) ]

    C(x) = -(c_sw / 2) sum_{mu<nu} sigma_{mu nu} F_{mu nu}(x)

with F the Hermitian, traceless clover-leaf field strength
F = (Q - Q^dag) / 8i.  In the chiral basis C commutes with gamma5, so the
site-local part (4 + m) + C is stored as two Hermitian 6x6 blocks
(spins 0-1 and 2-3, color fastest).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lattice.fields import COMPLEX_DTYPE, GaugeField, SpinorField, dagger, round_to_half
from .lattice.gamma import GAMMA5, HOP_PROJECTORS, sigma
from .lattice.geometry import LatticeGeometry

DENSE_MAX_SITES = 4096


@dataclass(frozen=True)
class OperatorParams:
    mass: float = 0.1
    csw: float = 1.0

    def __post_init__(self):
        if self.csw < 0:
            raise ValueError(f"c_sw must be >= 0, got {self.csw}")

    @property
    def diagonal(self) -> float:
        return 4.0 + self.mass

    @property
    def kappa(self) -> float:
        """Hopping parameter of the equivalent kappa-normalized operator."""
        return 1.0 / (2.0 * (4.0 + self.mass))


@dataclass
class CloverField:
    geometry: LatticeGeometry
    blocks: np.ndarray  # (V, 2, 6, 6)
    precision: str = "double"

    def __post_init__(self):
        if self.precision == "half":
            self.blocks = round_to_half(self.blocks)
        else:
            self.blocks = np.ascontiguousarray(self.blocks, dtype=COMPLEX_DTYPE[self.precision])

    def astype(self, precision):
        return CloverField(self.geometry, self.blocks.copy(), precision)

    def hermiticity_deviation(self) -> float:
        b = self.blocks.astype(np.complex128)
        return float(np.abs(b - dagger(b)).max())

    def site_matrices(self) -> np.ndarray:
        """Full 12x12 site matrices, shape (V, 12, 12)."""
        v = self.geometry.volume
        out = np.zeros((v, 12, 12), dtype=self.blocks.dtype)
        out[:, :6, :6] = self.blocks[:, 0]
        out[:, 6:, 6:] = self.blocks[:, 1]
        return out

    def inverse_blocks(self) -> np.ndarray:
        return np.linalg.inv(self.blocks.astype(np.complex128))


class GeometryMismatch(ValueError):
    pass


def field_strength(gauge: GaugeField) -> np.ndarray:
    """Hermitian traceless clover field strength F[mu, nu], shape (V, 4, 4, 3, 3)."""
    geo = gauge.geometry
    fwd, bwd, _, _ = geo.neighbors
    u = gauge.links.astype(np.complex128)
    f = np.zeros((geo.volume, 4, 4, 3, 3), dtype=np.complex128)
    for mu in range(4):
        for nu in range(mu + 1, 4):
            xm = bwd[:, mu]
            xn = bwd[:, nu]
            xmn = bwd[xm, nu]
            q = u[:, mu] @ u[fwd[:, mu], nu] @ dagger(u[fwd[:, nu], mu]) @ dagger(u[:, nu])
            q += u[:, nu] @ dagger(u[fwd[xm, nu], mu]) @ dagger(u[xm, nu]) @ u[xm, mu]
            q += dagger(u[xm, mu]) @ dagger(u[xmn, nu]) @ u[xmn, mu] @ u[xn, nu]
            q += dagger(u[xn, nu]) @ u[xn, mu] @ u[fwd[xn, mu], nu] @ dagger(u[:, mu])
            fmn = (q - dagger(q)) / 8j
            tr = np.trace(fmn, axis1=1, axis2=2) / 3.0
            fmn = fmn - tr[:, None, None] * np.eye(3)
            f[:, mu, nu] = fmn
            f[:, nu, mu] = -fmn
    return f


def build_clover(gauge: GaugeField, params: OperatorParams, precision: str | None = None) -> CloverField:
    geo = gauge.geometry
    site = np.zeros((geo.volume, 12, 12), dtype=np.complex128)
    if params.csw != 0.0:
        f = field_strength(gauge)
        for mu in range(4):
            for nu in range(mu + 1, 4):
                s = sigma(mu, nu)
                site += np.einsum("st,vab->vsatb", s, f[:, mu, nu]).reshape(-1, 12, 12)
        site *= -0.5 * params.csw
    site += params.diagonal * np.eye(12)
    blocks = np.stack([site[:, :6, :6], site[:, 6:, 6:]], axis=1)
    return CloverField(geo, blocks, precision or gauge.precision)


@dataclass
class HoppingTables:
    """Neighbor indices (V, 8) and phase-weighted links (V, 8, 3, 3).

    Slot mu holds the forward hop U_mu(x) psi(x+mu); slot 4+mu the backward
    hop U_mu(x-mu)^dag psi(x-mu).
    """
    nbr: np.ndarray
    links: np.ndarray
    _cast: dict = field(default_factory=dict, repr=False)

    def links_as(self, dtype) -> np.ndarray:
        dtype = np.dtype(dtype)
        if dtype not in self._cast:
            self._cast[dtype] = self.links.astype(dtype)
        return self._cast[dtype]


def hopping_tables(gauge: GaugeField) -> HoppingTables:
    cached = gauge._cache.get("hopping")
    if cached is not None:
        return cached
    geo = gauge.geometry
    fwd, bwd, fph, bph = geo.neighbors
    u = gauge.links.astype(np.complex128)
    links = np.empty((geo.volume, 8, 3, 3), dtype=np.complex128)
    for mu in range(4):
        links[:, mu] = u[:, mu] * fph[:, mu, None, None]
        links[:, 4 + mu] = dagger(u[bwd[:, mu], mu]) * bph[:, mu, None, None]
    tables = HoppingTables(np.concatenate([fwd, bwd], axis=1), links)
    gauge._cache["hopping"] = tables
    return tables


_PROJ_CACHE: dict = {}


def _projector_matrix(dtype, slots=None) -> np.ndarray:
    """Hop spin projectors flattened to ((k, t), s) for a single matmul."""
    key = (np.dtype(dtype), None if slots is None else tuple(slots))
    if key not in _PROJ_CACHE:
        p = HOP_PROJECTORS if slots is None else HOP_PROJECTORS[list(slots)]
        _PROJ_CACHE[key] = np.ascontiguousarray(p.transpose(0, 2, 1).reshape(-1, 4)).astype(dtype)
    return _PROJ_CACHE[key]


def hop_sum(src: np.ndarray, nbr: np.ndarray, links: np.ndarray, slots=None) -> np.ndarray:
    """-1/2 sum_k P_k links_k src[nbr_k] for every row of ``nbr``.

    ``src`` is (..., N, 4, 3), ``nbr`` (n, K) integer rows into N, ``links``
    (..., n, K, 3, 3).  ``slots`` names which of the 8 hop slots the K columns
    are (default all 8 in order).
    """
    g = src[..., nbr, :, :]                              # (..., n, K, 4, 3)
    c = links @ np.swapaxes(g, -1, -2)                   # (..., n, K, 3[a], 4[t])
    c = np.swapaxes(c, -3, -2)                           # (..., n, 3, K, 4)
    c = c.reshape(c.shape[:-2] + (-1,))                  # (..., n, 3, K*4)
    out = c @ _projector_matrix(src.dtype, slots)        # (..., n, 3, 4)
    out = np.swapaxes(out, -1, -2)
    return (-0.5) * out


def apply_clover(blocks: np.ndarray, psi: np.ndarray) -> np.ndarray:
    shp = psi.shape
    out = blocks @ psi.reshape(shp[:-2] + (2, 6, 1))
    return out.reshape(shp)


def _check_geometry(*objs):
    geos = [o.geometry for o in objs]
    if any(g != geos[0] for g in geos[1:]):
        raise GeometryMismatch("fields live on different geometries")


def apply_dirac(gauge: GaugeField, clover: CloverField, params: OperatorParams,
                psi: SpinorField) -> SpinorField:
    _check_geometry(gauge, clover, psi)
    dtype = psi.data.dtype
    tables = hopping_tables(gauge)
    out = apply_clover(clover.blocks.astype(dtype, copy=False), psi.data)
    out += hop_sum(psi.data, tables.nbr, tables.links_as(dtype))
    return SpinorField(psi.geometry, out, psi.precision)


def hopping_term(gauge: GaugeField, psi: np.ndarray, mu: int) -> np.ndarray:
    """Forward plus backward hopping contribution of direction ``mu`` alone."""
    tables = hopping_tables(gauge)
    slots = (mu, 4 + mu)
    return hop_sum(psi, tables.nbr[:, slots], tables.links_as(psi.dtype)[:, slots], slots)


def apply_gamma5(psi: np.ndarray) -> np.ndarray:
    out = psi.copy()
    out[..., 2:, :] *= -1
    return out


@dataclass
class DenseOperator:
    """Explicit matrix with rows/columns ordered as 12*site + 3*spin + color."""
    matrix: np.ndarray
    geometry: LatticeGeometry
    ordering: str = "site-major, spin, color (index = 12*site + 3*spin + color)"

    def matvec(self, psi: np.ndarray) -> np.ndarray:
        return (self.matrix @ psi.reshape(-1)).reshape(psi.shape)

    def gamma5(self) -> np.ndarray:
        return np.kron(np.eye(self.geometry.volume), np.kron(GAMMA5, np.eye(3)))

    def dump(self, path, cutoff: float = 0.0):
        """Text dump: header line ``# n <dim>``, then ``row col re im`` per nonzero."""
        rows, cols = np.nonzero(np.abs(self.matrix) > cutoff)
        with open(path, "w") as fh:
            fh.write(f"# n {self.matrix.shape[0]}\n# {self.ordering}\n")
            for r, c in zip(rows, cols):
                z = self.matrix[r, c]
                fh.write(f"{r} {c} {z.real:.17g} {z.imag:.17g}\n")


def dense_matrix(gauge: GaugeField, clover: CloverField, params: OperatorParams) -> DenseOperator:
    """Brute-force assembly from the operator definition (independent of hop_sum)."""
    _check_geometry(gauge, clover)
    geo = gauge.geometry
    v = geo.volume
    if v > DENSE_MAX_SITES:
        raise ValueError(f"dense operator refused for {v} sites (limit {DENSE_MAX_SITES})")
    fwd, bwd, fph, bph = geo.neighbors
    u = gauge.links.astype(np.complex128)
    a = np.zeros((v, 12, v, 12), dtype=np.complex128)
    sites = np.arange(v)
    a[sites, :, sites, :] += clover.site_matrices().astype(np.complex128)
    one = np.eye(4)
    from .lattice.gamma import GAMMA
    for mu in range(4):
        fw = np.einsum("st,vab->vsatb", one - GAMMA[mu], u[:, mu]).reshape(v, 12, 12)
        a[sites, :, fwd[:, mu], :] += -0.5 * fph[:, mu, None, None] * fw
        bw = np.einsum("st,vab->vsatb", one + GAMMA[mu], dagger(u[bwd[:, mu], mu])).reshape(v, 12, 12)
        a[sites, :, bwd[:, mu], :] += -0.5 * bph[:, mu, None, None] * bw
    return DenseOperator(a.reshape(12 * v, 12 * v), geo)


# ---------------------------------------------------------------------------
# Flop model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InstrTally:
    mul: int = 0
    add: int = 0
    fma: int = 0

    @property
    def flops(self) -> int:
        return self.mul + self.add + 2 * self.fma

    @property
    def instructions(self) -> int:
        return self.mul + self.add + self.fma

    def __add__(self, other):
        return InstrTally(self.mul + other.mul, self.add + other.add, self.fma + other.fma)

    def __mul__(self, n: int):
        return InstrTally(self.mul * n, self.add * n, self.fma * n)


@dataclass(frozen=True)
class FlopReport:
    convention: str
    total: int
    fma_flops: int
    fma_fraction: float  # FMA instructions / all arithmetic instructions
    breakdown: dict

    def table(self) -> str:
        lines = [f"{'component':<22}{'mul':>6}{'add':>6}{'fma':>6}{'flops':>8}"]
        for name, t in self.breakdown.items():
            lines.append(f"{name:<22}{t.mul:>6}{t.add:>6}{t.fma:>6}{t.flops:>8}")
        lines.append(f"{'total':<22}{'':>18}{self.total:>8}")
        lines.append(f"FMA instruction fraction {self.fma_fraction:.4f}")
        return "\n".join(lines)


# Complex a*b: re = ar*br - ai*bi, im = ar*bi + ai*br -> 2 mul + 2 fma.
CMUL = InstrTally(mul=2, fma=2)
# Complex acc += a*b -> 4 fma.
CMAC = InstrTally(fma=4)
# Real scalar times complex.
RMUL = InstrTally(mul=2)
CADD = InstrTally(add=2)

FLOP_CONVENTIONS = ("hermitian-clover", "full-clover", "hopping")


def _hopping_tally() -> dict:
    row = CMUL + CMAC * 2                       # one row of SU(3) x color vector
    return {
        "spin projection": CADD * 6 * 8,        # 8 half-spinors of 6 complex sums
        "SU(3) x half-spinor": row * 3 * 2 * 8,
        "accumulate": CADD * 12 * 7,            # first hop initializes the sum
    }


def count_flops(params: OperatorParams | None = None, convention: str = "hermitian-clover") -> FlopReport:
    """Analytic per-site flop count of one Wilson-Clover application.

    ``hermitian-clover``: Hermitian 6x6 clover blocks (real diagonal, 15 independent
    off-diagonal entries, each row a real scale plus 5 complex MACs) and a
    final 12-complex combine of site term and hopping sum.
    ``full-clover``: clover blocks treated as general complex 6x6.
    ``hopping``: hopping term alone.
    """
    if convention not in FLOP_CONVENTIONS:
        raise ValueError(f"unknown flop convention {convention!r}; expected {FLOP_CONVENTIONS}")
    params = params or OperatorParams()
    parts = _hopping_tally()
    if convention != "hopping":
        if params.csw == 0.0:
            parts["clover"] = InstrTally()
            parts["mass term + combine"] = InstrTally(fma=24)
        else:
            if convention == "hermitian-clover":
                row = RMUL + CMAC * 5
            else:
                row = CMUL + CMAC * 5
            parts["clover"] = row * 12
            parts["combine"] = CADD * 12
    total = InstrTally()
    for t in parts.values():
        total = total + t
    frac = total.fma / total.instructions if total.instructions else 0.0
    return FlopReport(convention, total.flops, 2 * total.fma, frac, parts)
