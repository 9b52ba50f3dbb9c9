"""Field containers, SU(3) utilities and test gauge configurations."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import LatticeGeometry
from .rng import Rng

PRECISIONS = ("double", "single", "half")
COMPLEX_DTYPE = {"double": np.complex128, "single": np.complex64, "half": np.complex64}
SU3_TOL = {"double": 1e-12, "single": 1e-6, "half": 4e-3}
MAX_REDRAWS = 100


class DegenerateDrawError(RuntimeError):
    pass


def check_precision(precision: str) -> str:
    if precision not in PRECISIONS:
        raise ValueError(f"unknown precision {precision!r}; expected one of {PRECISIONS}")
    return precision


def round_to_half(values: np.ndarray) -> np.ndarray:
    """Round complex values through binary16 storage, returning complex64."""
    re = values.real.astype(np.float16).astype(np.float32)
    im = values.imag.astype(np.float16).astype(np.float32)
    return (re + 1j * im).astype(np.complex64)


def dagger(m: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(m, -1, -2))


def su3_deviation(u: np.ndarray) -> tuple[float, float]:
    """Max-norm of U^dag U - I and max |det U - 1| over a batch of matrices."""
    u = np.asarray(u, dtype=np.complex128)
    unit = np.abs(dagger(u) @ u - np.eye(3)).max()
    det = np.abs(np.linalg.det(u) - 1.0).max()
    return float(unit), float(det)


def is_su3(u: np.ndarray, tol: float = 1e-12) -> bool:
    unit, det = su3_deviation(u)
    return unit < tol and det < tol


def _gram_schmidt_su3(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rows 1, 2 orthonormalized; row 3 = conj(r1 x r2) so that det = 1.

    Returns the matrices and a mask of draws too close to linear dependence.
    """
    r1 = v[:, 0]
    n1 = np.linalg.norm(r1, axis=1)
    r1 = r1 / n1[:, None]
    r2 = v[:, 1] - np.sum(np.conj(r1) * v[:, 1], axis=1)[:, None] * r1
    n2 = np.linalg.norm(r2, axis=1)
    r2 = r2 / n2[:, None]
    r3 = np.conj(np.cross(r1, r2))
    bad = (n1 < 1e-6) | (n2 < 1e-6 * np.linalg.norm(v[:, 1], axis=1))
    return np.stack([r1, r2, r3], axis=1), bad


def random_su3(rng: Rng, n: int | None = None) -> np.ndarray:
    """Haar-like random SU(3) matrices from Gaussian complex rows.

    Returns a ``(3, 3)`` matrix if ``n`` is None, else ``(n, 3, 3)``.
    Degenerate draws are replaced; more than MAX_REDRAWS retries raises.
    """
    count = 1 if n is None else int(n)
    out, bad = _gram_schmidt_su3(rng.complex_normal((count, 2, 3)))
    tries = 0
    while bad.any():
        tries += 1
        if tries > MAX_REDRAWS:
            raise DegenerateDrawError("could not draw a non-degenerate SU(3) matrix")
        idx = np.flatnonzero(bad)
        redo, still = _gram_schmidt_su3(rng.complex_normal((len(idx), 2, 3)))
        out[idx] = redo
        bad[:] = False
        bad[idx] = still
    return out[0] if n is None else out


def random_algebra(rng: Rng, n: int) -> np.ndarray:
    """Random traceless Hermitian 3x3 matrices (generators of su(3), times -i)."""
    x = rng.complex_normal((n, 3, 3))
    h = 0.5 * (x + dagger(x))
    tr = np.trace(h, axis1=1, axis2=2).real / 3.0
    return h - tr[:, None, None] * np.eye(3)


def expi_hermitian(h: np.ndarray, eps: float) -> np.ndarray:
    """exp(i eps H) for Hermitian H via eigendecomposition."""
    w, v = np.linalg.eigh(h)
    return (v * np.exp(1j * eps * w)[:, None, :]) @ dagger(v)


@dataclass
class GaugeField:
    geometry: LatticeGeometry
    links: np.ndarray  # (V, 4, 3, 3)
    precision: str = "double"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        check_precision(self.precision)
        shape = (self.geometry.volume, 4, 3, 3)
        if self.links.shape != shape:
            raise ValueError(f"links must have shape {shape}, got {self.links.shape}")
        if self.precision == "half":
            self.links = round_to_half(self.links)
        else:
            self.links = np.ascontiguousarray(self.links, dtype=COMPLEX_DTYPE[self.precision])

    def astype(self, precision: str) -> "GaugeField":
        return GaugeField(self.geometry, self.links.copy(), precision)

    def check(self) -> tuple[float, float]:
        return su3_deviation(self.links.reshape(-1, 3, 3))

    def plaquette(self) -> float:
        """Average real trace of the plaquette divided by 3."""
        fwd = self.geometry.neighbors[0]
        u = self.links.astype(np.complex128)
        total = 0.0
        for mu in range(4):
            for nu in range(mu + 1, 4):
                p = u[:, mu] @ u[fwd[:, mu], nu] @ dagger(u[fwd[:, nu], mu]) @ dagger(u[:, nu])
                total += np.trace(p, axis1=1, axis2=2).real.sum()
        return total / (6 * 3 * self.geometry.volume)


@dataclass
class SpinorField:
    geometry: LatticeGeometry
    data: np.ndarray  # (V, 4, 3)
    precision: str = "double"

    def __post_init__(self):
        check_precision(self.precision)
        shape = (self.geometry.volume, 4, 3)
        if self.data.shape != shape:
            raise ValueError(f"spinor data must have shape {shape}, got {self.data.shape}")
        self.data = np.ascontiguousarray(self.data, dtype=COMPLEX_DTYPE[self.precision])

    @classmethod
    def zeros(cls, geometry, precision="double"):
        return cls(geometry, np.zeros((geometry.volume, 4, 3)), precision)

    @classmethod
    def random(cls, geometry, rng: Rng, precision="double"):
        return cls(geometry, rng.complex_normal((geometry.volume, 4, 3)), precision)

    def norm2(self) -> float:
        return float(np.vdot(self.data, self.data).real)

    def __add__(self, other):
        return SpinorField(self.geometry, self.data + other.data, self.precision)

    def __sub__(self, other):
        return SpinorField(self.geometry, self.data - other.data, self.precision)

    def __rmul__(self, alpha):
        return SpinorField(self.geometry, alpha * self.data, self.precision)


def generate_gauge(kind: str, geometry: LatticeGeometry, rng: Rng | None = None,
                   eps: float = 0.0, precision: str = "double") -> GaugeField:
    """Test configurations: ``free`` (unit links), ``random`` (i.i.d. SU(3)),
    ``weak`` (exp(i eps H), H random traceless Hermitian)."""
    n = geometry.volume * 4
    if kind == "free":
        links = np.broadcast_to(np.eye(3, dtype=np.complex128), (n, 3, 3)).copy()
    elif kind == "random":
        links = random_su3(_need(rng), n)
    elif kind == "weak":
        if eps < 0:
            raise ValueError(f"weak-field eps must be >= 0, got {eps}")
        if eps == 0:
            links = np.broadcast_to(np.eye(3, dtype=np.complex128), (n, 3, 3)).copy()
        else:
            links = expi_hermitian(random_algebra(_need(rng), n), eps)
    else:
        raise ValueError(f"unknown gauge kind {kind!r}")
    return GaugeField(geometry, links.reshape(geometry.volume, 4, 3, 3), precision)


def _need(rng):
    if rng is None:
        raise ValueError("this gauge kind needs an Rng")
    return rng
