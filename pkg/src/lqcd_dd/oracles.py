"""Self-checks on small lattices against independent references.

Each check returns an ``OracleResult``; the cli ``oracle`` command runs them
all and exits non-zero if any fails.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .lattice import LatticeGeometry, Rng, SpinorField, generate_gauge
from .lattice.gamma import GAMMA
from .layout import fuse, unfuse
from .schwarz import SchwarzParams, SchwarzPreconditioner, decompose
from .wilson import OperatorParams, apply_dirac, apply_gamma5, build_clover, dense_matrix


@dataclass(frozen=True)
class OracleResult:
    name: str
    value: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value < self.tol)

    def as_record(self) -> dict:
        return {"check": self.name, "value": self.value, "tol": self.tol, "passed": self.passed}


def dense_oracle(dims=(2, 2, 2, 2), seed: int = 3, params=OperatorParams(0.1, 1.0)) -> OracleResult:
    """Column-by-column comparison of apply_dirac with the assembled matrix."""
    geo = LatticeGeometry(dims)
    gauge = generate_gauge("random", geo, Rng(seed))
    clover = build_clover(gauge, params)
    mat = dense_matrix(gauge, clover, params).matrix
    n = 12 * geo.volume
    cols = np.empty((n, n), dtype=np.complex128)
    for j in range(n):
        e = np.zeros(n, dtype=np.complex128)
        e[j] = 1.0
        cols[:, j] = apply_dirac(gauge, clover, params, SpinorField(geo, e.reshape(-1, 4, 3))).data.ravel()
    err = np.linalg.norm(cols - mat) / np.linalg.norm(mat)
    return OracleResult(f"dense operator {'x'.join(map(str, dims))}", float(err), 1e-12)


def gamma5_hermiticity(dims=(2, 2, 2, 4), seed: int = 4, params=OperatorParams(0.1, 1.0)) -> OracleResult:
    """<phi, g5 A psi> = <g5 A phi, psi> on random vectors."""
    geo = LatticeGeometry(dims)
    gauge = generate_gauge("random", geo, Rng(seed))
    clover = build_clover(gauge, params)
    rng = Rng(seed + 100)
    phi = rng.complex_normal((geo.volume, 4, 3))
    psi = rng.complex_normal((geo.volume, 4, 3))
    A = lambda v: apply_dirac(gauge, clover, params, SpinorField(geo, v)).data
    lhs = np.vdot(phi, apply_gamma5(A(psi)))
    rhs = np.vdot(apply_gamma5(A(phi)), psi)
    return OracleResult("gamma5-hermiticity", float(abs(lhs - rhs) / abs(lhs)), 1e-10)


def free_symbol(p, mass: float) -> np.ndarray:
    """12x12 momentum-space free operator: (4 + m - sum cos p) + i sum gamma_mu sin p_mu."""
    s = (4.0 + mass - np.cos(p).sum()) * np.eye(4, dtype=np.complex128)
    for mu in range(4):
        s = s + 1j * np.sin(p[mu]) * GAMMA[mu]
    return np.kron(s, np.eye(3))


def free_dispersion(dims=(4, 4, 4, 4), mass: float = 0.1, boundary=(1, 1, 1, -1)) -> OracleResult:
    """Every plane wave on the lattice against the analytic free symbol."""
    geo = LatticeGeometry(dims, boundary)
    params = OperatorParams(mass, 1.0)
    gauge = generate_gauge("free", geo)
    clover = build_clover(gauge, params)
    x = geo.coords.astype(float)
    rng = Rng(9)
    worst = 0.0
    for n in itertools.product(*(range(L) for L in dims)):
        p = np.array([(2 * np.pi * n[mu] + (np.pi if boundary[mu] < 0 else 0.0)) / dims[mu]
                      for mu in range(4)])
        u = rng.complex_normal(12)
        wave = np.exp(1j * (x @ p))[:, None] * u[None, :]
        got = apply_dirac(gauge, clover, params, SpinorField(geo, wave.reshape(-1, 4, 3))).data
        want = np.exp(1j * (x @ p))[:, None] * (free_symbol(p, mass) @ u)[None, :]
        worst = max(worst, float(np.abs(got.reshape(-1, 12) - want).max() / np.abs(want).max()))
    return OracleResult(f"free dispersion {'x'.join(map(str, dims))}", worst, 1e-10)


def layout_roundtrip(dims=(8, 4, 4, 4), seed: int = 5) -> OracleResult:
    geo = LatticeGeometry(dims)
    psi = SpinorField(geo, Rng(seed).complex_normal((geo.volume, 4, 3)), "single")
    back = unfuse(fuse(psi, (4, 4, 1, 1)))
    same = np.array_equal(back.data.view(np.uint32), psi.data.view(np.uint32))
    return OracleResult("fuse/unfuse bitwise roundtrip", 0.0 if same else 1.0, 0.5)


def schwarz_linearity(dims=(8, 8, 8, 8), seed: int = 6, sparams=SchwarzParams()) -> OracleResult:
    """|M(a r1 + b r2) - a M(r1) - b M(r2)| / |a r1 + b r2| for the Schwarz map.

    MR step lengths depend on the residual, so the defect is set by how far
    the sweep is from A^-1; with 16 sweeps of 5 MR steps it is far below 1e-5.
    """
    geo = LatticeGeometry(dims)
    params = OperatorParams(0.1, 1.0)
    gauge = generate_gauge("weak", geo, Rng(seed), eps=0.1)
    clover = build_clover(gauge, params)
    pre = SchwarzPreconditioner(gauge, clover, params, decompose(geo, (4, 4, 4, 4)), sparams)
    rng = Rng(seed + 1)
    r1 = rng.complex_normal((geo.volume, 4, 3))
    r2 = rng.complex_normal((geo.volume, 4, 3))
    a, b = 0.7 - 0.2j, -1.3 + 0.5j
    lhs = pre(a * r1 + b * r2).astype(np.complex128)
    rhs = a * pre(r1).astype(np.complex128) + b * pre(r2).astype(np.complex128)
    defect = np.linalg.norm(lhs - rhs) / np.linalg.norm(a * r1 + b * r2)
    return OracleResult("Schwarz linearity", float(defect), 1e-5)


def run_all() -> list[OracleResult]:
    return [dense_oracle((2, 2, 2, 2)), dense_oracle((2, 2, 2, 4)), gamma5_hermiticity(),
            free_dispersion(), layout_roundtrip(), schwarz_linearity()]
