"""Flexible GMRES with deflated restarts (FGMRES-DR).

The flexible Arnoldi relation A Z_m = V_{m+1} Hbar_m keeps the
preconditioned vectors Z, so the preconditioner may change from one
iteration to the next.  At a restart with ``deflation = k > 0`` the k
harmonic Ritz vectors of smallest magnitude, together with the current
least-squares residual vector, span the first k + 1 basis vectors of the
next cycle (GMRES-DR recipe).  The small least-squares problem is kept in
QR form by Givens rotations; after a deflated restart the dense
(k+1) x k leading block is triangularized by rotations too.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class FgmresParams:
    restart: int = 16
    deflation: int = 4
    tol: float = 1e-8
    max_iter: int = 1000
    precision: str = "double"
    reorth_threshold: float = 1e-3

    def __post_init__(self):
        if not 0 <= self.deflation < self.restart:
            raise ValueError("need 0 <= deflation < restart")
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.precision not in ("single", "double"):
            raise ValueError(f"unknown outer precision {self.precision!r}")

    @property
    def dtype(self):
        return np.complex64 if self.precision == "single" else np.complex128


@dataclass
class SolveStats:
    iterations: int = 0
    residual_history: list = field(default_factory=list)  # recursive, relative to |b|
    cycle_recursive: list = field(default_factory=list)
    cycle_true: list = field(default_factory=list)
    true_residual: float = float("nan")
    operator_applications: int = 0
    precond_applications: int = 0
    reorthogonalizations: int = 0
    converged: bool = False
    lucky_breakdown: bool = False
    cycles: int = 0
    flop_estimate: float = 0.0

    def as_record(self) -> dict:
        return {
            "iterations": self.iterations,
            "cycles": self.cycles,
            "converged": self.converged,
            "lucky_breakdown": self.lucky_breakdown,
            "true_residual": self.true_residual,
            "operator_applications": self.operator_applications,
            "precond_applications": self.precond_applications,
            "flop_estimate": self.flop_estimate,
            "residual_history": [float(r) for r in self.residual_history],
        }


def true_residual(op: Callable, x: np.ndarray, b: np.ndarray) -> float:
    """|b - A x| / |b| with double accumulation."""
    b = np.asarray(b)
    ax = np.asarray(op(x))
    r = b.astype(np.complex128) - ax.astype(np.complex128)
    nb = np.linalg.norm(b.astype(np.complex128).ravel())
    if nb == 0:
        return 0.0
    return float(np.linalg.norm(r.ravel()) / nb)


def _givens(a: complex, b: complex):
    """Rotation (c real, s complex) with [c s; -conj(s) c] [a; b] = [rho; 0]."""
    if b == 0:
        return 1.0, 0.0
    if a == 0:
        return 0.0, 1.0
    r = np.hypot(abs(a), abs(b))
    return abs(a) / r, (a / abs(a)) * np.conj(b) / r


class _GivensQR:
    """Incremental QR of the Hessenberg-like least-squares matrix."""

    def __init__(self, size: int):
        self.rots: list[tuple[int, int, float, complex]] = []
        self.R = np.zeros((size + 1, size), dtype=np.complex128)
        self.g = np.zeros(size + 1, dtype=np.complex128)

    def _rotate(self, vec, i, l, c, s):
        a, b = vec[i], vec[l]
        vec[i] = c * a + s * b
        vec[l] = -np.conj(s) * a + c * b

    def start(self, hbar: np.ndarray, rhs: np.ndarray):
        """Triangularize a dense (k+1) x k block and its right-hand side."""
        k = hbar.shape[1]
        self.rots = []
        self.R[:] = 0
        self.g[:] = 0
        self.R[: k + 1, :k] = hbar
        self.g[: k + 1] = rhs
        for col in range(k):
            for l in range(col + 1, k + 1):
                c, s = _givens(self.R[col, col], self.R[l, col])
                for j in range(col, k):
                    col_vec = self.R[:, j]
                    self._rotate(col_vec, col, l, c, s)
                self._rotate(self.g, col, l, c, s)
                self.R[l, col] = 0.0
                self.rots.append((col, l, c, s))

    def add_column(self, j: int, h: np.ndarray) -> float:
        """Append column j (entries rows 0..j+1); return the new residual norm."""
        col = np.zeros(self.R.shape[0], dtype=np.complex128)
        col[: j + 2] = h
        for i, l, c, s in self.rots:
            self._rotate(col, i, l, c, s)
        c, s = _givens(col[j], col[j + 1])
        self._rotate(col, j, j + 1, c, s)
        col[j + 1] = 0.0
        self._rotate(self.g, j, j + 1, c, s)
        self.rots.append((j, j + 1, c, s))
        self.R[:, j] = col
        return float(abs(self.g[j + 1]))

    def solve(self, n: int) -> np.ndarray:
        from scipy.linalg import solve_triangular
        return solve_triangular(self.R[:n, :n], self.g[:n])


def _harmonic_ritz(hbar: np.ndarray, k: int) -> np.ndarray:
    """k harmonic Ritz vectors (m x k) of smallest |theta| from Hbar (m+1 x m)."""
    m = hbar.shape[1]
    h = hbar[:m, :m]
    beta = hbar[m, m - 1]
    em = np.zeros(m, dtype=np.complex128)
    em[-1] = 1.0
    f = np.linalg.solve(h.conj().T, em)
    theta, vecs = np.linalg.eig(h + abs(beta) ** 2 * np.outer(f, em))
    order = np.argsort(np.abs(theta), kind="stable")[:k]
    return vecs[:, order]


def fgmres_dr(op: Callable, precond: Callable | None, b: np.ndarray,
              params: FgmresParams = FgmresParams(), x0: np.ndarray | None = None,
              callback: Callable | None = None, op_flops: float = 0.0):
    """Solve A x = b with right-preconditioned FGMRES-DR.

    ``op`` and ``precond`` map arrays shaped like ``b`` to arrays of that shape.
    ``callback(cycle, x)`` is called at the end of every cycle.
    Returns ``(x, SolveStats)``.
    """
    shape = np.shape(b)
    dt = params.dtype
    bv = np.asarray(b, dtype=np.complex128).ravel()
    n = bv.size
    stats = SolveStats()
    bnorm = np.linalg.norm(bv)
    if not np.isfinite(bnorm):
        raise SolverError("non-finite right-hand side")
    x = np.zeros(n, dtype=dt) if x0 is None else np.asarray(x0, dtype=dt).ravel().copy()
    if bnorm == 0:
        stats.converged = True
        stats.true_residual = 0.0
        stats.residual_history = [0.0]
        return np.zeros(shape, dtype=dt), stats

    m, k = params.restart, params.deflation

    def A(v):
        stats.operator_applications += 1
        out = np.asarray(op(v.reshape(shape)), dtype=dt).ravel()
        if not np.all(np.isfinite(out)):
            raise SolverError("operator produced NaN/Inf")
        return out

    def M(v):
        if precond is None:
            return v.copy()
        stats.precond_applications += 1
        out = np.asarray(precond(v.reshape(shape)), dtype=dt).ravel()
        if not np.all(np.isfinite(out)):
            raise SolverError("preconditioner produced NaN/Inf")
        return out

    def residual(xv):
        return bv.astype(dt) - A(xv)

    r = residual(x) if x0 is not None else bv.astype(dt)
    beta = np.linalg.norm(r)
    stats.residual_history.append(float(beta / bnorm))
    V = np.zeros((m + 1, n), dtype=dt)
    Z = np.zeros((m, n), dtype=dt)
    H = np.zeros((m + 1, m), dtype=np.complex128)
    c = np.zeros(m + 1, dtype=np.complex128)
    V[0] = r / beta
    c[0] = beta
    j0 = 0
    qr = _GivensQR(m)
    qr.start(H[:1, :0], c[:1])
    rel = beta / bnorm
    if rel <= params.tol:
        stats.converged = True

    while not stats.converged and stats.iterations < params.max_iter:
        j = j0
        done = False
        while j < m and stats.iterations < params.max_iter:
            Z[j] = M(V[j])
            w = A(Z[j])
            h = np.zeros(j + 2, dtype=np.complex128)
            for i in range(j + 1):
                hij = np.vdot(V[i], w)
                h[i] += hij
                w = w - hij.astype(dt) * V[i]
            wn = np.linalg.norm(w)
            if wn > 0 and np.abs(V[: j + 1].conj() @ w).max() / wn > params.reorth_threshold:
                stats.reorthogonalizations += 1
                for i in range(j + 1):
                    hij = np.vdot(V[i], w)
                    h[i] += hij
                    w = w - hij.astype(dt) * V[i]
                wn = np.linalg.norm(w)
            h[j + 1] = wn
            H[: j + 2, j] = h
            stats.iterations += 1
            res = qr.add_column(j, h)
            rel = res / bnorm
            stats.residual_history.append(float(rel))
            j += 1
            if wn <= 1e-14 * max(1.0, np.abs(h).max()):
                stats.lucky_breakdown = True
                done = True
                break
            V[j] = w / wn
            if rel <= params.tol:
                done = True
                break
        # end of cycle: update the iterate
        y = qr.solve(j)
        x = x + (y.astype(dt) @ Z[:j])
        stats.cycles += 1
        r = residual(x)
        true_rel = float(np.linalg.norm(r) / bnorm)
        stats.cycle_recursive.append(float(rel))
        stats.cycle_true.append(true_rel)
        if callback is not None:
            callback(stats.cycles, x.reshape(shape).copy())
        log.debug("cycle %d: %d iterations, recursive %.3e, true %.3e",
                  stats.cycles, stats.iterations, rel, true_rel)
        if true_rel <= params.tol or stats.lucky_breakdown:
            stats.converged = true_rel <= params.tol or stats.lucky_breakdown
            break
        if stats.iterations >= params.max_iter:
            break
        if k > 0 and j == m and not done:
            s = c - H @ np.concatenate([y, np.zeros(m - j)])
            G = _harmonic_ritz(H, k)
            P = np.zeros((m + 1, k + 1), dtype=np.complex128)
            P[:m, :k] = G
            P[:, k] = s
            Q, _ = np.linalg.qr(P)
            Hk = Q.conj().T @ H @ Q[:m, :k]
            ck = Q.conj().T @ s
            V[: k + 1] = (Q.T.astype(dt)) @ V
            Z[:k] = (Q[:m, :k].T.astype(dt)) @ Z
            H[:] = 0
            c[:] = 0
            H[: k + 1, :k] = Hk
            c[: k + 1] = ck
            qr.start(Hk, ck)
            j0 = k
        else:
            beta = np.linalg.norm(r)
            V[:] = 0
            H[:] = 0
            c[:] = 0
            V[0] = r / beta
            c[0] = beta
            qr.start(H[:1, :0], c[:1])
            j0 = 0
        rel = true_rel

    stats.true_residual = stats.cycle_true[-1] if stats.cycle_true else float(rel)
    stats.converged = stats.converged or stats.true_residual <= params.tol
    # 8 real flops per complex multiply-add over n entries, two passes per basis vector
    stats.flop_estimate = stats.operator_applications * op_flops + stats.iterations * 16.0 * n * (m + 1)
    return x.reshape(shape), stats
