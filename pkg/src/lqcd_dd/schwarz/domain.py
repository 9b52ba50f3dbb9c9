"""Block operators on batches of domains and the even-odd MR block solver.

All domains of one batch share a shape, so every operation runs on arrays
with a leading domain axis; per-domain scalars (MR step lengths, norms) are
kept separate, which makes a batched solve identical to solving the domains
one at a time.  Hops that leave a domain are dropped (Dirichlet boundary).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..wilson import _projector_matrix
from .box import Box


class StorageOverflowError(ValueError):
    pass


class _Store:
    """Complex array kept in single or half (binary16 pairs) precision."""

    def __init__(self, values: np.ndarray, precision: str):
        self.precision = precision
        if precision == "half":
            pair = np.stack([values.real, values.imag], axis=-1)
            with np.errstate(over="ignore"):
                half = pair.astype(np.float16)
            if not np.all(np.isfinite(half)):
                raise StorageOverflowError("value outside binary16 range while compressing domain data")
            self._data = half
        elif precision == "single":
            self._data = np.ascontiguousarray(values, dtype=np.complex64)
        else:
            raise ValueError(f"unsupported domain storage precision {precision!r}")

    def get(self) -> np.ndarray:
        if self.precision == "half":
            f = self._data.astype(np.float32)
            return f[..., 0] + 1j * f[..., 1]
        return self._data

    @property
    def nbytes(self) -> int:
        return self._data.nbytes


def _batched_hop(src: np.ndarray, flat_nbr: np.ndarray, links: np.ndarray) -> np.ndarray:
    """-1/2 sum_k P_k L_k src[nbr_k] with per-domain neighbor rows.

    ``src`` (n, N, 4, 3); a zero sentinel row is appended per domain and
    ``flat_nbr`` (n, m, 8) already indexes the flattened (n*(N+1)) array.
    """
    n, N = src.shape[:2]
    ext = np.zeros((n, N + 1, 4, 3), dtype=src.dtype)
    ext[:, :N] = src
    g = ext.reshape(n * (N + 1), 4, 3)[flat_nbr]            # (n, m, 8, 4, 3)
    c = links @ np.swapaxes(g, -1, -2)                        # (n, m, 8, 3, 4)
    c = np.swapaxes(c, -3, -2).reshape(n, flat_nbr.shape[1], 3, 32)
    out = c @ _projector_matrix(src.dtype)
    return -0.5 * np.swapaxes(out, -1, -2)


def _clover(blocks: np.ndarray, x: np.ndarray) -> np.ndarray:
    shp = x.shape
    return (blocks @ x.reshape(shp[:-2] + (2, 6, 1))).reshape(shp)


def _dot(a, b):
    """Per-domain <a, b> = sum conj(a) b with double accumulation."""
    n = a.shape[0]
    return (np.conj(a) * b).reshape(n, -1).sum(axis=1, dtype=np.complex128)


@dataclass
class MRResult:
    x: np.ndarray          # (n, Vd, 4, 3) approximate block solution
    residual: np.ndarray   # (n, Vd, 4, 3) block residual b - A_BB x
    history: np.ndarray    # (n, n_mr + 1) residual norms
    breakdown: np.ndarray  # (n,) bool


class DomainOperator:
    """Block-diagonal part of the operator on a batch of domains of a box.

    ``domain_sites`` (n, Vd) are box-local site indices, each row in
    domain-local lexicographic order.  ``links`` is the box link table and
    ``clover`` the (V_box, 2, 6, 6) site blocks.
    """

    def __init__(self, box: Box, links: np.ndarray, clover: np.ndarray,
                 domain_sites: np.ndarray, storage: str = "single"):
        self.box = box
        self.sites = np.asarray(domain_sites)
        self.storage = storage
        n, vd = self.sites.shape
        self.n, self.vd = n, vd
        v = box.volume

        owner = np.full(v, -1, dtype=np.int64)
        pos = np.full(v, -1, dtype=np.int64)
        for d in range(n):
            owner[self.sites[d]] = d
            pos[self.sites[d]] = np.arange(vd)
        nb = box.nbr[self.sites]                               # (n, vd, 8)
        local = nb < v
        nb_c = np.where(local, nb, 0)
        inside = local & (owner[nb_c] == np.arange(n)[:, None, None])
        self.inside = inside
        nb_pos = np.where(inside, pos[nb_c], -1)

        parity = box.global_coords[self.sites].sum(axis=-1) % 2   # (n, vd)
        self.pos_e = np.stack([np.flatnonzero(p == 0) for p in parity])
        self.pos_o = np.stack([np.flatnonzero(p == 1) for p in parity])
        ne, no = self.pos_e.shape[1], self.pos_o.shape[1]
        self.ne, self.no = ne, no
        # domain-local position -> index within its parity list
        par_idx = np.empty((n, vd), dtype=np.int64)
        for d in range(n):
            par_idx[d, self.pos_e[d]] = np.arange(ne)
            par_idx[d, self.pos_o[d]] = np.arange(no)

        lk = links[self.sites] * inside[..., None, None]        # (n, vd, 8, 3, 3)
        rows = np.arange(n)[:, None, None]

        def table(from_pos, n_to):
            p = np.take_along_axis(nb_pos, from_pos[..., None], axis=1)
            ins = p >= 0
            target = np.where(ins, par_idx[rows, np.where(ins, p, 0)], n_to)
            return target + rows * (n_to + 1)

        self._nbr_eo = table(self.pos_e, no)
        self._nbr_oe = table(self.pos_o, ne)
        self._nbr_full = np.where(nb_pos >= 0, nb_pos, vd) + rows * (vd + 1)
        take = lambda a, p: np.take_along_axis(a, p.reshape(p.shape + (1,) * (a.ndim - 2)), axis=1)
        self._l_eo = _Store(take(lk, self.pos_e), storage)
        self._l_oe = _Store(take(lk, self.pos_o), storage)
        self._l_full = _Store(lk, storage)
        cl = clover[self.sites]                                   # (n, vd, 2, 6, 6)
        self._cl = _Store(cl, storage)
        self._cl_e = _Store(take(cl, self.pos_e), storage)
        self._clinv_o = _Store(np.linalg.inv(take(cl, self.pos_o).astype(np.complex128)), storage)

    def compressed(self, storage: str) -> "DomainOperator":
        """Copy with gauge/clover data re-stored at ``storage`` precision."""
        new = object.__new__(DomainOperator)
        new.__dict__.update(self.__dict__)
        new.storage = storage
        for name in ("_l_eo", "_l_oe", "_l_full", "_cl", "_cl_e", "_clinv_o"):
            setattr(new, name, _Store(getattr(self, name).get(), storage))
        return new

    @property
    def nbytes(self) -> int:
        return sum(getattr(self, k).nbytes for k in ("_l_full", "_cl"))

    # -- operator pieces ---------------------------------------------------
    def apply_block(self, x: np.ndarray) -> np.ndarray:
        """A_BB x on full domain vectors (n, vd, 4, 3)."""
        x = x.astype(np.complex64, copy=False)
        return _clover(self._cl.get(), x) + _batched_hop(x, self._nbr_full, self._l_full.get())

    def hop_eo(self, x_o):
        return _batched_hop(x_o, self._nbr_eo, self._l_eo.get())

    def hop_oe(self, x_e):
        return _batched_hop(x_e, self._nbr_oe, self._l_oe.get())

    def clinv_o(self, x_o):
        return _clover(self._clinv_o.get(), x_o)

    def apply_schur(self, x_e: np.ndarray) -> np.ndarray:
        """(A_ee - A_eo A_oo^-1 A_oe) x_e."""
        return _clover(self._cl_e.get(), x_e) - self.hop_eo(self.clinv_o(self.hop_oe(x_e)))

    def split(self, x):
        return (np.take_along_axis(x, self.pos_e[..., None, None], axis=1),
                np.take_along_axis(x, self.pos_o[..., None, None], axis=1))

    def merge(self, x_e, x_o):
        out = np.empty((self.n, self.vd, 4, 3), dtype=x_e.dtype)
        np.put_along_axis(out, self.pos_e[..., None, None], x_e, axis=1)
        np.put_along_axis(out, self.pos_o[..., None, None], x_o, axis=1)
        return out

    # -- block solver ------------------------------------------------------
    def mr_solve(self, b: np.ndarray, n_mr: int = 5, eo: bool = True) -> MRResult:
        """Minimal-residual iteration x <- x + alpha r, alpha = <Ar, r>/<Ar, Ar>, from x = 0.

        With ``eo`` the iteration runs on the even-site Schur complement and
        the odd sites are reconstructed exactly afterwards.
        """
        if n_mr < 1:
            raise ValueError("n_mr must be >= 1")
        b = np.asarray(b, dtype=np.complex64)
        if not np.all(np.isfinite(b)):
            raise FloatingPointError("non-finite right-hand side in block solve")
        if eo:
            b_e, b_o = self.split(b)
            rhs = b_e - self.hop_eo(self.clinv_o(b_o))
            op = self.apply_schur
        else:
            rhs = b
            op = self.apply_block
        x = np.zeros_like(rhs)
        r = rhs.copy()
        hist = np.empty((self.n, n_mr + 1))
        hist[:, 0] = np.sqrt(_dot(r, r).real)
        broken = np.zeros(self.n, dtype=bool)
        shape = (self.n,) + (1,) * (r.ndim - 1)
        for k in range(n_mr):
            ar = op(r)
            den = _dot(ar, ar).real
            num = _dot(ar, r)
            bad = (den == 0) & (hist[:, k] > 0)
            broken |= bad
            alpha = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
            alpha = alpha.astype(np.complex64).reshape(shape)
            x += alpha * r
            r -= alpha * ar
            hist[:, k + 1] = np.sqrt(_dot(r, r).real)
        if eo:
            x_o = self.clinv_o(b_o - self.hop_oe(x))
            full = self.merge(x, x_o)
            res = self.merge(r, np.zeros_like(x_o))
        else:
            full, res = x, r
        return MRResult(full, res, hist, broken)


def mr_solve_domain(dop: DomainOperator, rhs: np.ndarray, n_mr: int = 5, eo: bool = True) -> MRResult:
    return dop.mr_solve(rhs, n_mr, eo)


def compress_domain_fields(dop: DomainOperator, target: str = "half") -> DomainOperator:
    return dop.compressed(target)
