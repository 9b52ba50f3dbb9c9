"""Load-balancing model for distributing domains over many-core processors,
rank-layout search, and the hyper-crossbar network model.

With ``Nd`` domains on a processor only ``nd = Nd/2`` (one color) can run
at once, so ``Nc`` cores are busy for a fraction ``x/ceil(x)`` of the time,
``x = Nd / (2 Nc)``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .lattice.geometry import AXES, axis_index


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class MachineModel:
    cores: int = 60            # usable cores per processor (one runs the OS)
    processors: int | None = None
    switch_ports: int = 32
    network_dims: int = 2

    def __post_init__(self):
        if self.cores < 1 or self.switch_ports < 2 or self.network_dims < 1:
            raise ValueError("invalid machine model")


def load_exact(n_domains: int, cores: int = 60) -> Fraction:
    if n_domains < 2 or n_domains % 2:
        raise PlanError(f"domain count must be even and >= 2 (red-black pairs), got {n_domains}")
    if cores < 1:
        raise PlanError("need at least one core")
    x = Fraction(n_domains, 2 * cores)
    return x / math.ceil(x)


def load(n_domains: int, cores: int = 60) -> float:
    """Average core occupancy x/ceil(x), x = Nd/(2 Nc)."""
    return float(load_exact(n_domains, cores))


def rounds(n_domains: int, cores: int) -> int:
    return math.ceil(Fraction(n_domains, 2 * cores))


@dataclass(frozen=True)
class RankInfo:
    coords: tuple[int, ...]
    offset: tuple[int, ...]
    extents: tuple[int, ...]
    n_domains: int
    load: Fraction
    surface_sites: int

    @property
    def nd(self) -> int:
        return self.n_domains // 2


@dataclass(frozen=True)
class PartitionPlan:
    global_dims: tuple[int, int, int, int]
    domain_dims: tuple[int, int, int, int]
    chunks: tuple[tuple[int, ...], ...]   # per axis, local extents in rank order
    cores: int = 60

    def __post_init__(self):
        object.__setattr__(self, "chunks", tuple(tuple(int(c) for c in ax) for ax in self.chunks))
        for mu in range(4):
            ax = self.chunks[mu]
            if sum(ax) != self.global_dims[mu]:
                raise PlanError(f"chunks along {AXES[mu]} sum to {sum(ax)}, not {self.global_dims[mu]}")
            for c in ax:
                if c <= 0 or c % self.domain_dims[mu]:
                    raise PlanError(f"local extent {c} along {AXES[mu]} is not a multiple "
                                    f"of the domain extent {self.domain_dims[mu]}")
        for r in self.ranks:
            if r.n_domains % 2:
                raise PlanError(f"rank {r.coords} holds an odd number of domains ({r.n_domains})")

    @property
    def rank_grid(self) -> tuple[int, ...]:
        return tuple(len(ax) for ax in self.chunks)

    @property
    def n_ranks(self) -> int:
        return int(np.prod(self.rank_grid))

    R = n_ranks

    @property
    def ranks(self) -> list[RankInfo]:
        out = []
        offsets = [np.concatenate([[0], np.cumsum(ax)[:-1]]) for ax in self.chunks]
        for coords in itertools.product(*(range(n) for n in reversed(self.rank_grid))):
            coords = tuple(reversed(coords))  # x fastest
            ext = tuple(self.chunks[mu][coords[mu]] for mu in range(4))
            off = tuple(int(offsets[mu][coords[mu]]) for mu in range(4))
            nd = int(np.prod([e // d for e, d in zip(ext, self.domain_dims)]))
            vol = int(np.prod(ext))
            surf = sum(2 * vol // ext[mu] for mu in range(4) if self.rank_grid[mu] > 1)
            ld = load_exact(nd, self.cores) if nd % 2 == 0 else Fraction(0)
            out.append(RankInfo(coords, off, ext, nd, ld, surf))
        return out

    @property
    def average_load_exact(self) -> Fraction:
        rk = self.ranks
        return sum((r.load for r in rk), Fraction(0)) / len(rk)

    @property
    def average_load(self) -> float:
        return float(self.average_load_exact)

    @property
    def cost_index(self) -> float:
        return self.n_ranks / self.average_load

    @property
    def max_rounds(self) -> int:
        return max(rounds(r.n_domains, self.cores) for r in self.ranks)

    def as_record(self) -> dict:
        return {
            "global_dims": list(self.global_dims),
            "domain_dims": list(self.domain_dims),
            "chunks": [list(ax) for ax in self.chunks],
            "rank_grid": list(self.rank_grid),
            "n_ranks": self.n_ranks,
            "cores": self.cores,
            "average_load": self.average_load,
            "cost_index": self.cost_index,
            "distinct_ranks": [
                {"extents": list(e), "n_domains": nd, "nd": nd // 2, "load": float(ld), "count": n}
                for (e, nd, ld), n in self._distinct().items()
            ],
        }

    def _distinct(self):
        seen = {}
        for r in self.ranks:
            key = (r.extents, r.n_domains, r.load)
            seen[key] = seen.get(key, 0) + 1
        return seen

    def report(self) -> str:
        dims = "x".join(map(str, self.global_dims))
        lines = [f"lattice {dims}, domains {'x'.join(map(str, self.domain_dims))}, "
                 f"{self.n_ranks} ranks ({'x'.join(map(str, self.rank_grid))}), Nc={self.cores}"]
        for (ext, nd, ld), n in self._distinct().items():
            lines.append(f"  {n:6d} x local {'x'.join(map(str, ext))}: Nd={nd} nd={nd // 2} "
                         f"load={float(ld):.1%}")
        lines.append(f"  average load {self.average_load:.1%}, cost index {self.cost_index:.1f}")
        return "\n".join(lines)


def plan_uniform(global_dims, domain_dims, rank_grid, cores: int = 60) -> PartitionPlan:
    chunks = []
    for mu, (L, n) in enumerate(zip(global_dims, rank_grid)):
        if n < 1 or L % n:
            raise PlanError(f"extent {L} along {AXES[mu]} does not split evenly over {n} ranks")
        chunks.append((L // n,) * n)
    return PartitionPlan(tuple(global_dims), tuple(domain_dims), tuple(chunks), cores)


def _partitions_desc(total: int, cap: int):
    """Partitions of ``total`` into parts <= cap, in decreasing lexicographic order."""
    if total == 0:
        yield ()
        return
    for p in range(min(total, cap), 0, -1):
        for rest in _partitions_desc(total - p, p):
            yield (p,) + rest


MAX_CANDIDATES = 2_000_000


def plan_nonuniform(global_dims, domain_dims, cores: int = 60, axis="t",
                    rank_grid=(1, 1, 1, 1)) -> PartitionPlan:
    """Split one axis into unequal domain-multiple chunks.

    ``rank_grid`` gives the uniform reference layout; the other axes keep it.
    Candidates may not need more rounds (ceil(x)) than the uniform layout, so
    time to solution does not grow.  Among them the cost index
    R / average load is minimized; ties go to fewer ranks, then to a smaller
    largest chunk, then to the decreasingly-sorted chunk list that is
    lexicographically largest (as many full-size chunks as possible).
    """
    mu = axis_index(axis)
    uniform = plan_uniform(global_dims, domain_dims, rank_grid, cores)
    L, d = global_dims[mu], domain_dims[mu]
    if L < 2 * d:
        raise PlanError(f"axis {AXES[mu]} extent {L} is below twice the domain extent {d}")
    units = L // d
    per_unit = 1
    for nu in range(4):
        if nu != mu:
            per_unit *= uniform.chunks[nu][0] // domain_dims[nu]
    r_other = uniform.n_ranks // rank_grid[mu]
    max_rounds = uniform.max_rounds

    def chunk_load(u):
        nd = u * per_unit
        if nd % 2 or rounds(nd, cores) > max_rounds:
            return None
        return load_exact(nd, cores)

    loads = {u: chunk_load(u) for u in range(1, units + 1)}
    cap = max((u for u, ld in loads.items() if ld is not None), default=0)
    best_key, best = None, None
    count = 0
    for parts in _partitions_desc(units, cap):
        count += 1
        if count > MAX_CANDIDATES:
            raise PlanError("non-uniform search space too large")
        if any(loads[u] is None for u in parts):
            continue
        n = len(parts)
        total = sum((loads[u] for u in parts), Fraction(0))
        key = (Fraction(r_other * n * n) / total, n, parts[0])
        if best_key is None or key < best_key:
            best_key, best = key, parts
    if best is None:
        raise PlanError(f"no feasible split of axis {AXES[mu]}")
    chunks = list(uniform.chunks)
    chunks[mu] = tuple(u * d for u in best)
    return PartitionPlan(tuple(global_dims), tuple(domain_dims), tuple(chunks), cores)


def cost_compare(a: PartitionPlan, b: PartitionPlan) -> dict:
    """Cost of plan ``a`` relative to plan ``b`` (rank count is the cost proxy)."""
    if a.global_dims != b.global_dims:
        raise PlanError("plans describe different lattices")
    ratio = a.n_ranks / b.n_ranks
    return {
        "rank_ratio": ratio,
        "cost_reduction": 1.0 - ratio,
        "ranks": [a.n_ranks, b.n_ranks],
        "average_load": [a.average_load, b.average_load],
        "cost_index": [a.cost_index, b.cost_index],
        "max_surface_sites": [max(r.surface_sites for r in a.ranks), max(r.surface_sites for r in b.ranks)],
    }


def hxbar_max_nodes(p: int, d: int) -> int:
    if p < 2 or d < 1:
        raise ValueError("need p >= 2 switch ports and d >= 1 dimensions")
    n = p ** d
    if n >= 2 ** 63:
        raise OverflowError(f"hyper-crossbar size {p}^{d} overflows")
    return n


def hxbar_hops(a, b, ports: int | None = None) -> int:
    """Switch hops between nodes of a hyper-crossbar: 0, 1 (shared switch) or 2."""
    a, b = tuple(a), tuple(b)
    if len(a) != len(b):
        raise ValueError("node coordinates of different dimensionality")
    for c in a + b:
        if c < 0 or (ports is not None and c >= ports):
            raise ValueError(f"coordinate {c} outside the crossbar grid")
    diff = sum(x != y for x, y in zip(a, b))
    return min(diff, 2)
