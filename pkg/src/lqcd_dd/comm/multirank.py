"""In-process multi-rank execution of the preconditioned solve.

Each rank owns a box of the lattice and runs as a generator-based actor that
yields ``Send`` and ``Recv`` requests.  A single-threaded scheduler moves
messages through FIFO channels keyed by (source, destination, tag) and
raises on deadlock.  Boundary data travel as AOS records (24 reals per
site, spin/color/re-im order), one buffer per face and send event.

Within a Schwarz sweep every color phase is one schedule iteration: a rank
solves the domains of the current color group by group, ships the
corrections on its boundary after the trigger groups, and folds in the
neighbors' corrections before the consumer groups of the next phase.
The outer FGMRES-DR sees global vectors; operator applications exchange
full halos.
"""
from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..fgmres import fgmres_dr
from ..lattice.fields import GaugeField
from ..layout import BoundaryBuffer, reals_to_spinor, spinor_to_reals
from ..planner import PartitionPlan
from ..schwarz import Box, SchwarzEngine
from ..schwarz.engine import _SurfaceHop
from ..solve import SolveConfig, SolveResult, solve_single
from ..wilson import CloverField, build_clover, count_flops
from .schedule import CommSchedule, ScheduleError, build_schedule, validate_schedule


class MessageError(RuntimeError):
    pass


class DeadlockError(RuntimeError):
    pass


@dataclass(frozen=True)
class Send:
    dst: int
    tag: tuple
    buffer: BoundaryBuffer


@dataclass(frozen=True)
class Recv:
    src: int
    tag: tuple
    n_sites: int


@dataclass
class RankCounters:
    sent: int = 0
    received: int = 0
    bytes_sent: int = 0
    bytes_received: int = 0
    precond_sent: int = 0
    precond_bytes: int = 0

    def as_record(self) -> dict:
        return dict(self.__dict__)


def _pack(values: np.ndarray, mu: int, sign: int, precision: str) -> BoundaryBuffer:
    dt = np.float32 if precision == "single" else np.float64
    recs = spinor_to_reals(values).astype(np.dtype(dt).newbyteorder("<"))
    return BoundaryBuffer(mu, sign, precision, np.ascontiguousarray(recs).tobytes(), len(values))


def _unpack(buf: BoundaryBuffer) -> np.ndarray:
    return reals_to_spinor(buf.records().astype(np.float64))


@dataclass
class RankState:
    rank: int
    coords: tuple
    box: Box
    engine: SchwarzEngine
    schedule: CommSchedule
    neighbors: dict               # (mu, sign) -> rank id
    counters: RankCounters = field(default_factory=RankCounters)
    _cache: dict = field(default_factory=dict, repr=False)

    def part_face(self, mu: int, sign: int, part: str, color: int) -> np.ndarray:
        """Positions (within the face) of sites in ``part`` domains of ``color``."""
        key = ("pf", mu, sign, part, color)
        if key not in self._cache:
            face = self.box.faces[(mu, sign)]
            owner = self.engine.owner[face.sites]
            mask = self.schedule.part_mask(part)[owner] & (self.engine.color[owner] == color)
            self._cache[key] = np.flatnonzero(mask)
        return self._cache[key]

    def halo_hop(self, mu: int, sign: int, pos: np.ndarray) -> _SurfaceHop:
        """Hop from halo values at face positions ``pos`` into this rank's face sites."""
        key = ("hh", mu, sign, pos.tobytes())
        if key not in self._cache:
            face = self.box.faces[(mu, sign)]
            targets = face.sites[pos]
            self._cache[key] = _SurfaceHop({face.slot: (targets, np.arange(len(pos)))},
                                           self.engine.links).cast(np.complex64)
        return self._cache[key]


class RankEnsemble:
    """Ranks of a partition plan with their boxes, engines and channels."""

    def __init__(self, plan: PartitionPlan, gauge: GaugeField, clover: CloverField, config: SolveConfig,
                 schedule: CommSchedule | str = "overlap", order="forward"):
        geo = gauge.geometry
        if tuple(plan.global_dims) != geo.dims:
            raise ValueError("plan and gauge describe different lattices")
        if config.domain_dims is None:
            raise ValueError("multi-rank runs need a domain decomposition")
        if tuple(config.domain_dims) != tuple(plan.domain_dims):
            raise ValueError("plan and solver use different domain sizes")
        if config.schwarz.residual != "incremental":
            raise ValueError("multi-rank runs use the incremental residual update")
        self.plan = plan
        self.geometry = geo
        self.config = config
        self.order = order
        grid = plan.rank_grid
        infos = plan.ranks
        index = {r.coords: i for i, r in enumerate(infos)}
        split = [mu for mu in range(4) if grid[mu] > 1]
        self.ranks = []
        for i, r in enumerate(infos):
            box = Box(geo, r.offset, r.extents)
            eng = SchwarzEngine(box, gauge, clover, config.params, plan.domain_dims, config.schwarz)
            if isinstance(schedule, CommSchedule):
                sched = schedule
                if sched.domain_grid != eng.local_grid or set(sched.split_axes) != set(split):
                    raise ScheduleError(f"schedule does not match rank {i} "
                                        f"(domain grid {'x'.join(map(str, eng.local_grid))})")
            elif split:
                sched = build_schedule(split, eng.local_grid, variant=schedule, strict=False)
            else:
                sched = None
            if sched is not None:
                bad = [v for v in validate_schedule(sched) if "overlap window" not in v]
                if bad:
                    raise ScheduleError(f"rank {i}: " + "; ".join(bad))
            nbrs = {}
            for mu in split:
                for sign in (1, -1):
                    c = list(r.coords)
                    c[mu] = (c[mu] + sign) % grid[mu]
                    nbrs[(mu, sign)] = index[tuple(c)]
            self.ranks.append(RankState(i, r.coords, box, eng, sched, nbrs))
        self.channels: dict = {}
        self.delivered = 0

    # -- global <-> local --------------------------------------------------
    def scatter(self, v: np.ndarray) -> list:
        return [v[r.box.global_index] for r in self.ranks]

    def gather(self, parts, dtype) -> np.ndarray:
        out = np.zeros((self.geometry.volume, 4, 3), dtype=dtype)
        for r, p in zip(self.ranks, parts):
            out[r.box.global_index] = p
        return out

    # -- scheduler ---------------------------------------------------------
    def _order(self, active, rnd):
        if self.order == "forward":
            return list(active)
        if self.order == "reverse":
            return list(reversed(active))
        seq = list(active)
        rnd.shuffle(seq)
        return seq

    def run(self, actors: dict, max_steps: int = 10_000_000) -> dict:
        """Drive generator actors until all finish; returns their return values."""
        rnd = random.Random(self.order if isinstance(self.order, int) else 0)
        waiting = {r: None for r in actors}      # pending Recv per rank
        inbox = {r: None for r in actors}        # value to send into the generator
        results = {}
        active = list(actors)
        steps = 0
        while active:
            progressed = False
            for r in self._order(active, rnd):
                gen = actors[r]
                while True:
                    req = waiting[r]
                    if req is not None:
                        q = self.channels.get((req.src, r, req.tag))
                        if not q:
                            break
                        msg = q.popleft()
                        if msg.n_sites != req.n_sites:
                            raise MessageError(f"rank {r}: message {req.tag} from {req.src} carries "
                                               f"{msg.n_sites} sites, expected {req.n_sites}")
                        c = self.ranks[r].counters
                        c.received += 1
                        c.bytes_received += msg.nbytes
                        self.delivered += 1
                        inbox[r] = msg
                        waiting[r] = None
                    steps += 1
                    if steps > max_steps:
                        raise DeadlockError("no completion within the step budget")
                    try:
                        req = gen.send(inbox[r])
                    except StopIteration as stop:
                        results[r] = stop.value
                        active.remove(r)
                        progressed = True
                        break
                    inbox[r] = None
                    progressed = True
                    if isinstance(req, Send):
                        self.channels.setdefault((r, req.dst, req.tag), deque()).append(req.buffer)
                        c = self.ranks[r].counters
                        c.sent += 1
                        c.bytes_sent += req.buffer.nbytes
                        if req.tag and req.tag[0] == "pc":
                            c.precond_sent += 1
                            c.precond_bytes += req.buffer.nbytes
                    elif isinstance(req, Recv):
                        waiting[r] = req
                    else:
                        raise MessageError(f"rank {r} yielded {req!r}")
            if not progressed:
                stuck = {r: waiting[r].tag for r in active if waiting[r] is not None}
                raise DeadlockError(f"ranks blocked on receives: {stuck}")
        leftover = sum(len(q) for q in self.channels.values())
        if leftover:
            raise MessageError(f"{leftover} messages were never received")
        return results

    # -- actors ------------------------------------------------------------
    def _operator_actor(self, st: RankState, x: np.ndarray, precision: str):
        faces = st.box.faces
        for (mu, sign), face in faces.items():
            yield Send(st.neighbors[(mu, sign)], ("op", mu, sign), _pack(x[face.sites], mu, sign, precision))
        halo = np.zeros((st.box.n_halo, 4, 3), dtype=x.dtype)
        for (mu, sign), face in faces.items():
            # the neighbor beyond face (mu, sign) sends its opposite face
            buf = yield Recv(st.neighbors[(mu, sign)], ("op", mu, -sign), face.n_sites)
            lo = face.halo_base - st.box.volume
            halo[lo: lo + face.n_sites] = _unpack(buf)
        return st.engine.apply_local(x, halo)

    def _precond_actor(self, st: RankState, r: np.ndarray):
        eng, sched = st.engine, st.schedule
        sp = eng.sparams
        r = np.asarray(r, dtype=np.complex64)
        z = np.zeros_like(r)
        rho = r.copy()
        eng.stats.calls += 1
        n_phases = 2 * sp.n_schwarz
        for phase in range(n_phases + 1):
            color = phase % 2
            final = phase == n_phases        # drain the last corrections
            delta = np.zeros_like(rho)
            for g in range(1, sched.n_groups + 1):
                if phase > 0:
                    for ev in sched.sends_consumed_by(g):
                        yield from self._receive(st, ev, 1 - color, rho)
                if final:
                    continue
                ids = eng.domains(color, sched.groups[g - 1])
                eng.solve_domains(ids, rho, z, delta)
                for ev in sched.sends_triggered_by(g):
                    for sign in (1, -1):
                        pos = st.part_face(ev.axis, sign, ev.part, color)
                        vals = delta[st.box.faces[(ev.axis, sign)].sites[pos]]
                        yield Send(st.neighbors[(ev.axis, sign)], ("pc", ev.name, ev.axis, sign),
                                   _pack(vals, ev.axis, sign, "single"))
        return z

    def _receive(self, st: RankState, ev, sender_color: int, rho: np.ndarray):
        for sign in (-1, 1):
            # data for my face (axis, sign) come from that neighbor's opposite face
            pos = st.part_face(ev.axis, sign, ev.part, 1 - sender_color)
            buf = yield Recv(st.neighbors[(ev.axis, sign)], ("pc", ev.name, ev.axis, -sign), len(pos))
            if buf.direction != ev.axis or buf.sign != -sign:
                raise MessageError(f"rank {st.rank}: face mismatch for send ({ev.name})")
            vals = _unpack(buf).astype(np.complex64)
            st.halo_hop(ev.axis, sign, pos).apply(rho, vals)

    # -- global operations -------------------------------------------------
    def apply_operator(self, v: np.ndarray) -> np.ndarray:
        precision = "single" if v.dtype == np.complex64 else "double"
        parts = self.scatter(v)
        res = self.run({st.rank: self._operator_actor(st, p, precision)
                        for st, p in zip(self.ranks, parts)})
        return self.gather([res[i] for i in range(len(self.ranks))], v.dtype)

    def apply_precond(self, r: np.ndarray) -> np.ndarray:
        parts = self.scatter(np.asarray(r, dtype=np.complex64))
        res = self.run({st.rank: self._precond_actor(st, p) for st, p in zip(self.ranks, parts)})
        return self.gather([res[i] for i in range(len(self.ranks))], np.complex64)

    def rank_records(self) -> list:
        out = []
        for st in self.ranks:
            s = st.engine.stats
            out.append({"rank": st.rank, "coords": list(st.coords), "extents": list(st.box.extents),
                        "domains": len(st.engine.domain_sites), "block_solves": s.block_solves,
                        "mr_breakdowns": s.breakdowns, **st.counters.as_record()})
        return out


@dataclass
class MultirankResult(SolveResult):
    ranks: list = field(default_factory=list)


def run_multirank(plan: PartitionPlan, gauge: GaugeField, b: np.ndarray, config: SolveConfig = SolveConfig(),
                  schedule: CommSchedule | str = "overlap", clover: CloverField | None = None,
                  order="forward") -> MultirankResult:
    """Preconditioned solve with the plan's ranks as communicating actors.

    A one-rank plan has no communication and takes the reference path.
    ``order`` ("forward", "reverse" or an integer seed) sets the actor
    interleaving; results do not depend on it.
    """
    if clover is None:
        clover = build_clover(gauge, config.params)
    if plan.n_ranks == 1:
        res = solve_single(gauge, b, config, clover)
        return MultirankResult(res.x, res.stats, res.info, [{"rank": 0, **RankCounters().as_record()}])
    ens = RankEnsemble(plan, gauge, clover, config, schedule, order)
    flops = count_flops(config.params).total * gauge.geometry.volume
    x, stats = fgmres_dr(ens.apply_operator, ens.apply_precond, b, config.fgmres, op_flops=flops)
    site_ops = sum(st.engine.stats.site_ops for st in ens.ranks)
    stats.flop_estimate += site_ops * count_flops(config.params).total
    info = {"ranks": plan.n_ranks, "messages": ens.delivered,
            "precond_messages": sum(st.counters.precond_sent for st in ens.ranks),
            "precond_bytes": sum(st.counters.precond_bytes for st in ens.ranks)}
    return MultirankResult(x, stats, info, ens.rank_records())
