"""Compute/communication ordering that hides halo transfers behind work.

Domains of one rank are processed in numbered groups; boundary data leave
in lettered send events once the domains producing them are finished, and
are needed by a later group of the next iteration.

Construction (the *leading* axis is t if split, else the highest split axis;
T is the rank's domain-grid extent along it):

* group 1: the two leading-axis boundary slabs;
* leading axis only: the interior slabs in three contiguous chunks
  (groups 2-4); send ``a`` after group 1, needed by group 1 next time;
* with further split axes, domains are divided into a first half H1
  (leading coordinate < T/2, plus the leading boundary slabs) and a second
  half H2.  Group 2 holds the remaining H1 domains on a boundary of another
  split axis, group 3 the interior, groups 4 and 5 the H2 boundary
  domains.  Each further axis sends its H1 part after group 2 (needed by
  group 1) and its H2 part after group 5 (needed by group 4).

Letters follow trigger order, ties in axis order x, y, z, t.  Every send
event covers both faces (+ and -) of its axis.
"""
from __future__ import annotations

import string
from dataclasses import dataclass, field

import numpy as np

from ..lattice.geometry import AXES, axis_index
from ..schwarz.decomposition import lex_coords


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class SendEvent:
    name: str
    axis: int
    part: str          # "all", "h1" or "h2"
    trigger: int       # send after this group (1-based)
    consumer: int      # group of the next iteration that needs the data

    def describe(self) -> str:
        return (f"({self.name}) {AXES[self.axis]}-faces [{self.part}] after ({self.trigger}), "
                f"needed by ({self.consumer}) of next iteration")


@dataclass
class CommSchedule:
    split_axes: tuple[int, ...]
    domain_grid: tuple[int, int, int, int]
    groups: list                 # list of domain-id arrays, group k at index k-1
    sends: list                  # SendEvent, in letter order
    leading: int
    variant: str = "overlap"
    first_half: np.ndarray = field(default=None, repr=False)   # bool per domain

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def coords(self) -> np.ndarray:
        return lex_coords(self.domain_grid)

    @property
    def n_domains(self) -> int:
        return int(np.prod(self.domain_grid))

    def group_of(self) -> np.ndarray:
        out = np.zeros(self.n_domains, dtype=np.int64)
        for g, ids in enumerate(self.groups, start=1):
            out[ids] = g
        return out

    def part_mask(self, part: str) -> np.ndarray:
        if part == "all":
            return np.ones(self.n_domains, dtype=bool)
        if part == "h1":
            return self.first_half.copy()
        if part == "h2":
            return ~self.first_half
        raise ScheduleError(f"unknown part {part!r}")

    def face_domains(self, axis: int, sign: int | None = None, part: str = "all") -> np.ndarray:
        """Domain ids on the boundary of ``axis`` (one side, or both if sign is None)."""
        c = self.coords[:, axis]
        edge = self.domain_grid[axis] - 1
        if sign is None:
            on = (c == 0) | (c == edge)
        else:
            on = c == (edge if sign > 0 else 0)
        return np.flatnonzero(on & self.part_mask(part))

    def sends_triggered_by(self, g: int) -> list:
        return [s for s in self.sends if s.trigger == g]

    def sends_consumed_by(self, g: int) -> list:
        return [s for s in self.sends if s.consumer == g]

    def overlap_groups(self, send: SendEvent) -> list[tuple[int, int]]:
        """Groups that run while ``send`` is in flight: (iteration offset, group)."""
        now = [(0, g) for g in range(send.trigger + 1, self.n_groups + 1)]
        nxt = [(1, g) for g in range(1, send.consumer)]
        return now + nxt

    def face_sites(self, send: SendEvent, domain_dims) -> int:
        """Lattice sites carried by one iteration of ``send`` (both faces)."""
        area = int(np.prod(domain_dims)) // int(domain_dims[send.axis])
        n = sum(len(self.face_domains(send.axis, s, send.part)) for s in (1, -1))
        return n * area

    def describe(self) -> str:
        lines = [f"{self.variant} schedule, split axes {''.join(AXES[a] for a in self.split_axes)}, "
                 f"domain grid {'x'.join(map(str, self.domain_grid))}"]
        for g, ids in enumerate(self.groups, start=1):
            lines.append(f"  ({g}) {len(ids)} domains")
        for s in self.sends:
            win = ", ".join(f"{'+' if o else ''}{g}" for o, g in self.overlap_groups(s)) or "none"
            lines.append(f"  {s.describe()}; overlaps {win}")
        return "\n".join(lines)

    def as_record(self) -> dict:
        return {
            "variant": self.variant,
            "split_axes": [AXES[a] for a in self.split_axes],
            "domain_grid": list(self.domain_grid),
            "groups": [[int(i) for i in ids] for ids in self.groups],
            "sends": [
                {"name": s.name, "axis": AXES[s.axis], "part": s.part, "trigger": s.trigger,
                 "consumer": s.consumer,
                 "overlap": [[o, g] for o, g in self.overlap_groups(s)]}
                for s in self.sends
            ],
        }


def _letters(events):
    order = sorted(events, key=lambda e: (e[2], e[0]))   # (axis, part, trigger, consumer)
    if len(order) > len(string.ascii_lowercase):
        raise ScheduleError("too many send events")
    return [SendEvent(string.ascii_lowercase[i], ax, part, trig, cons)
            for i, (ax, part, trig, cons) in enumerate(order)]


def build_schedule(split_axes, domain_grid, variant: str = "overlap", strict: bool = True) -> CommSchedule:
    """Group/send schedule for a rank whose domain grid is ``domain_grid``.

    ``variant="naive"`` sends every non-leading axis after the last group
    (needed by group 1), the textbook ordering without overlap.
    With ``strict`` a schedule whose work falls into a single group is
    rejected; non-strict builds keep empty groups.
    """
    axes = sorted({axis_index(a) for a in split_axes})
    if not axes:
        raise ScheduleError("need at least one split axis")
    grid = tuple(int(g) for g in domain_grid)
    if len(grid) != 4 or min(grid) < 1:
        raise ScheduleError(f"bad domain grid {domain_grid}")
    if variant not in ("overlap", "naive"):
        raise ScheduleError(f"unknown schedule variant {variant!r}")
    lead = 3 if 3 in axes else axes[-1]
    others = [a for a in axes if a != lead]
    coords = lex_coords(grid)
    n = len(coords)
    T = grid[lead]
    lc = coords[:, lead]
    lead_bnd = (lc == 0) | (lc == T - 1)
    first_half = (lc < T / 2) | lead_bnd
    ids = np.arange(n)

    if not others:
        interior = np.unique(lc[~lead_bnd])
        chunks = np.array_split(interior, 3)
        groups = [ids[lead_bnd]] + [ids[np.isin(lc, ch) & ~lead_bnd] for ch in chunks]
        events = [(lead, "all", 1, 1)]
    else:
        other_bnd = np.zeros(n, dtype=bool)
        for a in others:
            other_bnd |= (coords[:, a] == 0) | (coords[:, a] == grid[a] - 1)
        g2 = ids[other_bnd & first_half & ~lead_bnd]
        g3 = ids[~other_bnd & ~lead_bnd]
        tail = ids[other_bnd & ~first_half]
        tail = tail[np.lexsort((tail, lc[tail]))]
        half = (len(tail) + 1) // 2
        groups = [ids[lead_bnd], g2, g3, np.sort(tail[:half]), np.sort(tail[half:])]
        last = len(groups)
        events = [(lead, "all", 1, 1)]
        for a in others:
            if variant == "naive":
                events.append((a, "all", last, 1))
            else:
                events += [(a, "h1", 2, 1), (a, "h2", last, 4)]
    if strict and sum(len(g) > 0 for g in groups) < 2:
        raise ScheduleError(f"domain grid {'x'.join(map(str, grid))} leaves a single compute group; "
                            "nothing to overlap")
    return CommSchedule(tuple(axes), grid, groups, _letters(events), lead, variant, first_half)


def validate_schedule(schedule: CommSchedule) -> list[str]:
    """Dependency problems of a schedule; empty if it is sound."""
    out = []
    n = schedule.n_groups
    gof = schedule.group_of()
    sizes = [len(g) for g in schedule.groups]
    allids = np.concatenate([np.asarray(g, dtype=np.int64) for g in schedule.groups]) if n else np.array([], int)
    if len(allids) != schedule.n_domains or len(np.unique(allids)) != schedule.n_domains:
        out.append("groups do not partition the domains exactly once")
    for s in schedule.sends:
        if not (1 <= s.trigger <= n and 1 <= s.consumer <= n):
            out.append(f"send ({s.name}): group index out of range")
            continue
        if s.axis not in schedule.split_axes:
            out.append(f"send ({s.name}): axis {AXES[s.axis]} is not split")
        dom = schedule.face_domains(s.axis, None, s.part)
        if len(dom):
            if gof[dom].max() > s.trigger:
                out.append(f"send ({s.name}): data produced by group {gof[dom].max()} "
                           f"after the trigger ({s.trigger})")
            if gof[dom].min() < s.consumer:
                out.append(f"send ({s.name}): group {gof[dom].min()} needs the data before "
                           f"the consumer ({s.consumer})")
        window = [g for o, g in schedule.overlap_groups(s) if sizes[g - 1] > 0]
        if not window and len(dom):
            out.append(f"send ({s.name}): no overlap window between trigger ({s.trigger}) "
                       f"and consumer ({s.consumer})")
    # coverage: each boundary domain of each split axis exactly once per iteration
    for a in schedule.split_axes:
        count = np.zeros(schedule.n_domains, dtype=np.int64)
        for s in schedule.sends:
            if s.axis == a:
                count[schedule.face_domains(a, None, s.part)] += 1
        bnd = schedule.face_domains(a, None, "all")
        if (count[bnd] == 0).any():
            out.append(f"coverage: {int((count[bnd] == 0).sum())} boundary domains of axis "
                       f"{AXES[a]} are never sent")
        if (count[bnd] > 1).any():
            out.append(f"coverage: {int((count[bnd] > 1).sum())} boundary domains of axis "
                       f"{AXES[a]} are sent more than once")
    return out


def replace_send(schedule: CommSchedule, name: str, **changes) -> CommSchedule:
    """Copy of ``schedule`` with one send event modified (or removed if changes is {'drop': True})."""
    sends = []
    for s in schedule.sends:
        if s.name != name:
            sends.append(s)
        elif not changes.get("drop"):
            d = dict(axis=s.axis, part=s.part, trigger=s.trigger, consumer=s.consumer)
            d.update(changes)
            sends.append(SendEvent(s.name, **d))
    return CommSchedule(schedule.split_axes, schedule.domain_grid, list(schedule.groups), sends,
                        schedule.leading, schedule.variant, schedule.first_half)
