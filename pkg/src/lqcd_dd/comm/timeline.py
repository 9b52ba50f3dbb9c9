"""Discrete-event timeline of one rank running a schedule.

All ranks of a uniform plan behave identically, so a single rank stands for
the machine: its own sends, mirrored, are the messages it receives.  A
message takes ``latency + bytes / bandwidth``; messages travel
independently (the network pipelines them).  A group starts once the
previous group has finished and every message it consumes from the
previous iteration has arrived; the difference is idle time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .schedule import CommSchedule, validate_schedule

LATENCY = 5.5e-6        # s, zero-size message latency
BANDWIDTH = 6.5e9       # bytes/s
BYTES_PER_SITE = 24 * 4  # single-precision spinor


@dataclass
class TimelineEvent:
    lane: str          # "compute", "send" or "wait"
    label: str
    iteration: int
    start: float
    end: float


@dataclass
class Timeline:
    events: list = field(default_factory=list)
    idle_per_iteration: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    iterations: int = 0

    @property
    def idle(self) -> float:
        return float(sum(self.idle_per_iteration))

    @property
    def steady_idle(self) -> float:
        """Idle time of the last iteration."""
        return float(self.idle_per_iteration[-1]) if self.idle_per_iteration else 0.0

    @property
    def makespan(self) -> float:
        return max((e.end for e in self.events if e.lane == "compute"), default=0.0)

    def lane(self, name: str) -> list:
        return [e for e in self.events if e.lane == name]

    def overlapping(self) -> list:
        """Pairs of compute/wait events on the rank that overlap in time."""
        seq = sorted(self.lane("compute") + self.lane("wait"), key=lambda e: (e.start, e.end))
        return [(a, b) for a, b in zip(seq, seq[1:]) if b.start < a.end - 1e-15]

    def as_record(self) -> dict:
        return {
            "iterations": self.iterations,
            "makespan": self.makespan,
            "idle": self.idle,
            "steady_idle": self.steady_idle,
            "idle_per_iteration": list(self.idle_per_iteration),
            "violations": list(self.violations),
            "events": [{"lane": e.lane, "label": e.label, "iteration": e.iteration,
                        "start": e.start, "end": e.end} for e in self.events],
        }

    def gantt(self, width: int = 72) -> str:
        """Plain-text chart: one row per lane, group numbers / send letters as glyphs."""
        span = max((e.end for e in self.events), default=0.0)
        if span <= 0:
            return "(empty timeline)"
        scale = width / span
        rows = []
        for lane in ("compute", "wait", "send"):
            line = [" "] * width
            for e in self.lane(lane):
                a = min(width - 1, int(e.start * scale))
                b = max(a + 1, min(width, int(math.ceil(e.end * scale))))
                glyph = "." if lane == "wait" else e.label[0]
                for i in range(a, b):
                    line[i] = glyph
            rows.append(f"{lane:>7} |{''.join(line)}|")
        rows.append(f"{'':>7}  0{'':>{width - 12}}{span:.3e} s")
        return "\n".join(rows)


def simulate_timeline(schedule: CommSchedule, costs, bandwidth: float = BANDWIDTH,
                      latency: float = LATENCY, domain_dims=(4, 4, 4, 4), iterations: int = 4,
                      bytes_per_site: int = BYTES_PER_SITE, transit=None) -> Timeline:
    """Simulate ``iterations`` sweeps of ``schedule`` with per-group compute ``costs``.

    ``transit`` (optional dict name -> seconds) overrides the message model.
    """
    costs = [float(c) for c in costs]
    if len(costs) != schedule.n_groups:
        raise ValueError(f"need {schedule.n_groups} group costs, got {len(costs)}")
    if min(costs) < 0 or sum(costs) <= 0:
        raise ValueError("group costs must be non-negative and not all zero")
    if iterations < 2:
        raise ValueError("simulate at least two iterations")
    if bandwidth <= 0 or latency < 0:
        raise ValueError("bandwidth must be positive and latency non-negative")

    def transit_time(s):
        if transit is not None and s.name in transit:
            return float(transit[s.name])
        nbytes = schedule.face_sites(s, domain_dims) * bytes_per_site / 2  # per face message
        return latency + nbytes / bandwidth

    tl = Timeline(violations=validate_schedule(schedule), iterations=iterations)
    t = 0.0
    arrivals = {}          # (iteration, send name) -> arrival time
    for it in range(iterations):
        idle = 0.0
        for g in range(1, schedule.n_groups + 1):
            if it > 0:
                need = [arrivals[(it - 1, s.name)] for s in schedule.sends_consumed_by(g)]
                ready = max(need, default=t)
                if ready > t:
                    tl.events.append(TimelineEvent("wait", f"wait({g})", it, t, ready))
                    idle += ready - t
                    t = ready
            tl.events.append(TimelineEvent("compute", str(g), it, t, t + costs[g - 1]))
            t += costs[g - 1]
            for s in schedule.sends_triggered_by(g):
                arr = t + transit_time(s)
                arrivals[(it, s.name)] = arr
                tl.events.append(TimelineEvent("send", s.name, it, t, arr))
        tl.idle_per_iteration.append(idle)
    return tl


def window_time(schedule: CommSchedule, send, costs) -> float:
    """Compute time available to hide ``send``: the groups it overlaps."""
    return float(sum(costs[g - 1] for _, g in schedule.overlap_groups(send)))


def bandwidth_threshold(schedule: CommSchedule, costs, latency: float = LATENCY,
                        domain_dims=(4, 4, 4, 4), bytes_per_site: int = BYTES_PER_SITE) -> float:
    """Smallest bandwidth for which every transit fits its overlap window.

    Below it the steady state has idle time; ``inf`` if some window is not
    longer than the latency.
    """
    need = 0.0
    for s in schedule.sends:
        nbytes = schedule.face_sites(s, domain_dims) * bytes_per_site / 2
        if nbytes == 0:
            continue
        slack = window_time(schedule, s, costs) - latency
        if slack <= 0:
            return float("inf")
        need = max(need, nbytes / slack)
    return need
