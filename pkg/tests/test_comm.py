import math
import random

import numpy as np
import pytest

from lqcd_dd.comm import (DeadlockError, MessageError, RankEnsemble, Recv, ScheduleError, Send,
                          bandwidth_threshold, build_schedule, replace_send, run_multirank,
                          simulate_timeline, validate_schedule, window_time)
from lqcd_dd.comm.timeline import BYTES_PER_SITE
from lqcd_dd.lattice import SpinorField
from lqcd_dd.layout import BoundaryBuffer
from lqcd_dd.planner import plan_uniform
from lqcd_dd.schwarz import SchwarzParams, SchwarzPreconditioner, decompose
from lqcd_dd.solve import SolveConfig, solve_single
from lqcd_dd.wilson import apply_dirac

T_GRID = (2, 2, 2, 8)
TZ_GRID = (2, 2, 4, 8)


def windows(schedule):
    return {s.name: schedule.overlap_groups(s) for s in schedule.sends}


# -- schedule construction -------------------------------------------------

def test_t_only_schedule():
    s = build_schedule("t", T_GRID)
    assert s.n_groups == 4
    assert [e.name for e in s.sends] == ["a"]
    assert windows(s)["a"] == [(0, 2), (0, 3), (0, 4)]
    assert validate_schedule(s) == []


def test_t_z_schedule_windows():
    s = build_schedule("tz", TZ_GRID)
    assert s.n_groups == 5
    w = windows(s)
    assert w["b"] == [(0, 3), (0, 4), (0, 5)]
    assert w["c"] == [(1, 1), (1, 2), (1, 3)]
    b, c = s.sends[1], s.sends[2]
    assert (b.trigger, c.trigger) == (2, 5)
    assert b.axis == c.axis == 2
    assert validate_schedule(s) == []


@pytest.mark.parametrize("axes,grid", [("t", T_GRID), ("tz", TZ_GRID), ("xt", (4, 2, 2, 4)),
                                       ("xyzt", (4, 4, 4, 4)), ("z", (2, 2, 6, 2))])
def test_groups_partition_and_faces_covered(axes, grid):
    s = build_schedule(axes, grid)
    ids = np.sort(np.concatenate(s.groups))
    assert np.array_equal(ids, np.arange(s.n_domains))
    for a in s.split_axes:
        sent = np.concatenate([s.face_domains(a, None, e.part) for e in s.sends if e.axis == a])
        assert np.array_equal(np.sort(sent), s.face_domains(a, None, "all"))
    assert validate_schedule(s) == []


def test_naive_variant_has_no_overlap_for_non_leading_axes():
    s = build_schedule("tz", TZ_GRID, variant="naive")
    for e in s.sends:
        if e.axis != 3:
            assert s.overlap_groups(e) == []
            assert window_time(s, e, [1.0] * s.n_groups) == 0
    bad = validate_schedule(s)
    assert any("no overlap window" in v for v in bad)


def test_c_consumed_by_group_one_is_a_violation():
    s = replace_send(build_schedule("tz", TZ_GRID), "c", consumer=1)
    bad = validate_schedule(s)
    assert len(bad) == 1 and "(c)" in bad[0] and "no overlap window" in bad[0]


def test_dropped_send_breaks_coverage():
    s = replace_send(build_schedule("tz", TZ_GRID), "b", drop=True)
    assert any(v.startswith("coverage") and "axis z" in v for v in validate_schedule(s))


def test_early_trigger_is_a_violation():
    # the first-half z-boundary domains live in group 2, so (b) cannot leave after (1)
    s = replace_send(build_schedule("tz", TZ_GRID), "b", trigger=1)
    assert any("after the trigger" in v for v in validate_schedule(s))


def test_schedule_errors():
    with pytest.raises(ScheduleError):
        build_schedule("", TZ_GRID)
    with pytest.raises(ScheduleError):
        build_schedule("t", (2, 2, 2, 0))
    with pytest.raises(ScheduleError):
        build_schedule("t", T_GRID, variant="eager")
    with pytest.raises(ScheduleError, match="single compute group"):
        build_schedule("t", (1, 1, 1, 2))
    assert build_schedule("t", (1, 1, 1, 2), strict=False).n_groups == 4


def test_schedule_record_and_describe():
    s = build_schedule("tz", TZ_GRID)
    rec = s.as_record()
    assert rec["split_axes"] == ["z", "t"]
    assert [e["name"] for e in rec["sends"]] == ["a", "b", "c"]
    assert rec["sends"][2]["overlap"] == [[1, 1], [1, 2], [1, 3]]
    assert "(c) z-faces [h2] after (5)" in s.describe()


# -- timeline --------------------------------------------------------------

def test_timeline_zero_latency_infinite_bandwidth():
    s = build_schedule("tz", TZ_GRID)
    tl = simulate_timeline(s, [1.0] * 5, bandwidth=math.inf, latency=0.0)
    assert tl.idle == 0
    assert tl.makespan == pytest.approx(4 * 5.0)
    assert tl.overlapping() == []


def test_timeline_deficit_closed_form_t_only():
    s = build_schedule("t", T_GRID)
    costs = [2.0, 1.0, 3.0, 1.5]
    total = sum(costs)
    transit = 2 * total
    tl = simulate_timeline(s, costs, bandwidth=math.inf, latency=transit, iterations=5)
    # next group 1 starts when (a) lands: idle = transit - window
    deficit = transit - (total - costs[0])
    assert tl.idle_per_iteration[0] == 0
    for idle in tl.idle_per_iteration[1:]:
        assert idle == pytest.approx(deficit)
    assert tl.makespan == pytest.approx(5 * total + 4 * deficit)


def test_timeline_deficit_single_late_send():
    s = build_schedule("tz", TZ_GRID)
    costs = [1.0, 2.0, 3.0, 0.5, 0.7]
    c = s.sends[2]
    late = 0.25
    transit = {e.name: 0.0 for e in s.sends}
    transit["c"] = window_time(s, c, costs) + late
    tl = simulate_timeline(s, costs, transit=transit)
    assert tl.idle_per_iteration[1:] == pytest.approx([late] * 3)
    waits = tl.lane("wait")
    assert all(w.label == "wait(4)" for w in waits)


def test_timeline_zero_idle_when_transit_fits_window():
    rnd = random.Random(11)
    for trial in range(100):
        axes, grid = rnd.choice([("t", T_GRID), ("tz", TZ_GRID), ("xt", (4, 2, 2, 4)),
                                 ("yzt", (2, 4, 4, 4))])
        s = build_schedule(axes, grid)
        costs = [rnd.uniform(0.05, 3.0) for _ in range(s.n_groups)]
        transit = {e.name: rnd.uniform(0, 0.999) * window_time(s, e, costs) for e in s.sends}
        tl = simulate_timeline(s, costs, transit=transit, iterations=rnd.randint(2, 6))
        assert tl.violations == []
        assert tl.steady_idle == 0, trial
        assert tl.idle == 0, trial
        assert tl.overlapping() == []


def test_bandwidth_threshold_crossing():
    s = build_schedule("tz", TZ_GRID)
    costs = [2e-5, 1.5e-5, 3e-5, 1e-5, 1e-5]
    bw = bandwidth_threshold(s, costs, domain_dims=(4, 4, 4, 4))
    assert 0 < bw < math.inf
    at = simulate_timeline(s, costs, bandwidth=bw * (1 + 1e-9), domain_dims=(4, 4, 4, 4))
    below = simulate_timeline(s, costs, bandwidth=bw * 0.98, domain_dims=(4, 4, 4, 4))
    assert at.steady_idle == 0
    assert below.steady_idle > 0
    # independently: the binding send's transit equals its window at threshold
    slack = min(window_time(s, e, costs) - 5.5e-6 - s.face_sites(e, (4, 4, 4, 4)) * BYTES_PER_SITE / 2 / bw
                for e in s.sends)
    assert slack == pytest.approx(0, abs=1e-18)


def test_threshold_infinite_when_latency_exceeds_window():
    s = build_schedule("t", T_GRID)
    assert bandwidth_threshold(s, [1e-7] * 4) == math.inf


def test_face_sites_count():
    s = build_schedule("tz", TZ_GRID)
    a, b, c = s.sends
    # t-faces: 2*2*4 domains per side, each face 4^3 sites
    assert s.face_sites(a, (4, 4, 4, 4)) == 2 * 16 * 64
    assert s.face_sites(b, (4, 4, 4, 4)) + s.face_sites(c, (4, 4, 4, 4)) == 2 * 32 * 64


def test_timeline_validation_and_outputs():
    s = build_schedule("t", T_GRID)
    with pytest.raises(ValueError):
        simulate_timeline(s, [1.0] * 3)
    with pytest.raises(ValueError):
        simulate_timeline(s, [0.0] * 4)
    with pytest.raises(ValueError):
        simulate_timeline(s, [1.0] * 4, iterations=1)
    tl = simulate_timeline(s, [1e-6] * 4, latency=1e-5)
    rec = tl.as_record()
    assert rec["iterations"] == 4 and len(rec["idle_per_iteration"]) == 4
    assert rec["steady_idle"] > 0
    chart = tl.gantt(40)
    assert "compute |" in chart and "." in chart


# -- multi-rank execution --------------------------------------------------

FAST = SchwarzParams(n_schwarz=2, n_mr=3)


def face_sites_of_rank(extents):
    return {mu: math.prod(extents) // extents[mu] for mu in range(4)}


@pytest.fixture(scope="module")
def reference_run(acceptance_problem):
    p = acceptance_problem
    return solve_single(p.gauge, p.b, SolveConfig(params=p.params), p.clover)


def test_one_rank_is_bitwise_single(small_problem):
    p = small_problem
    cfg = SolveConfig(params=p.params, schwarz=FAST)
    ref = solve_single(p.gauge, p.b, cfg, p.clover)
    res = run_multirank(plan_uniform(p.geometry.dims, (4, 4, 4, 4), (1, 1, 1, 1)), p.gauge, p.b, cfg,
                        clover=p.clover)
    assert np.array_equal(res.x, ref.x)
    assert res.stats.residual_history == ref.stats.residual_history


@pytest.mark.parametrize("grid", [(1, 1, 1, 2), (2, 1, 1, 2)])
def test_multirank_matches_single_rank(acceptance_problem, reference_run, grid):
    p = acceptance_problem
    res = run_multirank(plan_uniform((8, 8, 8, 8), (4, 4, 4, 4), grid), p.gauge, p.b,
                        SolveConfig(params=p.params), clover=p.clover)
    ref = reference_run
    assert res.stats.converged
    assert res.stats.iterations == ref.stats.iterations
    assert np.linalg.norm(res.x - ref.x) / np.linalg.norm(ref.x) < 1e-5
    diff = np.abs(np.array(res.stats.residual_history) - np.array(ref.stats.residual_history))
    assert diff.max() < 1e-5
    assert res.info["ranks"] == math.prod(grid)


def make_ensemble(prob, grid, schedule="overlap", order="forward", sparams=FAST):
    plan = plan_uniform(prob.geometry.dims, (4, 4, 4, 4), grid)
    cfg = SolveConfig(params=prob.params, schwarz=sparams)
    return RankEnsemble(plan, prob.gauge, prob.clover, cfg, schedule, order)


@pytest.mark.parametrize("grid", [(1, 1, 1, 2), (2, 1, 1, 2), (2, 2, 1, 2), (1, 1, 2, 2)])
def test_precond_matches_single_box(acceptance_problem, grid):
    p = acceptance_problem
    ens = make_ensemble(p, grid)
    single = SchwarzPreconditioner(p.gauge, p.clover, p.params, decompose(p.geometry, (4, 4, 4, 4)), FAST)
    r = p.b.astype(np.complex64)
    want = single(r)
    got = ens.apply_precond(r)
    assert np.linalg.norm(got - want) / np.linalg.norm(want) < 1e-5


@pytest.mark.parametrize("grid", [(1, 1, 1, 2), (2, 1, 1, 2), (2, 2, 1, 2)])
def test_precond_message_counts_and_bytes(acceptance_problem, grid):
    p = acceptance_problem
    ens = make_ensemble(p, grid)
    ens.apply_precond(p.b.astype(np.complex64))
    split = [mu for mu in range(4) if grid[mu] > 1]
    for st in ens.ranks:
        n_events = len(st.schedule.sends)
        # one message per face (+/-) per send event per color phase
        assert st.counters.precond_sent == 2 * FAST.n_schwarz * n_events * 2
        assert st.counters.received == st.counters.sent
        area = face_sites_of_rank(st.box.extents)
        # every face site goes out once per Schwarz iteration (each color once)
        want_bytes = sum(2 * area[mu] for mu in split) * 96 * FAST.n_schwarz
        assert st.counters.precond_bytes == want_bytes
    assert sum(len(q) for q in ens.channels.values()) == 0


def test_message_count_examples(acceptance_problem):
    counts = {}
    for grid in [(1, 1, 1, 2), (2, 1, 1, 2), (2, 2, 1, 2)]:
        ens = make_ensemble(acceptance_problem, grid)
        ens.apply_precond(acceptance_problem.b.astype(np.complex64))
        counts[grid] = {st.counters.precond_sent for st in ens.ranks}
    assert counts == {(1, 1, 1, 2): {8}, (2, 1, 1, 2): {24}, (2, 2, 1, 2): {40}}


def test_operator_exchange_matches_global(acceptance_problem):
    p = acceptance_problem
    ens = make_ensemble(p, (2, 1, 2, 2))
    v = p.b
    want = apply_dirac(p.gauge, p.clover, p.params, SpinorField(p.geometry, v)).data
    assert np.abs(ens.apply_operator(v) - want).max() < 1e-12
    st = ens.ranks[0]
    assert st.counters.sent == 6 and st.counters.received == 6


def test_result_independent_of_actor_order(acceptance_problem):
    r = acceptance_problem.b.astype(np.complex64)
    outs = [make_ensemble(acceptance_problem, (2, 1, 1, 2), order=o).apply_precond(r)
            for o in ("forward", "reverse", 3, 17)]
    for o in outs[1:]:
        assert np.array_equal(o, outs[0])


def test_naive_schedule_gives_same_preconditioner(acceptance_problem):
    r = acceptance_problem.b.astype(np.complex64)
    a = make_ensemble(acceptance_problem, (2, 1, 1, 2)).apply_precond(r)
    b = make_ensemble(acceptance_problem, (2, 1, 1, 2), schedule="naive").apply_precond(r)
    assert np.linalg.norm(a - b) / np.linalg.norm(a) < 1e-6


def test_ensemble_rejects_bad_schedules(acceptance_problem):
    p = acceptance_problem
    with pytest.raises(ScheduleError):
        make_ensemble(p, (1, 1, 1, 2), schedule=build_schedule("tz", (2, 2, 2, 2), strict=False))
    good = build_schedule("t", (2, 2, 2, 1), strict=False)
    broken = replace_send(good, "a", drop=True)
    with pytest.raises(ScheduleError):
        make_ensemble(p, (1, 1, 1, 2), schedule=broken)


def _buf(n):
    return BoundaryBuffer(3, 1, "single", bytes(96 * n), n)


def test_message_size_mismatch_raises(acceptance_problem):
    ens = make_ensemble(acceptance_problem, (1, 1, 1, 2))

    def sender():
        yield Send(1, ("x",), _buf(3))

    def receiver():
        yield Recv(0, ("x",), 4)

    with pytest.raises(MessageError, match="3 sites, expected 4"):
        ens.run({0: sender(), 1: receiver()})


def test_unconsumed_message_raises(acceptance_problem):
    ens = make_ensemble(acceptance_problem, (1, 1, 1, 2))

    def sender():
        yield Send(1, ("x",), _buf(1))

    def idle():
        return None
        yield

    with pytest.raises(MessageError, match="never received"):
        ens.run({0: sender(), 1: idle()})


def test_deadlock_detected(acceptance_problem):
    ens = make_ensemble(acceptance_problem, (1, 1, 1, 2))

    def waiter(src):
        yield Recv(src, ("x",), 1)

    with pytest.raises(DeadlockError, match="blocked"):
        ens.run({0: waiter(1), 1: waiter(0)})


def test_fifo_per_channel(acceptance_problem):
    ens = make_ensemble(acceptance_problem, (1, 1, 1, 2))

    def sender():
        for n in (1, 2, 3):
            yield Send(1, ("x",), _buf(n))

    def receiver():
        got = []
        for n in (1, 2, 3):
            buf = yield Recv(0, ("x",), n)
            got.append(buf.n_sites)
        return got

    out = ens.run({1: receiver(), 0: sender()})
    assert out[1] == [1, 2, 3]
