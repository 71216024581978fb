from __future__ import annotations

import random

import pytest
from simkit import make_dag, make_sim, submit_many

from igtsim.dagwrap import NodeKind
from igtsim.executor import NodeState
from igtsim.ftsh import RetrySpec
from igtsim.gridsim import (
    FailureModel,
    RngStreams,
    SimClock,
    SimulationError,
    Site,
    TransferChannel,
    merge_windows,
    simulate_transfer,
)


def test_clock_orders_by_time_then_insertion():
    clock = SimClock()
    clock.schedule(5, "late")
    clock.schedule(3, "a")
    clock.schedule(3, "b")
    assert [clock.advance().kind for _ in range(3)] == ["a", "b", "late"]
    assert clock.now == 5
    assert clock.advance() is None


def test_clock_rejects_past_and_skips_cancelled():
    clock = SimClock()
    clock.schedule(10, "x")
    clock.advance()
    with pytest.raises(SimulationError):
        clock.schedule(9.5, "past")
    ev = clock.schedule(11, "gone")
    clock.cancel(ev)
    assert len(clock) == 0
    assert clock.advance() is None


def test_advance_respects_until_inclusive():
    clock = SimClock()
    clock.schedule(4, "edge")
    clock.schedule(4.5, "after")
    assert clock.advance(until=4).kind == "edge"
    assert clock.advance(until=4) is None


def test_rng_streams_are_independent_and_reproducible():
    a, b = RngStreams(7), RngStreams(7)
    a("transfer_hang").random()  # drawing on one stream leaves the others untouched
    assert a("runtime").random() == b("runtime").random()
    assert RngStreams(8)("runtime").random() != RngStreams(7)("runtime").random()


def test_transfer_arithmetic():
    ch = TransferChannel("m1", "s1", bandwidth=10, latency=1, hang_probability=0)
    rng = random.Random(0)
    assert simulate_transfer(ch, 500, rng) == 51.0
    assert simulate_transfer(ch, 0, rng) == 1.0
    hang = TransferChannel("m1", "s1", hang_probability=1.0)
    assert simulate_transfer(hang, 500, rng) is None
    with pytest.raises(SimulationError):
        simulate_transfer(ch, -1, rng)


def test_channel_and_failure_validation():
    with pytest.raises(SimulationError, match="bandwidth"):
        TransferChannel("m1", "s1", bandwidth=-1)
    with pytest.raises(SimulationError):
        TransferChannel("m1", "s1", hang_probability=1.5)
    with pytest.raises(SimulationError):
        FailureModel(disk_full_probability=-0.1)
    with pytest.raises(SimulationError):
        FailureModel(detection_delay=-1)
    with pytest.raises(SimulationError):
        Site("x", 4, 1.0, offline_cpus=5)


def test_outage_windows_merge():
    assert merge_windows([(5, 10), (0, 3), (8, 12)]) == [(0, 3), (5, 12)]
    site = Site("s", 4, 1.0, outages=[(10, 20), (15, 30)])
    assert site.outages == [(10, 30)]
    assert site.is_up(5) and not site.is_up(10) and site.is_up(30)
    assert site.next_up(12) == 30
    assert site.uptime(100) == 80


def _recording(sim):
    positions = []
    original = sim.enqueue_batch

    def enqueue(site, ns, cost_seconds=None):
        positions.append(original(site, ns, cost_seconds))
        return positions[-1]

    sim.enqueue_batch = enqueue
    return positions


def _times(log, needle):
    return [float(line.split()[0]) for line in log if needle in line]


def test_cmsim_duration_on_fast_site():
    site = Site("s1", 40, 2.4)
    sim = make_sim([site], ftsh=None)
    sim.submit(make_dag("a-1", names=("CMSIM",)), "s1", "m1")
    sim.run()
    log = sim.executor.log.lines
    (start,) = _times(log, "run1-CMSIM Dispatched->Running")
    (end,) = _times(log, "run1-CMSIM Running->Completed")
    assert end - start == pytest.approx(27_343.75, abs=1e-6)
    assert 350 * 250 * (0.75 / 2.4) == 27_343.75


def test_fifo_batch_queue_admission():
    site = Site("s1", 40, 2.4)
    sim = make_sim([site], ftsh=None)
    positions = _recording(sim)
    submit_many(sim, 41, "s1", names=("CMSIM",))
    sim.run()
    assert positions == [0] * 40 + [1]
    assert site.max_busy == 40
    log = sim.executor.log.lines
    starts = _times(log, "run1-CMSIM Dispatched->Running")
    first_done = min(_times(log, "run1-CMSIM Running->Completed"))
    # the 41st starts the moment the first CPU frees
    assert len(set(starts[:40])) == 1 and starts[40] == first_done


def test_enqueue_on_down_site_raises():
    site = Site("s1", 4, 1.0)
    site.up = False
    sim = make_sim([site])
    sim.submit(make_dag("d-1"), "s1", "m1")
    run = sim.executor.jobs["d-1"].nodes[1]
    with pytest.raises(SimulationError):
        sim.enqueue_batch(site, run)


def test_single_job_end_to_end_timeline():
    site = Site("s1", 1, 1.0)
    sim = make_sim([site], ftsh=None).run()
    assert sim.progress.totals()[-1] == 0
    sim = make_sim([site], ftsh=None)
    sim.submit(make_dag("e-1"), "s1", "m1")
    sim.run()
    log = sim.executor.log.lines
    # stage-in (10 MB helper): 1 s + 1 s; CMKIN 9.375 s; CMSIM 65,625 s; stage-out 2 files 512.5 MB: 2 s + 51.25 s
    done = [line for line in log if "stageout Running->Completed" in line]
    assert done == [f"{2 + 9.375 + 65_625 + 53.25:.3f} m1 e-1 stageout Running->Completed events=250"]
    assert site.events_completed == 250
    assert site.useful_cpu_seconds == pytest.approx(9.375 + 65_625)


def test_processor_sharing_scales_with_concurrency():
    def finish_times(n):
        site = Site("s1", 100, 1.0)
        sim = make_sim([site], ftsh=None, channel={"latency": 0.0})
        for i in range(n):
            sim.submit(make_dag(f"p-{i}", helper_mb=500), "s1", "m1")
        sim.run()
        return [
            float(line.split()[0]) for line in sim.executor.log.lines if "stagein Running->Completed" in line
        ]

    solo = finish_times(1)
    assert solo == [50.0]
    four = finish_times(4)
    assert four == pytest.approx([200.0] * 4)


def test_outage_loses_every_running_node():
    site = Site("s1", 40, 2.4)
    sim = make_sim([site], horizon=20_000, ftsh=None)
    submit_many(sim, 40, "s1")
    sim.inject_outage("s1", 10_000, 15_000)
    sim.run()
    at_start = [line for line in sim.executor.log.lines if line.startswith("10000.000 ")]
    lost = [line for line in at_start if line.endswith("Running->Failed OUTAGE")]
    assert len(lost) == 40
    assert all("run2-CMSIM" in line for line in lost)
    assert site.wasted_cpu_seconds > 0
    # nothing new starts while the site is down
    assert not any(10_000 < float(line.split()[0]) < 15_000 for line in sim.executor.log.lines if "->Running" in line)


def test_outage_on_idle_site_only_blocks_admission():
    site = Site("s1", 4, 1.0, outages=[(0, 1000)])
    sim = make_sim([site], ftsh=None)
    sim.submit(make_dag("i-1"), "s1", "m1")
    sim.run()
    log = sim.executor.log.lines
    assert any("Dispatched->Failed SITE_DOWN" in line for line in log)
    assert not any("OUTAGE" in line for line in log)
    first_start = next(line for line in log if "stagein Dispatched->Running" in line)
    assert first_start.startswith("1000.000 ")
    assert site.events_completed == 250
    assert site.wasted_cpu_seconds == 0


def test_cpu_bound_and_accounting():
    sites = [Site("a", 3, 1.0), Site("b", 2, 2.4)]
    sim = make_sim(sites, failures=FailureModel(0.0, lost_contact_probability=0.3, detection_delay=600), seed=3)
    submit_many(sim, 12, "a", prefix="a")
    submit_many(sim, 12, "b", prefix="b")
    sim.run()
    for s in sites:
        assert s.max_busy <= s.cpus
    used = sum(s.useful_cpu_seconds + s.wasted_cpu_seconds for s in sites)
    assert used <= sim.capacity_cpu_seconds() + 1e-6
    assert sum(s.events_completed for s in sites) == 24 * 250
    assert sim.jobs_in_state(NodeState.ABANDONED) == 0


def test_horizon_truncates_hung_transfer_without_ftsh():
    site = Site("s1", 1, 1.0)
    sim = make_sim([site], ftsh=None, horizon=5000, channel={"hang_probability": 1.0})
    sim.submit(make_dag("h-1"), "s1", "m1")
    sim.run()
    assert sim.clock.now == 5000
    assert not any("stagein Running->Completed" in line for line in sim.executor.log.lines)


def test_ftsh_timeout_then_success():
    site = Site("s1", 1, 1.0)
    sim = make_sim(
        [site],
        ftsh=RetrySpec(timeout=300, max_attempts=3, backoff=0),
        channel={"hang_profile": (1.0, 0.0)},
    )
    sim.submit(make_dag("f-1", helper_mb=500), "s1", "m1")
    sim.run()
    log = sim.executor.log.lines
    assert "300.000 m1 f-1 stagein Running->Running TIMEOUT attempt=1" in log
    assert "300.000 m1 f-1 stagein Running->Running RETRY 2" in log
    assert "351.000 m1 f-1 stagein Running->Completed -" in log


def test_ftsh_backoff_delays_second_attempt():
    site = Site("s1", 1, 1.0)
    sim = make_sim([site], ftsh=RetrySpec(timeout=300, backoff=60), channel={"hang_profile": (1.0, 0.0)})
    sim.submit(make_dag("f-1", helper_mb=500), "s1", "m1")
    sim.run()
    assert "360.000 m1 f-1 stagein Running->Running RETRY 2" in sim.executor.log.lines
    assert "411.000 m1 f-1 stagein Running->Completed -" in sim.executor.log.lines
