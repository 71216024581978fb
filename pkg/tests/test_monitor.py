from __future__ import annotations

import json
from types import SimpleNamespace

import pytest
from simkit import make_dag, make_sim

from igtsim.gridsim import Site
from igtsim.monitor import (
    MetricSample,
    MonitorError,
    ProgressRecorder,
    aggregate,
    collect,
    efficiency_report,
    flat_segments,
    theoretical_max,
)
from igtsim.workload import FULL_CHAIN_NOPU, build_pipeline

DAY = 86400.0


def sample(site, t, events, busy=0, queue=0, wasted=0.0):
    return MetricSample(site, t, busy, queue, events, wasted)


def test_collect_tracks_site_state():
    site = Site("s1", 40, 2.4)
    assert collect(site, 0).cpus_busy == 0
    site.running.update(range(40))
    assert collect(site, 0).cpus_busy == 40
    with pytest.raises(MonitorError):
        collect(None, 0)


def test_collect_after_one_job():
    site = Site("s1", 1, 2.4)
    sim = make_sim([site], ftsh=None)
    sim.submit(make_dag("c-1"), "s1", "m1")
    sim.run()
    assert sim.collect("s1").events_completed_cumulative == 250
    assert sim.progress.totals()[-1] == 250


def test_aggregate_sums_and_staleness():
    view = aggregate([sample("a", 0, 100, busy=3), sample("b", 0, 150, busy=4)])
    assert view.events_completed == 250 and view.cpus_busy == 7 and not view.stale

    last = {"b": sample("b", 0, 150, busy=4)}
    view = aggregate([sample("a", 10, 120, busy=2)], ["a", "b"], last, time=10)
    assert view.stale == {"b"}
    assert view.events_completed == 270  # stale cumulative carried forward
    assert view.cpus_busy == 2  # stale gauges excluded
    assert not view.all_stale

    view = aggregate([], ["a", "b"], {"a": sample("a", 0, 1), "b": sample("b", 0, 2)}, time=20)
    assert view.all_stale and view.events_completed == 3 and view.cpus_busy == 0


def test_aggregate_rejects_bad_samples():
    with pytest.raises(MonitorError):
        aggregate([sample("a", 0, 1), sample("a", 0, 2)])
    with pytest.raises(MonitorError):
        aggregate([sample("z", 0, 1)], ["a"])


def test_progress_recorder_outputs():
    rec = ProgressRecorder(["a", "b"])
    rec.record(0, [sample("a", 0, 0), sample("b", 0, 0)])
    rec.record(3600, [sample("a", 3600, 250)])
    rec.note(sample("b", 3600, 500))
    rec.record(7200, [sample("a", 7200, 500)])
    assert rec.totals() == [0, 250, 1000]
    assert rec.to_csv().splitlines() == ["time,a,b,total", "0.000,0,0,0", "3600.000,250,0,250", "7200.000,500,500,1000"]
    doc = json.loads(rec.to_json())
    assert doc["total"] == [0, 250, 1000] and doc["sites"]["b"] == [0, 0, 500]
    with pytest.raises(MonitorError):
        rec.note(sample("zz", 0, 0))


def test_flat_segments():
    times = [0, 1, 2, 3, 4, 5, 6]
    values = [0, 5, 5, 5, 9, 9, 10]
    assert flat_segments(times, values) == [(1, 3), (4, 5)]
    assert flat_segments(times, values, min_length=1.5) == [(1, 3)]


def test_theoretical_max_reference_value():
    pipe = build_pipeline(FULL_CHAIN_NOPU)
    # hand arithmetic from the stage table: (0.05 + 350 + 0.05 + 2 + 1) s × 0.75 GHz
    assert pipe.ghz_seconds_per_event == pytest.approx(264.825, abs=1e-9)
    one = theoretical_max([SimpleNamespace(cpus=1, cpu_speed=1.0)], pipe)
    assert one == pytest.approx(86400 / 264.825)
    assert one == pytest.approx(326.2, rel=1e-3)
    two = theoretical_max([SimpleNamespace(cpus=2, cpu_speed=1.0)], pipe)
    assert two == pytest.approx(2 * one)


def test_theoretical_max_full_hardware_table():
    pipe = build_pipeline(FULL_CHAIN_NOPU)
    table = [(40, 0.8), (40, 2.4), (80, 0.75), (80, 1.0), (40, 0.8), (40, 2.4), (72, 2.4)]
    sites = [Site(f"s{i}", n, ghz) for i, (n, ghz) in enumerate(table)]
    assert sum(s.capacity_ghz for s in sites) == pytest.approx(568.8)
    assert theoretical_max(sites, pipe) == pytest.approx(568.8 * 86400 / 264.825)
    # the whole table exceeds the published 45K/day, so that figure implies partial availability
    assert theoretical_max(sites, pipe) > 45_000


def test_theoretical_max_errors():
    pipe = build_pipeline(FULL_CHAIN_NOPU)
    with pytest.raises(MonitorError):
        theoretical_max([], pipe)
    with pytest.raises(MonitorError):
        theoretical_max([Site("s", 0, 1.0)], pipe)


def _log(completions):
    return [f"{t:.3f} m1 j-{i} stageout Running->Completed events={n}" for i, (t, n) in enumerate(completions)]


def test_efficiency_windows():
    # 100 events per day for 12 days against a ceiling of 100/day
    log = _log([(d * DAY + 10, 100) for d in range(12)])
    rep = efficiency_report(log, 100.0, 0, 12 * DAY)
    assert len(rep.windows) == 12
    assert [w.efficiency for w in rep.windows] == pytest.approx([1.0] * 12)
    assert rep.overall_efficiency == pytest.approx(1.0)
    assert rep.windows[0].start == 0 and rep.windows[-1].end == 12 * DAY
    assert rep.total_events == 1200
    assert rep.to_csv().splitlines()[0] == "window_start,window_end,avg_daily,efficiency"


def test_efficiency_is_mean_of_windows():
    log = _log([(0.5 * DAY, 300)])
    rep = efficiency_report(log, 100.0, 0, 4 * DAY, n_windows=2)
    assert [w.efficiency for w in rep.windows] == pytest.approx([1.5, 0.0])
    assert rep.overall_efficiency == pytest.approx(0.75)


def test_zero_completions_and_empty_log():
    log = ["0.000 m1 j-1 stagein Idle->Ready -"]
    rep = efficiency_report(log, 100.0, 0, 12 * DAY)
    assert all(w.efficiency == 0.0 for w in rep.windows)
    with pytest.raises(MonitorError):
        efficiency_report([], 100.0, 0, DAY)
    with pytest.raises(MonitorError):
        efficiency_report(["# header only"], 100.0, 0, DAY)
    with pytest.raises(MonitorError):
        efficiency_report(log, 0.0, 0, DAY)


def test_efficiency_scale_invariance():
    base = _log([(d * DAY, 100) for d in range(6)])
    scaled = _log([(d * DAY, 300) for d in range(6)])
    a = efficiency_report(base, 120.0, 0, 6 * DAY, n_windows=3)
    b = efficiency_report(scaled, 360.0, 0, 6 * DAY, n_windows=3)
    assert [w.efficiency for w in a.windows] == pytest.approx([w.efficiency for w in b.windows])


def test_reconciliation_with_executor():
    sites = [Site("a", 2, 1.0), Site("b", 2, 2.4)]
    sim = make_sim(sites, ftsh=None)
    for i in range(3):
        sim.submit(make_dag(f"r-{i}"), "a", "m1")
        sim.submit(make_dag(f"s-{i}", events=100), "b", "m1")
    sim.run()
    replicas = sim.executor.register_replicas()
    assert sim.progress.totals()[-1] == sum(r.events for r in replicas) == 3 * 250 + 3 * 100
    totals = sim.progress.totals()
    assert totals == sorted(totals)
    for view in sim.progress.views:
        assert view.events_completed == sum(s.events_completed_cumulative for s in view.per_site.values())
