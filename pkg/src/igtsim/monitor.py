"""Local metric collection, grid-wide aggregation and efficiency reporting.

Everything here is read-only with respect to the simulation: samples are
snapshots, and reports are computed from the finished event log.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable

DAY = 86400.0


class MonitorError(ValueError):
    pass


@dataclass(frozen=True)
class MetricSample:
    site: str
    time: float
    cpus_busy: int
    queue_length: int
    events_completed_cumulative: int
    wasted_cpu_seconds_cumulative: float


def collect(site, now: float) -> MetricSample:
    """Snapshot of one site (anything exposing the Site counters)."""
    if site is None:
        raise MonitorError("unknown site")
    return MetricSample(
        site.name,
        now,
        len(site.running),
        len(site.queue),
        site.events_completed,
        site.wasted_cpu_seconds,
    )


@dataclass(frozen=True)
class GridView:
    time: float
    per_site: dict[str, MetricSample]
    stale: frozenset[str]
    cpus_busy: int
    queue_length: int
    events_completed: int
    wasted_cpu_seconds: float
    all_stale: bool = False


def aggregate(
    samples: Iterable[MetricSample],
    sites: Iterable[str] | None = None,
    last_known: dict[str, MetricSample] | None = None,
    time: float | None = None,
) -> GridView:
    """Grid-wide view at one instant.

    Sites in `sites` with no fresh sample are marked stale. Gauges (busy CPUs,
    queue length) only sum fresh samples. Cumulative counters keep a stale
    site's last known value, since completed work does not vanish when a site
    goes quiet; when every site is stale the view is flagged.
    """
    fresh = {}
    for s in samples:
        if s.site in fresh:
            raise MonitorError(f"two samples for site {s.site!r}")
        fresh[s.site] = s
    expected = list(sites) if sites is not None else list(fresh)
    unknown = set(fresh) - set(expected)
    if unknown:
        raise MonitorError(f"samples from unregistered sites: {sorted(unknown)}")
    last_known = last_known or {}
    per_site: dict[str, MetricSample] = {}
    stale = set()
    for name in expected:
        if name in fresh:
            per_site[name] = fresh[name]
        else:
            stale.add(name)
            if name in last_known:
                per_site[name] = last_known[name]
    if time is None:
        time = max((s.time for s in fresh.values()), default=math.nan)
    live = [s for n, s in per_site.items() if n not in stale]
    return GridView(
        time=time,
        per_site=per_site,
        stale=frozenset(stale),
        cpus_busy=sum(s.cpus_busy for s in live),
        queue_length=sum(s.queue_length for s in live),
        events_completed=sum(s.events_completed_cumulative for s in per_site.values()),
        wasted_cpu_seconds=math.fsum(s.wasted_cpu_seconds_cumulative for s in per_site.values()),
        all_stale=bool(expected) and not fresh,
    )


class ProgressRecorder:
    """Hourly progress curve: per-site and total cumulative events."""

    def __init__(self, sites: list[str]):
        self.sites = list(sites)
        self.times: list[float] = []
        self.views: list[GridView] = []
        self._last: dict[str, MetricSample] = {}

    def record(self, now: float, samples: Iterable[MetricSample]) -> GridView:
        view = aggregate(samples, self.sites, self._last, time=now)
        for name, s in view.per_site.items():
            if name not in view.stale:
                self._last[name] = s
        self.times.append(now)
        self.views.append(view)
        return view

    def note(self, sample: MetricSample) -> None:
        """Last-gasp snapshot of a site that is about to stop reporting."""
        if sample.site not in self.sites:
            raise MonitorError(f"unknown site {sample.site!r}")
        self._last[sample.site] = sample

    def totals(self) -> list[int]:
        return [v.events_completed for v in self.views]

    def per_site(self, name: str) -> list[int]:
        return [v.per_site[name].events_completed_cumulative if name in v.per_site else 0 for v in self.views]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", *self.sites, "total"])
        for t, v in zip(self.times, self.views):
            row = [v.per_site[s].events_completed_cumulative if s in v.per_site else 0 for s in self.sites]
            w.writerow([f"{t:.3f}", *row, v.events_completed])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "time_days": [round(t / DAY, 6) for t in self.times],
            "total": self.totals(),
            "sites": {s: self.per_site(s) for s in self.sites},
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def flat_segments(times: list[float], values: list[float], min_length: float = 0.0) -> list[tuple[float, float]]:
    """Maximal intervals where the curve does not rise, longer than `min_length`."""
    out = []
    i = 0
    n = len(times)
    while i < n - 1:
        if values[i + 1] != values[i]:
            i += 1
            continue
        j = i
        while j < n - 1 and values[j + 1] == values[i]:
            j += 1
        if times[j] - times[i] > min_length:
            out.append((times[i], times[j]))
        i = j
    return out


def theoretical_max(sites, pipeline) -> float:
    """Events/day if every online CPU ran the pipeline without pause.

    `sites` items need `cpus` (or `worker_cpus`) and `cpu_speed`; `pipeline`
    needs `ghz_seconds_per_event`.
    """
    sites = list(sites)
    if not sites:
        raise MonitorError("theoretical_max needs at least one site")
    capacity = math.fsum(getattr(s, "cpus", getattr(s, "worker_cpus", 0)) * s.cpu_speed for s in sites)
    if capacity <= 0:
        raise MonitorError("grid has zero capacity")
    return capacity * DAY / pipeline.ghz_seconds_per_event


@dataclass(frozen=True)
class Window:
    start: float
    end: float
    events: int
    avg_daily_events: float
    efficiency: float


@dataclass(frozen=True)
class EfficiencyReport:
    windows: tuple[Window, ...]
    theoretical_max_daily: float
    overall_efficiency: float
    total_events: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["window_start", "window_end", "avg_daily", "efficiency"])
        for win in self.windows:
            w.writerow([f"{win.start:.3f}", f"{win.end:.3f}", f"{win.avg_daily_events:.3f}", f"{win.efficiency:.6f}"])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "theoretical_max_daily": self.theoretical_max_daily,
            "overall_efficiency": self.overall_efficiency,
            "total_events": self.total_events,
            "windows": [
                {"start": w.start, "end": w.end, "avg_daily": w.avg_daily_events, "efficiency": w.efficiency}
                for w in self.windows
            ],
        }


def completions(log_lines: Iterable[str]) -> list[tuple[float, int]]:
    """(time, events) for each completed stage-out in an event log."""
    out = []
    for line in log_lines:
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 6 or parts[3] != "stageout" or parts[4] != "Running->Completed":
            continue
        cause = parts[5]
        if cause.startswith("events="):
            out.append((float(parts[0]), int(cause[7:])))
    return out


def efficiency_report(
    log_lines: Iterable[str] | str,
    theoretical_max_daily: float,
    start: float,
    end: float,
    n_windows: int = 12,
) -> EfficiencyReport:
    """Split [start, end] into equal windows and compare each window's daily rate to the ceiling."""
    if isinstance(log_lines, str):
        log_lines = log_lines.splitlines()
    lines = list(log_lines)
    if not any(line and not line.startswith("#") for line in lines):
        raise MonitorError("empty event log")
    if n_windows < 1 or not end > start:
        raise MonitorError("need n_windows >= 1 and end > start")
    if not theoretical_max_daily > 0:
        raise MonitorError("theoretical maximum must be > 0")
    width = (end - start) / n_windows
    counts = [0] * n_windows
    for t, events in completions(lines):
        if t < start or t > end:
            continue
        idx = min(int((t - start) / width), n_windows - 1)
        counts[idx] += events
    windows = []
    for i, c in enumerate(counts):
        ws = start + i * width
        we = end if i == n_windows - 1 else start + (i + 1) * width
        daily = c / ((we - ws) / DAY)
        windows.append(Window(ws, we, c, daily, daily / theoretical_max_daily))
    overall = math.fsum(w.efficiency for w in windows) / n_windows
    return EfficiencyReport(tuple(windows), theoretical_max_daily, overall, sum(counts))
