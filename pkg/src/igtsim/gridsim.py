"""Deterministic discrete-event grid fabric.

Sites run Run nodes on FIFO batch queues, transfers share each master↔site
channel's bandwidth equally, and failures are drawn from named per-purpose
random streams so that a (scenario, seed) pair always replays the same event
log. The `GridSim` loop drives the executor: after every event it asks for
new dispatches and turns them into transfers and batch submissions.
"""

from __future__ import annotations

import hashlib
import heapq
import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable

from igtsim.dagwrap import NodeKind
from igtsim.executor import (
    AUTH_DENIED,
    DISK_FULL,
    OUTAGE,
    SITE_DOWN,
    TRANSFER_FAILED,
    Executor,
    NodeRunState,
    NodeState,
    Outcome,
)
from igtsim.ftsh import FtshRun, RetrySpec
from igtsim.monitor import MetricSample, ProgressRecorder, collect
from igtsim.vo import GridmapSync
from igtsim.workload import stage_cost

DAY = 86400.0
HOUR = 3600.0


class SimulationError(RuntimeError):
    pass


# -- clock --------------------------------------------------------------------


class SimEvent:
    __slots__ = ("time", "seq", "kind", "payload", "cancelled")

    def __init__(self, time: float, seq: int, kind: str, payload: Any):
        self.time = time
        self.seq = seq
        self.kind = kind
        self.payload = payload
        self.cancelled = False

    def __repr__(self) -> str:
        return f"SimEvent(t={self.time}, seq={self.seq}, {self.kind})"


class SimClock:
    """Event queue ordered by (time, insertion sequence)."""

    def __init__(self, start: float = 0.0):
        self.now = start
        self._heap: list[tuple[float, int, SimEvent]] = []
        self._seq = 0

    def schedule(self, time: float, kind: str, payload: Any = None) -> SimEvent:
        if time < self.now:
            raise SimulationError(f"cannot schedule {kind} at {time} before now={self.now}")
        self._seq += 1
        ev = SimEvent(time, self._seq, kind, payload)
        heapq.heappush(self._heap, (time, self._seq, ev))
        return ev

    @staticmethod
    def cancel(ev: SimEvent | None) -> None:
        if ev is not None:
            ev.cancelled = True

    def advance(self, until: float = math.inf) -> SimEvent | None:
        """Pop the next live event with time <= until; None signals end of run."""
        heap = self._heap
        while heap:
            t, _, ev = heap[0]
            if ev.cancelled:
                heapq.heappop(heap)
                continue
            if t > until:
                return None
            heapq.heappop(heap)
            self.now = t
            return ev
        return None

    def advance_to(self, t: float) -> None:
        if t < self.now:
            raise SimulationError("time never decreases")
        self.now = t

    def __len__(self) -> int:
        return sum(1 for _, _, ev in self._heap if not ev.cancelled)


# -- randomness ---------------------------------------------------------------------


def stream_seed(seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{seed}/{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


class RngStreams:
    """One independent random.Random per purpose, all derived from one seed."""

    def __init__(self, seed: int):
        self.seed = seed
        self._streams: dict[str, random.Random] = {}

    def __call__(self, name: str) -> random.Random:
        rng = self._streams.get(name)
        if rng is None:
            rng = self._streams[name] = random.Random(stream_seed(self.seed, name))
        return rng


# -- fabric ---------------------------------------------------------------------


def merge_windows(windows: list[tuple[float, float]]) -> list[tuple[float, float]]:
    merged: list[list[float]] = []
    for start, end in sorted(windows):
        if end <= start:
            continue
        if merged and start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return [(a, b) for a, b in merged]


def subtract_windows(up: list[tuple[float, float]], down: list[tuple[float, float]]) -> list[tuple[float, float]]:
    out = []
    for start, end in up:
        pieces = [(start, end)]
        for d0, d1 in down:
            nxt = []
            for a, b in pieces:
                if d1 <= a or d0 >= b:
                    nxt.append((a, b))
                    continue
                if a < d0:
                    nxt.append((a, d0))
                if d1 < b:
                    nxt.append((d1, b))
            pieces = nxt
        out.extend(pieces)
    return merge_windows(out)


@dataclass(eq=False)
class Site:
    name: str
    worker_cpus: int
    cpu_speed: float  # GHz
    os: str = ""
    comment: str = ""
    offline_cpus: int = 0
    disk_free_mb: float = 1.0e9
    availability_windows: list[tuple[float, float]] = field(default_factory=lambda: [(0.0, math.inf)])
    max_submitted: int | None = None
    outages: list[tuple[float, float]] = field(default_factory=list)
    # runtime state
    running: set = field(default_factory=set, repr=False)
    queue: deque = field(default_factory=deque, repr=False)
    up: bool = True
    events_completed: int = 0
    useful_cpu_seconds: float = 0.0
    wasted_cpu_seconds: float = 0.0
    max_busy: int = 0

    def __post_init__(self) -> None:
        if self.worker_cpus < 0 or not 0 <= self.offline_cpus <= self.worker_cpus:
            raise SimulationError(f"{self.name}: bad CPU counts")
        if self.cpu_speed <= 0:
            raise SimulationError(f"{self.name}: cpu_speed must be > 0")
        if self.disk_free_mb < 0:
            raise SimulationError(f"{self.name}: disk_free must be >= 0")
        self.outages = merge_windows(self.outages)
        self.availability_windows = subtract_windows(merge_windows(self.availability_windows), self.outages)

    @property
    def cpus(self) -> int:
        """CPUs that actually accept work."""
        return self.worker_cpus - self.offline_cpus

    @property
    def capacity_ghz(self) -> float:
        return self.cpus * self.cpu_speed

    @property
    def busy(self) -> int:
        return len(self.running)

    def is_up(self, t: float) -> bool:
        return any(a <= t < b for a, b in self.availability_windows)

    def next_up(self, t: float) -> float:
        for a, b in self.availability_windows:
            if a <= t < b:
                return t
            if a > t:
                return a
        return math.inf

    def add_outage(self, start: float, end: float) -> None:
        if not end > start:
            raise SimulationError(f"{self.name}: outage window must have end > start")
        self.outages = merge_windows(self.outages + [(start, end)])
        self.availability_windows = subtract_windows(self.availability_windows, self.outages)

    def uptime(self, horizon: float) -> float:
        return sum(max(0.0, min(b, horizon) - a) for a, b in self.availability_windows if a < horizon)


@dataclass(eq=False)
class TransferChannel:
    master: str
    site: str
    bandwidth: float = 10.0  # MB/s
    latency: float = 1.0  # s per file
    hang_probability: float = 0.01
    hang_profile: tuple[float, ...] | None = None  # per-attempt override; last value repeats
    # runtime state
    active: list = field(default_factory=list, repr=False)
    last_update: float = 0.0
    version: int = 0

    def __post_init__(self) -> None:
        if not self.bandwidth > 0:
            raise SimulationError(f"channel {self.master}->{self.site}: bandwidth must be > 0")
        if self.latency < 0:
            raise SimulationError(f"channel {self.master}->{self.site}: latency must be >= 0")
        for p in (self.hang_probability, *(self.hang_profile or ())):
            if not 0.0 <= p <= 1.0:
                raise SimulationError(f"channel {self.master}->{self.site}: hang probability {p} not in [0,1]")

    def hang_probability_for(self, attempt: int) -> float:
        if self.hang_profile:
            return self.hang_profile[min(attempt, len(self.hang_profile)) - 1]
        return self.hang_probability

    def solo_duration(self, size_mb: float, files: int = 1) -> float:
        return self.latency * files + size_mb / self.bandwidth


def simulate_transfer(
    channel: TransferChannel, size_mb: float, rng: random.Random, attempt: int = 1, files: int = 1
) -> float | None:
    """Duration of a lone transfer, or None when it hangs."""
    if size_mb < 0:
        raise SimulationError("transfer size must be >= 0")
    if rng.random() < channel.hang_probability_for(attempt):
        return None
    return channel.solo_duration(size_mb, files)


@dataclass
class FailureModel:
    transfer_hang_probability: float = 0.01
    disk_full_probability: float = 0.0  # per job
    lost_contact_probability: float = 0.0  # per Run-node execution
    detection_delay: float = 6 * HOUR

    def __post_init__(self) -> None:
        for name in ("transfer_hang_probability", "disk_full_probability", "lost_contact_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise SimulationError(f"{name}={p} not in [0,1]")
        if self.detection_delay < 0:
            raise SimulationError("detection_delay must be >= 0")


class _Execution:
    __slots__ = ("ns", "site", "start", "duration", "done_ev", "lost_at", "detect_ev", "reported", "uses_cpu")

    def __init__(self, ns: NodeRunState, site: Site, duration: float, uses_cpu: bool = True):
        self.ns = ns
        self.site = site
        self.start = math.nan
        self.duration = duration
        self.done_ev: SimEvent | None = None
        self.lost_at: float | None = None
        self.detect_ev: SimEvent | None = None
        self.reported = False
        self.uses_cpu = uses_cpu


class _Transfer:
    __slots__ = ("ns", "channel", "size", "files", "remaining", "phase", "attempt", "ftsh", "latency_ev", "timeout_ev", "done")

    def __init__(self, ns: NodeRunState, channel: TransferChannel, size: float, files: int, ftsh: FtshRun | None):
        self.ns = ns
        self.channel = channel
        self.size = size
        self.files = files
        self.remaining = size
        self.phase = "idle"  # latency | data | hung | idle
        self.attempt = 0
        self.ftsh = ftsh
        self.latency_ev: SimEvent | None = None
        self.timeout_ev: SimEvent | None = None
        self.done = False


class GridSim:
    """Event loop tying the fabric to the executor, the VO sync and the monitor."""

    def __init__(
        self,
        sites: list[Site],
        channels: dict[tuple[str, str], TransferChannel],
        executor: Executor,
        failures: FailureModel | None = None,
        seed: int = 0,
        horizon: float = math.inf,
        ftsh: RetrySpec | None = RetrySpec(),
        vo_sync: GridmapSync | None = None,
        sample_interval: float = HOUR,
        cleanup_seconds: float = 5.0,
        audit: bool = False,
        runtime_jitter: float = 0.0,
    ):
        self.sites = {s.name: s for s in sites}
        self.channels = channels
        self.executor = executor
        self.failures = failures or FailureModel()
        self.rng = RngStreams(seed)
        self.seed = seed
        self.horizon = horizon
        self.ftsh_spec = ftsh
        self.vo_sync = vo_sync
        self.sample_interval = sample_interval
        self.cleanup_seconds = cleanup_seconds
        if not 0.0 <= runtime_jitter < 1.0:
            raise SimulationError("runtime_jitter must be in [0, 1)")
        self.runtime_jitter = runtime_jitter
        self.clock = SimClock()
        self.progress = ProgressRecorder([s.name for s in sites])
        self.audit = audit
        self.dispatch_audit: list[tuple[float, str, str, str, str | None, int]] = []
        self.vo_changes: list[tuple[float, Callable[[], None]]] = []
        self._doomed: dict[str, int] = {}  # job_id -> index of the Run node that hits a full disk
        self._transfers_at: dict[str, set] = {s.name: set() for s in sites}
        self._aux_at: dict[str, set] = {s.name: set() for s in sites}
        self._started = False
        self.finished = False
        self._handlers = {
            "run_done": self._on_run_done,
            "lost_detect": self._on_lost_detect,
            "aux_done": self._on_aux_done,
            "xfer_latency": self._on_xfer_latency,
            "xfer_ps": self._on_xfer_ps,
            "xfer_timeout": self._on_xfer_timeout,
            "xfer_retry": self._on_xfer_retry,
            "wakeup": self._on_wakeup,
            "site_down": self._on_site_down,
            "site_up": self._on_site_up,
            "sync": self._on_sync,
            "vo_change": self._on_vo_change,
            "sample": self._on_sample,
        }

    # -- setup ------------------------------------------------------------------

    def submit(self, dag, site: str, master_id: str, dn: str = "") -> None:
        job = self.executor.submit_dag(dag, site, master_id, dn, now=self.clock.now)
        if self.failures.disk_full_probability > 0:
            rng = self.rng("disk_full")
            if rng.random() < self.failures.disk_full_probability:
                runs = [ns.index for ns in job.nodes if ns.node.kind is NodeKind.RUN]
                self._doomed[dag.job_id] = runs[rng.randrange(len(runs))]

    def channel(self, master_id: str, site: str) -> TransferChannel:
        try:
            return self.channels[(master_id, site)]
        except KeyError:
            raise SimulationError(f"no channel between {master_id} and {site}") from None

    def inject_outage(self, site_name: str, start: float, end: float) -> list[SimEvent]:
        """Take a site down over [start, end); returns the scheduled down/up events."""
        site = self.sites[site_name]
        site.add_outage(start, end)
        if not self._started:
            return []
        evs = []
        if start >= self.clock.now:
            evs.append(self.clock.schedule(start, "site_down", site))
        if end >= self.clock.now and end < self.horizon:
            evs.append(self.clock.schedule(end, "site_up", site))
        return evs

    def schedule_vo_change(self, at: float, change: Callable[[], None]) -> None:
        self.vo_changes.append((at, change))
        if self._started:
            self.clock.schedule(at, "vo_change", change)

    def _start(self) -> None:
        self._started = True
        now = self.clock.now
        for site in self.sites.values():
            site.up = site.is_up(now)
            for a, b in site.availability_windows:
                if a > now:
                    self.clock.schedule(a, "site_up", site)
                if now <= b < math.inf:
                    self.clock.schedule(b, "site_down", site)
        if self.vo_sync is not None:
            for name in self.sites:
                self.vo_sync.sync(name, now)
                self.clock.schedule(now + self.vo_sync.interval, "sync", name)
        for at, change in self.vo_changes:
            self.clock.schedule(at, "vo_change", change)
        self._sample(now)
        if self.sample_interval > 0:
            self.clock.schedule(now + self.sample_interval, "sample")

    # -- main loop ------------------------------------------------------------------

    def run(self) -> GridSim:
        if self.finished:
            raise SimulationError("simulation already ran")
        if not self._started:
            self._start()
        self._pump()
        clock = self.clock
        handlers = self._handlers
        while True:
            ev = clock.advance(self.horizon)
            if ev is None:
                break
            handlers[ev.kind](ev)
            self._pump()
        if math.isfinite(self.horizon):
            clock.advance_to(max(clock.now, self.horizon))
        if not self.progress.times or self.progress.times[-1] < clock.now:
            self._sample(clock.now)
        self.executor.close(clock.now)
        self.finished = True
        return self

    def _pump(self) -> None:
        executor = self.executor
        while True:
            actions = executor.dispatch_step(self.clock.now)
            if not actions:
                return
            for action in actions:
                self._execute(action)

    def _reject_reason(self, ns: NodeRunState, site: Site, now: float) -> tuple[str, float] | None:
        if not site.up:
            return SITE_DOWN, site.next_up(now)
        if self.vo_sync is not None and self.vo_sync.authorize(site.name, ns.job.dn) is None:
            return AUTH_DENIED, self.vo_sync.next_sync(site.name, now)
        return None

    def _execute(self, action) -> None:
        ns = action.node
        site = self.sites[action.site]
        now = self.clock.now
        rejected = self._reject_reason(ns, site, now)
        if rejected is not None:
            cause, retry_at = rejected
            self.executor.handle_outcome(ns, Outcome.REJECTED, cause, now, retry_at)
            if math.isfinite(retry_at):
                self.clock.schedule(max(retry_at, now), "wakeup", ns)
            return
        if self.audit:
            account = self.vo_sync.authorize(site.name, ns.job.dn) if self.vo_sync else None
            epoch = self.vo_sync.epoch[site.name] if self.vo_sync else 0
            self.dispatch_audit.append((now, site.name, ns.node.kind.value, ns.job.dn, account, epoch))
        kind = action.kind
        if kind is NodeKind.RUN:
            self.enqueue_batch(site, ns)
        elif kind is NodeKind.CLEANUP:
            self.executor.mark_running(ns, now)
            ex = _Execution(ns, site, self.cleanup_seconds, uses_cpu=False)
            ex.start = now
            ex.done_ev = self.clock.schedule(now + self.cleanup_seconds, "aux_done", ex)
            self._aux_at[site.name].add(ex)
        else:
            self.executor.mark_running(ns, now)
            self._start_transfer(ns, self.channel(ns.job.master_id, site.name), ns.node.size_mb)

    # -- batch queues ---------------------------------------------------------------

    def enqueue_batch(self, site: Site, ns: NodeRunState, cost_seconds: float | None = None) -> int:
        """FIFO admission at `site`; returns the queue position (0 = started now).

        `cost_seconds` is the service time at the stage's reference speed;
        by default it is derived from the node's stage profile.
        """
        if not site.up:
            raise SimulationError(f"{site.name} is down")
        if cost_seconds is None:
            duration = stage_cost(ns.node.stage, ns.node.events, site.cpu_speed)
        else:
            duration = cost_seconds * ns.node.stage.reference_speed / site.cpu_speed
        if self.runtime_jitter > 0:
            # per-event cost varies with the physics generated; the mean is unchanged
            duration *= 1.0 + self.runtime_jitter * (2.0 * self.rng("runtime").random() - 1.0)
        ex = _Execution(ns, site, duration)
        if not site.queue and len(site.running) < site.cpus:
            self._start_execution(ex)
            return 0
        site.queue.append(ex)
        return len(site.queue)

    def _start_execution(self, ex: _Execution) -> None:
        site = ex.site
        now = self.clock.now
        ex.start = now
        site.running.add(ex)
        if len(site.running) > site.max_busy:
            site.max_busy = len(site.running)
        self.executor.mark_running(ex.ns, now)
        ex.done_ev = self.clock.schedule(now + ex.duration, "run_done", ex)
        p_lost = self.failures.lost_contact_probability
        if p_lost > 0:
            rng = self.rng("lost_contact")
            if rng.random() < p_lost:
                ex.lost_at = now + rng.random() * ex.duration
                ex.detect_ev = self.clock.schedule(ex.lost_at + self.failures.detection_delay, "lost_detect", ex)

    def _fill(self, site: Site) -> None:
        while site.up and site.queue and len(site.running) < site.cpus:
            self._start_execution(site.queue.popleft())

    def _waste(self, ex: _Execution, seconds: float) -> None:
        self.executor.add_waste(ex.ns, seconds)
        ex.site.wasted_cpu_seconds += seconds

    def _on_run_done(self, ev: SimEvent) -> None:
        ex: _Execution = ev.payload
        site = ex.site
        site.running.discard(ex)
        ns = ex.ns
        now = self.clock.now
        if ex.lost_at is not None:
            # the master lost track of this execution; whatever it produced is discarded
            self._waste(ex, ex.duration)
        elif self._doomed.get(ns.job.job_id) == ns.index:
            self._waste(ex, ex.duration)
            ex.reported = True
            self.executor.handle_outcome(ns, Outcome.FAILURE, DISK_FULL, now)
        else:
            site.useful_cpu_seconds += ex.duration
            ex.reported = True
            self.executor.handle_outcome(ns, Outcome.SUCCESS, "", now)
        self._fill(site)

    def _on_lost_detect(self, ev: SimEvent) -> None:
        ex: _Execution = ev.payload
        if not ex.reported:
            ex.reported = True
            self.executor.handle_outcome(ex.ns, Outcome.LOST, "LOST", self.clock.now)

    def _on_aux_done(self, ev: SimEvent) -> None:
        ex: _Execution = ev.payload
        self._aux_at[ex.site.name].discard(ex)
        ex.reported = True
        self.executor.handle_outcome(ex.ns, Outcome.SUCCESS, "", self.clock.now)

    # -- transfers ------------------------------------------------------------------

    def _start_transfer(self, ns: NodeRunState, channel: TransferChannel, size: float) -> None:
        run = FtshRun(self.ftsh_spec) if self.ftsh_spec is not None else None
        t = _Transfer(ns, channel, size, max(1, len(ns.node.files)), run)
        self._transfers_at[channel.site].add(t)
        self._begin_attempt(t)

    def _begin_attempt(self, t: _Transfer) -> None:
        now = self.clock.now
        t.attempt += 1
        if t.ftsh is not None:
            deadline = t.ftsh.begin(now)
            t.timeout_ev = self.clock.schedule(deadline, "xfer_timeout", t)
        if self.rng("transfer_hang").random() < t.channel.hang_probability_for(t.attempt):
            t.phase = "hung"
            return
        t.phase = "latency"
        t.latency_ev = self.clock.schedule(now + t.channel.latency * t.files, "xfer_latency", t)

    def _on_xfer_latency(self, ev: SimEvent) -> None:
        t: _Transfer = ev.payload
        t.latency_ev = None
        if t.size <= 0:
            self._transfer_finished(t)
            return
        ch = t.channel
        now = self.clock.now
        self._ps_advance(ch, now)
        t.phase = "data"
        t.remaining = t.size
        ch.active.append(t)
        self._ps_schedule(ch, now)

    def _ps_advance(self, ch: TransferChannel, now: float) -> None:
        if ch.active:
            dt = now - ch.last_update
            if dt > 0:
                dec = dt * ch.bandwidth / len(ch.active)
                for t in ch.active:
                    t.remaining -= dec
        ch.last_update = now

    def _ps_schedule(self, ch: TransferChannel, now: float) -> None:
        ch.version += 1
        if ch.active:
            rem = max(0.0, min(t.remaining for t in ch.active))
            self.clock.schedule(now + rem * len(ch.active) / ch.bandwidth, "xfer_ps", (ch, ch.version))

    def _on_xfer_ps(self, ev: SimEvent) -> None:
        ch, version = ev.payload
        if version != ch.version:
            return
        now = self.clock.now
        self._ps_advance(ch, now)
        done = [t for t in ch.active if t.remaining <= 1e-9 * max(1.0, t.size)]
        ch.active = [t for t in ch.active if t not in done]
        self._ps_schedule(ch, now)
        for t in done:
            self._transfer_finished(t)

    def _detach(self, t: _Transfer) -> None:
        """Stop the running attempt (timeout or outage)."""
        self.clock.cancel(t.latency_ev)
        t.latency_ev = None
        if t.phase == "data":
            ch = t.channel
            now = self.clock.now
            self._ps_advance(ch, now)
            ch.active.remove(t)
            self._ps_schedule(ch, now)
        t.phase = "idle"

    def _transfer_finished(self, t: _Transfer) -> None:
        now = self.clock.now
        t.phase = "idle"
        if t.ftsh is not None:
            nxt = t.ftsh.finish(now, True)
            if not t.ftsh.succeeded:
                # completion landed exactly on the deadline: counts as a timeout
                self.clock.cancel(t.timeout_ev)
                self._after_timeout(t, nxt)
                return
            self.clock.cancel(t.timeout_ev)
        self._transfer_closed(t)
        self.executor.handle_outcome(t.ns, Outcome.SUCCESS, "", now)
        if t.ns.node.kind is NodeKind.STAGE_OUT:
            self.sites[t.channel.site].events_completed += t.ns.job.events

    def _on_xfer_timeout(self, ev: SimEvent) -> None:
        t: _Transfer = ev.payload
        if t.done:
            return
        self._detach(t)
        self._after_timeout(t, t.ftsh.timeout(self.clock.now))

    def _after_timeout(self, t: _Transfer, nxt: float | None) -> None:
        now = self.clock.now
        job = t.ns.job
        self.executor.log.record(
            now, job.master_id, job.job_id, t.ns.node.local_name, "Running", "Running", f"TIMEOUT attempt={t.attempt}"
        )
        if nxt is None:
            self._transfer_closed(t)
            self.executor.handle_outcome(t.ns, Outcome.FAILURE, TRANSFER_FAILED, now)
        else:
            self.clock.schedule(nxt, "xfer_retry", t)

    def _on_xfer_retry(self, ev: SimEvent) -> None:
        t: _Transfer = ev.payload
        if t.done:
            return
        job = t.ns.job
        self.executor.log.record(
            self.clock.now, job.master_id, job.job_id, t.ns.node.local_name, "Running", "Running", f"RETRY {t.attempt + 1}"
        )
        self._begin_attempt(t)

    def _transfer_closed(self, t: _Transfer) -> None:
        t.done = True
        self._transfers_at[t.channel.site].discard(t)

    # -- holds, outages, VO ---------------------------------------------------------

    def _on_wakeup(self, ev: SimEvent) -> None:
        self.executor.release_hold(ev.payload, self.clock.now)

    def _on_site_down(self, ev: SimEvent) -> None:
        site: Site = ev.payload
        if not site.up:
            return
        now = self.clock.now
        self.progress.note(collect(site, now))
        site.up = False
        lost: list[NodeRunState] = []
        for ex in sorted(site.running, key=lambda e: (e.start, e.ns.job.seq, e.ns.index)):
            self.clock.cancel(ex.done_ev)
            self.clock.cancel(ex.detect_ev)
            self._waste(ex, now - ex.start)
            if not ex.reported:
                ex.reported = True
                lost.append(ex.ns)
        site.running.clear()
        for ex in sorted(self._aux_at[site.name], key=lambda e: (e.ns.job.seq, e.ns.index)):
            self.clock.cancel(ex.done_ev)
            lost.append(ex.ns)
        self._aux_at[site.name].clear()
        for t in sorted(self._transfers_at[site.name], key=lambda x: (x.ns.job.seq, x.ns.index)):
            self._detach(t)
            self.clock.cancel(t.timeout_ev)
            self._transfer_closed(t)
            lost.append(t.ns)
        for ns in lost:
            self.executor.handle_outcome(ns, Outcome.LOST, OUTAGE, now)

    def _on_site_up(self, ev: SimEvent) -> None:
        site: Site = ev.payload
        if site.up:
            return
        site.up = True
        self._fill(site)

    def _on_sync(self, ev: SimEvent) -> None:
        name = ev.payload
        now = self.clock.now
        self.vo_sync.sync(name, now)
        if now + self.vo_sync.interval <= self.horizon and self._work_pending():
            self.clock.schedule(now + self.vo_sync.interval, "sync", name)

    def _on_vo_change(self, ev: SimEvent) -> None:
        ev.payload()

    # -- monitoring -----------------------------------------------------------------

    def _on_sample(self, ev: SimEvent) -> None:
        now = self.clock.now
        self._sample(now)
        nxt = now + self.sample_interval
        if nxt <= self.horizon and self._work_pending():
            self.clock.schedule(nxt, "sample")

    def _work_pending(self) -> bool:
        """Periodic events keep rescheduling only while something else can happen."""
        if math.isfinite(self.horizon):
            return True
        return any(not ev.cancelled and ev.kind not in ("sample", "sync") for _, _, ev in self.clock._heap)

    def _sample(self, now: float) -> None:
        samples = [collect(site, now) for site in self.sites.values() if site.up]
        self.progress.record(now, samples)

    def collect(self, site_name: str) -> MetricSample:
        if site_name not in self.sites:
            raise SimulationError(f"unknown site {site_name!r}")
        return collect(self.sites[site_name], self.clock.now)

    # -- bookkeeping used by reports and tests ---------------------------------------

    def capacity_cpu_seconds(self) -> float:
        end = self.clock.now
        return sum(site.cpus * site.uptime(end) for site in self.sites.values())

    def jobs_in_state(self, state: NodeState) -> int:
        return sum(1 for j in self.executor.jobs.values() for ns in j.nodes if ns.state is state)
