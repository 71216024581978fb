"""DAGMan/Condor-G-like node executor.

The executor is a deterministic state machine. It never advances time itself:
the grid simulator feeds it outcomes and asks it, after every event, which
node executions to start. Each dispatched node holds one tracked-process slot
on its MOP master (one gahp thread per tracked remote process) until it
reaches a terminal state.

Jobs also pass a per-site admission gate (the grid manager's per-resource
throttle on submitted jobs). A job takes a gate token when its stage-in is
dispatched and returns it once its last Run node has finished, so transfers
and batch submissions never pile up beyond what the site can run. Jobs
waiting for a token hold no master slot; they are admitted in
job-submission order, so older DAGs finish first.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable

from igtsim.dagwrap import Dag, NodeKind, validate_dag


class NodeState(str, Enum):
    IDLE = "Idle"
    READY = "Ready"
    DISPATCHED = "Dispatched"
    RUNNING = "Running"
    COMPLETED = "Completed"
    FAILED = "Failed"
    ABANDONED = "Abandoned"


LEGAL_TRANSITIONS = {
    NodeState.IDLE: {NodeState.READY, NodeState.ABANDONED},
    NodeState.READY: {NodeState.DISPATCHED},
    NodeState.DISPATCHED: {NodeState.RUNNING, NodeState.FAILED},
    NodeState.RUNNING: {NodeState.COMPLETED, NodeState.FAILED},
    NodeState.FAILED: {NodeState.READY, NodeState.ABANDONED},
    NodeState.COMPLETED: set(),
    NodeState.ABANDONED: set(),
}
TERMINAL = (NodeState.COMPLETED, NodeState.ABANDONED)


class FailureClass(str, Enum):
    TRANSIENT = "Transient"
    PERMANENT = "Permanent"
    UNKNOWN = "Unknown"


class Outcome(str, Enum):
    SUCCESS = "Success"
    FAILURE = "Failure"
    LOST = "Lost"  # contact lost; the remote execution may still be alive
    REJECTED = "Rejected"  # submission refused before anything ran


# failure causes used across the simulator
LOST = "LOST"
OUTAGE = "OUTAGE"
DISK_FULL = "DISK_FULL"
APP_ERROR = "APP_ERROR"
TRANSFER_FAILED = "TRANSFER_FAILED"
SITE_DOWN = "SITE_DOWN"
AUTH_DENIED = "AUTH_DENIED"
UPSTREAM = "UPSTREAM_ABANDONED"


def default_classifier(cause: str) -> FailureClass:
    if cause in (DISK_FULL, APP_ERROR):
        return FailureClass.PERMANENT
    if cause in (LOST, OUTAGE, TRANSFER_FAILED, SITE_DOWN, AUTH_DENIED):
        return FailureClass.TRANSIENT
    return FailureClass.UNKNOWN


class ExecutorError(RuntimeError):
    pass


class SubmissionRejected(ExecutorError):
    pass


@dataclass(frozen=True)
class RetryPolicy:
    """Resubmission rules.

    max_attempts=None is the unbounded auto-restart mode. With blind_restart
    the classification is ignored and permanent failures are resubmitted too,
    which is how a real failure gets masked by a restart loop.
    """

    max_attempts: int | None = 5
    classify_failure: Callable[[str], FailureClass] = default_classifier
    blind_restart: bool = False
    loop_threshold: int = 3

    def __post_init__(self) -> None:
        if self.max_attempts is not None and self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.loop_threshold < 1:
            raise ValueError("loop_threshold must be >= 1")


@dataclass
class MasterConfig:
    master_id: str
    max_tracked_processes: int = 400
    assigned_jobs: set[str] = field(default_factory=set)

    def __post_init__(self) -> None:
        if self.max_tracked_processes < 1:
            raise ValueError(f"{self.master_id}: max_tracked_processes must be >= 1")


class NodeRunState:
    __slots__ = ("node", "job", "index", "state", "attempts", "wasted_cpu_seconds", "causes", "held_until")

    def __init__(self, node, job, index):
        self.node = node
        self.job = job
        self.index = index
        self.state = NodeState.IDLE
        self.attempts = 0
        self.wasted_cpu_seconds = 0.0
        self.causes: list[str] = []
        self.held_until: float | None = None

    @property
    def node_id(self) -> str:
        return self.node.node_id

    @property
    def kind(self) -> NodeKind:
        return self.node.kind

    def __repr__(self) -> str:
        return f"NodeRunState({self.node_id}, {self.state.value}, attempts={self.attempts})"


class JobRun:
    __slots__ = ("dag", "site", "master_id", "seq", "dn", "nodes", "by_id", "status", "events", "admitted", "last_run")

    def __init__(self, dag: Dag, site: str, master_id: str, seq: int, dn: str):
        self.dag = dag
        self.site = site
        self.master_id = master_id
        self.seq = seq
        self.dn = dn
        self.nodes = [NodeRunState(n, self, i) for i, n in enumerate(dag.nodes)]
        self.by_id = {ns.node_id: ns for ns in self.nodes}
        self.status = "active"  # -> completed | abandoned
        self.events = dag.events
        self.admitted = False  # holds a token of its site's admission gate
        runs = [ns.index for ns in self.nodes if ns.node.kind is NodeKind.RUN]
        self.last_run = runs[-1] if runs else -1

    @property
    def job_id(self) -> str:
        return self.dag.job_id


@dataclass(frozen=True)
class DispatchAction:
    kind: NodeKind
    node: NodeRunState
    site: str
    master_id: str


@dataclass(frozen=True)
class ReplicaEntry:
    job_id: str
    request_id: str
    site: str
    events: int
    files: tuple[tuple[str, float], ...]

    def line(self) -> str:
        size = sum(s for _, s in self.files)
        return f"{self.job_id} {self.request_id} {self.site} events={self.events} files={len(self.files)} mb={size:.3f}"


class EventLog:
    """Append-only transition log: `time master job node old->new cause`."""

    def __init__(self, header: Iterable[str] = ()):
        self.header = [f"# {h}" for h in header]
        self.lines: list[str] = []

    def record(self, now: float, master: str, job: str, node: str, old: str, new: str, cause: str = "-") -> None:
        self.lines.append(f"{now:.3f} {master} {job} {node} {old}->{new} {cause or '-'}")

    def text(self) -> str:
        return "\n".join(self.header + self.lines) + "\n"


class _Master:
    __slots__ = ("config", "tracked", "peak", "ready", "saturated", "incidents")

    def __init__(self, config: MasterConfig):
        self.config = config
        self.tracked = 0
        self.peak = 0
        self.ready: list = []
        self.saturated = False
        self.incidents = 0

    @property
    def free(self) -> int:
        return self.config.max_tracked_processes - self.tracked


class _Gate:
    __slots__ = ("limit", "admitted", "waiting")

    def __init__(self, limit: int | None):
        if limit is not None and limit < 1:
            raise ValueError("site admission limit must be >= 1")
        self.limit = limit
        self.admitted = 0
        self.waiting: list = []  # Ready stage-ins of jobs without a token

    def has_room(self) -> bool:
        return self.limit is None or self.admitted < self.limit


class Executor:
    def __init__(
        self,
        masters: Iterable[MasterConfig],
        sites: dict[str, int | None] | Iterable[str],
        policy: RetryPolicy | None = None,
        log: EventLog | None = None,
    ):
        self.masters = {m.master_id: _Master(m) for m in masters}
        if not isinstance(sites, dict):
            sites = {s: None for s in sites}
        self.gates = {s: _Gate(limit) for s, limit in sites.items()}
        self.policy = policy or RetryPolicy()
        self.log = log if log is not None else EventLog()
        self.jobs: dict[str, JobRun] = {}
        self.assignment: dict[str, str] = {}  # job_id -> site, fixed at submission
        self.events_completed = 0
        self.wasted_cpu_seconds = 0.0
        self.saturation_events: list[tuple[float, str, int]] = []
        self.closed = False
        self.closed_at: float | None = None
        self.live_nodes = 0  # Dispatched or Running
        self._seq = 0
        self.now = 0.0

    # -- submission -----------------------------------------------------------

    def submit_dag(self, dag: Dag, site: str, master_id: str, dn: str = "", now: float = 0.0) -> JobRun:
        if self.closed:
            raise SubmissionRejected("executor is closed")
        if site not in self.gates:
            raise SubmissionRejected(f"{dag.job_id}: unknown site {site!r}")
        if master_id not in self.masters:
            raise SubmissionRejected(f"{dag.job_id}: unknown master {master_id!r}")
        if dag.job_id in self.jobs:
            raise SubmissionRejected(f"duplicate job_id {dag.job_id!r}")
        check = validate_dag(dag)
        if not check:
            raise SubmissionRejected(f"{dag.job_id}: invalid DAG ({check.rule}: {check.detail})")
        self._seq += 1
        job = JobRun(dag, site, master_id, self._seq, dn)
        self.jobs[dag.job_id] = job
        self.assignment[dag.job_id] = site
        self.masters[master_id].config.assigned_jobs.add(dag.job_id)
        for ns in job.nodes:
            if not dag.parents(ns.node_id):
                self._set(ns, NodeState.READY, now)
                self._push_ready(ns)
        return job

    # -- dispatch ---------------------------------------------------------------

    def dispatch_step(self, now: float, master_id: str | None = None) -> list[DispatchAction]:
        """Start as many ready node executions as the tracked-process caps allow."""
        self.now = now
        actions: list[DispatchAction] = []
        for gate in self.gates.values():
            # hand parked stage-ins back to their masters while tokens are free
            room = len(gate.waiting) if gate.limit is None else gate.limit - gate.admitted
            while gate.waiting and room > 0:
                ns = heapq.heappop(gate.waiting)[2]
                self._push_ready(ns)
                room -= 1
        masters = [self.masters[master_id]] if master_id else self.masters.values()
        for m in masters:
            heap = m.ready
            while heap and m.tracked < m.config.max_tracked_processes:
                ns = heapq.heappop(heap)[2]
                job = ns.job
                if not job.admitted and ns.node.kind is NodeKind.STAGE_IN:
                    gate = self.gates[job.site]
                    if not gate.has_room():
                        heapq.heappush(gate.waiting, (job.seq, ns.index, ns))
                        continue
                    gate.admitted += 1
                    job.admitted = True
                self._set(ns, NodeState.DISPATCHED, now)
                m.tracked += 1
                self.live_nodes += 1
                actions.append(DispatchAction(ns.node.kind, ns, job.site, m.config.master_id))
            if m.tracked > m.peak:
                m.peak = m.tracked
            if heap and m.tracked >= m.config.max_tracked_processes:
                if not m.saturated:
                    m.saturated = True
                    m.incidents += 1
                    self.saturation_events.append((now, m.config.master_id, len(heap)))
                    self.log.record(now, m.config.master_id, "-", "-", "open", "saturated", f"deferred={len(heap)}")
            else:
                m.saturated = False
        return actions

    def waiting_admission(self, site: str) -> int:
        return len(self.gates[site].waiting)

    def admitted(self, site: str) -> int:
        return self.gates[site].admitted

    def ready_count(self, master_id: str) -> int:
        return len(self.masters[master_id].ready)

    def tracked(self, master_id: str) -> int:
        return self.masters[master_id].tracked

    def peak_tracked(self, master_id: str) -> int:
        return self.masters[master_id].peak

    def saturation_incidents(self, master_id: str | None = None) -> int:
        if master_id:
            return self.masters[master_id].incidents
        return sum(m.incidents for m in self.masters.values())

    # -- outcomes ---------------------------------------------------------------

    def mark_running(self, ns: NodeRunState, now: float) -> None:
        ns.attempts += 1
        self._set(ns, NodeState.RUNNING, now, f"attempt={ns.attempts}")

    def handle_outcome(
        self,
        ns: NodeRunState,
        outcome: Outcome,
        cause: str = "",
        now: float | None = None,
        retry_at: float | None = None,
    ) -> NodeState:
        now = self.now if now is None else now
        self.now = now
        if ns.state not in (NodeState.DISPATCHED, NodeState.RUNNING):
            raise ExecutorError(f"{ns.node_id}: outcome {outcome.value} for node in state {ns.state.value}")
        self._release_slot(ns)
        job = ns.job
        if outcome is Outcome.SUCCESS:
            if ns.state is not NodeState.RUNNING:
                raise ExecutorError(f"{ns.node_id}: success reported before the node started")
            kind = ns.node.kind
            cause = f"events={job.events}" if kind is NodeKind.STAGE_OUT else "-"
            self._set(ns, NodeState.COMPLETED, now, cause)
            if ns.index == job.last_run:
                self._release_token(job)
            if kind is NodeKind.STAGE_OUT:
                self.events_completed += job.events
            if kind is NodeKind.CLEANUP:
                self._finish_job(job)
            else:
                self._release_children(ns, now)
            return ns.state

        if outcome is Outcome.REJECTED:
            self._set(ns, NodeState.FAILED, now, cause or "REJECTED")
            if ns.node.kind is NodeKind.STAGE_IN:
                # nothing reached the site yet; let another job use the token
                self._release_token(job)
            ns.held_until = retry_at
            self._set(ns, NodeState.READY, now, f"HOLD until={retry_at:.3f}" if retry_at is not None else "RESUBMIT")
            if retry_at is None or retry_at <= now:
                ns.held_until = None
                self._push_ready(ns)
            return ns.state

        cause = cause or (LOST if outcome is Outcome.LOST else APP_ERROR)
        ns.causes.append(cause)
        self._set(ns, NodeState.FAILED, now, cause)
        policy = self.policy
        permanent = policy.classify_failure(cause) is FailureClass.PERMANENT
        if permanent and not policy.blind_restart:
            self._abandon(ns, now, f"PERMANENT {cause}")
        elif policy.max_attempts is None or ns.attempts < policy.max_attempts:
            self._set(ns, NodeState.READY, now, f"RETRY {ns.attempts + 1}")
            self._push_ready(ns)
        else:
            self._abandon(ns, now, f"EXHAUSTED {cause}")
        return ns.state

    def release_hold(self, ns: NodeRunState, now: float) -> None:
        """A held node (site down, not yet authorized) becomes dispatchable again."""
        if ns.state is NodeState.READY and ns.held_until is not None:
            ns.held_until = None
            self._push_ready(ns)

    def add_waste(self, ns: NodeRunState, cpu_seconds: float) -> None:
        if cpu_seconds < 0:
            raise ExecutorError("wasted CPU must be >= 0")
        ns.wasted_cpu_seconds += cpu_seconds
        self.wasted_cpu_seconds += cpu_seconds

    # -- internals ------------------------------------------------------------------

    def _set(self, ns: NodeRunState, new: NodeState, now: float, cause: str = "-") -> None:
        old = ns.state
        if new not in LEGAL_TRANSITIONS[old]:
            raise ExecutorError(f"{ns.node_id}: illegal transition {old.value}->{new.value}")
        ns.state = new
        job = ns.job
        self.log.lines.append(
            f"{now:.3f} {job.master_id} {job.dag.job_id} {ns.node.local_name} {old.value}->{new.value} {cause}"
        )

    def _push_ready(self, ns: NodeRunState) -> None:
        heapq.heappush(self.masters[ns.job.master_id].ready, (ns.job.seq, ns.index, ns))

    def _release_slot(self, ns: NodeRunState) -> None:
        self.masters[ns.job.master_id].tracked -= 1
        self.live_nodes -= 1

    def _release_token(self, job: JobRun) -> None:
        if job.admitted:
            job.admitted = False
            self.gates[job.site].admitted -= 1

    def _release_children(self, ns: NodeRunState, now: float) -> None:
        job = ns.job
        dag = job.dag
        for child_id in dag.children(ns.node_id):
            child = job.by_id[child_id]
            if child.state is NodeState.IDLE and all(
                job.by_id[p].state is NodeState.COMPLETED for p in dag.parents(child_id)
            ):
                self._set(child, NodeState.READY, now)
                self._push_ready(child)

    def _abandon(self, ns: NodeRunState, now: float, cause: str) -> None:
        self._set(ns, NodeState.ABANDONED, now, cause)
        job = ns.job
        self._release_token(job)
        if ns.node.kind is NodeKind.CLEANUP:
            self._finish_job(job)
            return
        # skip what can no longer run; clean-up still gets its best-effort pass
        for other in job.nodes:
            if other.state is NodeState.IDLE and other.node.kind is not NodeKind.CLEANUP:
                self._set(other, NodeState.ABANDONED, now, UPSTREAM)
        cleanup = job.nodes[-1]
        if cleanup.state is NodeState.IDLE:
            self._set(cleanup, NodeState.READY, now, UPSTREAM)
            self._push_ready(cleanup)

    def _finish_job(self, job: JobRun) -> None:
        stage_out = next(ns for ns in job.nodes if ns.node.kind is NodeKind.STAGE_OUT)
        job.status = "completed" if stage_out.state is NodeState.COMPLETED else "abandoned"

    # -- campaign end ---------------------------------------------------------------

    def close(self, now: float) -> None:
        self.closed = True
        self.closed_at = now

    def register_replicas(self, completed_jobs: Iterable[JobRun] | None = None) -> list[ReplicaEntry]:
        """Catalog entries for every completed stage-out; only once the campaign is over."""
        if not self.closed and self.live_nodes:
            raise ExecutorError("replica registration happens at the end of processing")
        if not self.closed and any(ns.state not in TERMINAL for j in self.jobs.values() for ns in j.nodes):
            raise ExecutorError("replica registration happens at the end of processing")
        if completed_jobs is None:
            completed_jobs = [j for j in self.jobs.values() if self.stage_out_done(j)]
        entries = []
        for job in completed_jobs:
            stage_out = next(ns for ns in job.nodes if ns.node.kind is NodeKind.STAGE_OUT)
            if stage_out.state is not NodeState.COMPLETED:
                raise ExecutorError(f"{job.job_id}: stage-out did not complete")
            entries.append(ReplicaEntry(job.job_id, job.dag.request_id, job.site, job.events, stage_out.node.files))
        return entries

    @staticmethod
    def stage_out_done(job: JobRun) -> bool:
        return any(ns.node.kind is NodeKind.STAGE_OUT and ns.state is NodeState.COMPLETED for ns in job.nodes)

    # -- reporting ------------------------------------------------------------------

    def retry_loops(self) -> list[tuple[str, str, int]]:
        """Nodes restarted over and over for one and the same reason."""
        threshold = self.policy.loop_threshold
        found = []
        for job in self.jobs.values():
            for ns in job.nodes:
                if len(ns.causes) >= threshold and len(set(ns.causes)) == 1:
                    found.append((ns.node_id, ns.causes[0], ns.attempts))
        return found

    def counts(self) -> dict[str, int]:
        out = {"completed": 0, "abandoned": 0, "active": 0}
        for job in self.jobs.values():
            out[job.status] += 1
        return out
