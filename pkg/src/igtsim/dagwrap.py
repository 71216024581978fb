"""MOP-style DAG representation of a production job.

Every job becomes a linear chain: stage-in of the execution environment, one
run node per pipeline stage, stage-out of the results and a clean-up of the
worker. DAGs are immutable; run-time state lives in the executor.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

from igtsim.workload import JobSpec, StageProfile

HELPER_FILES_MB = 10.0
APP_DISTRIBUTION_MB = 500.0


class NodeKind(str, Enum):
    STAGE_IN = "StageIn"
    RUN = "Run"
    STAGE_OUT = "StageOut"
    CLEANUP = "Cleanup"


class StageInMode(str, Enum):
    PER_JOB = "PerJob"
    PRE_INSTALLED = "PreInstalled"


class DagError(ValueError):
    pass


@dataclass(frozen=True)
class DagNode:
    node_id: str
    kind: NodeKind
    stage: StageProfile | None = None  # Run nodes
    events: int = 0
    files: tuple[tuple[str, float], ...] = ()  # StageIn/StageOut: (name, MB)

    @property
    def local_name(self) -> str:
        return self.node_id.rsplit(":", 1)[-1]

    @property
    def size_mb(self) -> float:
        return sum(size for _, size in self.files)

    def summary(self) -> str:
        if self.kind is NodeKind.RUN:
            return f"stage={self.stage.name} events={self.events}"
        if self.files:
            return f"files={len(self.files)} mb={self.size_mb:.3f}"
        return "-"


@dataclass(frozen=True)
class Dag:
    job_id: str
    nodes: tuple[DagNode, ...]
    edges: tuple[tuple[str, str], ...]
    request_id: str = ""
    events: int = 0
    _parents: dict = field(default=None, compare=False, repr=False)
    _children: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        parents: dict[str, list[str]] = {n.node_id: [] for n in self.nodes}
        children: dict[str, list[str]] = {n.node_id: [] for n in self.nodes}
        for p, c in self.edges:
            children.setdefault(p, []).append(c)
            parents.setdefault(c, []).append(p)
        object.__setattr__(self, "_parents", parents)
        object.__setattr__(self, "_children", children)

    def node(self, node_id: str) -> DagNode:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise KeyError(node_id)

    def parents(self, node_id: str) -> list[str]:
        return self._parents[node_id]

    def children(self, node_id: str) -> list[str]:
        return self._children[node_id]

    def of_kind(self, kind: NodeKind) -> list[DagNode]:
        return [n for n in self.nodes if n.kind is kind]

    def to_text(self) -> str:
        lines = [f"NODE {n.node_id} {n.kind.value} {n.summary()}" for n in self.nodes]
        lines += [f"EDGE {p} {c}" for p, c in self.edges]
        return "\n".join(lines) + "\n"


def wrap_job(
    job: JobSpec,
    stage_in_mode: StageInMode = StageInMode.PRE_INSTALLED,
    helper_mb: float = HELPER_FILES_MB,
    app_mb: float = APP_DISTRIBUTION_MB,
) -> Dag:
    """StageIn → Run(stage 1) → … → Run(stage k) → StageOut → Cleanup."""
    stages = job.pipeline.stages
    if not stages:
        raise DagError(f"{job.job_id}: pipeline has no stages")
    jid = job.job_id
    files = [(f"{jid}.helpers.tar", helper_mb)]
    if StageInMode(stage_in_mode) is StageInMode.PER_JOB:
        files.append(("cms-app-distribution.tar", app_mb))
    nodes = [DagNode(f"{jid}:stagein", NodeKind.STAGE_IN, files=tuple(files))]
    for i, stage in enumerate(stages, start=1):
        nodes.append(DagNode(f"{jid}:run{i}-{stage.name}", NodeKind.RUN, stage=stage, events=job.events))
    outputs = tuple((f"{jid}.{s.name}.out", s.output_per_event * job.events) for s in stages)
    nodes.append(DagNode(f"{jid}:stageout", NodeKind.STAGE_OUT, files=outputs))
    nodes.append(DagNode(f"{jid}:cleanup", NodeKind.CLEANUP))
    edges = tuple((a.node_id, b.node_id) for a, b in zip(nodes, nodes[1:]))
    return Dag(jid, tuple(nodes), edges, job.request_id, job.events)


@dataclass(frozen=True)
class DagValidation:
    ok: bool
    rule: str = ""
    detail: str = ""

    def __bool__(self) -> bool:
        return self.ok


def _topological(node_ids: Iterable[str], edges) -> list[str] | None:
    indeg = {n: 0 for n in node_ids}
    children: dict[str, list[str]] = {n: [] for n in indeg}
    for p, c in edges:
        children[p].append(c)
        indeg[c] += 1
    ready = deque(n for n, d in indeg.items() if d == 0)
    order = []
    while ready:
        n = ready.popleft()
        order.append(n)
        for c in children[n]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
    return order if len(order) == len(indeg) else None


def validate_dag(dag: Dag) -> DagValidation:
    """Check structure; report the first violated rule instead of raising."""
    ids = [n.node_id for n in dag.nodes]
    if len(set(ids)) != len(ids):
        return DagValidation(False, "duplicate-node", "node ids are not unique")
    known = set(ids)
    for p, c in dag.edges:
        if p not in known or c not in known:
            return DagValidation(False, "unknown-node", f"edge {p}->{c} references an unknown node")
    if _topological(ids, dag.edges) is None:
        return DagValidation(False, "cycle", "dependency graph has a cycle")
    parents = {i: [] for i in ids}
    children = {i: [] for i in ids}
    for p, c in dag.edges:
        parents[c].append(p)
        children[p].append(c)
    kinds = {n.node_id: n.kind for n in dag.nodes}

    stage_ins = [i for i in ids if kinds[i] is NodeKind.STAGE_IN]
    roots = [i for i in ids if not parents[i]]
    if len(stage_ins) != 1 or roots != stage_ins:
        return DagValidation(False, "root", f"need exactly one StageIn as the only root, roots={roots}")
    cleanups = [i for i in ids if kinds[i] is NodeKind.CLEANUP]
    leaves = [i for i in ids if not children[i]]
    if len(cleanups) != 1 or leaves != cleanups:
        return DagValidation(False, "leaf", f"need exactly one Cleanup as the only leaf, leaves={leaves}")

    reach = {stage_ins[0]}
    todo = [stage_ins[0]]
    while todo:
        for c in children[todo.pop()]:
            if c not in reach:
                reach.add(c)
                todo.append(c)
    unreachable = [i for i in ids if kinds[i] is NodeKind.RUN and i not in reach]
    if unreachable:
        return DagValidation(False, "reachability", f"Run nodes not reachable from StageIn: {unreachable}")

    stage_outs = [i for i in ids if kinds[i] is NodeKind.STAGE_OUT]
    if len(stage_outs) != 1:
        return DagValidation(False, "stageout", f"need exactly one StageOut, found {len(stage_outs)}")
    so = stage_outs[0]
    run_ids = [i for i in ids if kinds[i] is NodeKind.RUN]
    ancestors = _ancestors(so, parents)
    if run_ids and (not any(kinds[p] is NodeKind.RUN for p in parents[so]) or not set(run_ids) <= ancestors):
        return DagValidation(False, "stageout", "StageOut must depend on the final Run node")
    if cleanups[0] not in children[so]:
        return DagValidation(False, "cleanup-edge", "missing StageOut->Cleanup edge")
    return DagValidation(True)


def _ancestors(node_id: str, parents: dict[str, list[str]]) -> set[str]:
    seen: set[str] = set()
    todo = list(parents[node_id])
    while todo:
        n = todo.pop()
        if n not in seen:
            seen.add(n)
            todo.extend(parents[n])
    return seen


def ready_nodes(dag: Dag, completed: set[str] | frozenset[str]) -> frozenset[str]:
    """Nodes whose parents have all completed and which are not completed themselves."""
    unknown = set(completed) - {n.node_id for n in dag.nodes}
    if unknown:
        raise DagError(f"unknown node ids: {sorted(unknown)}")
    return frozenset(
        n.node_id
        for n in dag.nodes
        if n.node_id not in completed and all(p in completed for p in dag.parents(n.node_id))
    )
