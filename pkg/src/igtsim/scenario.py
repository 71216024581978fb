"""Scenario documents: JSON with a schema version, validated before anything runs.

Validation never raises; it returns a list of messages, each prefixed with the
line of the offending value in the source text when one is known.
"""

from __future__ import annotations

import json
import math
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from igtsim.dagwrap import StageInMode, wrap_job
from igtsim.executor import EventLog, Executor, MasterConfig, RetryPolicy
from igtsim.ftsh import RetrySpec
from igtsim.gridsim import DAY, HOUR, FailureModel, GridSim, Site, TransferChannel
from igtsim.monitor import theoretical_max
from igtsim.vo import CertAuthority, GridmapSync, GridUser, UserDirectory
from igtsim.workload import (
    DEFAULT_STAGES,
    STAGE_ORDER,
    PipelineSpec,
    ProductionRequest,
    WorkloadError,
    build_pipeline,
    chunk_request,
)

SCHEMA_VERSION = 1
BUNDLED = Path(__file__).parent / "scenarios"


class ScenarioError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("\n".join(errors))
        self.errors = errors


# -- structure ------------------------------------------------------------------


@dataclass
class SiteSpec:
    name: str
    worker_cpus: int
    cpu_speed: float
    os: str = ""
    comment: str = ""
    offline_cpus: int = 0
    disk_free_mb: float = 1.0e9
    join_day: float = 0.0
    max_submitted: int | str | None = "cpus"


@dataclass
class OutageSpec:
    start_day: float
    end_day: float
    sites: list[str] = field(default_factory=lambda: ["*"])
    label: str = ""


@dataclass
class MasterSpec:
    id: str
    max_tracked_processes: int = 400


@dataclass
class ChannelSpec:
    bandwidth: float = 10.0
    latency: float = 1.0
    hang_probability: float = 0.01
    hang_profile: list[float] | None = None


@dataclass
class ChannelOverride:
    master: str
    site: str
    bandwidth: float | None = None
    latency: float | None = None
    hang_probability: float | None = None
    hang_profile: list[float] | None = None


@dataclass
class FailureSpec:
    disk_full_probability: float = 0.0
    lost_contact_probability: float = 0.0
    detection_delay_hours: float = 6.0


@dataclass
class RetrySpecDoc:
    max_attempts: int | None = 5
    blind_restart: bool = False
    loop_threshold: int = 3


@dataclass
class FtshSpecDoc:
    enabled: bool = True
    timeout: float = 300.0
    max_attempts: int = 5
    backoff: float = 60.0
    backoff_mode: str = "fixed"
    multiplier: float = 2.0


@dataclass
class VoGroup:
    name: str
    account: str


@dataclass
class VoUser:
    dn: str
    groups: list[str]
    ca: str = "DOESG"


@dataclass
class VoChange:
    day: float
    action: str  # add | remove
    dn: str
    group: str
    ca: str = "DOESG"


@dataclass
class VoSpec:
    sync_interval_hours: float = 6.0
    groups: list[VoGroup] = field(default_factory=list)
    users: list[VoUser] = field(default_factory=list)
    changes: list[VoChange] = field(default_factory=list)


@dataclass
class RequestSpec:
    id: str
    events: int
    pipeline: str
    master: str
    sites: dict[str, float] | str = "capacity"
    chunk_size: int = 250
    dn: str = ""


@dataclass
class Scenario:
    schema_version: int
    name: str
    seed: int
    horizon_days: float
    sites: list[SiteSpec]
    masters: list[MasterSpec]
    pipelines: dict[str, list[str]]
    requests: list[RequestSpec]
    outages: list[OutageSpec] = field(default_factory=list)
    channel_defaults: ChannelSpec = field(default_factory=ChannelSpec)
    channels: list[ChannelOverride] = field(default_factory=list)
    failures: FailureSpec = field(default_factory=FailureSpec)
    retry: RetrySpecDoc = field(default_factory=RetrySpecDoc)
    ftsh: FtshSpecDoc = field(default_factory=FtshSpecDoc)
    vo: VoSpec | None = None
    stage_in: str = "PreInstalled"
    pileup_ratio: float = 200.0
    ceiling_pipeline: str = ""
    declared_ceiling: float | None = None
    sample_interval_hours: float = 1.0
    cleanup_seconds: float = 5.0
    runtime_jitter: float = 0.0
    description: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @property
    def horizon(self) -> float:
        return self.horizon_days * DAY

    def pipeline(self, name: str) -> PipelineSpec:
        return build_pipeline(self.pipelines[name], self.pileup_ratio)

    def ceiling_pipeline_spec(self) -> PipelineSpec:
        return self.pipeline(self.ceiling_pipeline or self.requests[0].pipeline)

    def total_events(self) -> int:
        return sum(r.events for r in self.requests)

    def total_jobs(self) -> int:
        return sum(math.ceil(r.events / r.chunk_size) for r in self.requests)


# -- line tracking ----------------------------------------------------------------


class _Locator:
    """Maps JSON paths to source lines by re-scanning the document."""

    def __init__(self, text: str):
        self.text = text
        self.lines: dict[tuple, int] = {}
        self._dec = json.JSONDecoder()
        try:
            self._value(self._ws(0), ())
        except (ValueError, IndexError):
            pass

    def line(self, path: tuple) -> int | None:
        while path:
            if path in self.lines:
                return self.lines[path]
            path = path[:-1]
        return self.lines.get(())

    def _ws(self, i: int) -> int:
        while i < len(self.text) and self.text[i] in " \t\r\n":
            i += 1
        return i

    def _lineno(self, i: int) -> int:
        return self.text.count("\n", 0, i) + 1

    def _value(self, i: int, path: tuple) -> int:
        self.lines[path] = self._lineno(i)
        ch = self.text[i]
        if ch == "{":
            i = self._ws(i + 1)
            if self.text[i] == "}":
                return i + 1
            while True:
                key, i = self._dec.raw_decode(self.text, i)
                i = self._ws(i)
                i = self._ws(i + 1)  # colon
                i = self._ws(self._value(i, path + (key,)))
                if self.text[i] == "}":
                    return i + 1
                i = self._ws(i + 1)
        if ch == "[":
            i = self._ws(i + 1)
            if self.text[i] == "]":
                return i + 1
            k = 0
            while True:
                i = self._ws(self._value(i, path + (k,)))
                k += 1
                if self.text[i] == "]":
                    return i + 1
                i = self._ws(i + 1)
        _, end = self._dec.raw_decode(self.text, i)
        return end


def _fmt_path(path: tuple) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else p)
    return out or "<root>"


# -- typed loading ------------------------------------------------------------------


class _Loader:
    def __init__(self, locator: _Locator | None):
        self.loc = locator
        self.errors: list[str] = []

    def err(self, path: tuple, msg: str) -> None:
        line = self.loc.line(path) if self.loc else None
        prefix = f"line {line}: " if line else ""
        self.errors.append(f"{prefix}{_fmt_path(path)}: {msg}")

    def number(self, v: Any, path: tuple, integer: bool = False) -> Any:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and not isinstance(v, int)):
            self.err(path, f"expected {'an integer' if integer else 'a number'}, got {v!r}")
            return None
        if isinstance(v, float) and math.isnan(v):
            self.err(path, "NaN is not allowed")
            return None
        return v

    def record(self, cls, data: Any, path: tuple):
        if not isinstance(data, dict):
            self.err(path, f"expected an object for {cls.__name__}")
            return None
        known = {f.name: f for f in fields(cls)}
        for key in data:
            if key not in known:
                self.err(path + (key,), "unknown field")
        kwargs = {}
        for name, f in known.items():
            if name not in data:
                if _required(f):
                    self.err(path, f"missing required field '{name}'")
                continue
            kwargs[name] = self.convert(cls, name, data[name], path + (name,))
        if len(self.errors) and any(name not in kwargs and _required(f) for name, f in known.items()):
            return None
        try:
            return cls(**kwargs)
        except TypeError as exc:  # pragma: no cover - guarded above
            self.err(path, str(exc))
            return None

    def convert(self, cls, name: str, v: Any, path: tuple):
        kind = _FIELD_KINDS.get((cls, name), "any")
        if isinstance(kind, type):
            return self.record(kind, v, path)
        if isinstance(kind, tuple) and kind[0] == "list":
            if not isinstance(v, list):
                self.err(path, "expected a list")
                return []
            return [self.record(kind[1], item, path + (i,)) for i, item in enumerate(v)]
        if kind == "int":
            return self.number(v, path, integer=True)
        if kind == "num":
            return self.number(v, path)
        if kind == "str":
            if not isinstance(v, str):
                self.err(path, f"expected a string, got {v!r}")
            return v
        if kind == "bool":
            if not isinstance(v, bool):
                self.err(path, f"expected true/false, got {v!r}")
            return v
        if kind == "opt_num":
            return None if v is None else self.number(v, path)
        if kind == "opt_int":
            return None if v is None else self.number(v, path, integer=True)
        if kind == "num_list":
            if v is None:
                return None
            if not isinstance(v, list):
                self.err(path, "expected a list of numbers")
                return None
            return [self.number(x, path + (i,)) for i, x in enumerate(v)]
        if kind == "str_list":
            if not isinstance(v, list) or not all(isinstance(x, str) for x in v):
                self.err(path, "expected a list of strings")
                return []
            return v
        if kind == "vo":
            return None if v is None else self.record(VoSpec, v, path)
        return v


def _required(f) -> bool:
    return f.default is MISSING and f.default_factory is MISSING


_FIELD_KINDS: dict[tuple[type, str], Any] = {
    (Scenario, "schema_version"): "int",
    (Scenario, "name"): "str",
    (Scenario, "seed"): "int",
    (Scenario, "horizon_days"): "num",
    (Scenario, "sites"): ("list", SiteSpec),
    (Scenario, "masters"): ("list", MasterSpec),
    (Scenario, "requests"): ("list", RequestSpec),
    (Scenario, "outages"): ("list", OutageSpec),
    (Scenario, "channel_defaults"): ChannelSpec,
    (Scenario, "channels"): ("list", ChannelOverride),
    (Scenario, "failures"): FailureSpec,
    (Scenario, "retry"): RetrySpecDoc,
    (Scenario, "ftsh"): FtshSpecDoc,
    (Scenario, "vo"): "vo",
    (Scenario, "stage_in"): "str",
    (Scenario, "pileup_ratio"): "num",
    (Scenario, "ceiling_pipeline"): "str",
    (Scenario, "declared_ceiling"): "opt_num",
    (Scenario, "sample_interval_hours"): "num",
    (Scenario, "cleanup_seconds"): "num",
    (Scenario, "runtime_jitter"): "num",
    (Scenario, "description"): "str",
    (SiteSpec, "name"): "str",
    (SiteSpec, "worker_cpus"): "int",
    (SiteSpec, "cpu_speed"): "num",
    (SiteSpec, "os"): "str",
    (SiteSpec, "comment"): "str",
    (SiteSpec, "offline_cpus"): "int",
    (SiteSpec, "disk_free_mb"): "num",
    (SiteSpec, "join_day"): "num",
    (OutageSpec, "start_day"): "num",
    (OutageSpec, "end_day"): "num",
    (OutageSpec, "sites"): "str_list",
    (OutageSpec, "label"): "str",
    (MasterSpec, "id"): "str",
    (MasterSpec, "max_tracked_processes"): "int",
    (ChannelSpec, "bandwidth"): "num",
    (ChannelSpec, "latency"): "num",
    (ChannelSpec, "hang_probability"): "num",
    (ChannelSpec, "hang_profile"): "num_list",
    (ChannelOverride, "master"): "str",
    (ChannelOverride, "site"): "str",
    (ChannelOverride, "bandwidth"): "opt_num",
    (ChannelOverride, "latency"): "opt_num",
    (ChannelOverride, "hang_probability"): "opt_num",
    (ChannelOverride, "hang_profile"): "num_list",
    (FailureSpec, "disk_full_probability"): "num",
    (FailureSpec, "lost_contact_probability"): "num",
    (FailureSpec, "detection_delay_hours"): "num",
    (RetrySpecDoc, "max_attempts"): "opt_int",
    (RetrySpecDoc, "blind_restart"): "bool",
    (RetrySpecDoc, "loop_threshold"): "int",
    (FtshSpecDoc, "enabled"): "bool",
    (FtshSpecDoc, "timeout"): "num",
    (FtshSpecDoc, "max_attempts"): "int",
    (FtshSpecDoc, "backoff"): "num",
    (FtshSpecDoc, "backoff_mode"): "str",
    (FtshSpecDoc, "multiplier"): "num",
    (VoSpec, "sync_interval_hours"): "num",
    (VoSpec, "groups"): ("list", VoGroup),
    (VoSpec, "users"): ("list", VoUser),
    (VoSpec, "changes"): ("list", VoChange),
    (VoGroup, "name"): "str",
    (VoGroup, "account"): "str",
    (VoUser, "dn"): "str",
    (VoUser, "groups"): "str_list",
    (VoUser, "ca"): "str",
    (VoChange, "day"): "num",
    (VoChange, "action"): "str",
    (VoChange, "dn"): "str",
    (VoChange, "group"): "str",
    (VoChange, "ca"): "str",
    (RequestSpec, "id"): "str",
    (RequestSpec, "events"): "int",
    (RequestSpec, "pipeline"): "str",
    (RequestSpec, "master"): "str",
    (RequestSpec, "chunk_size"): "int",
    (RequestSpec, "dn"): "str",
}


# -- semantic checks ----------------------------------------------------------------


def _check(sc: Scenario, ld: _Loader) -> None:
    err = ld.err
    if sc.schema_version != SCHEMA_VERSION:
        err(("schema_version",), f"unsupported schema version {sc.schema_version} (expected {SCHEMA_VERSION})")
    if sc.horizon_days is not None and not sc.horizon_days > 0:
        err(("horizon_days",), "must be > 0")
    if sc.seed is not None and sc.seed < 0:
        err(("seed",), "must be >= 0")
    if sc.sample_interval_hours is not None and not sc.sample_interval_hours > 0:
        err(("sample_interval_hours",), "must be > 0")
    if sc.cleanup_seconds is not None and sc.cleanup_seconds < 0:
        err(("cleanup_seconds",), "must be >= 0")
    if sc.runtime_jitter is not None and not 0 <= sc.runtime_jitter < 1:
        err(("runtime_jitter",), "must be in [0, 1)")
    if sc.pileup_ratio is not None and not sc.pileup_ratio > 0:
        err(("pileup_ratio",), "must be > 0")
    if sc.stage_in not in {m.value for m in StageInMode}:
        err(("stage_in",), f"must be one of {[m.value for m in StageInMode]}")

    site_names = set()
    if not sc.sites:
        err(("sites",), "at least one site is required")
    for i, s in enumerate(sc.sites):
        if s is None:
            continue
        p = ("sites", i)
        if s.name in site_names:
            err(p + ("name",), f"duplicate site {s.name!r}")
        site_names.add(s.name)
        if s.worker_cpus is not None and s.worker_cpus < 0:
            err(p + ("worker_cpus",), "must be >= 0")
        if s.offline_cpus is not None and s.worker_cpus is not None and not 0 <= s.offline_cpus <= s.worker_cpus:
            err(p + ("offline_cpus",), "must be between 0 and worker_cpus")
        if s.cpu_speed is not None and not s.cpu_speed > 0:
            err(p + ("cpu_speed",), "must be > 0")
        if s.disk_free_mb is not None and s.disk_free_mb < 0:
            err(p + ("disk_free_mb",), "must be >= 0")
        if s.join_day is not None and s.join_day < 0:
            err(p + ("join_day",), "must be >= 0")
        ms = s.max_submitted
        if not (ms is None or ms == "cpus" or (isinstance(ms, int) and not isinstance(ms, bool) and ms > 0)):
            err(p + ("max_submitted",), "must be a positive integer, \"cpus\" or null")

    master_ids = set()
    if not sc.masters:
        err(("masters",), "at least one master is required")
    for i, m in enumerate(sc.masters):
        if m is None:
            continue
        if m.id in master_ids:
            err(("masters", i, "id"), f"duplicate master {m.id!r}")
        master_ids.add(m.id)
        if m.max_tracked_processes is not None and m.max_tracked_processes < 1:
            err(("masters", i, "max_tracked_processes"), "must be >= 1")

    for i, o in enumerate(sc.outages):
        if o is None:
            continue
        if o.start_day is not None and o.end_day is not None and not o.end_day > o.start_day:
            err(("outages", i, "end_day"), "must be after start_day")
        for name in o.sites:
            if name != "*" and name not in site_names:
                err(("outages", i, "sites"), f"unknown site {name!r}")

    _check_channel(sc.channel_defaults, ("channel_defaults",), ld)
    for i, c in enumerate(sc.channels):
        if c is None:
            continue
        if c.master not in master_ids:
            err(("channels", i, "master"), f"unknown master {c.master!r}")
        if c.site not in site_names:
            err(("channels", i, "site"), f"unknown site {c.site!r}")
        _check_channel(c, ("channels", i), ld)

    f = sc.failures
    if f is not None:
        for name in ("disk_full_probability", "lost_contact_probability"):
            v = getattr(f, name)
            if v is not None and not 0 <= v <= 1:
                err(("failures", name), "probability must be in [0, 1]")
        if f.detection_delay_hours is not None and f.detection_delay_hours < 0:
            err(("failures", "detection_delay_hours"), "must be >= 0")
    r = sc.retry
    if r is not None:
        if r.max_attempts is not None and r.max_attempts < 1:
            err(("retry", "max_attempts"), "must be >= 1 or null")
        if r.loop_threshold is not None and r.loop_threshold < 2:
            err(("retry", "loop_threshold"), "must be >= 2")
    t = sc.ftsh
    if t is not None:
        try:
            RetrySpec(t.timeout, t.max_attempts, t.backoff, t.backoff_mode, t.multiplier)
        except (ValueError, TypeError) as exc:
            err(("ftsh",), str(exc))

    groups = set()
    if sc.vo is not None:
        v = sc.vo
        if v.sync_interval_hours is not None and not v.sync_interval_hours > 0:
            err(("vo", "sync_interval_hours"), "must be > 0")
        for i, g in enumerate(v.groups):
            if g is None:
                continue
            if g.name in groups:
                err(("vo", "groups", i, "name"), f"duplicate group {g.name!r}")
            groups.add(g.name)
            if not g.account or " " in g.account:
                err(("vo", "groups", i, "account"), "local account must be a non-empty word")
        for i, u in enumerate(v.users):
            if u is None:
                continue
            if not u.dn:
                err(("vo", "users", i, "dn"), "must be non-empty")
            if u.ca not in {c.value for c in CertAuthority}:
                err(("vo", "users", i, "ca"), f"must be one of {[c.value for c in CertAuthority]}")
            for g in u.groups:
                if g not in groups:
                    err(("vo", "users", i, "groups"), f"unknown group {g!r}")
        for i, c in enumerate(v.changes):
            if c is None:
                continue
            if c.action not in ("add", "remove"):
                err(("vo", "changes", i, "action"), "must be 'add' or 'remove'")
            if c.group not in groups:
                err(("vo", "changes", i, "group"), f"unknown group {c.group!r}")
            if c.day is not None and c.day < 0:
                err(("vo", "changes", i, "day"), "must be >= 0")

    for name, stages in (sc.pipelines or {}).items():
        if not isinstance(stages, list) or not all(isinstance(x, str) for x in stages):
            err(("pipelines", name), "expected a list of stage names")
            continue
        unknown = [x for x in stages if x not in DEFAULT_STAGES]
        if unknown:
            err(("pipelines", name), f"unknown stages {unknown} (known: {list(STAGE_ORDER)})")
            continue
        try:
            build_pipeline(stages, sc.pileup_ratio or 200.0)
        except WorkloadError as exc:
            err(("pipelines", name), str(exc))
    if sc.ceiling_pipeline and sc.ceiling_pipeline not in (sc.pipelines or {}):
        err(("ceiling_pipeline",), f"unknown pipeline {sc.ceiling_pipeline!r}")
    if sc.declared_ceiling is not None and not sc.declared_ceiling > 0:
        err(("declared_ceiling",), "must be > 0")

    request_ids = set()
    if not sc.requests:
        err(("requests",), "at least one production request is required")
    for i, rq in enumerate(sc.requests):
        if rq is None:
            continue
        p = ("requests", i)
        if rq.id in request_ids:
            err(p + ("id",), f"duplicate request {rq.id!r}")
        request_ids.add(rq.id)
        if rq.events is not None and rq.events < 1:
            err(p + ("events",), "must be >= 1")
        if rq.chunk_size is not None and rq.chunk_size < 1:
            err(p + ("chunk_size",), "must be >= 1")
        if rq.pipeline not in (sc.pipelines or {}):
            err(p + ("pipeline",), f"unknown pipeline {rq.pipeline!r}")
        if rq.master not in master_ids:
            err(p + ("master",), f"unknown master {rq.master!r}")
        if isinstance(rq.sites, str):
            if rq.sites != "capacity":
                err(p + ("sites",), "must be \"capacity\" or an object of site weights")
        elif isinstance(rq.sites, dict):
            if not rq.sites:
                err(p + ("sites",), "needs at least one site")
            for name, w in rq.sites.items():
                if name not in site_names:
                    err(p + ("sites", name), f"unknown site {name!r} in assignment")
                elif isinstance(w, bool) or not isinstance(w, (int, float)) or not w > 0:
                    err(p + ("sites", name), "weight must be a positive number")
        else:
            err(p + ("sites",), "must be \"capacity\" or an object of site weights")
        if sc.vo is not None and rq.dn and all(u is None or u.dn != rq.dn for u in sc.vo.users):
            if not any(c is not None and c.dn == rq.dn for c in sc.vo.changes):
                err(p + ("dn",), f"submitter {rq.dn!r} is not in the VO directory")


def _check_channel(c, path: tuple, ld: _Loader) -> None:
    if c is None:
        return
    if c.bandwidth is not None and not c.bandwidth > 0:
        ld.err(path + ("bandwidth",), "bandwidth must be > 0")
    if c.latency is not None and c.latency < 0:
        ld.err(path + ("latency",), "latency must be >= 0")
    if c.hang_probability is not None and not 0 <= c.hang_probability <= 1:
        ld.err(path + ("hang_probability",), "probability must be in [0, 1]")
    for k, p in enumerate(c.hang_profile or []):
        if p is not None and not 0 <= p <= 1:
            ld.err(path + ("hang_profile", k), "probability must be in [0, 1]")


# -- public API ------------------------------------------------------------------------


def parse_scenario(text: str) -> tuple[Scenario | None, list[str]]:
    """Parse and validate; returns (scenario or None, error messages)."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        return None, [f"line {exc.lineno}: invalid JSON: {exc.msg} (column {exc.colno})"]
    return scenario_from_dict(data, _Locator(text))


def scenario_from_dict(data: Any, locator: _Locator | None = None) -> tuple[Scenario | None, list[str]]:
    ld = _Loader(locator)
    if isinstance(data, dict) and "schema_version" not in data:
        ld.err((), "missing required field 'schema_version'")
        return None, ld.errors
    sc = ld.record(Scenario, data, ())
    if sc is None:
        if isinstance(data, dict):
            ld.errors.extend(_errors_despite_missing(data, locator, ld.errors))
        return None, ld.errors
    if any(x is None for x in (*sc.sites, *sc.masters, *sc.requests, *sc.outages, *sc.channels)):
        return None, ld.errors
    if not isinstance(sc.pipelines, dict):
        ld.err(("pipelines",), "expected an object mapping names to stage lists")
        return None, ld.errors
    _check(sc, ld)
    return (sc if not ld.errors else None), ld.errors


_PLACEHOLDERS = {
    "schema_version": SCHEMA_VERSION,
    "name": "",
    "seed": None,
    "horizon_days": None,
    "sites": [],
    "masters": [],
    "pipelines": {},
    "requests": [],
}


def _errors_despite_missing(data: dict, locator: _Locator | None, seen: list[str]) -> list[str]:
    """Problems elsewhere in a document that lacks required top-level fields.

    The missing fields are filled with neutral placeholders so the remaining
    checks can run; anything reported against a placeholder is dropped.
    """
    missing = [f.name for f in fields(Scenario) if _required(f) and f.name not in data]
    probe = _Loader(locator)
    sc = probe.record(Scenario, {**data, **{m: _PLACEHOLDERS[m] for m in missing}}, ())
    if sc is None or any(x is None for x in (*sc.sites, *sc.masters, *sc.requests, *sc.outages, *sc.channels)):
        return []
    if isinstance(sc.pipelines, dict):
        _check(sc, probe)

    def about_placeholder(msg: str) -> bool:
        body = msg.split(": ", 1)[1] if msg.startswith("line ") else msg
        return any(body.startswith(m) and body[len(m) : len(m) + 1] in (".", ":", "[") for m in missing)

    return [e for e in probe.errors if e not in seen and not about_placeholder(e)]


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    text = path.read_text()
    sc, errors = parse_scenario(text)
    if errors:
        raise ScenarioError([f"{path}: {e}" for e in errors])
    return sc


def validate_scenario(path: str | Path) -> list[str]:
    """Every problem in the file; an empty list means it is runnable."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        return [f"{path}: cannot read: {exc.strerror}"]
    _, errors = parse_scenario(text)
    return [f"{path}: {e}" for e in errors]


def bundled(name: str) -> Path:
    return BUNDLED / (name if name.endswith(".scenario") else f"{name}.scenario")


# -- assembly ----------------------------------------------------------------------------


def weighted_round_robin(weights: dict[str, float], n: int) -> list[str]:
    """Smooth weighted round-robin: deterministic and as even as the weights allow."""
    names = list(weights)
    total = math.fsum(weights.values())
    if not names or total <= 0:
        raise ValueError("need positive weights")
    current = {k: 0.0 for k in names}
    out = []
    for _ in range(n):
        for k in names:
            current[k] += weights[k]
        best = max(names, key=lambda k: current[k])
        current[best] -= total
        out.append(best)
    return out


def interleave(batches: list[list[Any]]) -> list[Any]:
    """Merge lists so that each keeps its order and progresses proportionally."""
    keyed = []
    for r, batch in enumerate(batches):
        n = len(batch)
        keyed.extend(((i + 0.5) / n, r, i, item) for i, item in enumerate(batch))
    keyed.sort(key=lambda k: k[:3])
    return [k[3] for k in keyed]


@dataclass
class Campaign:
    scenario: Scenario
    seed: int
    sim: GridSim
    executor: Executor
    sites: list[Site]
    jobs: list[tuple[str, str, str]]  # (job_id, site, master)

    @property
    def ceiling_formula(self) -> float:
        return theoretical_max(self.sites, self.scenario.ceiling_pipeline_spec())

    @property
    def ceiling(self) -> float:
        sc = self.scenario
        return sc.declared_ceiling if sc.declared_ceiling is not None else self.ceiling_formula

    def run(self) -> Campaign:
        self.sim.run()
        return self


def build_sites(sc: Scenario) -> list[Site]:
    sites = []
    for s in sc.sites:
        outages = [
            (o.start_day * DAY, o.end_day * DAY) for o in sc.outages if "*" in o.sites or s.name in o.sites
        ]
        cpus = s.worker_cpus - s.offline_cpus
        throttle = max(cpus, 1) if s.max_submitted == "cpus" else s.max_submitted
        sites.append(
            Site(
                s.name,
                s.worker_cpus,
                s.cpu_speed,
                os=s.os,
                comment=s.comment,
                offline_cpus=s.offline_cpus,
                disk_free_mb=s.disk_free_mb,
                availability_windows=[(s.join_day * DAY, math.inf)],
                max_submitted=throttle,
                outages=outages,
            )
        )
    return sites


def build_campaign(sc: Scenario, seed: int | None = None, header: list[str] | None = None) -> Campaign:
    seed = sc.seed if seed is None else seed
    sites = build_sites(sc)
    policy = RetryPolicy(
        max_attempts=sc.retry.max_attempts,
        blind_restart=sc.retry.blind_restart,
        loop_threshold=sc.retry.loop_threshold,
    )
    log = EventLog(header if header is not None else [f"scenario {sc.name}", f"seed {seed}"])
    executor = Executor(
        [MasterConfig(m.id, m.max_tracked_processes) for m in sc.masters],
        {s.name: s.max_submitted for s in sites},
        policy,
        log,
    )
    d = sc.channel_defaults
    overrides = {(c.master, c.site): c for c in sc.channels}
    channels = {}
    for m in sc.masters:
        for s in sites:
            o = overrides.get((m.id, s.name))

            def pick(attr, o=o):
                v = getattr(o, attr) if o is not None else None
                return getattr(d, attr) if v is None else v

            profile = pick("hang_profile")
            channels[(m.id, s.name)] = TransferChannel(
                m.id,
                s.name,
                pick("bandwidth"),
                pick("latency"),
                pick("hang_probability"),
                tuple(profile) if profile else None,
            )
    failures = FailureModel(
        transfer_hang_probability=d.hang_probability,
        disk_full_probability=sc.failures.disk_full_probability,
        lost_contact_probability=sc.failures.lost_contact_probability,
        detection_delay=sc.failures.detection_delay_hours * HOUR,
    )
    t = sc.ftsh
    ftsh = RetrySpec(t.timeout, t.max_attempts, t.backoff, t.backoff_mode, t.multiplier) if t.enabled else None

    vo_sync = None
    directory = None
    if sc.vo is not None:
        directory = UserDirectory()
        for g in sc.vo.groups:
            directory.create_group(g.name, g.account)
        for u in sc.vo.users:
            for g in u.groups:
                directory.add_user(GridUser(u.dn, CertAuthority(u.ca)), g)
        vo_sync = GridmapSync(directory, [s.name for s in sites], sc.vo.sync_interval_hours * HOUR)

    sim = GridSim(
        sites,
        channels,
        executor,
        failures,
        seed=seed,
        horizon=sc.horizon,
        ftsh=ftsh,
        vo_sync=vo_sync,
        sample_interval=sc.sample_interval_hours * HOUR,
        cleanup_seconds=sc.cleanup_seconds,
        runtime_jitter=sc.runtime_jitter,
    )
    if sc.vo is not None:
        for c in sc.vo.changes:
            user = GridUser(c.dn, CertAuthority(c.ca))
            if c.action == "add":
                change = lambda u=user, g=c.group: directory.add_user(u, g)  # noqa: E731
            else:
                change = lambda dn=c.dn, g=c.group: directory.remove_user(dn, g)  # noqa: E731
            sim.schedule_vo_change(c.day * DAY, change)

    default_dn = sc.vo.users[0].dn if sc.vo is not None and sc.vo.users else ""
    site_by_name = {s.name: s for s in sites}
    mode = StageInMode(sc.stage_in)
    batches = []
    for rq in sc.requests:
        request = ProductionRequest(rq.id, rq.events, sc.pipeline(rq.pipeline), rq.chunk_size)
        jobs = chunk_request(request)
        weights = (
            {s.name: site_by_name[s.name].capacity_ghz for s in sites if site_by_name[s.name].cpus > 0}
            if rq.sites == "capacity"
            else dict(rq.sites)
        )
        targets = weighted_round_robin(weights, len(jobs))
        batches.append([(job, site, rq.master, rq.dn or default_dn) for job, site in zip(jobs, targets)])
    assignment = []
    for job, site, master, dn in interleave(batches):
        sim.submit(wrap_job(job, mode), site, master, dn)
        assignment.append((job.job_id, site, master))
    return Campaign(sc, seed, sim, executor, sites, assignment)
