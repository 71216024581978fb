"""Production requests, the CMS executable pipeline, and McRunjob-style composition.

The default stage table carries the per-event service times and output sizes
measured on a 750 MHz reference machine. Costs at other clock speeds scale
inversely with the speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable

REFERENCE_SPEED_GHZ = 0.75
DEFAULT_CHUNK_SIZE = 250
DEFAULT_PILEUP_RATIO = 200.0


class Boundedness(str, Enum):
    CPU = "CPU"
    IO = "IO"
    BOTH = "Both"
    NEGLIGIBLE = "Negligible"


class WorkloadError(ValueError):
    """Invalid request, pipeline or composition command."""


@dataclass(frozen=True)
class StageProfile:
    name: str
    time_per_event: float  # seconds/event at reference_speed
    output_per_event: float  # MB/event
    boundedness: Boundedness
    reference_speed: float = REFERENCE_SPEED_GHZ  # GHz
    time_is_upper_bound: bool = False

    def __post_init__(self) -> None:
        if self.name not in STAGE_ORDER:
            raise WorkloadError(f"unknown stage {self.name!r}")
        if self.time_per_event < 0 or self.output_per_event < 0:
            raise WorkloadError(f"{self.name}: negative time or size")
        if self.reference_speed <= 0:
            raise WorkloadError(f"{self.name}: reference_speed must be > 0")

    @property
    def ghz_seconds_per_event(self) -> float:
        return self.time_per_event * self.reference_speed


# Position in the production chain; both writeDigis variants occupy the same slot.
STAGE_ORDER = {
    "CMKIN": 0,
    "CMSIM": 1,
    "writeHits": 2,
    "writeDigisNoPU": 3,
    "writeDigisPU": 3,
    "ntuple": 4,
}

# Upstream stage(s) whose output a stage consumes.
STAGE_INPUTS = {
    "CMKIN": (),
    "CMSIM": ("CMKIN",),
    "writeHits": ("CMSIM",),
    "writeDigisNoPU": ("writeHits",),
    "writeDigisPU": ("writeHits",),
    "ntuple": ("writeDigisNoPU", "writeDigisPU"),
}

DEFAULT_STAGES: dict[str, StageProfile] = {
    "CMKIN": StageProfile("CMKIN", 0.05, 0.05, Boundedness.NEGLIGIBLE),
    "CMSIM": StageProfile("CMSIM", 350.0, 2.0, Boundedness.CPU),
    "writeHits": StageProfile("writeHits", 0.05, 1.0, Boundedness.IO),
    "writeDigisNoPU": StageProfile("writeDigisNoPU", 2.0, 0.3, Boundedness.CPU),
    "writeDigisPU": StageProfile("writeDigisPU", 10.0, 3.0, Boundedness.BOTH),
    # the measured value is an upper bound ("<= 1 s/event"); we run at the bound
    "ntuple": StageProfile("ntuple", 1.0, 0.05, Boundedness.BOTH, time_is_upper_bound=True),
}

FULL_CHAIN_NOPU = ("CMKIN", "CMSIM", "writeHits", "writeDigisNoPU", "ntuple")
FULL_CHAIN_PU = ("CMKIN", "CMSIM", "writeHits", "writeDigisPU", "ntuple")
CMSIM_ONLY = ("CMKIN", "CMSIM")


@dataclass(frozen=True)
class PipelineSpec:
    stages: tuple[StageProfile, ...]
    pileup_ratio: float = DEFAULT_PILEUP_RATIO

    def __post_init__(self) -> None:
        object.__setattr__(self, "stages", tuple(self.stages))
        if self.pileup_ratio < 0:
            raise WorkloadError("pileup_ratio must be >= 0")
        positions = [STAGE_ORDER[s.name] for s in self.stages]
        if any(b <= a for a, b in zip(positions, positions[1:])):
            names = [s.name for s in self.stages]
            raise WorkloadError(f"stage order {names} breaks CMKIN→CMSIM→writeHits→writeDigis→ntuple")

    @property
    def stage_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.stages)

    @property
    def ghz_seconds_per_event(self) -> float:
        return math.fsum(s.ghz_seconds_per_event for s in self.stages)

    @property
    def uses_pileup(self) -> bool:
        return "writeDigisPU" in self.stage_names


def build_pipeline(
    names: tuple[str, ...] | list[str] = FULL_CHAIN_NOPU,
    pileup_ratio: float = DEFAULT_PILEUP_RATIO,
    overrides: dict[str, dict[str, Any]] | None = None,
) -> PipelineSpec:
    """Pipeline from default stage profiles, optionally overriding fields per stage."""
    overrides = overrides or {}
    stages = []
    for name in names:
        if name not in DEFAULT_STAGES:
            raise WorkloadError(f"unknown stage {name!r}")
        stages.append(replace(DEFAULT_STAGES[name], **overrides.get(name, {})))
    return PipelineSpec(tuple(stages), pileup_ratio)


@dataclass(frozen=True)
class ProductionRequest:
    request_id: str
    total_events: int
    pipeline: PipelineSpec
    chunk_size: int = DEFAULT_CHUNK_SIZE

    def __post_init__(self) -> None:
        if self.total_events < 0:
            raise WorkloadError(f"{self.request_id}: total_events must be >= 0")
        if self.chunk_size < 1:
            raise WorkloadError(f"{self.request_id}: chunk_size must be >= 1")

    @property
    def job_count(self) -> int:
        return -(-self.total_events // self.chunk_size)


@dataclass(frozen=True)
class JobSpec:
    job_id: str
    request_id: str
    event_range: tuple[int, int]  # inclusive
    pipeline: PipelineSpec

    @property
    def events(self) -> int:
        first, last = self.event_range
        return last - first + 1


def chunk_request(request: ProductionRequest) -> list[JobSpec]:
    """Split a request into chunk_size-event jobs; the last job carries the remainder."""
    jobs = []
    for i, first in enumerate(range(1, request.total_events + 1, request.chunk_size), start=1):
        last = min(first + request.chunk_size - 1, request.total_events)
        jobs.append(JobSpec(f"{request.request_id}-{i:05d}", request.request_id, (first, last), request.pipeline))
    return jobs


def stage_cost(stage: StageProfile, events: int, cpu_speed: float) -> float:
    """Seconds to run `events` events of one stage on a CPU of `cpu_speed` GHz."""
    if cpu_speed <= 0:
        raise WorkloadError(f"cpu_speed must be > 0, got {cpu_speed}")
    return stage.time_per_event * events * stage.reference_speed / cpu_speed


def estimate_job_cost(job: JobSpec, cpu_speed: float) -> float:
    if cpu_speed <= 0:
        raise WorkloadError(f"cpu_speed must be > 0, got {cpu_speed}")
    return math.fsum(stage_cost(s, job.events, cpu_speed) for s in job.pipeline.stages)


def estimate_job_output(job: JobSpec) -> float:
    """MB written by all stages of the job."""
    return math.fsum(s.output_per_event * job.events for s in job.pipeline.stages)


def estimate_pileup_read(job: JobSpec, pileup_event_mb: float = 1.0) -> float:
    """Locally resident pileup data (MB) read by the digitization stage.

    Only the pileup variant mixes in minimum-bias events, so other pipelines
    read nothing. This is local I/O load; it is never transferred.
    """
    if not job.pipeline.uses_pileup:
        return 0.0
    return job.events * job.pipeline.pileup_ratio * pileup_event_mb


# --- McRunjob-style composition ------------------------------------------------


@dataclass
class Configurator:
    """Knows how to configure one application; exposes only its metadata."""

    name: str
    metadata: dict[str, Any]
    produce: Callable[[dict[str, Any]], StageProfile]
    requires: tuple[str, ...] = ()

    def configure(self, **values: Any) -> None:
        self.metadata.update(values)

    def describe(self) -> StageProfile:
        return self.produce(dict(self.metadata))


def _produce_stage(metadata: dict[str, Any]) -> StageProfile:
    return StageProfile(
        name=metadata["stage"],
        time_per_event=float(metadata["time_per_event"]),
        output_per_event=float(metadata["output_per_event"]),
        boundedness=Boundedness(metadata["boundedness"]),
        reference_speed=float(metadata["reference_speed"]),
        time_is_upper_bound=bool(metadata.get("time_is_upper_bound", False)),
    )


def stage_configurator(stage: str, **overrides: Any) -> Configurator:
    """Configurator for one of the standard CMS executables."""
    if stage not in DEFAULT_STAGES:
        raise WorkloadError(f"no configurator for {stage!r}")
    base = DEFAULT_STAGES[stage]
    metadata = {
        "stage": stage,
        "time_per_event": base.time_per_event,
        "output_per_event": base.output_per_event,
        "boundedness": base.boundedness.value,
        "reference_speed": base.reference_speed,
        "time_is_upper_bound": base.time_is_upper_bound,
    }
    metadata.update(overrides)
    return Configurator(stage, metadata, _produce_stage, STAGE_INPUTS[stage])


@dataclass
class Linker:
    """Registry of attached Configurators and the command log that built it."""

    configurators: dict[str, Configurator] = field(default_factory=dict)
    commands: list[tuple] = field(default_factory=list)

    def attach(self, conf: Configurator) -> Linker:
        if conf.name in self.configurators:
            raise WorkloadError(f"configurator {conf.name!r} is already attached")
        self.configurators[conf.name] = conf
        self.commands.append(("attach", conf.name))
        return self

    def configure(self, name: str, **values: Any) -> Linker:
        if name not in self.configurators:
            raise WorkloadError(f"configurator {name!r} is not attached")
        self.configurators[name].configure(**values)
        for key, value in values.items():
            self.commands.append(("configure", name, key, value))
        return self

    def emit_pipeline(self, pileup_ratio: float = DEFAULT_PILEUP_RATIO) -> PipelineSpec:
        """Stage descriptions in attach order.

        A Configurator whose input is not produced upstream gets the default
        producer of that input linked in front of it (CMSIM cannot run without
        the CMKIN vectors it simulates).
        """
        if not self.configurators:
            raise WorkloadError("linker has no configurators attached")
        stages: list[StageProfile] = []
        for conf in self.configurators.values():
            self._link_inputs(conf, stages)
            stages.append(conf.describe())
        return PipelineSpec(tuple(stages), pileup_ratio)

    def _link_inputs(self, conf: Configurator, stages: list[StageProfile]) -> None:
        if not conf.requires or (stages and stages[-1].name in conf.requires):
            return
        if stages:
            raise WorkloadError(f"{conf.name} needs output of {'/'.join(conf.requires)}, got {stages[-1].name}")
        upstream = stage_configurator(conf.requires[0])
        self._link_inputs(upstream, stages)
        stages.append(upstream.describe())
        self.commands.append(("link", upstream.name, conf.name))


def linker_attach(linker: Linker, conf: Configurator) -> Linker:
    return linker.attach(conf)


def emit_pipeline(linker: Linker, pileup_ratio: float = DEFAULT_PILEUP_RATIO) -> PipelineSpec:
    return linker.emit_pipeline(pileup_ratio)


def chain_linker(names: tuple[str, ...] | list[str]) -> Linker:
    linker = Linker()
    for name in names:
        linker.attach(stage_configurator(name))
    return linker


def fall2002_requests(pileup: bool = False) -> list[ProductionRequest]:
    """The two Fall 2002 assignments: 1M full-chain events and 500K CMSIM-only events."""
    full = chain_linker(FULL_CHAIN_PU if pileup else FULL_CHAIN_NOPU).emit_pipeline()
    cmsim = chain_linker(["CMSIM"]).emit_pipeline()
    return [
        ProductionRequest("full", 1_000_000, full),
        ProductionRequest("cmsim", 500_000, cmsim),
    ]
