"""Three-core system: control unit, barrier-synchronous ticking, sample execution."""

from __future__ import annotations

import csv
import statistics
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .compiler import HIDDEN_CORE, MULTICAST_CORE, OUTPUT_CORE, MemCfg
from .coresim import CoreState, CycleParams
from .events import BinnedStream
from .refsim import DEFAULT_MAX_DRAIN, DrainCapExceeded, ReadoutResult, TraceRecord, final_readout

REPORT_COLUMNS = [
    "sample_id", "label", "predicted", "cycles", "wall_us", "timesteps_visited",
    "input_events", "synaptic_events", "hidden_spikes",
]


class SampleRunError(RuntimeError):
    def __init__(self, index: int, cause: BaseException):
        super().__init__(f"sample {index}: {cause}")
        self.index = index
        self.cause = cause


@dataclass
class RunReport:
    total_cycles: int
    timesteps_visited: int
    injected_input_events: int
    synaptic_events_processed: int
    hidden_spikes: int
    readout: ReadoutResult
    clock_hz: int = 100_000_000
    label: Optional[int] = None
    stage_busy: dict[int, dict[str, int]] = field(default_factory=dict)
    rx_high_water: dict[int, int] = field(default_factory=dict)
    visited: list[int] = field(default_factory=list)
    trace: Optional[TraceRecord] = None

    @property
    def wall_time_us(self) -> float:
        return self.total_cycles * 1e6 / self.clock_hz

    @property
    def output_membranes(self) -> list[int]:
        return self.readout.membranes

    @property
    def predicted(self) -> int:
        return self.readout.predicted

    def row(self, sample_id) -> dict:
        return {
            "sample_id": sample_id,
            "label": "" if self.label is None else self.label,
            "predicted": self.predicted,
            "cycles": self.total_cycles,
            "wall_us": f"{self.wall_time_us:.3f}",
            "timesteps_visited": self.timesteps_visited,
            "input_events": self.injected_input_events,
            "synaptic_events": self.synaptic_events_processed,
            "hidden_spikes": self.hidden_spikes,
        }

    def comparable(self) -> tuple:
        """Everything except the (optional) trace, for isolation checks."""
        return (
            self.total_cycles, self.timesteps_visited, self.injected_input_events,
            self.synaptic_events_processed, self.hidden_spikes, tuple(self.readout.membranes),
            self.readout.predicted, tuple(self.visited),
        )


class SocState:
    """Multicast, hidden and output cores driven by one control unit."""

    def __init__(self, m: MemCfg, params: CycleParams = CycleParams(), lut_offset: int = 0):
        self.memcfg = m
        self.params = params
        self.cores = [
            CoreState(m.core(cid), params, m.weight_fmt, m.membrane_fmt,
                      lut_offset=0 if cid == MULTICAST_CORE else lut_offset)
            for cid in (MULTICAST_CORE, HIDDEN_CORE, OUTPUT_CORE)
        ]
        self.by_id = {c.core_id: c for c in self.cores}
        self.global_timestep = 0
        self.cycles = 0
        self.phase = "done"

    def reset(self) -> None:
        for c in self.cores:
            c.reset()
        self.global_timestep = 0
        self.cycles = 0
        self.phase = "done"

    def _route(self) -> None:
        by_id = self.by_id
        for c in self.cores:
            if c.outbox:
                for core, neuron, syn in c.outbox:
                    by_id[core].inject(neuron, syn)
                c.outbox.clear()

    def step_timestep(self, t: int, channels: Sequence[int]) -> int:
        """Run one timestep to quiescence; returns the cycles it took."""
        self.global_timestep = t
        self.phase = "drain"
        for c in self.cores:
            c.begin_timestep(t)
        self.phase = "accumulate"
        mc = self.by_id[MULTICAST_CORE]
        pending = deque(channels)
        cores = self.cores
        cycles = 0
        while True:
            if pending:
                mc.inject(pending.popleft())
            active = False
            for c in cores:
                if not c.idle():
                    c.tick()
                    active = True
            self._route()
            cycles += 1
            if not pending and not active:
                # the last cycle only confirmed idleness
                cycles -= 1
                break
            if not pending and all(c.idle() for c in cores):
                break
        self.cycles += cycles
        self.phase = "advance"
        return cycles


def run_sample(
    m: MemCfg,
    b: BinnedStream,
    params: CycleParams = CycleParams(),
    max_drain: int = DEFAULT_MAX_DRAIN,
    record_trace: bool = False,
    lut_offset: int = 0,
    soc: Optional[SocState] = None,
) -> RunReport:
    """Execute one sample as fast as possible, skipping timesteps without work.

    Timestep 0 is always visited. Afterwards the control unit jumps to ``t + 1``
    while any core holds hot neurons, otherwise to the next non-empty input bin.
    """
    soc = soc or SocState(m, params, lut_offset)
    soc.reset()
    trace = TraceRecord() if record_trace else None
    for c in soc.cores:
        c.trace = trace
    hidden = soc.by_id[HIDDEN_CORE]
    output = soc.by_id[OUTPUT_CORE]
    input_bins = sorted(t for t, chans in b.bins.items() if chans)
    next_bin = 0
    cap = b.num_timesteps - 1 + max_drain
    visited = []
    injected = 0
    t = 0
    while True:
        if t > cap:
            soc.reset()
            raise DrainCapExceeded(f"activity still pending at timestep {t} (cap {cap})")
        channels = b.bins.get(t, ()) if next_bin < len(input_bins) and input_bins[next_bin] == t else ()
        if channels:
            next_bin += 1
        injected += len(channels)
        soc.step_timestep(t, channels)
        visited.append(t)
        if any(c.has_hot for c in soc.cores):
            t += 1
        elif next_bin < len(input_bins):
            t = input_bins[next_bin]
        else:
            break
    soc.phase = "done"
    readout = final_readout(output.membranes, output.last_update, t, output.image, m)
    report = RunReport(
        total_cycles=soc.cycles,
        timesteps_visited=len(visited),
        injected_input_events=injected,
        synaptic_events_processed=sum(c.synaptic_events for c in soc.cores),
        hidden_spikes=hidden.spikes,
        readout=readout,
        clock_hz=params.clock_hz,
        label=b.label,
        stage_busy={c.core_id: dict(c.busy_cycles) for c in soc.cores},
        rx_high_water={c.core_id: c.rx_high_water for c in soc.cores},
        visited=visited,
        trace=trace.normalized() if trace is not None else None,
    )
    for c in soc.cores:
        c.trace = None
    soc.reset()
    return report


@dataclass
class DatasetResult:
    reports: list[RunReport]

    @property
    def cycles(self) -> list[int]:
        return [r.total_cycles for r in self.reports]

    @property
    def mean_cycles(self) -> float:
        return statistics.fmean(self.cycles)

    @property
    def min_cycles(self) -> int:
        return min(self.cycles)

    @property
    def max_cycles(self) -> int:
        return max(self.cycles)


def _run_one(args):
    m, b, params = args
    return run_sample(m, b, params)


def run_dataset(
    m: MemCfg, samples: Sequence[BinnedStream], params: CycleParams = CycleParams(), workers: int = 1
) -> DatasetResult:
    if not samples:
        raise ValueError("run_dataset needs at least one sample")
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            futures = [pool.submit(_run_one, (m, b, params)) for b in samples]
            reports = []
            for k, f in enumerate(futures):
                try:
                    reports.append(f.result())
                except Exception as e:
                    raise SampleRunError(k, e) from e
        return DatasetResult(reports)
    soc = SocState(m, params)
    reports = []
    for k, b in enumerate(samples):
        try:
            reports.append(run_sample(m, b, params, soc=soc))
        except Exception as e:
            raise SampleRunError(k, e) from e
    return DatasetResult(reports)


def write_report_rows(rows: Sequence[dict], path, columns: Sequence[str] = REPORT_COLUMNS) -> None:
    """Append rows to a CSV file, writing the header when the file is new or empty."""
    import os

    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns))
        if new:
            w.writeheader()
        w.writerows(rows)
