"""Golden functional model: timestep-synchronous fixed-point execution of a MemCfg.

Timing convention: a packet delivered during timestep ``t`` adds its weight to
the target's weight sum and makes the target hot; hot neurons are updated once
at ``t + 1``. The multicast core forwards input events within their own
timestep. Readout applies the remaining leak up to the final timestep, which is
the last timestep that saw input or a neuron update.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .compiler import HIDDEN_CORE, MULTICAST_CORE, OUTPUT_CORE, CoreImage, MemCfg
from .events import BinnedStream, decode_packet
from .numerics import accumulator_format, leak_integrate_raw, rescale_raw

DEFAULT_MAX_DRAIN = 1024


class SimulationFault(RuntimeError):
    """Raised on configuration bugs such as a packet hitting an absent synapse."""

    def __init__(self, msg: str, state: dict | None = None):
        super().__init__(msg)
        self.state = state or {}


class DrainCapExceeded(RuntimeError):
    pass


@dataclass
class TimestepTrace:
    spikes: list[int] = field(default_factory=list)
    membranes: dict[tuple[int, int], int] = field(default_factory=dict)
    synaptic_events: int = 0


@dataclass
class TraceRecord:
    steps: dict[int, TimestepTrace] = field(default_factory=dict)

    def at(self, t: int) -> TimestepTrace:
        step = self.steps.get(t)
        if step is None:
            step = self.steps[t] = TimestepTrace()
        return step

    @property
    def hidden_spikes(self) -> int:
        return sum(len(s.spikes) for s in self.steps.values())

    @property
    def synaptic_events(self) -> int:
        return sum(s.synaptic_events for s in self.steps.values())

    def normalized(self) -> "TraceRecord":
        """Sorted spike lists and no empty timesteps, for comparisons."""
        steps = {}
        for t in sorted(self.steps):
            s = self.steps[t]
            if s.spikes or s.membranes or s.synaptic_events:
                steps[t] = TimestepTrace(sorted(s.spikes), dict(sorted(s.membranes.items())),
                                         s.synaptic_events)
        return TraceRecord(steps)


@dataclass
class ReadoutResult:
    membranes: list[int]
    predicted: int
    final_timestep: int


def final_readout(
    membranes, last_update, t_final: int, image: CoreImage, m: MemCfg
) -> ReadoutResult:
    """Leak the LI membranes forward to ``t_final`` and take the argmax."""
    fmt = m.membrane_fmt
    lut = image.leak_lut
    out = []
    for u, last in zip(membranes, last_update):
        n = t_final - last
        if n >= 1 and u:
            u = leak_integrate_raw(
                u, min(n, lut.n_max + 1), 0, lut.entries, lut.inv_tau, lut.lut_frac,
                fmt.min_raw, fmt.max_raw,
            )
        out.append(u)
    predicted = int(np.argmax(out)) if out else -1
    return ReadoutResult(out, predicted, t_final)


@dataclass
class _Layer:
    image: CoreImage
    weights: dict[int, int]
    u: list[int]
    last: list[int]
    pending: dict[int, int] = field(default_factory=dict)


def run_reference(
    m: MemCfg, b: BinnedStream, max_drain: int = DEFAULT_MAX_DRAIN
) -> tuple[TraceRecord, ReadoutResult]:
    fmt = m.membrane_fmt
    acc = accumulator_format(fmt)
    mc = m.core(MULTICAST_CORE)
    layers = {}
    for cid in (HIDDEN_CORE, OUTPUT_CORE):
        img = m.core(cid)
        weights = {a: rescale_raw(w, m.weight_fmt, acc) for a, w in img.synapses.items()}
        layers[cid] = _Layer(img, weights, [0] * img.neurons, [0] * img.neurons)
    fanout = {
        cid: {n: [decode_packet(w) for w in img.axon_table[base:base + cnt]]
              for n, (base, cnt) in img.axon_map.items()}
        for cid, img in ((MULTICAST_CORE, mc), (HIDDEN_CORE, layers[HIDDEN_CORE].image))
    }
    trace = TraceRecord()

    def deliver(packets, t):
        for core, neuron, syn in packets:
            layer = layers.get(core)
            if layer is None or syn not in layer.weights:
                raise SimulationFault(
                    f"timestep {t}: packet ({core}, {neuron}, {syn}) targets an absent synapse",
                    {"timestep": t, "core": core, "neuron": neuron, "synapse": syn},
                )
            layer.pending[neuron] = acc.saturate(layer.pending.get(neuron, 0) + layer.weights[syn])
        if packets:
            trace.at(t).synaptic_events += len(packets)

    last_input = b.last_bin
    cap = b.num_timesteps - 1 + max_drain
    t = 0
    t_final = 0
    while t <= last_input or any(layer.pending for layer in layers.values()):
        if t > cap:
            raise DrainCapExceeded(f"activity still pending at timestep {t} (cap {cap})")
        hot = {cid: layer.pending for cid, layer in layers.items()}
        for layer in layers.values():
            layer.pending = {}
        worked = False
        for cid in (HIDDEN_CORE, OUTPUT_CORE):
            layer = layers[cid]
            lut = layer.image.leak_lut
            for neuron, wsum in hot[cid].items():
                worked = True
                n = min(t - layer.last[neuron], lut.n_max + 1)
                u = leak_integrate_raw(
                    layer.u[neuron], n, fmt.saturate(wsum), lut.entries, lut.inv_tau,
                    lut.lut_frac, fmt.min_raw, fmt.max_raw,
                )
                layer.last[neuron] = t
                if cid == HIDDEN_CORE and u > layer.image.threshold:
                    u = 0
                    trace.at(t).spikes.append(neuron)
                    deliver(fanout[HIDDEN_CORE][neuron], t)
                layer.u[neuron] = u
                trace.at(t).membranes[(cid, neuron)] = u
        channels = b.bins.get(t, ())
        for ch in channels:
            if ch not in fanout[MULTICAST_CORE]:
                raise SimulationFault(f"timestep {t}: input channel {ch} has no axon entry")
            deliver(fanout[MULTICAST_CORE][ch], t)
        if worked or channels:
            t_final = t
        t += 1

    out = layers[OUTPUT_CORE]
    readout = final_readout(out.u, out.last, t_final, out.image, m)
    return trace.normalized(), readout


def count_synaptic_events(m: MemCfg, b: BinnedStream) -> int:
    """Total packets delivered to synapse stages (input fan-out plus spike fan-out)."""
    trace, _ = run_reference(m, b)
    return trace.synaptic_events


def first_divergence(expected: TraceRecord, actual: TraceRecord):
    """First (timestep, core, neuron, what) where two traces differ, or None."""
    for t in sorted(set(expected.steps) | set(actual.steps)):
        a = expected.steps.get(t, TimestepTrace())
        b = actual.steps.get(t, TimestepTrace())
        keys = sorted(set(a.membranes) | set(b.membranes))
        for key in keys:
            if a.membranes.get(key) != b.membranes.get(key):
                return t, key[0], key[1], (
                    f"membrane expected {a.membranes.get(key)} got {b.membranes.get(key)}"
                )
        if a.spikes != b.spikes:
            diff = sorted(set(a.spikes) ^ set(b.spikes))
            return t, HIDDEN_CORE, diff[0] if diff else -1, f"spikes expected {a.spikes} got {b.spikes}"
        if a.synaptic_events != b.synaptic_events:
            return t, -1, -1, (
                f"synaptic events expected {a.synaptic_events} got {b.synaptic_events}"
            )
    return None
