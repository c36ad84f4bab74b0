"""Cycle-stepped model of one core's five-stage pipeline.

Stages, upstream to downstream: RX -> synapse -> neuron -> axon -> TX. Every
stage is a server with a busy countdown. Within one :meth:`CoreState.tick` the
stages are evaluated downstream first, so an item finished by a stage in cycle
``c`` is picked up by the next stage in cycle ``c + 1``; a cost-``k`` operation
therefore adds ``k`` cycles of latency.

The multicast core has no synapse or neuron stage: RX hands source channels
straight to the axon stage.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, fields

from .compiler import CoreImage
from .events import decode_packet
from .numerics import FxFormat, accumulator_format, leak_integrate_raw, rescale_raw
from .refsim import SimulationFault


class ProtocolError(RuntimeError):
    pass


class Stage(enum.IntFlag):
    RX = 1
    SYN = 2
    NEURON = 4
    AXON = 8
    TX = 16
    CONTROL = 32


STAGE_NAMES = ("rx", "syn", "neuron", "axon", "tx", "control")
_RX, _SYN, _NEU, _AX, _TX, _CTL = (int(s) for s in Stage)


@dataclass(frozen=True)
class CycleParams:
    rx_throughput: int = 1
    syn_cost: int = 1
    neuron_cost: int = 1
    neuron_pipe_fill: int = 4
    axon_lookup_cost: int = 2
    axon_emit_cost: int = 1
    tx_cost: int = 1
    timestep_overhead: int = 8
    clock_hz: int = 100_000_000

    def __post_init__(self):
        if self.rx_throughput != 1:
            raise ValueError("RX throughput is fixed at 1 event/cycle")
        for f in fields(self):
            v = getattr(self, f.name)
            floor = 0 if f.name == "timestep_overhead" else 1
            if v < floor:
                raise ValueError(f"{f.name} must be >= {floor}, got {v}")


# neuron-stage op kinds
_WAIT_OVERHEAD, _WAIT_FILL, _UPDATE = 0, 1, 2
_LOOKUP, _EMIT = 0, 1


class CoreState:
    """Mutable pipeline state of one core; the image itself is never modified."""

    def __init__(
        self,
        image: CoreImage,
        params: CycleParams,
        weight_fmt: FxFormat,
        membrane_fmt: FxFormat,
        lut_offset: int = 0,
    ):
        self.image = image
        self.params = params
        self.core_id = image.core_id
        self.multicast = image.kind == "multicast"
        self.spiking = image.kind == "lif"
        self.membrane_fmt = membrane_fmt
        self._acc = accumulator_format(membrane_fmt)
        self._weights = {a: rescale_raw(w, weight_fmt, self._acc) for a, w in image.synapses.items()}
        n = max(image.neurons, 1)
        self._axon = [image.axon_map.get(i, (0, 0)) for i in range(n)]
        self._table = [tuple(decode_packet(w)) for w in image.axon_table]
        self._lut_offset = lut_offset
        self.trace = None  # set to a TraceRecord to record updates
        self.reset()

    def reset(self) -> None:
        n = max(self.image.neurons, 1)
        self.timestep = 0
        self.membranes = [0] * n
        self.last_update = [0] * n
        self.weight_sums = [0] * n
        self.hot = bytearray(n)
        self.hot_fifo: deque[int] = deque()
        self.rx_q: deque = deque()
        self.syn_q: deque = deque()
        self.neuron_ops: deque = deque()
        self.spike_q: deque[int] = deque()
        self.tx_q: deque = deque()
        self.outbox: list = []
        self._rx_busy = self._syn_busy = self._neu_busy = self._ax_busy = self._tx_busy = 0
        self._rx_item = self._syn_item = self._neu_op = self._tx_item = None
        self._ax_mode = _LOOKUP
        self._ax_neuron = 0
        self._ax_next = self._ax_end = 0
        self.busy_cycles = dict.fromkeys(STAGE_NAMES, 0)
        self.synaptic_events = 0
        self.spikes = 0
        self.packets_emitted = 0
        self.rx_high_water = 0

    # -- external interface ---------------------------------------------------

    def inject(self, neuron: int, synapse: int = 0) -> None:
        """Enqueue one packet addressed to this core (source channel for multicast)."""
        self.rx_q.append((neuron, synapse))
        if len(self.rx_q) > self.rx_high_water:
            self.rx_high_water = len(self.rx_q)

    @property
    def draining(self) -> bool:
        return bool(self.neuron_ops) or self._neu_busy > 0

    def idle(self) -> bool:
        return not (
            self.rx_q or self.syn_q or self.neuron_ops or self.spike_q or self.tx_q
            or self.outbox or self._rx_busy or self._syn_busy or self._neu_busy
            or self._ax_busy or self._tx_busy or self._ax_next < self._ax_end
        )

    def begin_timestep(self, t: int) -> None:
        """Snapshot the hot set as this timestep's drain set and start draining.

        Weight sums of the drain set move into the queued update ops, so packets
        arriving during the drain accumulate for the following timestep.
        """
        if self.draining:
            raise ProtocolError(f"core {self.core_id}: begin_timestep({t}) while neuron stage drains")
        self.timestep = t
        ops = self.neuron_ops
        p = self.params
        if p.timestep_overhead:
            ops.append((_WAIT_OVERHEAD, p.timestep_overhead, 0, 0))
        if self.multicast:
            return
        ops.append((_WAIT_FILL, p.neuron_pipe_fill, 0, 0))
        sums, hot = self.weight_sums, self.hot
        for n in self.hot_fifo:
            ops.append((_UPDATE, p.neuron_cost, n, sums[n]))
            sums[n] = 0
            hot[n] = 0
        self.hot_fifo.clear()

    @property
    def has_hot(self) -> bool:
        return bool(self.hot_fifo)

    def tick(self) -> int:
        """Advance one clock cycle; returns the :class:`Stage` mask of busy stages."""
        act = 0
        p = self.params
        busy = self.busy_cycles
        feedback = None

        # TX
        if not self._tx_busy and self.tx_q:
            self._tx_item = self.tx_q.popleft()
            self._tx_busy = p.tx_cost
        if self._tx_busy:
            act |= _TX
            busy["tx"] += 1
            self._tx_busy -= 1
            if not self._tx_busy:
                core, neuron, syn = self._tx_item
                if core == self.core_id:
                    feedback = (neuron, syn)  # internal path, visible to RX next cycle
                else:
                    self.outbox.append(self._tx_item)

        # axon
        if not self._ax_busy:
            if self._ax_next < self._ax_end:
                self._ax_mode = _EMIT
                self._ax_busy = p.axon_emit_cost
            elif self.spike_q:
                self._ax_neuron = self.spike_q.popleft()
                self._ax_mode = _LOOKUP
                self._ax_busy = p.axon_lookup_cost
        if self._ax_busy:
            act |= _AX
            busy["axon"] += 1
            self._ax_busy -= 1
            if not self._ax_busy:
                if self._ax_mode == _LOOKUP:
                    nid = self._ax_neuron
                    if nid >= len(self._axon):
                        self._fault(f"no axon entry for neuron {nid}")
                    base, count = self._axon[nid]
                    self._ax_next, self._ax_end = base, base + count
                else:
                    self.tx_q.append(self._table[self._ax_next])
                    self._ax_next += 1
                    self.packets_emitted += 1

        # neuron
        if not self._neu_busy and self.neuron_ops:
            self._neu_op = self.neuron_ops.popleft()
            self._neu_busy = self._neu_op[1]
        if self._neu_busy:
            kind = self._neu_op[0]
            if kind == _WAIT_OVERHEAD:
                act |= _CTL
                busy["control"] += 1
            else:
                act |= _NEU
                busy["neuron"] += 1
            self._neu_busy -= 1
            if not self._neu_busy and kind == _UPDATE:
                self._update(self._neu_op[2], self._neu_op[3])

        # synapse
        if not self._syn_busy and self.syn_q:
            self._syn_item = self.syn_q.popleft()
            self._syn_busy = p.syn_cost
        if self._syn_busy:
            act |= _SYN
            busy["syn"] += 1
            self._syn_busy -= 1
            if not self._syn_busy:
                self._accumulate(*self._syn_item)

        # RX
        if not self._rx_busy and self.rx_q:
            self._rx_item = self.rx_q.popleft()
            self._rx_busy = p.rx_throughput
        if self._rx_busy:
            act |= _RX
            busy["rx"] += 1
            self._rx_busy -= 1
            if not self._rx_busy:
                if self.multicast:
                    self.spike_q.append(self._rx_item[0])
                else:
                    self.syn_q.append(self._rx_item)
        if feedback is not None:
            self.inject(*feedback)
        return act

    # -- stage internals --------------------------------------------------------

    def _accumulate(self, neuron: int, synapse: int) -> None:
        w = self._weights.get(synapse)
        if w is None or neuron >= self.image.neurons:
            self._fault(f"packet ({self.core_id}, {neuron}, {synapse}) targets an absent synapse")
        acc = self._acc
        s = self.weight_sums[neuron] + w
        self.weight_sums[neuron] = acc.min_raw if s < acc.min_raw else acc.max_raw if s > acc.max_raw else s
        self.synaptic_events += 1
        if self.trace is not None:
            self.trace.at(self.timestep).synaptic_events += 1
        if not self.hot[neuron]:
            self.hot[neuron] = 1
            self.hot_fifo.append(neuron)

    def _update(self, neuron: int, wsum: int) -> None:
        fmt = self.membrane_fmt
        lut = self.image.leak_lut
        n = self.timestep - self.last_update[neuron]
        if n > lut.n_max:
            n = lut.n_max + 1
        u = leak_integrate_raw(
            self.membranes[neuron], n, fmt.saturate(wsum), lut.entries, lut.inv_tau,
            lut.lut_frac, fmt.min_raw, fmt.max_raw, self._lut_offset,
        )
        self.last_update[neuron] = self.timestep
        step = self.trace.at(self.timestep) if self.trace is not None else None
        if self.spiking and u > self.image.threshold:
            u = 0
            self.spikes += 1
            self.spike_q.append(neuron)
            if step is not None:
                step.spikes.append(neuron)
        self.membranes[neuron] = u
        if step is not None:
            step.membranes[(self.core_id, neuron)] = u

    def _fault(self, msg: str):
        raise SimulationFault(f"core {self.core_id} @ timestep {self.timestep}: {msg}", self.dump())

    def dump(self) -> dict:
        return {
            "core": self.core_id,
            "timestep": self.timestep,
            "membranes": list(self.membranes),
            "weight_sums": list(self.weight_sums),
            "hot_fifo": list(self.hot_fifo),
            "last_update": list(self.last_update),
            "queues": {
                "rx": list(self.rx_q), "syn": list(self.syn_q), "spike": list(self.spike_q),
                "tx": list(self.tx_q), "neuron_ops": list(self.neuron_ops),
            },
        }
