import copy
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import chain_graph, compile_graph
from yanasim.compiler import HIDDEN_CORE, MULTICAST_CORE, OUTPUT_CORE, MemCfg
from yanasim.events import DestPacket, SampleStream, SourceEvent, bin_timesteps, encode_packet
from yanasim.netgraph import LayerSpec, quantize_graph
from yanasim.compiler import map_graph
from yanasim.refsim import (
    DrainCapExceeded,
    SimulationFault,
    count_synaptic_events,
    first_divergence,
    run_reference,
)
from yanasim.synth import random_case

DT = 1000


def stream(bins_channels, input_size=1, duration_bins=20):
    evs = [SourceEvent(t * DT, c) for t, chans in bins_channels.items() for c in chans]
    return bin_timesteps(SampleStream(evs, input_size, duration_bins * DT), DT)


class TestExamples:
    def test_chain(self):
        m = compile_graph(chain_graph())
        trace, out = run_reference(m, stream({0: [0]}))
        assert sorted(trace.steps) == [0, 1, 2]
        assert trace.steps[1].spikes == [0]
        assert trace.steps[1].membranes == {(HIDDEN_CORE, 0): 0}
        assert trace.steps[2].membranes == {(OUTPUT_CORE, 0): 128}
        assert out.membranes == [128] and out.predicted == 0 and out.final_timestep == 2

    def test_no_input(self):
        m = compile_graph(chain_graph())
        trace, out = run_reference(m, stream({}))
        assert trace.steps == {} and out.membranes == [0]

    def test_subthreshold_decay_past_n_max(self):
        # tau=20 keeps 0.95^10 visible; gaps beyond n_max drop the old membrane
        g = chain_graph(tau=20, threshold=0.6)
        b = stream({0: [0], 10: [0]})
        short, _ = run_reference(compile_graph(g, n_max=8), b)
        long, _ = run_reference(compile_graph(g, n_max=16), b)
        assert short.steps[1].membranes[(HIDDEN_CORE, 0)] == 12
        assert short.steps[11].membranes[(HIDDEN_CORE, 0)] == 12
        assert long.steps[11].membranes[(HIDDEN_CORE, 0)] == 12 + (12 * 39250 >> 16)
        assert short.hidden_spikes == 0

    def test_readout_leaks_to_final_timestep(self):
        # output integrates 0.5 at t=2; the weak channel-1 event keeps the run alive to t=6
        g = replace(chain_graph(), input_size=2, w_in=np.array([[1.0], [0.25]]))
        trace, out = run_reference(compile_graph(g), stream({0: [0], 5: [1]}, input_size=2))
        assert trace.steps[2].membranes[(OUTPUT_CORE, 0)] == 128
        assert trace.steps[6].spikes == []
        assert out.final_timestep == 6 and out.membranes == [128 >> 4]

    def test_argmax_ties_lowest(self):
        g = chain_graph()
        g = replace(g, output=LayerSpec("li", 3, g.output.tau_mem), w_out=np.array([[0.5, 1.0, 1.0]]))
        _, out = run_reference(compile_graph(g), stream({0: [0]}))
        assert out.membranes == [64, 128, 128] and out.predicted == 1

    def test_absent_synapse_faults(self):
        m = compile_graph(chain_graph())
        m.core(MULTICAST_CORE).axon_table[0] = encode_packet(DestPacket(HIDDEN_CORE, 0, 7))
        with pytest.raises(SimulationFault) as exc:
            run_reference(m, stream({3: [0]}))
        assert exc.value.state["timestep"] == 3

    def test_runaway_recurrence_capped(self):
        g = replace(chain_graph(), w_rec=np.array([[2.0]]))
        with pytest.raises(DrainCapExceeded):
            run_reference(compile_graph(g), stream({0: [0]}), max_drain=50)


def _spike_count_oracle(m: MemCfg, b, trace) -> int:
    fan = lambda core, n: core.axon_map.get(n, (0, 0))[1]
    mc, hid = m.core(MULTICAST_CORE), m.core(HIDDEN_CORE)
    total = sum(fan(mc, c) for chans in b.bins.values() for c in chans)
    return total + sum(fan(hid, n) for s in trace.steps.values() for n in s.spikes)


def _cases(seed, recurrent):
    case = random_case(np.random.default_rng(seed), recurrent)
    m = map_graph(quantize_graph(case.graph, n_max=case.n_max))
    return case, m, bin_timesteps(case.sample, case.dt_us)


class TestProperties:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32), st.booleans())
    def test_count_oracle_and_determinism(self, seed, recurrent):
        case, m, b = _cases(seed, recurrent)
        try:
            trace, out = run_reference(m, b)
        except DrainCapExceeded:
            return
        assert count_synaptic_events(m, b) == _spike_count_oracle(m, b, trace)
        assert run_reference(copy.deepcopy(m), b) == (trace, out)
        assert first_divergence(trace, trace) is None
        for s in trace.steps.values():
            assert len(set(s.spikes)) == len(s.spikes)
            assert all(s.membranes[(HIDDEN_CORE, n)] == 0 for n in s.spikes)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32), st.integers(0, 2**32))
    def test_additivity_without_spikes(self, seed, split_seed):
        case = random_case(np.random.default_rng(seed))
        g = replace(case.graph, hidden=replace(case.graph.hidden, threshold=2.0**22))
        m = map_graph(quantize_graph(g, n_max=case.n_max))
        evs = case.sample.events
        mask = np.random.default_rng(split_seed).random(len(evs)) < 0.5
        parts = [
            SampleStream([e for e, k in zip(evs, mask) if k == side], g.input_size,
                         case.sample.duration_us)
            for side in (True, False)
        ]
        whole = count_synaptic_events(m, bin_timesteps(case.sample, DT))
        assert whole == sum(count_synaptic_events(m, bin_timesteps(p, DT)) for p in parts)


def _with_zero_synapses(m: MemCfg, rng) -> MemCfg:
    """Add zero-weight synapses reached by extra packets from sources that already fire.

    Only sources with a nonzero fan-out to the same core get an extra packet, so
    the set of timesteps with any update is unchanged.
    """
    m = copy.deepcopy(m)
    for src_id, dst_id in ((MULTICAST_CORE, HIDDEN_CORE), (HIDDEN_CORE, OUTPUT_CORE)):
        src, dst = m.core(src_id), m.core(dst_id)
        addr = max(dst.synapses, default=-1) + 1
        dst.synapses[addr] = 0
        fanouts = {n: src.fanout(n) for n in range(src.neurons)}
        for n, packets in fanouts.items():
            if any(p.dest_core == dst_id for p in packets):
                packets.append(DestPacket(dst_id, int(rng.integers(dst.neurons)), addr))
        src.axon_map, src.axon_table = {}, []
        for n, packets in fanouts.items():
            src.axon_map[n] = (len(src.axon_table), len(packets))
            src.axon_table.extend(encode_packet(p) for p in packets)
    return m


class TestInertness:
    # Holds exactly when every deferred leak is a shift: tau=2 with all gaps within n_max.
    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32))
    def test_zero_weight_synapses(self, seed):
        rng = np.random.default_rng(seed)
        case = random_case(rng)
        g = case.graph
        g = replace(g, hidden=replace(g.hidden, tau_mem=2), output=replace(g.output, tau_mem=2))
        m = map_graph(quantize_graph(g, n_max=16, lut_frac=16))
        short = SampleStream(
            [SourceEvent(e.timestamp_us % (12 * DT), e.channel) for e in case.sample.events],
            g.input_size, 12 * DT,
        )
        b = bin_timesteps(short, DT)
        trace, out = run_reference(m, b)
        trace2, out2 = run_reference(_with_zero_synapses(m, rng), b)
        assert out2 == out
        assert {t: s.spikes for t, s in trace2.steps.items() if s.spikes} == {
            t: s.spikes for t, s in trace.steps.items() if s.spikes
        }
