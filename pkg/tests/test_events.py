import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from yanasim.events import (
    DestPacket,
    EventFileError,
    SampleStream,
    SourceEvent,
    bin_timesteps,
    decode_packet,
    drop_events,
    encode_packet,
    format_sample,
    load_sample,
    write_sample,
)
from yanasim.synth import SynthSpec, synth_sample

fields = st.tuples(st.integers(0, 3), st.integers(0, 1023), st.integers(0, 131071))


class TestPackets:
    def test_examples(self):
        assert encode_packet(DestPacket(0, 0, 0)) == 0
        assert encode_packet(DestPacket(2, 1023, 131071)) == 2 * 2**27 + 1023 * 2**17 + 131071
        assert encode_packet(DestPacket(2, 1023, 131071)) == 402653183
        assert encode_packet(DestPacket(1, 0, 1)) == 134217729
        assert decode_packet(402653183) == (2, 1023, 131071)
        assert decode_packet(0) == (0, 0, 0)

    @given(fields)
    def test_roundtrip(self, f):
        word = encode_packet(DestPacket(*f))
        assert word < 1 << 29
        assert decode_packet(word) == f

    @pytest.mark.parametrize("bad", [(4, 0, 0), (0, 1024, 0), (0, 0, 1 << 17), (-1, 0, 0)])
    def test_rejects_fields(self, bad):
        with pytest.raises(ValueError):
            encode_packet(DestPacket(*bad))

    @pytest.mark.parametrize("word", [1 << 29, 1 << 31, -1])
    def test_rejects_high_bits(self, word):
        with pytest.raises(ValueError):
            decode_packet(word)


def _write(tmp_path, body, header="input_size=700 duration_us=800000 label=3"):
    p = tmp_path / "s.events"
    p.write_text(f"# yana-events v1\n{header}\n{body}", encoding="utf-8")
    return p


class TestLoad:
    def test_two_events(self, tmp_path):
        s = load_sample(_write(tmp_path, "2000,3\n1000,5\n"))
        assert s.events == [SourceEvent(1000, 5), SourceEvent(2000, 3)]
        assert (s.input_size, s.duration_us, s.label) == (700, 800000, 3)

    def test_empty(self, tmp_path):
        s = load_sample(_write(tmp_path, "", "input_size=4 duration_us=10 label=none"))
        assert len(s) == 0 and s.label is None

    @pytest.mark.parametrize("body,lineno", [
        ("abc,5\n", 3),
        ("1,1\n5\n", 4),
        ("1,700\n", 3),
        ("900000,1\n", 3),
    ])
    def test_errors_name_line(self, tmp_path, body, lineno):
        with pytest.raises(EventFileError) as exc:
            load_sample(_write(tmp_path, body))
        assert exc.value.lineno == lineno
        assert f":{lineno}:" in str(exc.value)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.events"
        p.write_text("hello\n", encoding="utf-8")
        with pytest.raises(EventFileError):
            load_sample(p)

    def test_stable_sort(self, tmp_path):
        s = load_sample(_write(tmp_path, "5,2\n5,1\n0,9\n5,0\n"))
        assert [e.channel for e in s.events] == [9, 2, 1, 0]

    def test_write_load_write(self, tmp_path):
        s = synth_sample(SynthSpec(event_count=500, seed=3, label=7))
        p = tmp_path / "a.events"
        write_sample(s, p)
        again = load_sample(p)
        assert again == s
        assert format_sample(again) == p.read_text(encoding="utf-8")


class TestBinning:
    def test_boundary(self):
        s = SampleStream([SourceEvent(0, 1), SourceEvent(999, 2), SourceEvent(1000, 3)], 4, 5000)
        b = bin_timesteps(s, 1000)
        assert b.bins == {0: [1, 2], 1: [3]}
        assert b.num_timesteps == 6

    def test_empty(self):
        b = bin_timesteps(SampleStream([], 4, 800000), 2000)
        assert b.bins == {} and b.num_timesteps == 401 and b.last_bin == -1

    def test_single_bin(self):
        s = synth_sample(SynthSpec(event_count=50, duration_us=1000, seed=1))
        b = bin_timesteps(s, 1001)
        assert list(b.bins) == [0] and len(b.bins[0]) == 50

    def test_rejects_dt(self):
        with pytest.raises(ValueError):
            bin_timesteps(SampleStream([], 1, 10), 0)

    @given(st.lists(st.tuples(st.integers(0, 10000), st.integers(0, 7)), max_size=200),
           st.integers(1, 3000))
    def test_conserves_count(self, evs, dt):
        s = SampleStream([SourceEvent(t, c) for t, c in evs], 8, 10000)
        b = bin_timesteps(s, dt)
        assert b.event_count == len(evs)
        for k, chans in b.bins.items():
            want = [e.channel for e in s.events if e.timestamp_us // dt == k]
            assert chans == want


class TestDropping:
    sample = synth_sample(SynthSpec(event_count=10000, seed=5))

    def test_identity_and_empty(self):
        assert drop_events(self.sample, 0.0, 1).events == self.sample.events
        assert drop_events(self.sample, 1.0, 1).events == []

    def test_binomial(self):
        kept = len(drop_events(self.sample, 0.5, 42))
        assert abs(kept - 5000) <= 3 * 50

    def test_deterministic(self):
        assert drop_events(self.sample, 0.3, 9) == drop_events(self.sample, 0.3, 9)
        assert drop_events(self.sample, 0.3, 9) != drop_events(self.sample, 0.3, 10)

    @given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 2**32))
    def test_nested(self, p1, p2, seed):
        p1, p2 = sorted((p1, p2))
        s = SampleStream([SourceEvent(k, k % 7) for k in range(300)], 7, 300)
        lo = set(drop_events(s, p1, seed).events)
        hi = set(drop_events(s, p2, seed).events)
        assert hi <= lo

    def test_counts_monotone(self):
        counts = [len(drop_events(self.sample, q, 0)) for q in np.linspace(0, 1, 21)]
        assert counts == sorted(counts, reverse=True)

    def test_rejects_rate(self):
        with pytest.raises(ValueError):
            drop_events(self.sample, 1.5)
