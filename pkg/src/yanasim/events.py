"""Source/destination event types, packet packing, event files and binning."""

from __future__ import annotations

import hashlib
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

CORE_BITS = 2
NEURON_BITS = 10
SYNAPSE_BITS = 17
PACKET_BITS = CORE_BITS + NEURON_BITS + SYNAPSE_BITS

NEURON_SHIFT = SYNAPSE_BITS
CORE_SHIFT = SYNAPSE_BITS + NEURON_BITS

EVENTS_MAGIC = "# yana-events v1"


class EventFileError(ValueError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = path
        self.lineno = lineno


class SourceEvent(NamedTuple):
    timestamp_us: int
    channel: int


class DestPacket(NamedTuple):
    dest_core: int
    dest_neuron: int
    dest_synapse: int


def encode_packet(p: DestPacket) -> int:
    core, neuron, synapse = p
    if not 0 <= core < 1 << CORE_BITS:
        raise ValueError(f"dest_core {core} out of range")
    if not 0 <= neuron < 1 << NEURON_BITS:
        raise ValueError(f"dest_neuron {neuron} out of range")
    if not 0 <= synapse < 1 << SYNAPSE_BITS:
        raise ValueError(f"dest_synapse {synapse} out of range")
    return (core << CORE_SHIFT) | (neuron << NEURON_SHIFT) | synapse


def decode_packet(word: int) -> DestPacket:
    if word < 0 or word >> PACKET_BITS:
        raise ValueError(f"packet word {word:#x} has bits above bit {PACKET_BITS - 1}")
    return DestPacket(
        word >> CORE_SHIFT,
        (word >> NEURON_SHIFT) & ((1 << NEURON_BITS) - 1),
        word & ((1 << SYNAPSE_BITS) - 1),
    )


@dataclass
class SampleStream:
    events: list[SourceEvent]
    input_size: int
    duration_us: int
    label: Optional[int] = None

    def __post_init__(self):
        self.events = sorted(self.events, key=lambda e: e.timestamp_us)

    def __len__(self) -> int:
        return len(self.events)


@dataclass
class BinnedStream:
    dt_us: int
    bins: dict[int, list[int]]
    num_timesteps: int
    input_size: int = 0
    label: Optional[int] = None

    @property
    def event_count(self) -> int:
        return sum(len(b) for b in self.bins.values())

    @property
    def last_bin(self) -> int:
        """Highest non-empty bin index, or -1 for an empty stream."""
        return max(self.bins, default=-1)


def _parse_header(path, line: str) -> tuple[int, int, Optional[int]]:
    fields = {}
    for tok in line.split():
        key, sep, val = tok.partition("=")
        if not sep:
            raise EventFileError(path, 2, f"expected key=value, got {tok!r}")
        fields[key] = val
    try:
        input_size = int(fields["input_size"])
        duration_us = int(fields["duration_us"])
        label_txt = fields.get("label", "none")
        label = None if label_txt == "none" else int(label_txt)
    except KeyError as e:
        raise EventFileError(path, 2, f"missing header field {e.args[0]}")
    except ValueError as e:
        raise EventFileError(path, 2, str(e))
    if input_size < 1 or duration_us < 0:
        raise EventFileError(path, 2, "input_size must be >= 1 and duration_us >= 0")
    return input_size, duration_us, label


def load_sample(path) -> SampleStream:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != EVENTS_MAGIC:
        raise EventFileError(path, 1, f"expected {EVENTS_MAGIC!r}")
    if len(lines) < 2:
        raise EventFileError(path, 2, "missing header line")
    input_size, duration_us, label = _parse_header(path, lines[1])
    events = []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        try:
            ts_txt, ch_txt = line.split(",")
            ts, ch = int(ts_txt), int(ch_txt)
        except ValueError:
            raise EventFileError(path, lineno, f"malformed event line {line!r}")
        if ts < 0 or ts > duration_us:
            raise EventFileError(path, lineno, f"timestamp {ts} outside [0, {duration_us}]")
        if ch < 0 or ch >= input_size:
            raise EventFileError(path, lineno, f"channel {ch} >= input_size {input_size}")
        events.append(SourceEvent(ts, ch))
    return SampleStream(events, input_size, duration_us, label)


def format_sample(s: SampleStream) -> str:
    label = "none" if s.label is None else str(s.label)
    out = [EVENTS_MAGIC, f"input_size={s.input_size} duration_us={s.duration_us} label={label}"]
    out.extend(f"{e.timestamp_us},{e.channel}" for e in s.events)
    return "\n".join(out) + "\n"


def write_sample(s: SampleStream, path) -> None:
    Path(path).write_text(format_sample(s), encoding="utf-8")


def bin_timesteps(s: SampleStream, dt_us: int = 2000) -> BinnedStream:
    if dt_us < 1:
        raise ValueError(f"dt_us must be >= 1, got {dt_us}")
    bins: dict[int, list[int]] = defaultdict(list)
    for e in s.events:
        bins[e.timestamp_us // dt_us].append(e.channel)
    return BinnedStream(
        dt_us=dt_us,
        bins=dict(bins),
        num_timesteps=s.duration_us // dt_us + 1,
        input_size=s.input_size,
        label=s.label,
    )


def _unit_draw(seed: int, index: int) -> float:
    digest = hashlib.blake2b(f"{seed}:{index}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") / 2.0**64


def drop_events(s: SampleStream, drop_rate: float, seed: int = 0) -> SampleStream:
    """Uniformly drop events with a per-event hash draw.

    An event is kept iff its draw is ``>= drop_rate``, so for a fixed seed the
    survivors at a higher rate are a subset of those at a lower rate.
    """
    if not 0.0 <= drop_rate <= 1.0:
        raise ValueError(f"drop_rate must be in [0, 1], got {drop_rate}")
    kept = [e for k, e in enumerate(s.events) if _unit_draw(seed, k) >= drop_rate]
    return SampleStream(kept, s.input_size, s.duration_us, s.label)
