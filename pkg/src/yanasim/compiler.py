"""Map a quantized graph onto per-core memory images and (de)serialize them.

Core ids follow a fixed convention: 0 is the weightless input multicast core,
1 the hidden LIF core and 2 the LI output core.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from .events import NEURON_BITS, PACKET_BITS, SYNAPSE_BITS, DestPacket, decode_packet, encode_packet
from .netgraph import CapacityLimits, QGraph, validate_capacity
from .numerics import FxFormat, LeakLut

MEMCFG_MAGIC = "# yana-memcfg v1"

MULTICAST_CORE, HIDDEN_CORE, OUTPUT_CORE = 0, 1, 2
KINDS = ("multicast", "lif", "li")


class CapacityError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class MemCfgError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass
class CoreImage:
    core_id: int
    kind: str
    neurons: int
    synapses: dict[int, int] = field(default_factory=dict)
    axon_map: dict[int, tuple[int, int]] = field(default_factory=dict)
    axon_table: list[int] = field(default_factory=list)
    threshold: Optional[int] = None
    leak_lut: Optional[LeakLut] = None

    def fanout(self, neuron: int) -> list[DestPacket]:
        base, count = self.axon_map.get(neuron, (0, 0))
        return [decode_packet(w) for w in self.axon_table[base:base + count]]


@dataclass
class MemCfg:
    cores: list[CoreImage]
    input_size: int
    output_size: int
    n_max: int
    weight_fmt: FxFormat
    membrane_fmt: FxFormat
    lut_frac: int

    def core(self, core_id: int) -> CoreImage:
        for c in self.cores:
            if c.core_id == core_id:
                return c
        raise KeyError(f"no core {core_id}")

    @property
    def synapse_count(self) -> int:
        return sum(len(c.synapses) for c in self.cores)

    @property
    def packet_count(self) -> int:
        return sum(len(c.axon_table) for c in self.cores)


class _SynapseAllocator:
    """Dense address assignment; with ``dedup`` equal values share one address."""

    def __init__(self, dedup: bool):
        self.dedup = dedup
        self.table: dict[int, int] = {}
        self._by_value: dict[int, int] = {}

    def add(self, raw: int) -> int:
        if self.dedup and raw in self._by_value:
            return self._by_value[raw]
        addr = len(self.table)
        self.table[addr] = raw
        self._by_value.setdefault(raw, addr)
        return addr


def _addresses(w: np.ndarray, alloc: _SynapseAllocator) -> dict[tuple[int, int], int]:
    rows, cols = np.nonzero(w)
    return {(int(r), int(c)): alloc.add(int(w[r, c])) for r, c in zip(rows, cols)}


def _build_axons(n_src: int, targets) -> tuple[dict[int, tuple[int, int]], list[int]]:
    """``targets(src)`` yields the packets of one source neuron in order."""
    axon_map, table = {}, []
    for src in range(n_src):
        base = len(table)
        table.extend(encode_packet(p) for p in targets(src))
        axon_map[src] = (base, len(table) - base)
    return axon_map, table


def map_graph(q: QGraph, dedup: bool = False, limits: CapacityLimits = CapacityLimits()) -> MemCfg:
    report = validate_capacity(q, limits)
    if not report.ok:
        raise CapacityError(report.violations)

    hidden_alloc = _SynapseAllocator(dedup)
    in_addr = _addresses(q.w_in, hidden_alloc)
    rec_addr = {} if q.w_rec is None else _addresses(q.w_rec, hidden_alloc)
    output_alloc = _SynapseAllocator(dedup)
    out_addr = _addresses(q.w_out, output_alloc)

    in_rows = _row_lists(in_addr, q.input_size)
    out_rows = _row_lists(out_addr, q.hidden_size)
    rec_rows = _row_lists(rec_addr, q.hidden_size)

    mc_map, mc_table = _build_axons(
        q.input_size,
        lambda c: (DestPacket(HIDDEN_CORE, j, a) for j, a in in_rows[c]),
    )

    def hidden_targets(j):
        yield from (DestPacket(OUTPUT_CORE, k, a) for k, a in out_rows[j])
        yield from (DestPacket(HIDDEN_CORE, i, a) for i, a in rec_rows[j])

    h_map, h_table = _build_axons(q.hidden_size, hidden_targets)

    cores = [
        CoreImage(MULTICAST_CORE, "multicast", q.input_size, {}, mc_map, mc_table),
        CoreImage(
            HIDDEN_CORE, "lif", q.hidden_size, hidden_alloc.table, h_map, h_table,
            threshold=q.threshold, leak_lut=q.hidden_lut,
        ),
        CoreImage(
            OUTPUT_CORE, "li", q.output_size, output_alloc.table, {}, [],
            leak_lut=q.output_lut,
        ),
    ]
    return MemCfg(
        cores, q.input_size, q.output_size, q.n_max, q.weight_fmt, q.membrane_fmt, q.lut_frac
    )


def _row_lists(addr: dict[tuple[int, int], int], n_rows: int) -> list[list[tuple[int, int]]]:
    rows: list[list[tuple[int, int]]] = [[] for _ in range(n_rows)]
    for (r, c), a in addr.items():  # insertion order is row-major
        rows[r].append((c, a))
    return rows


# -- text format ---------------------------------------------------------------


def format_memcfg(m: MemCfg) -> str:
    wd = m.weight_fmt.hex_digits
    md = m.membrane_fmt.hex_digits
    ad = (SYNAPSE_BITS + 3) // 4
    pd = (PACKET_BITS + 3) // 4
    out = [
        MEMCFG_MAGIC,
        f"meta input_size={m.input_size:x} output_size={m.output_size:x} n_max={m.n_max:x} "
        f"weight_fmt={m.weight_fmt} membrane_fmt={m.membrane_fmt} lut_frac={m.lut_frac:x}",
    ]
    for c in sorted(m.cores, key=lambda c: c.core_id):
        out.append(f"core {c.core_id:x} kind={c.kind} neurons={c.neurons:x}")
        if c.kind == "lif":
            out.append(f"  threshold {m.membrane_fmt.to_bits(c.threshold):0{md}x}")
        if c.kind in ("lif", "li"):
            out.append(f"  inv_tau {c.leak_lut.inv_tau:x}")
            out.append("  lut " + " ".join(f"{e:x}" for e in c.leak_lut.entries))
        out.append("  synapses")
        for addr in sorted(c.synapses):
            out.append(f"  {addr:0{ad}x} {m.weight_fmt.to_bits(c.synapses[addr]):0{wd}x}")
        out.append("  axon_map")
        for nid in sorted(c.axon_map):
            base, count = c.axon_map[nid]
            out.append(f"  {nid:x} {base:x} {count:x}")
        out.append("  axon_table")
        for idx, word in enumerate(c.axon_table):
            out.append(f"  {idx:x} {word:0{pd}x}")
    return "\n".join(out) + "\n"


def write_memcfg(m: MemCfg, path) -> None:
    Path(path).write_text(format_memcfg(m), encoding="utf-8")


def _hex(tok: str, lineno: int) -> int:
    try:
        value = int(tok, 16)
    except ValueError:
        value = -1
    if value < 0 or not tok.isalnum():
        raise MemCfgError(lineno, f"bad hex number {tok!r}")
    return value


def _kv(tokens, lineno: int) -> dict[str, str]:
    out = {}
    for tok in tokens:
        k, sep, v = tok.partition("=")
        if not sep:
            raise MemCfgError(lineno, f"expected key=value, got {tok!r}")
        out[k] = v
    return out


def _validate_core(c: CoreImage, lineno: int, n_max: int) -> None:
    if c.neurons > 1 << NEURON_BITS:
        raise MemCfgError(lineno, f"core {c.core_id}: {c.neurons} neurons exceed 2^{NEURON_BITS}")
    if c.kind in ("lif", "li"):
        if c.leak_lut is None or c.leak_lut.n_max != n_max:
            raise MemCfgError(lineno, f"core {c.core_id}: lut must have n_max={n_max} entries")
    if c.kind == "lif" and c.threshold is None:
        raise MemCfgError(lineno, f"core {c.core_id}: lif core needs a threshold")
    spans = sorted((base, base + count, nid) for nid, (base, count) in c.axon_map.items() if count)
    for (b0, e0, n0), (b1, _, n1) in zip(spans, spans[1:]):
        if b1 < e0:
            raise MemCfgError(lineno, f"core {c.core_id}: axon ranges of neurons {n0} and {n1} overlap")
    for b, e, nid in spans:
        if e > len(c.axon_table):
            raise MemCfgError(lineno, f"core {c.core_id}: axon range of neuron {nid} exceeds table")


def parse_memcfg(text: str) -> MemCfg:
    lines = text.splitlines()
    if not lines or lines[0].strip() != MEMCFG_MAGIC:
        found = lines[0].strip() if lines else ""
        raise MemCfgError(1, f"version mismatch: expected {MEMCFG_MAGIC!r}, found {found!r}")
    meta: dict[str, str] = {}
    cores: list[CoreImage] = []
    core_lines: list[int] = []
    lut_info: dict[int, dict] = {}
    section = None
    for lineno, raw in enumerate(lines[1:], start=2):
        toks = raw.split()
        if not toks:
            continue
        head = toks[0]
        if head == "meta":
            meta = _kv(toks[1:], lineno)
            continue
        if head == "core":
            kv = _kv(toks[2:], lineno)
            if kv.get("kind") not in KINDS:
                raise MemCfgError(lineno, f"unknown core kind {kv.get('kind')!r}")
            cores.append(
                CoreImage(_hex(toks[1], lineno), kv["kind"], _hex(kv.get("neurons", ""), lineno))
            )
            core_lines.append(lineno)
            lut_info[len(cores) - 1] = {}
            section = None
            continue
        if not cores:
            raise MemCfgError(lineno, f"unexpected {head!r} before first core")
        c = cores[-1]
        info = lut_info[len(cores) - 1]
        want = {"threshold": 2, "inv_tau": 2, "synapses": 1, "axon_map": 1, "axon_table": 1}
        if len(toks) < want.get(head, {"synapses": 2, "axon_map": 3, "axon_table": 2}.get(section, 1)):
            raise MemCfgError(lineno, f"truncated line {raw.strip()!r}")
        if head in ("synapses", "axon_map", "axon_table"):
            section = head
        elif head == "threshold":
            info["threshold"] = (_hex(toks[1], lineno), lineno)
        elif head == "inv_tau":
            info["inv_tau"] = _hex(toks[1], lineno)
        elif head == "lut":
            info["lut"] = tuple(_hex(t, lineno) for t in toks[1:])
        elif section == "synapses":
            addr = _hex(toks[0], lineno)
            if addr >> SYNAPSE_BITS:
                raise MemCfgError(lineno, f"synapse address {addr:#x} exceeds {SYNAPSE_BITS} bits")
            seen = info.setdefault("addrs", set())
            if addr in seen:
                raise MemCfgError(lineno, f"duplicate synapse address {addr:#x}")
            seen.add(addr)
            info.setdefault("weights", []).append((addr, _hex(toks[1], lineno), lineno))
        elif section == "axon_map":
            nid, base, count = (_hex(t, lineno) for t in toks[:3])
            if nid >= c.neurons:
                raise MemCfgError(lineno, f"axon_map neuron {nid} >= neurons {c.neurons}")
            c.axon_map[nid] = (base, count)
        elif section == "axon_table":
            idx, word = _hex(toks[0], lineno), _hex(toks[1], lineno)
            if idx != len(c.axon_table):
                raise MemCfgError(lineno, f"axon_table index {idx:#x} out of sequence")
            try:
                decode_packet(word)
            except ValueError as e:
                raise MemCfgError(lineno, str(e))
            c.axon_table.append(word)
        else:
            raise MemCfgError(lineno, f"unexpected line {raw.strip()!r}")

    try:
        weight_fmt = FxFormat.parse(meta["weight_fmt"])
        membrane_fmt = FxFormat.parse(meta["membrane_fmt"])
        n_max = int(meta["n_max"], 16)
        lut_frac = int(meta["lut_frac"], 16)
        input_size = int(meta["input_size"], 16)
        output_size = int(meta["output_size"], 16)
    except (KeyError, ValueError) as e:
        raise MemCfgError(2, f"bad or missing meta field: {e}")

    for k, c in enumerate(cores):
        info = lut_info[k]
        for addr, bits, lineno in info.get("weights", []):
            try:
                c.synapses[addr] = weight_fmt.from_bits(bits)
            except ValueError as e:
                raise MemCfgError(lineno, str(e))
        if "threshold" in info:
            bits, lineno = info["threshold"]
            try:
                c.threshold = membrane_fmt.from_bits(bits)
            except ValueError as e:
                raise MemCfgError(lineno, str(e))
        if "lut" in info:
            inv_tau = info.get("inv_tau", 0)
            # tau is not stored; recover the nominal value from 1/tau for display only
            tau = Fraction(1 << lut_frac, inv_tau) if inv_tau else Fraction(0)
            c.leak_lut = LeakLut(info["lut"], inv_tau, tau, lut_frac)
        _validate_core(c, core_lines[k], n_max)

    ids = [c.core_id for c in cores]
    if len(set(ids)) != len(ids):
        raise MemCfgError(core_lines[-1], f"duplicate core ids {ids}")
    by_id = dict(zip(ids, cores))
    for k, c in enumerate(cores):
        for word in c.axon_table:
            dest = decode_packet(word)
            target = by_id.get(dest.dest_core)
            if target is None:
                raise MemCfgError(core_lines[k], f"packet {word:#x} targets missing core {dest.dest_core}")
            if dest.dest_neuron >= target.neurons or dest.dest_synapse not in target.synapses:
                raise MemCfgError(
                    core_lines[k], f"packet {word:#x} targets an absent neuron or synapse"
                )
    return MemCfg(cores, input_size, output_size, n_max, weight_fmt, membrane_fmt, lut_frac)


def read_memcfg(path) -> MemCfg:
    return parse_memcfg(Path(path).read_text(encoding="utf-8"))
