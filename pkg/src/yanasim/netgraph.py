"""SNN graph (input -> LIF hidden -> LI readout), pruning, quantization, capacity checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from .numerics import (
    LUT_FRAC,
    MEMBRANE_FMT,
    WEIGHT_FMT,
    FxFormat,
    LeakLut,
    build_leak_lut,
    quantize,
    quantize_array,
)

GRAPH_MAGIC = "# yana-graph v1"
DEFAULT_N_MAX = 64

SYN_PER_CORE = 1 << 17
NEUR_PER_CORE = 1 << 10


class GraphFileError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    size: int
    tau_mem: Fraction
    threshold: Optional[float] = None


@dataclass
class Graph:
    input_size: int
    hidden: LayerSpec
    output: LayerSpec
    w_in: np.ndarray
    w_out: np.ndarray
    w_rec: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.input_size <= 0 or self.hidden.size <= 0 or self.output.size <= 0:
            raise ValueError("layer sizes must be positive")
        for layer in (self.hidden, self.output):
            if layer.tau_mem <= 1:
                raise ValueError(f"{layer.kind} layer tau_mem must be > 1, got {layer.tau_mem}")
        self.w_in = np.asarray(self.w_in, dtype=np.float64)
        self.w_out = np.asarray(self.w_out, dtype=np.float64)
        _check_shape("input->hidden", self.w_in, (self.input_size, self.hidden.size))
        _check_shape("hidden->output", self.w_out, (self.hidden.size, self.output.size))
        if self.w_rec is not None:
            self.w_rec = np.asarray(self.w_rec, dtype=np.float64)
            _check_shape("hidden->hidden", self.w_rec, (self.hidden.size, self.hidden.size))

    def matrices(self) -> dict[str, np.ndarray]:
        out = {"w_in": self.w_in, "w_out": self.w_out}
        if self.w_rec is not None:
            out["w_rec"] = self.w_rec
        return out

    @property
    def nnz(self) -> int:
        return sum(int(np.count_nonzero(w)) for w in self.matrices().values())


def _check_shape(name, w, shape):
    if w.shape != shape:
        raise ValueError(f"{name} weights have shape {w.shape}, expected {shape}")


# -- graph files -------------------------------------------------------------


def _read_wcsv(path: Path, shape: tuple[int, int]) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rows.append([float(x) for x in line.split(",")])
        except ValueError:
            raise GraphFileError(f"{path}:{lineno}: malformed weight row")
        if len(rows[-1]) != shape[1]:
            raise GraphFileError(
                f"{path}:{lineno}: row has {len(rows[-1])} columns, expected {shape[1]}"
            )
    if len(rows) != shape[0]:
        raise GraphFileError(f"{path}: has {len(rows)} rows, expected {shape[0]}")
    return np.array(rows, dtype=np.float64).reshape(shape)


def _kv(tokens, lineno, path) -> dict[str, str]:
    out = {}
    for tok in tokens:
        k, sep, v = tok.partition("=")
        if not sep:
            raise GraphFileError(f"{path}:{lineno}: expected key=value, got {tok!r}")
        out[k] = v
    return out


def parse_graph(path) -> Graph:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != GRAPH_MAGIC:
        raise GraphFileError(f"{path}:1: expected {GRAPH_MAGIC!r}")
    input_size = None
    layers: dict[str, LayerSpec] = {}
    weight_files: dict[str, Path] = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        toks = raw.split()
        if not toks or toks[0].startswith("#"):
            continue
        try:
            if toks[0] == "input":
                input_size = int(toks[1])
            elif toks[0] == "layer":
                name, kind = toks[1], toks[2]
                kv = _kv(toks[3:], lineno, path)
                expected = {"hidden": "lif", "output": "li"}.get(name)
                if expected is None:
                    raise GraphFileError(f"{path}:{lineno}: unknown layer {name!r}")
                if kind != expected:
                    raise GraphFileError(
                        f"{path}:{lineno}: unknown layer kind {kind!r} for {name} (expected {expected})"
                    )
                threshold = float(kv["threshold"]) if kind == "lif" else None
                tau = Fraction(kv["tau"])
                if tau <= 1:
                    raise GraphFileError(f"{path}:{lineno}: tau must be > 1, got {kv['tau']}")
                layers[name] = LayerSpec(kind, int(kv["size"]), tau, threshold)
            elif toks[0] == "weights":
                edge = toks[1]
                if edge not in ("input->hidden", "hidden->output", "hidden->hidden"):
                    raise GraphFileError(f"{path}:{lineno}: unknown weight edge {edge!r}")
                weight_files[edge] = path.parent / _kv(toks[2:], lineno, path)["file"]
            else:
                raise GraphFileError(f"{path}:{lineno}: unknown directive {toks[0]!r}")
        except (IndexError, KeyError, ValueError) as e:
            if isinstance(e, GraphFileError):
                raise
            raise GraphFileError(f"{path}:{lineno}: {e!r}")
    if input_size is None or set(layers) != {"hidden", "output"}:
        raise GraphFileError(f"{path}: needs an input line and hidden/output layers")
    for edge in ("input->hidden", "hidden->output"):
        if edge not in weight_files:
            raise GraphFileError(f"{path}: missing weights {edge}")
    h, o = layers["hidden"].size, layers["output"].size
    w_in = _read_wcsv(weight_files["input->hidden"], (input_size, h))
    w_out = _read_wcsv(weight_files["hidden->output"], (h, o))
    w_rec = None
    if "hidden->hidden" in weight_files:
        w_rec = _read_wcsv(weight_files["hidden->hidden"], (h, h))
    return Graph(input_size, layers["hidden"], layers["output"], w_in, w_out, w_rec)


def _write_wcsv(w: np.ndarray, path: Path) -> None:
    lines = (",".join(repr(float(x)) for x in row) for row in w)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_graph(g: Graph, path) -> None:
    """Write ``g`` as a .graph file plus .wcsv sidecars next to it."""
    path = Path(path)
    stem = path.stem
    lines = [
        GRAPH_MAGIC,
        f"input {g.input_size}",
        f"layer hidden lif size={g.hidden.size} tau={g.hidden.tau_mem} "
        f"threshold={g.hidden.threshold!r}",
        f"layer output li size={g.output.size} tau={g.output.tau_mem}",
    ]
    edges = [("input->hidden", "in", g.w_in), ("hidden->output", "out", g.w_out)]
    if g.w_rec is not None:
        edges.append(("hidden->hidden", "rec", g.w_rec))
    for edge, tag, w in edges:
        name = f"{stem}.{tag}.wcsv"
        _write_wcsv(w, path.parent / name)
        lines.append(f"weights {edge} file={name}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- pruning -----------------------------------------------------------------


def _prune_matrix(w: np.ndarray, fraction: float) -> np.ndarray:
    rows, cols = np.nonzero(w)  # row-major order
    k = math.floor(fraction * len(rows))
    if k == 0:
        return w.copy()
    mags = np.abs(w[rows, cols])
    order = np.lexsort((cols, rows, mags))
    out = w.copy()
    drop = order[:k]
    out[rows[drop], cols[drop]] = 0.0
    return out


def prune_magnitude(g: Graph, fraction: float) -> Graph:
    """Zero the ``floor(fraction * nnz)`` smallest-magnitude weights of each matrix.

    Ties are broken by (row, col) so builds are reproducible.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"prune fraction must be in [0, 1), got {fraction}")
    w_rec = None if g.w_rec is None else _prune_matrix(g.w_rec, fraction)
    return replace(
        g,
        w_in=_prune_matrix(g.w_in, fraction),
        w_out=_prune_matrix(g.w_out, fraction),
        w_rec=w_rec,
    )


# -- quantization ------------------------------------------------------------


@dataclass
class QGraph:
    input_size: int
    hidden_size: int
    output_size: int
    w_in: np.ndarray
    w_out: np.ndarray
    w_rec: Optional[np.ndarray]
    hidden_lut: LeakLut
    output_lut: LeakLut
    threshold: int
    weight_fmt: FxFormat = WEIGHT_FMT
    membrane_fmt: FxFormat = MEMBRANE_FMT

    @property
    def n_max(self) -> int:
        return self.hidden_lut.n_max

    @property
    def lut_frac(self) -> int:
        return self.hidden_lut.lut_frac

    @property
    def nnz_in(self) -> int:
        return int(np.count_nonzero(self.w_in))

    @property
    def nnz_out(self) -> int:
        return int(np.count_nonzero(self.w_out))

    @property
    def nnz_rec(self) -> int:
        return 0 if self.w_rec is None else int(np.count_nonzero(self.w_rec))

    @property
    def nnz(self) -> int:
        return self.nnz_in + self.nnz_out + self.nnz_rec


def quantize_graph(
    g: Graph,
    weight_fmt: FxFormat = WEIGHT_FMT,
    membrane_fmt: FxFormat = MEMBRANE_FMT,
    n_max: int = DEFAULT_N_MAX,
    lut_frac: int = LUT_FRAC,
) -> QGraph:
    """Quantize weights and threshold; weights that round to 0 drop out of the mask."""
    w_rec = None if g.w_rec is None else quantize_array(g.w_rec, weight_fmt)
    return QGraph(
        input_size=g.input_size,
        hidden_size=g.hidden.size,
        output_size=g.output.size,
        w_in=quantize_array(g.w_in, weight_fmt),
        w_out=quantize_array(g.w_out, weight_fmt),
        w_rec=w_rec,
        hidden_lut=build_leak_lut(g.hidden.tau_mem, n_max, lut_frac),
        output_lut=build_leak_lut(g.output.tau_mem, n_max, lut_frac),
        threshold=quantize(g.hidden.threshold, membrane_fmt).raw,
        weight_fmt=weight_fmt,
        membrane_fmt=membrane_fmt,
    )


# -- capacity ----------------------------------------------------------------


@dataclass(frozen=True)
class CapacityLimits:
    syn_per_core: int = SYN_PER_CORE
    neur_per_core: int = NEUR_PER_CORE


@dataclass(frozen=True)
class Violation:
    core: str
    resource: str
    count: int
    limit: int

    def __str__(self) -> str:
        return f"{self.core} core: {self.resource} {self.count} exceeds limit {self.limit}"


@dataclass
class CapacityReport:
    usage: dict[str, dict[str, int]] = field(default_factory=dict)
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_capacity(q: QGraph, limits: CapacityLimits = CapacityLimits()) -> CapacityReport:
    usage = {
        "input": {"synapses": q.nnz_in, "neurons": q.input_size},
        "hidden": {"synapses": q.nnz_in + q.nnz_rec, "neurons": q.hidden_size},
        "output": {"synapses": q.nnz_out, "neurons": q.output_size},
    }
    report = CapacityReport(usage)
    for core, counts in usage.items():
        if counts["synapses"] > limits.syn_per_core:
            report.violations.append(
                Violation(core, "synapses", counts["synapses"], limits.syn_per_core)
            )
        if counts["neurons"] > limits.neur_per_core:
            report.violations.append(
                Violation(core, "neurons", counts["neurons"], limits.neur_per_core)
            )
    return report
