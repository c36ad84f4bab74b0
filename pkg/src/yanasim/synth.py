"""Synthetic SHD-shaped samples, synthetic networks and random equivalence cases."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .events import SampleStream, SourceEvent
from .netgraph import Graph, LayerSpec


@dataclass(frozen=True)
class SynthSpec:
    input_size: int = 700
    duration_us: int = 800_000
    event_count: int = 8000
    distribution: str = "uniform"
    seed: int = 0
    label: Optional[int] = None

    def __post_init__(self):
        if self.event_count < 0:
            raise ValueError("event_count must be >= 0")
        if self.distribution not in ("uniform", "gaussian-bump"):
            raise ValueError(f"unknown channel distribution {self.distribution!r}")


def synth_sample(spec: SynthSpec) -> SampleStream:
    rng = np.random.default_rng(spec.seed)
    ts = rng.integers(0, spec.duration_us, size=spec.event_count, endpoint=True)
    if spec.distribution == "uniform":
        ch = rng.integers(0, spec.input_size, size=spec.event_count)
    else:
        # a bump drifting across the channel axis, roughly like a spoken digit
        centre = spec.input_size * (0.25 + 0.5 * ts / max(spec.duration_us, 1))
        ch = np.rint(rng.normal(centre, spec.input_size / 12)).astype(np.int64)
        ch = np.clip(ch, 0, spec.input_size - 1)
    events = [SourceEvent(int(t), int(c)) for t, c in zip(ts, ch)]
    return SampleStream(events, spec.input_size, spec.duration_us, spec.label)


def _dense(w: np.ndarray, floor: float = 2.0**-8) -> np.ndarray:
    # keep every weight at least one Q7.8 LSb so the net stays dense after quantization
    return np.where(np.abs(w) < floor, np.where(w < 0, -floor, floor), w)


def synth_graph(
    input_size: int = 700,
    hidden: int = 100,
    output: int = 20,
    seed: int = 0,
    recurrent: bool = False,
    tau_hidden: Fraction = Fraction(10),
    tau_output: Fraction = Fraction(20),
    threshold: float = 1.0,
    scale: float = 1.0,
) -> Graph:
    """Dense Gaussian network; the default scale yields moderate hidden activity."""
    rng = np.random.default_rng(seed)
    w_in = _dense(rng.normal(0.0, scale, size=(input_size, hidden)))
    w_out = _dense(rng.normal(0.0, scale, size=(hidden, output)))
    w_rec = _dense(rng.normal(0.0, scale / 2, size=(hidden, hidden))) if recurrent else None
    return Graph(
        input_size,
        LayerSpec("lif", hidden, Fraction(tau_hidden), threshold),
        LayerSpec("li", output, Fraction(tau_output)),
        w_in, w_out, w_rec,
    )


def _random_weights(rng, shape, density) -> np.ndarray:
    # magnitudes from sub-LSb (Q7.8: 2^-9) up past saturation (2^7)
    mags = 2.0 ** rng.uniform(-10, 7.5, size=shape)
    w = mags * rng.choice([-1.0, 1.0], size=shape)
    w[rng.random(shape) >= density] = 0.0
    return w


@dataclass
class RandomCase:
    graph: Graph
    sample: SampleStream
    n_max: int
    dt_us: int


def random_case(rng: np.random.Generator, recurrent: bool = False) -> RandomCase:
    """A small random (net, stream) pair stressing rounding, saturation and long gaps."""
    input_size = int(rng.integers(1, 12))
    hidden = int(rng.integers(1, 10))
    output = int(rng.integers(1, 6))
    density = float(rng.uniform(0.3, 1.0))
    taus = [Fraction(2), Fraction(3, 2), Fraction(4), Fraction(10), Fraction(20), Fraction(7, 3)]
    graph = Graph(
        input_size,
        LayerSpec("lif", hidden, taus[rng.integers(len(taus))], float(2.0 ** rng.uniform(-3, 6))),
        LayerSpec("li", output, taus[rng.integers(len(taus))]),
        _random_weights(rng, (input_size, hidden), density),
        _random_weights(rng, (hidden, output), density),
        _random_weights(rng, (hidden, hidden), density / 2) if recurrent else None,
    )
    n_max = int(rng.integers(1, 9))
    dt_us = 1000
    timesteps = int(rng.integers(5, 60))
    duration_us = timesteps * dt_us
    n_events = int(rng.integers(0, 40))
    # clustered bursts separated by gaps longer than n_max
    bursts = rng.integers(0, timesteps, size=max(1, n_events // 8))
    ts = rng.choice(bursts, size=n_events) * dt_us + rng.integers(0, 3 * dt_us, size=n_events)
    ts = np.clip(ts, 0, duration_us)
    ch = rng.integers(0, input_size, size=n_events)
    events = [SourceEvent(int(t), int(c)) for t, c in zip(ts, ch)]
    return RandomCase(graph, SampleStream(events, input_size, duration_us), n_max, dt_us)
