"""Bit-exact fixed-point arithmetic and the event-driven LIF/LI update kernels.

All raw values are plain Python ints holding the two's-complement value of a
fixed-point number (``real = raw / 2**frac_bits``). Products are truncated with
an arithmetic right shift, i.e. floor toward minus infinity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Sequence, Union

import numpy as np

Rational = Union[int, float, str, Fraction]

LUT_FRAC = 16
#: Extra integer bits of the weight-sum accumulator over the membrane format.
ACC_GUARD_BITS = 16


@dataclass(frozen=True)
class FxFormat:
    total_bits: int
    frac_bits: int
    signed: bool = True

    def __post_init__(self):
        if not 1 <= self.total_bits <= 64:
            raise ValueError(f"total_bits must be in [1, 64], got {self.total_bits}")
        if not 0 <= self.frac_bits < self.total_bits:
            raise ValueError(
                f"frac_bits must be in [0, {self.total_bits}), got {self.frac_bits}"
            )

    @classmethod
    def q(cls, int_bits: int, frac_bits: int) -> "FxFormat":
        """Signed Qm.n format: ``int_bits`` excludes the sign bit."""
        return cls(int_bits + frac_bits + 1, frac_bits, True)

    @classmethod
    def parse(cls, text: str) -> "FxFormat":
        """Parse ``"7.8"`` or ``"Q7.8"`` into a signed format."""
        body = text.strip().lstrip("Qq")
        try:
            int_bits, frac_bits = (int(x) for x in body.split("."))
        except ValueError:
            raise ValueError(f"bad fixed-point format {text!r}, expected <int>.<frac>")
        return cls.q(int_bits, frac_bits)

    @property
    def int_bits(self) -> int:
        return self.total_bits - self.frac_bits - (1 if self.signed else 0)

    @property
    def min_raw(self) -> int:
        return -(1 << (self.total_bits - 1)) if self.signed else 0

    @property
    def max_raw(self) -> int:
        if self.signed:
            return (1 << (self.total_bits - 1)) - 1
        return (1 << self.total_bits) - 1

    @property
    def hex_digits(self) -> int:
        return (self.total_bits + 3) // 4

    def saturate(self, raw: int) -> int:
        lo, hi = self.min_raw, self.max_raw
        return lo if raw < lo else hi if raw > hi else raw

    def to_bits(self, raw: int) -> int:
        """Two's-complement bit pattern of ``raw`` in ``total_bits``."""
        return raw & ((1 << self.total_bits) - 1)

    def from_bits(self, bits: int) -> int:
        if bits < 0 or bits >> self.total_bits:
            raise ValueError(f"bit pattern {bits:#x} wider than {self.total_bits} bits")
        if self.signed and bits >> (self.total_bits - 1):
            return bits - (1 << self.total_bits)
        return bits

    def __str__(self) -> str:
        return f"{self.int_bits}.{self.frac_bits}"


WEIGHT_FMT = FxFormat.q(7, 8)
MEMBRANE_FMT = FxFormat.q(23, 8)


def accumulator_format(membrane_fmt: FxFormat) -> FxFormat:
    """Wide weight-sum register: membrane format plus guard bits."""
    total = min(64, membrane_fmt.total_bits + ACC_GUARD_BITS)
    return FxFormat(total, membrane_fmt.frac_bits, membrane_fmt.signed)


@dataclass(frozen=True)
class FxValue:
    raw: int
    fmt: FxFormat

    def __post_init__(self):
        if not self.fmt.min_raw <= self.raw <= self.fmt.max_raw:
            raise ValueError(f"raw {self.raw} does not fit format {self.fmt}")

    @property
    def value(self) -> float:
        return self.raw / (1 << self.fmt.frac_bits)

    def __float__(self) -> float:
        return self.value


def _round_half_away(x: Fraction) -> int:
    n = math.floor(abs(x) + Fraction(1, 2))
    return n if x >= 0 else -n


def quantize(value: float | Fraction, fmt: FxFormat) -> FxValue:
    """Round to nearest (ties away from zero), then clamp."""
    scaled = Fraction(value) * (1 << fmt.frac_bits)
    return FxValue(fmt.saturate(_round_half_away(scaled)), fmt)


def quantize_array(values: np.ndarray, fmt: FxFormat) -> np.ndarray:
    """Vectorised :func:`quantize` returning raw int64 values."""
    values = np.asarray(values, dtype=np.float64)
    if fmt.total_bits > 53:
        flat = [quantize(float(v), fmt).raw for v in values.ravel()]
        return np.array(flat, dtype=np.int64).reshape(values.shape)
    # scaling by a power of two is exact, and floor/compare avoids the
    # 0.49999999999999994 + 0.5 == 1.0 trap
    mag = np.abs(values) * float(1 << fmt.frac_bits)
    whole = np.floor(mag)
    mag = whole + (mag - whole >= 0.5)
    rounded = np.copysign(mag, values)
    rounded = np.clip(rounded, fmt.min_raw, fmt.max_raw)
    return rounded.astype(np.int64)


def rescale_raw(raw: int, src: FxFormat, dst: FxFormat) -> int:
    """Move ``raw`` between fraction widths (floor when dropping bits), saturating."""
    shift = dst.frac_bits - src.frac_bits
    out = raw << shift if shift >= 0 else raw >> -shift
    return dst.saturate(out)


def sat_add(a: FxValue, b: FxValue) -> FxValue:
    if a.fmt != b.fmt:
        raise ValueError(f"format mismatch: {a.fmt} vs {b.fmt}")
    return FxValue(a.fmt.saturate(a.raw + b.raw), a.fmt)


@dataclass(frozen=True)
class LeakLut:
    """Quantized ``(1 - 1/tau)**n`` for ``n = 1..n_max`` plus ``1/tau``.

    ``entries[k]`` holds the factor for ``n = k + 1``; all values are unsigned
    fractions with ``lut_frac`` fraction bits.
    """

    entries: tuple[int, ...]
    inv_tau: int
    tau_mem: Fraction = field(compare=False)
    lut_frac: int = LUT_FRAC

    @property
    def n_max(self) -> int:
        return len(self.entries)


def build_leak_lut(tau_mem: Rational, n_max: int, lut_frac: int = LUT_FRAC) -> LeakLut:
    tau = Fraction(tau_mem)
    if tau <= 1:
        raise ValueError(f"tau_mem must be > 1, got {tau}")
    if n_max < 1:
        raise ValueError(f"n_max must be >= 1, got {n_max}")
    if not 1 <= lut_frac <= 31:
        raise ValueError(f"lut_frac must be in [1, 31], got {lut_frac}")
    scale = 1 << lut_frac
    decay = 1 - 1 / tau
    entries = []
    factor = Fraction(1)
    for _ in range(n_max):
        factor *= decay
        entries.append(_round_half_away(factor * scale))
    return LeakLut(tuple(entries), _round_half_away(scale / tau), tau, lut_frac)


class NeuronUpdateResult(NamedTuple):
    new_u: FxValue
    spiked: bool


def leak_integrate_raw(
    u: int,
    n: int,
    i: int,
    entries: Sequence[int],
    inv_tau: int,
    lut_frac: int,
    lo: int,
    hi: int,
    lut_offset: int = 0,
) -> int:
    """Deferred-leak integration on raw ints; ``lut_offset`` exists for fault injection."""
    k = n - 1 + lut_offset
    leaked = (u * entries[k]) >> lut_frac if 0 <= k < len(entries) else 0
    total = leaked + ((i * inv_tau) >> lut_frac)
    return lo if total < lo else hi if total > hi else total


def _check_update_args(u: FxValue, n: int, i: FxValue) -> None:
    if n < 1:
        raise ValueError(f"elapsed timesteps must be >= 1, got {n}")
    if u.fmt != i.fmt:
        raise ValueError(f"format mismatch: {u.fmt} vs {i.fmt}")


def li_update(u: FxValue, n: int, i: FxValue, lut: LeakLut) -> FxValue:
    _check_update_args(u, n, i)
    fmt = u.fmt
    raw = leak_integrate_raw(
        u.raw, n, i.raw, lut.entries, lut.inv_tau, lut.lut_frac, fmt.min_raw, fmt.max_raw
    )
    return FxValue(raw, fmt)


def lif_update(
    u: FxValue, n: int, i: FxValue, lut: LeakLut, u_th: FxValue
) -> NeuronUpdateResult:
    """One deferred LIF update; the threshold comparison is strict."""
    if u_th.fmt != u.fmt:
        raise ValueError(f"format mismatch: {u.fmt} vs {u_th.fmt}")
    u_tilde = li_update(u, n, i, lut)
    if u_tilde.raw > u_th.raw:
        return NeuronUpdateResult(FxValue(0, u.fmt), True)
    return NeuronUpdateResult(u_tilde, False)
