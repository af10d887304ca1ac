"""Fixed-point value types shared by every stage of the accelerator model.

Feature maps are symmetric signed 8-bit with per-tensor power-of-two scales
(no zero point). Multiply-accumulate runs in signed 32 bits, and narrowing
back to 8 bits is a multiply/shift/round/saturate step (requantization) with
a 16-bit multiplier carrying 15 fractional bits. Rounding is
round-half-away-from-zero everywhere a real value meets an integer grid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Q8_MIN = -128
Q8_MAX = 127
ACC_MIN = -(1 << 31)
ACC_MAX = (1 << 31) - 1
SCALE_EXP_MIN = -16
SCALE_EXP_MAX = 0
REQUANT_FRAC_BITS = 15


class AccumulatorOverflow(OverflowError):
    """A multiply-accumulate path left the signed 32-bit range."""


def round_half_away(x) -> np.ndarray:
    """Round to the nearest integer with ties away from zero.

    Accepts scalars or arrays, returns int64. This is the single rounding
    rule used by quantization, requantization and batch-norm folding.
    """
    x = np.asarray(x, dtype=np.float64)
    r = np.where(x >= 0.0, np.floor(x + 0.5), np.ceil(x - 0.5))
    # keep the int64 cast defined for huge magnitudes (callers clamp later)
    return np.clip(r, -(2.0 ** 62), 2.0 ** 62).astype(np.int64)


def check_accum(values):
    """Range-check accumulator values; raises instead of wrapping silently."""
    arr = np.asarray(values)
    if arr.size and (arr.min() < ACC_MIN or arr.max() > ACC_MAX):
        raise AccumulatorOverflow(
            f"accumulator out of 32-bit range: min={int(arr.min())} max={int(arr.max())}"
        )
    return values


def _check_scale_exp(scale_exp: int) -> None:
    if not isinstance(scale_exp, (int, np.integer)):
        raise TypeError(f"scale_exp must be an integer, got {scale_exp!r}")
    if not SCALE_EXP_MIN <= scale_exp <= SCALE_EXP_MAX:
        raise ValueError(
            f"scale_exp {scale_exp} outside [{SCALE_EXP_MIN}, {SCALE_EXP_MAX}]"
        )


def quantize(x: float, scale_exp: int) -> int:
    """Quantize one real value to q8 at scale 2**scale_exp.

    quantize(0.5, -7) == 64, quantize(2.0, -7) saturates to 127.
    """
    _check_scale_exp(scale_exp)
    q = int(round_half_away(float(x) / 2.0 ** scale_exp))
    return max(Q8_MIN, min(Q8_MAX, q))


def quantize_array(x, scale_exp: int) -> np.ndarray:
    """Vector form of quantize; returns int8."""
    _check_scale_exp(scale_exp)
    q = round_half_away(np.asarray(x, dtype=np.float64) / 2.0 ** scale_exp)
    return np.clip(q, Q8_MIN, Q8_MAX).astype(np.int8)


@dataclass(frozen=True)
class Requant:
    """Accumulator-to-q8 rescale: value = multiplier / 2**(15 + shift).

    multiplier is signed 16-bit, shift an extra right shift in [0, 31].
    """

    multiplier: int
    shift: int

    def __post_init__(self):
        if not -(1 << 15) <= self.multiplier <= (1 << 15) - 1:
            raise ValueError(f"multiplier {self.multiplier} outside signed 16-bit range")
        if not 0 <= self.shift <= 31:
            raise ValueError(f"shift {self.shift} outside [0, 31]")

    @property
    def scale(self) -> float:
        return self.multiplier / 2.0 ** (REQUANT_FRAC_BITS + self.shift)


def requantize(acc: int, r: Requant) -> int:
    """Narrow one 32-bit accumulator value to q8 through a Requant."""
    acc = int(acc)
    if not ACC_MIN <= acc <= ACC_MAX:
        raise AccumulatorOverflow(f"requantize input {acc} outside 32-bit range")
    sh = REQUANT_FRAC_BITS + r.shift
    prod = acc * r.multiplier
    half = 1 << (sh - 1)
    if prod >= 0:
        q = (prod + half) >> sh
    else:
        q = -((-prod + half) >> sh)
    return max(Q8_MIN, min(Q8_MAX, q))


def requantize_array(acc, multiplier, shift) -> np.ndarray:
    """Per-channel vector requantization over the last axis.

    acc: integer array (..., C) inside the 32-bit accumulator range.
    multiplier: int16-valued array (C,), shift: array (C,) in [0, 31].
    """
    acc = check_accum(np.asarray(acc, dtype=np.int64))
    mult = np.asarray(multiplier, dtype=np.int64)
    sh = REQUANT_FRAC_BITS + np.asarray(shift, dtype=np.int64)
    prod = acc * mult
    half = np.int64(1) << (sh - 1)
    mag = (np.abs(prod) + half) >> sh
    q = np.where(prod >= 0, mag, -mag)
    return np.clip(q, Q8_MIN, Q8_MAX).astype(np.int8)


@dataclass(frozen=True, eq=False)
class QTensor:
    """A quantized feature map: int8 data (height, width, channels) plus scale."""

    data: np.ndarray
    scale_exp: int

    def __post_init__(self):
        if not isinstance(self.data, np.ndarray) or self.data.dtype != np.int8:
            raise TypeError("QTensor data must be an int8 ndarray")
        if self.data.ndim != 3:
            raise ValueError(f"QTensor data must be (h, w, c), got shape {self.data.shape}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    @classmethod
    def from_real(cls, real, scale_exp: int) -> "QTensor":
        return cls(quantize_array(real, scale_exp), scale_exp)

    def to_real(self) -> np.ndarray:
        return dequantize(self)


def dequantize(t: QTensor) -> np.ndarray:
    """Recover real values: data * 2**scale_exp, float64."""
    return t.data.astype(np.float64) * 2.0 ** t.scale_exp


@dataclass(frozen=True, eq=False)
class KernelSet:
    """Per-layer weight bundle as the weight buffer stores it.

    weights: int8 (out_ch, in_ch, 3, 3), already rotated 180 degrees for
    deconvolution layers (rotation happens at pack time, flagged by
    `rotated`). bias: int32 (out_ch,) at accumulator scale, which is
    input_scale * weight_scale. bn_multiplier/bn_shift: the folded
    batch-norm requantization, per output channel.
    """

    weights: np.ndarray
    bias: np.ndarray
    bn_multiplier: np.ndarray
    bn_shift: np.ndarray
    scale_exp: int
    rotated: bool = False

    def __post_init__(self):
        w = self.weights
        if w.dtype != np.int8 or w.ndim != 4 or w.shape[2:] != (3, 3):
            raise ValueError(f"weights must be int8 (out, in, 3, 3), got {w.dtype} {w.shape}")
        cout = w.shape[0]
        if self.bias.shape != (cout,) or self.bias.dtype != np.int32:
            raise ValueError("bias must be int32 with one entry per output channel")
        if self.bn_multiplier.shape != (cout,) or self.bn_multiplier.dtype != np.int16:
            raise ValueError("bn_multiplier must be int16 with one entry per output channel")
        if self.bn_shift.shape != (cout,) or self.bn_shift.dtype != np.uint8:
            raise ValueError("bn_shift must be uint8 with one entry per output channel")
        if self.bn_shift.size and int(self.bn_shift.max()) > 31:
            raise ValueError("bn_shift entries must lie in [0, 31]")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    def requant(self, channel: int) -> Requant:
        return Requant(int(self.bn_multiplier[channel]), int(self.bn_shift[channel]))


def identity_kernel_set(in_ch: int, out_ch: int, scale_exp: int = 0,
                        rotated: bool = False) -> KernelSet:
    """All-zero weights with a fixed halving requant; handy test scaffolding."""
    return KernelSet(
        weights=np.zeros((out_ch, in_ch, 3, 3), dtype=np.int8),
        bias=np.zeros(out_ch, dtype=np.int32),
        bn_multiplier=np.full(out_ch, 1 << 14, dtype=np.int16),
        bn_shift=np.full(out_ch, 0, dtype=np.uint8),
        scale_exp=scale_exp,
        rotated=rotated,
    )
