"""Per-layer streaming pipeline with cycle accounting.

run_layer executes one register-file command: window generation over the
padded input, depth-tiled multiply-accumulate on the PE array, the folded
batch-norm/activation tail, and the optional pooling stage, everything
bit-exact against the straight-line reference implementations.

Two engines produce identical results. 'fast' extracts windows by padding
and slicing and evaluates whole layers as exact integer matrix products
(int8 operands keep every float64 partial sum below 2**53). 'cells' drives
the FIFO line buffer and one process element at a time; it is the
cycle-faithful route and is used at small scale to validate the fast one.

Cycle model per layer:
    priming  = (K - 1) * padded_width + K          (line-buffer fill)
    compute  = passes_in * passes_out * windows * beats   (beats: conv 1, deconv 4)
    drain    = attached-pool priming (one stream row + 2 slots), else 0
    weight   = ceil(weight_image_bits / stream_bits), never overlapped
    transfer = ceil(in_bits / stream) + ceil(out_bits / stream), overlapped
               with compute per direction (double-buffered feature streams)
    total    = priming + compute + drain + weight + max(0, transfer - overlapped)
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .linebuffer import LineBuffer, PaddingMode
from .pearray import HwConfig, PeArray, PeMode
from .qtensor import KernelSet, QTensor, check_accum, requantize_array

COMPUTE_OPS = ("conv3x3", "deconv2x")
LAYER_OPS = COMPUTE_OPS + ("maxpool", "avgpool", "identity")
ACTIVATIONS = ("none", "relu", "leaky")
POOLS = ("none", "max", "avg")


class ShapeMismatch(ValueError):
    """Command geometry and tensor/weight shapes disagree."""


class CapacityError(RuntimeError):
    """A working set does not fit the configured buffer capacity."""


class UnsupportedOp(ValueError):
    """Command requests an operation outside the modeled set."""


@dataclass(frozen=True)
class PostOps:
    """Post-accumulation stage settings carried by a command."""

    activation: str = "none"
    pool: str = "none"
    requant: bool = True
    out_scale_exp: int = 0
    leaky_shift: int = 3

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.pool not in POOLS:
            raise ValueError(f"unknown pool {self.pool!r}")


@dataclass(frozen=True)
class LayerCommand:
    """One pre-loaded register-file entry: data, not code."""

    op: str
    padding: PaddingMode
    in_shape: tuple
    out_shape: tuple
    tile_depth: int
    unroll: tuple
    weight_slot: int
    if_bank: int
    of_bank: int
    post: PostOps

    def __post_init__(self):
        if self.op not in LAYER_OPS:
            raise UnsupportedOp(f"unknown op {self.op!r}")
        if self.tile_depth < 1:
            raise ValueError("tile_depth must be at least 1")
        if self.if_bank not in (0, 1) or self.of_bank not in (0, 1):
            raise ValueError("banks are double-buffered: 0 or 1")

    @property
    def window(self) -> int:
        return 3 if self.op == "conv3x3" else 2


@dataclass
class CycleReport:
    """Cycle and operation accounting for one command (or a whole program)."""

    priming_cycles: int = 0
    compute_cycles: int = 0
    drain_cycles: int = 0
    transfer_cycles: int = 0
    weight_cycles: int = 0
    total_cycles: int = 0
    multiplications: int = 0
    additions: int = 0
    buffer_reads: int = 0
    buffer_writes: int = 0

    def merge(self, other: "CycleReport") -> None:
        for name in self.__dataclass_fields__:
            setattr(self, name, getattr(self, name) + getattr(other, name))


@dataclass
class BufferModel:
    """Occupancy tracking for the double-buffered IF banks, OF and weights."""

    cfg: HwConfig
    if_bank_bits: list = field(default_factory=lambda: [0, 0])
    of_bits: int = 0
    weight_bits: int = 0

    def fill_if(self, bank: int, bits: int, label: str = "input") -> None:
        cap = self.cfg.if_capacity_bits
        if cap is not None and bits > cap:
            raise CapacityError(f"{label}: IF bank needs {bits} bits, capacity {cap}")
        self.if_bank_bits[bank] = bits

    def fill_of(self, bits: int, label: str = "output") -> None:
        cap = self.cfg.of_capacity_bits
        if cap is not None and bits > cap:
            raise CapacityError(f"{label}: OF buffer needs {bits} bits, capacity {cap}")
        self.of_bits = bits

    def fill_weights(self, bits: int, label: str = "weights") -> None:
        cap = self.cfg.weight_capacity_bits
        if cap is not None and bits > cap:
            raise CapacityError(f"{label}: weight buffer needs {bits} bits, capacity {cap}")
        self.weight_bits = bits


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def padded_dims(h: int, w: int, mode: PaddingMode):
    return h + mode.pad_top + mode.pad_bottom, w + mode.pad_left + mode.pad_right


def compute_out_shape(op: str, in_shape, mode: PaddingMode, out_channels: int,
                      pool: str = "none"):
    """Final output shape of a command, pooling included."""
    h, w, c = in_shape
    ph, pw = padded_dims(h, w, mode)
    if op == "conv3x3":
        oh, ow = ph - 2, pw - 2
        if oh < 1 or ow < 1:
            raise ShapeMismatch(f"padded {ph}x{pw} too small for a 3x3 window")
    elif op == "deconv2x":
        if ph < 2 or pw < 2:
            raise ShapeMismatch(f"padded {ph}x{pw} too small for a 2x2 window")
        oh, ow = 2 * (ph - 1), 2 * (pw - 1)
    elif op in ("maxpool", "avgpool"):
        if out_channels != c:
            raise ShapeMismatch("pooling keeps the channel count")
        if h % 2 or w % 2:
            raise ShapeMismatch(f"pooling needs even dims, got {h}x{w}")
        return (h // 2, w // 2, c)
    elif op == "identity":
        if out_channels != c:
            raise ShapeMismatch("identity keeps the channel count")
        return (h, w, c)
    else:
        raise UnsupportedOp(op)
    if pool != "none":
        if oh % 2 or ow % 2:
            raise ShapeMismatch(f"attached pooling needs even dims, got {oh}x{ow}")
        oh, ow = oh // 2, ow // 2
    return (oh, ow, out_channels)


def layer_command(op: str, in_shape, out_channels: int, mode: PaddingMode,
                  cfg: HwConfig, activation: str = "none", pool: str = "none",
                  out_scale_exp: int = 0, weight_slot: int = -1,
                  if_bank: int = 0, of_bank: int = 1,
                  leaky_shift: int = 3) -> LayerCommand:
    """Convenience builder deriving out_shape and tiling from the config."""
    if op not in COMPUTE_OPS and pool != "none":
        raise UnsupportedOp("pool attachments only follow compute ops")
    out_shape = compute_out_shape(op, in_shape, mode, out_channels, pool)
    post = PostOps(activation=activation, pool=pool,
                   requant=op in COMPUTE_OPS, out_scale_exp=out_scale_exp,
                   leaky_shift=leaky_shift)
    return LayerCommand(
        op=op, padding=mode, in_shape=tuple(in_shape), out_shape=out_shape,
        tile_depth=min(in_shape[2], cfg.tn), unroll=(cfg.tn, cfg.tm),
        weight_slot=weight_slot, if_bank=if_bank, of_bank=of_bank, post=post)


def _activation(q: np.ndarray, act: str, leaky_shift: int) -> np.ndarray:
    if act == "none":
        return q
    if act == "relu":
        return np.maximum(q, 0)
    if act == "leaky":
        # arithmetic shift: negatives round away from zero
        neg = q.astype(np.int64) >> leaky_shift
        return np.where(q < 0, neg, q).astype(q.dtype)
    raise ValueError(f"unknown activation {act!r}")


def _pool2x2(x: np.ndarray, kind: str) -> np.ndarray:
    h, w, c = x.shape
    blocks = x.reshape(h // 2, 2, w // 2, 2, c)
    if kind == "max":
        return blocks.max(axis=(1, 3)).astype(np.int8)
    s = blocks.astype(np.int64).sum(axis=(1, 3))
    mag = np.abs(s) >> 2
    return np.where(s >= 0, mag, -mag).astype(np.int8)


def pool_act(data: np.ndarray, pool: str = "none", act: str = "none",
             leaky_shift: int = 3) -> np.ndarray:
    """Activation-then-pool tail on a q8 stream; both stages bypassable."""
    if act not in ACTIVATIONS:
        raise ValueError(f"unknown activation {act!r}")
    if pool not in POOLS:
        raise ValueError(f"unknown pool {pool!r}")
    out = _activation(np.asarray(data), act, leaky_shift)
    if pool != "none":
        h, w, _ = out.shape
        if h % 2 or w % 2:
            raise ShapeMismatch(f"pooling needs even dims, got {h}x{w}")
        out = _pool2x2(out, pool)
    return out.astype(np.int8)


def _weight_image_bits(cin: int, cout: int) -> int:
    # int8 taps + int32 bias + int16 bn multiplier + uint8 bn shift
    return cout * cin * 9 * 8 + cout * 32 + cout * 16 + cout * 8


def _conv_fast(padded: np.ndarray, ks: KernelSet, tile_depth: int) -> np.ndarray:
    hp, wp, cin = padded.shape
    cout = ks.out_channels
    oh, ow = hp - 2, wp - 2
    acc = np.zeros((oh * ow, cout), dtype=np.int64)
    for ci0 in range(0, cin, tile_depth):
        ct = min(tile_depth, cin - ci0)
        sw = sliding_window_view(padded[:, :, ci0:ci0 + ct], (3, 3), axis=(0, 1))
        flat = sw.reshape(oh * ow, ct * 9).astype(np.float64)
        kfl = ks.weights[:, ci0:ci0 + ct].reshape(cout, ct * 9).astype(np.float64)
        acc += (flat @ kfl.T).astype(np.int64)
        check_accum(acc)
    return acc.reshape(oh, ow, cout)


def _deconv_fast(padded: np.ndarray, ks: KernelSet, tile_depth: int) -> np.ndarray:
    hp, wp, cin = padded.shape
    cout = ks.out_channels
    wh, ww = hp - 1, wp - 1
    n = wh * ww
    corners = (
        padded[:-1, :-1, :], padded[:-1, 1:, :],
        padded[1:, :-1, :], padded[1:, 1:, :],
    )
    # per output-patch slot: contributing window corners and kernel taps
    plan = (
        ((0, 1, 2, 3), ((0, 0), (0, 2), (2, 0), (2, 2))),
        ((1, 3), ((0, 1), (2, 1))),
        ((2, 3), ((1, 0), (1, 2))),
        ((3,), ((1, 1),)),
    )
    slots = np.zeros((4, n, cout), dtype=np.int64)
    for ci0 in range(0, cin, tile_depth):
        ct = min(tile_depth, cin - ci0)
        for si, (corner_ids, taps) in enumerate(plan):
            ops = np.stack(
                [corners[i][:, :, ci0:ci0 + ct].reshape(n, ct) for i in corner_ids],
                axis=2).reshape(n, ct * len(corner_ids)).astype(np.float64)
            km = np.stack(
                [ks.weights[:, ci0:ci0 + ct, u, v] for (u, v) in taps],
                axis=2).reshape(cout, ct * len(taps)).astype(np.float64)
            slots[si] += (ops @ km.T).astype(np.int64)
        check_accum(slots)
    out = np.empty((2 * wh, 2 * ww, cout), dtype=np.int64)
    p = slots.reshape(4, wh, ww, cout)
    out[0::2, 0::2] = p[0]
    out[0::2, 1::2] = p[1]
    out[1::2, 0::2] = p[2]
    out[1::2, 1::2] = p[3]
    return out


def _compute_cells(cmd: LayerCommand, input: QTensor, ks: KernelSet,
                   cfg: HwConfig) -> np.ndarray:
    """Cycle-faithful route: FIFO line buffer feeding the PE array."""
    h, w, cin = input.shape
    cout = ks.out_channels
    mode = PeMode.CONV if cmd.op == "conv3x3" else PeMode.DECONV
    k = cmd.window
    beats = 1 if mode is PeMode.CONV else 4
    pe = PeArray(cfg)
    psum = None
    for ci0 in range(0, cin, cmd.tile_depth):
        ct = min(cmd.tile_depth, cin - ci0)
        lb = LineBuffer(w, h, cmd.padding, k)
        tile_out = []
        for y in range(h):
            for x in range(w):
                for win in lb.push(input.data[y, x, ci0:ci0 + ct]):
                    chwins = list(np.moveaxis(win, 2, 0))
                    row = np.zeros((cout, beats), dtype=np.int64)
                    for co0 in range(0, cout, cfg.tm):
                        cm = min(cfg.tm, cout - co0)
                        part = pe.array_cycle(
                            mode, chwins, ks.weights[co0:co0 + cm, ci0:ci0 + ct])
                        row[co0:co0 + cm] = part.reshape(cm, beats)
                    tile_out.append(row)
        assert lb.first_window_slot == lb.priming_slots
        tile = np.stack(tile_out)          # (windows, cout, beats)
        psum = tile if psum is None else check_accum(psum + tile)
    wh = lb.padded_height - k + 1
    ww = lb.padded_width - k + 1
    if mode is PeMode.CONV:
        return psum[:, :, 0].reshape(wh, ww, cout)
    out = np.empty((2 * wh, 2 * ww, cout), dtype=np.int64)
    p = psum.reshape(wh, ww, cout, 4)
    out[0::2, 0::2] = p[..., 0]
    out[0::2, 1::2] = p[..., 1]
    out[1::2, 0::2] = p[..., 2]
    out[1::2, 1::2] = p[..., 3]
    return out


def _compute_layer_report(cmd: LayerCommand, cfg: HwConfig) -> CycleReport:
    h, w, cin = cmd.in_shape
    cout = cmd.out_shape[2]
    ph, pw = padded_dims(h, w, cmd.padding)
    k = cmd.window
    if cmd.op == "conv3x3":
        windows = (ph - 2) * (pw - 2)
        beats = 1
        pre_pool_w = pw - 2
    else:
        windows = (ph - 1) * (pw - 1)
        beats = 4
        pre_pool_w = 2 * (pw - 1)
    passes_in = _ceil_div(cin, cmd.tile_depth)
    passes_out = _ceil_div(cout, cmd.unroll[1])
    r = CycleReport()
    r.priming_cycles = (k - 1) * pw + k
    r.compute_cycles = passes_in * passes_out * windows * beats
    r.drain_cycles = (pre_pool_w + 2) if cmd.post.pool != "none" else 0
    r.weight_cycles = _ceil_div(_weight_image_bits(cin, cout), cfg.stream_bits)
    in_xfer = _ceil_div(h * w * cin * 8, cfg.stream_bits)
    out_elems = int(np.prod(cmd.out_shape))
    out_xfer = _ceil_div(out_elems * 8, cfg.stream_bits)
    r.transfer_cycles = in_xfer + out_xfer
    overlapped = min(in_xfer, r.compute_cycles) + min(out_xfer, r.compute_cycles)
    r.total_cycles = (r.priming_cycles + r.compute_cycles + r.drain_cycles
                      + r.weight_cycles + max(0, r.transfer_cycles - overlapped))
    r.multiplications = 9 * windows * cin * cout
    if cmd.op == "conv3x3":
        r.additions = 9 * cin * windows * cout
    else:
        r.additions = windows * cout * (5 * cin + 4 * (cin - 1) + 4)
    if cmd.post.pool == "avg":
        r.additions += 3 * windows * beats * cout // 4
    acc_elems = windows * beats * cout
    r.buffer_reads = passes_out * windows * k * cin + (passes_in - 1) * acc_elems
    r.buffer_writes = h * w * cin + passes_in * acc_elems
    if cmd.post.pool != "none":
        r.buffer_writes += out_elems
    return r


def _move_layer_report(cmd: LayerCommand, cfg: HwConfig) -> CycleReport:
    h, w, c = cmd.in_shape
    r = CycleReport()
    if cmd.op in ("maxpool", "avgpool"):
        r.priming_cycles = w + 2
    r.compute_cycles = _ceil_div(c, cfg.tn) * h * w
    in_xfer = _ceil_div(h * w * c * 8, cfg.stream_bits)
    out_elems = int(np.prod(cmd.out_shape))
    out_xfer = _ceil_div(out_elems * 8, cfg.stream_bits)
    r.transfer_cycles = in_xfer + out_xfer
    overlapped = min(in_xfer, r.compute_cycles) + min(out_xfer, r.compute_cycles)
    r.total_cycles = (r.priming_cycles + r.compute_cycles
                      + max(0, r.transfer_cycles - overlapped))
    if cmd.op == "avgpool":
        r.additions = 3 * out_elems
    r.buffer_reads = h * w * c
    r.buffer_writes = h * w * c + out_elems
    return r


def _validate(cmd: LayerCommand, input: QTensor, weights: KernelSet | None,
              cfg: HwConfig) -> None:
    if tuple(input.shape) != tuple(cmd.in_shape):
        raise ShapeMismatch(
            f"command expects input {cmd.in_shape}, got {input.shape}")
    if cmd.unroll != (cfg.tn, cfg.tm):
        raise ShapeMismatch(
            f"command compiled for unroll {cmd.unroll}, config is {(cfg.tn, cfg.tm)}")
    if cmd.tile_depth > cfg.tn:
        raise ShapeMismatch("tile_depth exceeds the input-channel unroll")
    if cmd.op in COMPUTE_OPS:
        if weights is None:
            raise ShapeMismatch(f"{cmd.op} needs weights")
        if not cmd.post.requant:
            raise ShapeMismatch("compute ops always requantize")
        cin, cout = cmd.in_shape[2], cmd.out_shape[2]
        if weights.in_channels != cin or weights.out_channels != cout:
            raise ShapeMismatch(
                f"weights are {weights.out_channels}x{weights.in_channels}, "
                f"command needs {cout}x{cin}")
        if cmd.op == "deconv2x" and not weights.rotated:
            raise ShapeMismatch("deconvolution kernels must be pre-rotated")
    expected = compute_out_shape(cmd.op, cmd.in_shape, cmd.padding,
                                 cmd.out_shape[2], cmd.post.pool)
    if tuple(cmd.out_shape) != tuple(expected):
        raise ShapeMismatch(
            f"command out_shape {cmd.out_shape} does not match geometry {expected}")


def check_layer_capacity(cmd: LayerCommand, cfg: HwConfig,
                         label: str = "layer") -> dict:
    """Working-set bits per buffer; raises CapacityError on finite overrun."""
    h, w, cin = cmd.in_shape
    ph, pw = padded_dims(h, w, cmd.padding)
    bufs = BufferModel(cfg)
    if_bits = ph * pw * min(cmd.tile_depth, cin) * 8
    bufs.fill_if(cmd.if_bank, if_bits, label)
    if cmd.op in COMPUTE_OPS:
        k = cmd.window
        wh, ww = ph - k + 1, pw - k + 1
        beats = 1 if cmd.op == "conv3x3" else 4
        of_bits = wh * ww * beats * cmd.out_shape[2] * 32
        weight_bits = _weight_image_bits(cin, cmd.out_shape[2])
    else:
        of_bits = int(np.prod(cmd.out_shape)) * 8
        weight_bits = 0
    bufs.fill_of(of_bits, label)
    bufs.fill_weights(weight_bits, label)
    return {"if_bits": if_bits, "of_bits": of_bits, "weight_bits": weight_bits}


def run_layer(cmd: LayerCommand, input: QTensor, weights: KernelSet | None,
              cfg: HwConfig, engine: str = "fast"):
    """Execute one command; returns (QTensor, CycleReport)."""
    if engine not in ("fast", "cells"):
        raise ValueError(f"unknown engine {engine!r}")
    _validate(cmd, input, weights, cfg)
    check_layer_capacity(cmd, cfg)
    if cmd.op in COMPUTE_OPS:
        if engine == "cells":
            acc = _compute_cells(cmd, input, weights, cfg)
        else:
            padded = np.pad(input.data, (
                (cmd.padding.pad_top, cmd.padding.pad_bottom),
                (cmd.padding.pad_left, cmd.padding.pad_right),
                (0, 0)))
            if cmd.op == "conv3x3":
                acc = _conv_fast(padded, weights, cmd.tile_depth)
            else:
                acc = _deconv_fast(padded, weights, cmd.tile_depth)
        acc = check_accum(acc + weights.bias.astype(np.int64))
        q = requantize_array(acc, weights.bn_multiplier, weights.bn_shift)
        q = pool_act(q, cmd.post.pool, cmd.post.activation, cmd.post.leaky_shift)
        out = QTensor(q, cmd.post.out_scale_exp)
        report = _compute_layer_report(cmd, cfg)
    elif cmd.op in ("maxpool", "avgpool"):
        kind = "max" if cmd.op == "maxpool" else "avg"
        out = QTensor(pool_act(input.data, kind, "none"), input.scale_exp)
        report = _move_layer_report(cmd, cfg)
    else:  # identity
        out = QTensor(input.data.copy(), input.scale_exp)
        report = _move_layer_report(cmd, cfg)
    if tuple(out.shape) != tuple(cmd.out_shape):
        raise ShapeMismatch(f"produced {out.shape}, command says {cmd.out_shape}")
    return out, report
