"""Stream-to-window conversion: cascaded row FIFOs plus a KxK shift grid.

A raster-order pixel stream enters one element per slot; K-1 row FIFOs
(each as deep as the padded row) delay earlier rows so that every slot can
assemble one KxK window column by column. A small padding controller walks
the padded raster and injects zero elements for the edges named by the
pre-loaded padding mode, so the core never sees a special case at borders.

Pooling windows reuse the same machinery with window 2 and an emission mask
that keeps every second window in each dimension (stride 2).
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterator, List

import numpy as np

from .qtensor import QTensor

EDGE_TOP = "top"
EDGE_BOTTOM = "bottom"
EDGE_LEFT = "left"
EDGE_RIGHT = "right"
_EDGE_ORDER = (EDGE_TOP, EDGE_BOTTOM, EDGE_LEFT, EDGE_RIGHT)
_EDGE_CHARS = {"T": EDGE_TOP, "B": EDGE_BOTTOM, "L": EDGE_LEFT, "R": EDGE_RIGHT}

# The tile positions produced by row-major 2-D tiling: interior, four edges,
# four corners, and the full-width / full-frame strips. Full-height strips
# (top+bottom without left or right) never occur, which leaves 13 modes.
SUPPORTED_MODES = frozenset(
    frozenset(_EDGE_CHARS[c] for c in s)
    for s in (
        "", "T", "B", "L", "R",
        "TL", "TR", "BL", "BR",
        "LR", "TLR", "BLR", "TBLR",
    )
)


@dataclass(frozen=True)
class PaddingMode:
    """An edge subset telling the padding controller where to inject zeros."""

    edges: frozenset

    def __post_init__(self):
        edges = frozenset(self.edges)
        object.__setattr__(self, "edges", edges)
        bad = edges - set(_EDGE_ORDER)
        if bad:
            raise ValueError(f"unknown edges {sorted(bad)}")
        if edges not in SUPPORTED_MODES:
            raise ValueError(
                f"unsupported padding mode {self.short_name()!r}: "
                "top+bottom without a horizontal edge pair never occurs"
            )

    @classmethod
    def of(cls, spec: str) -> "PaddingMode":
        """Build from a compact string like 'TL', 'TBLR' or '-' (none)."""
        spec = spec.strip()
        if spec in ("", "-"):
            return cls(frozenset())
        try:
            return cls(frozenset(_EDGE_CHARS[c] for c in spec))
        except KeyError as e:
            raise ValueError(f"unknown edge letter in {spec!r}") from e

    @classmethod
    def none(cls) -> "PaddingMode":
        return cls(frozenset())

    @classmethod
    def all_edges(cls) -> "PaddingMode":
        return cls(frozenset(_EDGE_ORDER))

    def short_name(self) -> str:
        s = "".join(c for c in "TBLR" if _EDGE_CHARS[c] in self.edges)
        return s or "-"

    def __iter__(self) -> Iterator[str]:
        return iter(e for e in _EDGE_ORDER if e in self.edges)

    def __contains__(self, edge: str) -> bool:
        return edge in self.edges

    @property
    def pad_top(self) -> int:
        return int(EDGE_TOP in self.edges)

    @property
    def pad_bottom(self) -> int:
        return int(EDGE_BOTTOM in self.edges)

    @property
    def pad_left(self) -> int:
        return int(EDGE_LEFT in self.edges)

    @property
    def pad_right(self) -> int:
        return int(EDGE_RIGHT in self.edges)


def all_padding_modes() -> List[PaddingMode]:
    """The 13 supported modes in a stable order (by short name)."""
    modes = [PaddingMode(m) for m in SUPPORTED_MODES]
    modes.sort(key=lambda m: (len(m.edges), m.short_name()))
    return modes


class LineBuffer:
    """Stateful window generator for one frame.

    configure with the unpadded frame geometry, a padding mode and the
    window size, then push real pixels in raster order. Each push returns
    the windows that became complete; in steady state that is one window
    per padded slot, and the final push flushes any trailing padding.
    """

    def __init__(self, width: int, height: int, mode: PaddingMode,
                 window: int, stride: int = 1):
        if window not in (2, 3):
            raise ValueError(f"window must be 2 or 3, got {window}")
        if stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {stride}")
        if width < 1 or height < 1:
            raise ValueError("frame must be at least 1x1")
        if not isinstance(mode, PaddingMode):
            mode = PaddingMode(frozenset(mode))
        self.width = width
        self.height = height
        self.mode = mode
        self.window = window
        self.stride = stride
        self.padded_width = width + mode.pad_left + mode.pad_right
        self.padded_height = height + mode.pad_top + mode.pad_bottom
        if self.padded_width < window or self.padded_height < window:
            raise ValueError(
                f"padded frame {self.padded_height}x{self.padded_width} "
                f"smaller than window {window}"
            )
        self._fifos = [deque() for _ in range(window - 1)]
        self._cols: deque = deque(maxlen=window)
        self._zero = None
        self._slots = 0          # padded raster slots consumed (cycle counter)
        self._pushed = 0         # real pixels accepted
        self.real_pixels_in = 0
        self.zeros_injected = 0
        self.first_window_slot = None
        self.frame_complete = False

    @property
    def priming_slots(self) -> int:
        """Slots before the first window: (K-1) rows plus K elements."""
        return (self.window - 1) * self.padded_width + self.window

    @property
    def cycles(self) -> int:
        return self._slots

    def expected_windows(self) -> int:
        wy = (self.padded_height - self.window) // self.stride + 1
        wx = (self.padded_width - self.window) // self.stride + 1
        return wy * wx

    def fifo_flags(self):
        """(full, empty) per row FIFO; full means one padded row buffered."""
        return [(len(f) == self.padded_width, len(f) == 0) for f in self._fifos]

    def check_flags(self) -> None:
        for (full, empty), f in zip(self.fifo_flags(), self._fifos):
            assert full == (len(f) == self.padded_width)
            assert empty == (len(f) == 0)
            assert len(f) <= self.padded_width

    def _is_real_slot(self, y: int, x: int) -> bool:
        m = self.mode
        return (m.pad_top <= y < m.pad_top + self.height
                and m.pad_left <= x < m.pad_left + self.width)

    def _advance(self, payload: np.ndarray, out: list) -> None:
        k = self.window
        col = np.empty((k,) + payload.shape, dtype=payload.dtype)
        col[k - 1] = payload
        carry = payload
        for i, fifo in enumerate(self._fifos):
            fifo.append(carry)
            if len(fifo) > self.padded_width:
                carry = fifo.popleft()
                col[k - 2 - i] = carry
            else:
                # this row delay is still filling; deeper FIFOs see nothing
                col[: k - 1 - i] = 0
                break
        self._cols.append(col)
        y, x = divmod(self._slots, self.padded_width)
        self._slots += 1
        if y >= k - 1 and x >= k - 1:
            if (y - (k - 1)) % self.stride == 0 and (x - (k - 1)) % self.stride == 0:
                if self.first_window_slot is None:
                    self.first_window_slot = self._slots
                out.append(np.stack(list(self._cols), axis=1))

    def push(self, pixel) -> list:
        """Feed the next real pixel (a channel vector); returns new windows."""
        if self.frame_complete:
            raise RuntimeError("push after the frame completed")
        pix = np.asarray(pixel)
        if pix.ndim == 0:
            pix = pix.reshape(1)
        if self._zero is None:
            self._zero = np.zeros_like(pix)
        out: list = []
        while not self._is_real_slot(*divmod(self._slots, self.padded_width)):
            self.zeros_injected += 1
            self._advance(self._zero, out)
        self._advance(pix, out)
        self.real_pixels_in += 1
        self._pushed += 1
        if self._pushed == self.width * self.height:
            total = self.padded_width * self.padded_height
            while self._slots < total:
                self.zeros_injected += 1
                self._advance(self._zero, out)
            self.frame_complete = True
        return out


def configure(width: int, height: int, mode: PaddingMode, window: int,
              stride: int = 1) -> LineBuffer:
    """Pre-load geometry and padding mode; returns a fresh stream state."""
    return LineBuffer(width, height, mode, window, stride)


def window_stream(input: QTensor, mode: PaddingMode, window: int,
                  stride: int = 1) -> List[np.ndarray]:
    """Run a whole frame through the line buffer; windows in raster order."""
    data = input.data if isinstance(input, QTensor) else np.asarray(input)
    if data.ndim != 3:
        raise ValueError("expected (h, w, c) input")
    h, w, _ = data.shape
    lb = configure(w, h, mode, window, stride)
    out: List[np.ndarray] = []
    for y in range(h):
        for x in range(w):
            out.extend(lb.push(data[y, x, :]))
    assert lb.frame_complete
    assert len(out) == lb.expected_windows()
    return out
