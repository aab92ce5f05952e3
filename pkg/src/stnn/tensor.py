"""Flat data buffers and strided tensor views.

A tensor is a view of a flat buffer: an offset plus one stride per axis.
All addressing is zero-based.  Strides may be zero or negative; bounds are
validated from the min/max corner addresses when a view is created.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "TensorError",
    "Buffer",
    "IndexRange",
    "TensorView",
    "lex_strides",
    "lex_view",
    "from_array",
    "index_of",
    "compose",
]


class TensorError(ValueError):
    """Raised for invalid shapes, strides, ranges or addresses."""


class Buffer:
    """A flat block of float64 values."""

    __slots__ = ("data",)

    def __init__(self, source):
        if isinstance(source, int):
            self.data = np.zeros(source, dtype=np.float64)
        else:
            arr = np.asarray(source, dtype=np.float64)
            self.data = arr.reshape(-1).copy() if arr.ndim != 1 else arr.astype(np.float64, copy=False)

    def __len__(self) -> int:
        return self.data.shape[0]

    def get(self, a: int) -> float:
        self._check(a)
        return float(self.data[a])

    def set(self, a: int, value: float) -> None:
        self._check(a)
        self.data[a] = value

    def _check(self, a: int) -> None:
        if not 0 <= a < len(self):
            raise TensorError(f"address {a} out of buffer range [0, {len(self)})")


@dataclass(frozen=True)
class IndexRange:
    """Arithmetic range a:b:r — starts at a, steps by r, strictly bounded by b."""

    start: int
    bound: int
    step: int = 1

    def __post_init__(self):
        if self.step == 0:
            raise TensorError("index range step must be nonzero")
        if (self.bound - self.start) * self.step <= 0:
            raise TensorError(
                f"empty index range {self.start}:{self.bound}:{self.step}"
            )

    def __len__(self) -> int:
        sign = 1 if self.step > 0 else -1
        return 1 + (self.bound - self.start - sign) // self.step

    def indices(self) -> range:
        return range(self.start, self.bound, self.step)

    @staticmethod
    def full(n: int) -> "IndexRange":
        return IndexRange(0, n, 1)


def lex_strides(shape: Sequence[int]) -> tuple[int, ...]:
    """Strides making flat addresses monotone in lexicographic index order.

    s_d = 1 and s_{j-1} = n_j * s_j; these are the mixed-radix weights.
    """
    if len(shape) == 0:
        raise TensorError("lex_strides needs at least one axis")
    if any(n < 1 for n in shape):
        raise TensorError(f"shape entries must be >= 1, got {tuple(shape)}")
    strides = [1] * len(shape)
    for j in range(len(shape) - 2, -1, -1):
        strides[j] = shape[j + 1] * strides[j + 1]
    return tuple(strides)


def index_of(shape: Sequence[int], a: int) -> tuple[int, ...]:
    """Recover the multi-index of flat address ``a`` under lexicographic strides.

    Mixed-radix digits, least significant axis last.
    """
    total = 1
    for n in shape:
        total *= n
    if not 0 <= a < total:
        raise TensorError(f"address {a} out of range [0, {total})")
    digits = [0] * len(shape)
    b = a
    for k in range(len(shape) - 1, -1, -1):
        b, digits[k] = divmod(b, shape[k])
    return tuple(digits)


def _sign(x: int) -> int:
    return (x > 0) - (x < 0)


class TensorView:
    """Shape + strides + offset window over a flat buffer.

    Views are immutable descriptors; the data lives in the buffer, so a view
    built from another view shares storage (no copies).
    """

    __slots__ = ("buffer", "offset", "strides", "shape", "signature")

    def __init__(self, buffer: Buffer, offset: int, strides: Sequence[int],
                 shape: Sequence[int], signature: tuple[str, ...] | None = None):
        shape = tuple(int(n) for n in shape)
        strides = tuple(int(s) for s in strides)
        if len(shape) != len(strides):
            raise TensorError(f"rank mismatch: shape {shape} vs strides {strides}")
        if any(n < 1 for n in shape):
            raise TensorError(f"shape entries must be >= 1, got {shape}")
        if signature is not None and len(signature) != len(shape):
            raise TensorError("signature length must match rank")
        lo = hi = offset
        for n, s in zip(shape, strides):
            span = s * (n - 1)
            if span >= 0:
                hi += span
            else:
                lo += span
        if len(buffer) == 0 or lo < 0 or hi >= len(buffer):
            raise TensorError(
                f"view [{lo}, {hi}] exceeds buffer of {len(buffer)} elements"
            )
        self.buffer = buffer
        self.offset = int(offset)
        self.strides = strides
        self.shape = shape
        self.signature = tuple(signature) if signature is not None else None

    # -- addressing ------------------------------------------------------

    @property
    def rank(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        n = 1
        for d in self.shape:
            n *= d
        return n

    def address(self, index: Sequence[int]) -> int:
        """Flat buffer address of a multi-index: offset + strides . index."""
        index = tuple(index)
        if len(index) != self.rank:
            raise TensorError(f"index rank {len(index)} != view rank {self.rank}")
        a = self.offset
        for i, n, s in zip(index, self.shape, self.strides):
            if not 0 <= i < n:
                raise TensorError(f"index {index} out of shape {self.shape}")
            a += s * i
        return a

    def __getitem__(self, index) -> float:
        if isinstance(index, int):
            index = (index,)
        return self.buffer.get(self.address(index))

    def __setitem__(self, index, value: float) -> None:
        if isinstance(index, int):
            index = (index,)
        self.buffer.set(self.address(index), float(value))

    def _address_grid(self) -> np.ndarray:
        grid = np.full(self.shape, self.offset, dtype=np.intp)
        for j, (n, s) in enumerate(zip(self.shape, self.strides)):
            steps = (np.arange(n, dtype=np.intp) * s).reshape(
                (1,) * j + (n,) + (1,) * (self.rank - j - 1)
            )
            grid = grid + steps
        return grid

    def to_array(self) -> np.ndarray:
        """Materialize the view into a fresh ndarray (reads go through the buffer)."""
        return self.buffer.data[self._address_grid()]

    def assign(self, values) -> None:
        """Write an array of matching shape through the view into the buffer."""
        arr = np.asarray(values, dtype=np.float64)
        if arr.shape != self.shape:
            raise TensorError(f"assign shape {arr.shape} != view shape {self.shape}")
        self.buffer.data[self._address_grid()] = arr

    # -- derived views (zero copy) ---------------------------------------

    def slice(self, ranges: Sequence[IndexRange]) -> "TensorView":
        """Sub-view given one index range per axis; shares the buffer."""
        if len(ranges) != self.rank:
            raise TensorError("one range per axis required")
        offset = self.offset
        strides = []
        shape = []
        for r, n, s in zip(ranges, self.shape, self.strides):
            for edge in (r.start, r.start + (len(r) - 1) * r.step):
                if not 0 <= edge < n:
                    raise TensorError(
                        f"range {r.start}:{r.bound}:{r.step} escapes axis of size {n}"
                    )
            offset += s * r.start
            strides.append(r.step * s)
            shape.append(len(r))
        return TensorView(self.buffer, offset, strides, shape, self.signature)

    def transpose(self, perm: Sequence[int]) -> "TensorView":
        if sorted(perm) != list(range(self.rank)):
            raise TensorError(f"{tuple(perm)} is not a permutation of {self.rank} axes")
        sig = tuple(self.signature[p] for p in perm) if self.signature else None
        return TensorView(
            self.buffer,
            self.offset,
            [self.strides[p] for p in perm],
            [self.shape[p] for p in perm],
            sig,
        )

    def sliding_window_1d(self, n_w: int, d_x: int) -> "TensorView":
        """Window view of a 1-D signal: shape [n_out, n_w], strides [d_x*s, s]."""
        if self.rank != 1:
            raise TensorError("sliding_window_1d needs a rank-1 view")
        (n,), (s,) = self.shape, self.strides
        if n_w < 1 or d_x < 1:
            raise TensorError("window and step must be >= 1")
        if n_w > n:
            raise TensorError(f"window {n_w} larger than axis {n}")
        n_out = 1 + (n - n_w) // d_x
        return TensorView(self.buffer, self.offset, (d_x * s, s), (n_out, n_w))

    def sliding_window_2d(self, n_h: int, n_w: int, d_y: int, d_x: int,
                          flatten: bool = False) -> "TensorView":
        """Window view of a 2-D signal.

        Unflattened: 4 axes (n_y', n_x', n_h, n_w).  Flattened: 3 axes with the
        window laid out contiguously, which requires the window rows to be
        adjacent in the buffer (inner stride 1, row stride equal to n_w).
        """
        if self.rank != 2:
            raise TensorError("sliding_window_2d needs a rank-2 view")
        (n_y, n_x), (s_y, s_x) = self.shape, self.strides
        if min(n_h, n_w, d_y, d_x) < 1:
            raise TensorError("window and steps must be >= 1")
        if n_h > n_y or n_w > n_x:
            raise TensorError(f"window {(n_h, n_w)} larger than signal {(n_y, n_x)}")
        n_yo = 1 + (n_y - n_h) // d_y
        n_xo = 1 + (n_x - n_w) // d_x
        if not flatten:
            return TensorView(
                self.buffer, self.offset,
                (d_y * s_y, d_x * s_x, s_y, s_x),
                (n_yo, n_xo, n_h, n_w),
            )
        if s_x != 1 or s_y != n_w:
            raise TensorError(
                "flattened window needs a contiguous inner window "
                f"(strides {(s_y, s_x)}, window width {n_w})"
            )
        return TensorView(
            self.buffer, self.offset,
            (d_y * s_y, d_x * s_x, 1),
            (n_yo, n_xo, n_h * n_w),
        )


def lex_view(buffer: Buffer, shape: Sequence[int],
             signature: tuple[str, ...] | None = None, offset: int = 0) -> TensorView:
    """The lexicographic (row-major) view of a buffer."""
    return TensorView(buffer, offset, lex_strides(shape), shape, signature)


def from_array(values, signature: tuple[str, ...] | None = None) -> TensorView:
    """Copy an array into a fresh buffer and return its lexicographic view."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    buf = Buffer(arr.reshape(-1).copy())
    return lex_view(buf, arr.shape, signature)


def compose(a: TensorView, b: TensorView, contracted: int,
            translate: TensorView | None = None) -> TensorView:
    """Tensor multiplication C[p, r] = sum_q A[p, q] B[q, r] (+ T[p, r]).

    ``contracted`` names the split point: the number of trailing axes of A
    that must equal the leading axes of B.  Materializes a fresh buffer.
    """
    if contracted < 0 or contracted > a.rank or contracted > b.rank:
        raise TensorError(f"cannot contract {contracted} axes of ranks {a.rank}, {b.rank}")
    q_a = a.shape[a.rank - contracted:]
    q_b = b.shape[:contracted]
    if q_a != q_b:
        raise TensorError(f"contracted axes differ: {q_a} vs {q_b}")
    p_shape = a.shape[: a.rank - contracted]
    r_shape = b.shape[contracted:]
    q = 1
    for n in q_a:
        q *= n
    p = max(1, int(np.prod(p_shape))) if p_shape else 1
    r = max(1, int(np.prod(r_shape))) if r_shape else 1
    mat = a.to_array().reshape(p, q) @ b.to_array().reshape(q, r)
    out_shape = p_shape + r_shape
    if not out_shape:
        out_shape = (1,)
    out = mat.reshape(out_shape)
    if translate is not None:
        t = translate.to_array()
        if t.shape != out.shape:
            raise TensorError(f"translate shape {t.shape} != result shape {out.shape}")
        out = out + t
    return from_array(out)
