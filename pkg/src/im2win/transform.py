"""Data-layout transformations and their analytic size predictors.

The window tensor produced by :func:`im2win_transform` has shape
``(n_i, c_i, h_o, w_i * h_f)``. Row ``m`` of a channel stores input rows
``m*s .. m*s + h_f - 1`` column by column, so that slot ``k*h_f + u`` holds
``I[m*s + u, k]``. The ``h_f x w_f`` window feeding output column ``n`` is then
the contiguous run starting at ``(n*s) * h_f``, ordered filter-height fastest.
"""
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from numba import njit, prange

from .tensor import DTYPE


@dataclass(frozen=True)
class ConvParams:
    n_i: int
    c_i: int
    h_i: int
    w_i: int
    c_o: int
    h_f: int
    w_f: int
    s: int = 1

    def __post_init__(self):
        for name in ("n_i", "c_i", "h_i", "w_i", "c_o", "h_f", "w_f", "s"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.h_f > self.h_i or self.w_f > self.w_i:
            raise ValueError(
                f"filter {self.h_f}x{self.w_f} larger than input {self.h_i}x{self.w_i}"
            )

    @classmethod
    def from_tensors(cls, x, f, s):
        if x.ndim != 4 or f.ndim != 4:
            raise ValueError("input and filter must both be rank-4 NCHW tensors")
        if f.shape[1] != x.shape[1]:
            raise ValueError(
                f"filter has {f.shape[1]} input channels, input has {x.shape[1]}"
            )
        n, c, h, w = x.shape
        return cls(n, c, h, w, f.shape[0], f.shape[2], f.shape[3], s)

    @property
    def h_o(self):
        return (self.h_i - self.h_f) // self.s + 1

    @property
    def w_o(self):
        return (self.w_i - self.w_f) // self.s + 1

    @property
    def input_shape(self):
        return (self.n_i, self.c_i, self.h_i, self.w_i)

    @property
    def filter_shape(self):
        return (self.c_o, self.c_i, self.h_f, self.w_f)

    @property
    def output_shape(self):
        return (self.n_i, self.c_o, self.h_o, self.w_o)

    @property
    def window_shape(self):
        return (self.n_i, self.c_i, self.h_o, self.w_i * self.h_f)

    def with_batch(self, n_i):
        return ConvParams(n_i, self.c_i, self.h_i, self.w_i, self.c_o, self.h_f, self.w_f, self.s)


def output_dims(p):
    return p.h_o, p.w_o


def input_size(p):
    return p.n_i * p.c_i * p.h_i * p.w_i


def im2win_size(p):
    """Elements allocated for the window tensor of the whole batch.

    Overlapping window rows (``h_f > s``) need ``h_o * h_f`` input rows per
    channel; otherwise the tensor never exceeds the input itself.
    """
    if p.h_f > p.s:
        return p.n_i * p.h_o * p.c_i * p.h_f * p.w_i
    return p.n_i * p.c_i * p.h_i * p.w_i


def im2col_size(p):
    return p.n_i * p.c_i * p.h_f * p.w_f * p.h_o * p.w_o


def _divides_exactly(p):
    return (p.h_i - p.h_f) % p.s == 0 and (p.w_i - p.w_f) % p.s == 0


def size_delta(p):
    """Per-image ``im2col_size - im2win_size``.

    For square filters with ``h_f >= s`` whose windows tile the input exactly,
    this is the closed form ``h_f * c_i * (w_i - w_f) * h_o * (w_f/s - 1)``.
    Other shapes fall back to the direct difference.
    """
    if p.h_f == p.w_f and p.h_f >= p.s and _divides_exactly(p):
        d = p.h_f * p.c_i * (p.w_i - p.w_f) * p.h_o * (Fraction(p.w_f, p.s) - 1)
        assert d.denominator == 1
        return int(d)
    one = p.with_batch(1)
    return im2col_size(one) - im2win_size(one)


@njit(parallel=True, cache=True)
def _im2win_kernel(x, s, h_f, h_o, out):
    n, c, _, w = x.shape
    for i in prange(n):
        for r in range(c):
            for m in range(h_o):
                for k in range(w):
                    for u in range(h_f):
                        out[i, r, m, k * h_f + u] = x[i, r, m * s + u, k]


def im2win_transform(x, p):
    """Build the window tensor of ``x`` (see module docstring for the layout).

    The backing buffer holds exactly :func:`im2win_size` elements; the returned
    array is a ``(n_i, c_i, h_o, w_i*h_f)`` view of its leading part.
    """
    if tuple(x.shape) != p.input_shape:
        raise ValueError(f"input shape {x.shape} does not match {p.input_shape}")
    buf = np.empty(im2win_size(p), dtype=DTYPE)
    n, c, h_o, row = p.window_shape
    out = buf[: n * c * h_o * row].reshape(n, c, h_o, row)
    _im2win_kernel(np.ascontiguousarray(x, dtype=DTYPE), p.s, p.h_f, h_o, out)
    return out


@njit(cache=True)
def _im2col_kernel(x, s, h_f, w_f, h_o, w_o, out):
    c = x.shape[0]
    for m in range(h_o):
        for n in range(w_o):
            row = m * w_o + n
            for r in range(c):
                for u in range(h_f):
                    for v in range(w_f):
                        out[row, (r * h_f + u) * w_f + v] = x[r, m * s + u, n * s + v]


def im2col_transform(x_img, p):
    """Lower one image ``(1, c_i, h_i, w_i)`` to its ``(h_o*w_o, c_i*h_f*w_f)`` matrix."""
    expected = (1, p.c_i, p.h_i, p.w_i)
    if tuple(x_img.shape) != expected:
        raise ValueError(f"image shape {x_img.shape} does not match {expected}")
    out = np.empty((p.h_o * p.w_o, p.c_i * p.h_f * p.w_f), dtype=DTYPE)
    img = np.ascontiguousarray(x_img[0], dtype=DTYPE)
    _im2col_kernel(img, p.s, p.h_f, p.w_f, p.h_o, p.w_o, out)
    return out


def _check_filter(f):
    if f.ndim != 4:
        raise ValueError(f"filter must be rank-4 (c_o, c_i, h_f, w_f), got shape {f.shape}")


def filter_unfold(f):
    """``N[(r*h_f + u)*w_f + v, j] = F[j, r, u, v]``."""
    _check_filter(f)
    c_o = f.shape[0]
    return np.ascontiguousarray(f.reshape(c_o, -1).T, dtype=DTYPE)


def filter_refold(mat, filter_shape):
    c_o, c_i, h_f, w_f = filter_shape
    if mat.shape != (c_i * h_f * w_f, c_o):
        raise ValueError(f"matrix shape {mat.shape} does not fit filter {filter_shape}")
    return np.ascontiguousarray(mat.T.reshape(filter_shape), dtype=DTYPE)


def filter_repack_win(f):
    """Reorder each ``(j, r)`` filter slice so ``(u, v)`` lives at ``v*h_f + u``.

    The result keeps the rank-4 shape but with the last two axes swapped to
    ``(w_f, h_f)``, matching the column-major window spans of the window tensor.
    """
    _check_filter(f)
    return np.ascontiguousarray(f.transpose(0, 1, 3, 2), dtype=DTYPE)
