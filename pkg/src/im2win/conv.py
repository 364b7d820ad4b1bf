"""Convolution backends.

Four backends compute the same valid (unpadded) NCHW convolution:

* ``direct``: seven nested loops over the raw input, used as the oracle.
* ``im2col``: per-image im2col lowering, filter unfold, GEMM, transpose.
* ``im2win_basic``: window transform followed by the plain seven-loop nest.
* ``im2win_opt``: window transform with a blocked, hoisted loop nest whose
  inner dot products run through :func:`microkernel_fma`.

Tensors are float32; every backend accumulates in float64 and rounds once
on store. Backends that take ``threads`` split work by output channel (GEMM
by row block), so each output element is owned by exactly one worker and
accumulated in a fixed order. Results are bit-identical for any thread
count.
"""
import enum
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from . import _threads
from .tensor import DTYPE
from .transform import (
    ConvParams,
    filter_repack_win,
    filter_unfold,
    im2col_transform,
    im2win_transform,
)


class ConvBackend(enum.Enum):
    DIRECT = "direct"
    IM2COL_GEMM = "im2col"
    IM2WIN_BASIC = "im2win_basic"
    IM2WIN_OPT = "im2win_opt"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        try:
            return cls(name)
        except ValueError:
            choices = ", ".join(b.value for b in cls)
            raise ValueError(f"unknown backend {name!r}; choose from {choices}") from None


@dataclass(frozen=True)
class BlockingParams:
    """Blocking for :func:`conv_im2win_opt`.

    ``w_o_b`` is the output-width strip swept by one vector FMA pass,
    ``w_f_b`` the number of filter columns per window span and ``c_o_b`` the
    output-channel cache block that reuses each hoisted window strip.
    """

    n_vec: int = 8
    n_reg: int = 16
    w_o_b: int = 1
    w_f_b: int = 1
    c_o_b: int = 1

    def __post_init__(self):
        for name in ("n_vec", "n_reg", "w_o_b", "w_f_b", "c_o_b"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def budget(self):
        """Elements the vector register file can hold."""
        return self.n_reg * self.n_vec

    def live_elements(self, h_f):
        """Register tile: one strip of output accumulators plus one filter span."""
        return self.w_o_b + h_f * self.w_f_b

    def check(self, p):
        if self.w_o_b > p.w_o or self.w_f_b > p.w_f or self.c_o_b > p.c_o:
            raise ValueError(f"{self} exceeds problem extents of {p}")


def _clamp(v, lo, hi):
    return max(lo, min(v, hi))


def choose_blocking(p, n_vec=8, n_reg=16, threads=1, cache_bytes=256 * 1024):
    """Pick register and cache blocks for :func:`conv_im2win_opt`.

    A filter span of ``h_f * w_f_b`` values takes at most a quarter of the
    register budget; the rest holds a whole number of output vectors. The
    channel block is sized so its lane accumulators fit ``cache_bytes`` and
    every worker gets at least one block. If not even one full output vector
    fits, all blocks collapse to 1.
    """
    if n_vec < 1 or n_reg < 1:
        raise ValueError("n_vec and n_reg must be >= 1")
    budget = n_vec * n_reg
    quarter = budget // 4
    if p.h_f * p.w_f <= quarter:
        w_f_b = p.w_f
    else:
        w_f_b = _clamp(quarter // p.h_f, 1, p.w_f)
    vectors = (budget - p.h_f * w_f_b) // n_vec
    if vectors < 1:
        return BlockingParams(n_vec, n_reg, 1, 1, 1)
    w_o_b = min(vectors * n_vec, p.w_o)
    per_channel = n_vec * p.w_o * 8 + p.c_i * p.h_f * p.w_f * 4
    c_o_b = _clamp(cache_bytes // per_channel, 1, p.c_o)
    c_o_b = min(c_o_b, -(-p.c_o // max(1, threads)))
    return BlockingParams(n_vec, n_reg, w_o_b, w_f_b, c_o_b)


def _prepare(x, f, s):
    x = np.asarray(x)
    f = np.asarray(f)
    p = ConvParams.from_tensors(x, f, int(s))
    x = np.ascontiguousarray(x, dtype=DTYPE)
    f = np.ascontiguousarray(f, dtype=DTYPE)
    return x, f, p


# -- direct ----------------------------------------------------------------

@njit(parallel=True, cache=True)
def _direct_kernel(x, f, s, out):
    n, c, _, _ = x.shape
    c_o, _, h_f, w_f = f.shape
    _, _, h_o, w_o = out.shape
    for j in prange(c_o):
        for i in range(n):
            for m in range(h_o):
                for q in range(w_o):
                    acc = 0.0
                    for r in range(c):
                        for u in range(h_f):
                            for v in range(w_f):
                                acc += np.float64(x[i, r, m * s + u, q * s + v]) * f[j, r, u, v]
                    out[i, j, m, q] = acc


def conv_direct(x, f, s=1, threads=1):
    """Reference convolution, ``O[i,j,m,n] = sum_{r,u,v} I[i,r,m*s+u,n*s+v] * F[j,r,u,v]``."""
    x, f, p = _prepare(x, f, s)
    out = np.empty(p.output_shape, dtype=DTYPE)
    with _threads.num_threads(threads):
        _direct_kernel(x, f, p.s, out)
    return out


# -- im2col + GEMM ---------------------------------------------------------

@njit(parallel=True, cache=True)
def _gemm_kernel(a, b, c, bm, bk):
    m, k = a.shape
    n = b.shape[1]
    nblk = (m + bm - 1) // bm
    for ib in prange(nblk):
        i0 = ib * bm
        i1 = min(i0 + bm, m)
        acc = np.zeros((i1 - i0, n), dtype=np.float64)
        for k0 in range(0, k, bk):
            k1 = min(k0 + bk, k)
            for i in range(i1 - i0):
                crow = acc[i]
                for kk in range(k0, k1):
                    aik = np.float64(a[i0 + i, kk])
                    brow = b[kk]
                    for jn in range(n):
                        crow[jn] += aik * brow[jn]
        for i in range(i1 - i0):
            for jn in range(n):
                c[i0 + i, jn] = acc[i, jn]


def gemm(a, b, threads=1, block_m=64, block_k=256):
    """Cache-blocked ``a @ b``; each output accumulates over k in ascending order."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"cannot multiply {a.shape} by {b.shape}")
    a = np.ascontiguousarray(a, dtype=DTYPE)
    b = np.ascontiguousarray(b, dtype=DTYPE)
    c = np.empty((a.shape[0], b.shape[1]), dtype=DTYPE)
    with _threads.num_threads(threads):
        _gemm_kernel(a, b, c, block_m, block_k)
    return c


def conv_im2col(x, f, s=1, threads=1):
    x, f, p = _prepare(x, f, s)
    out = np.empty(p.output_shape, dtype=DTYPE)
    filt = filter_unfold(f)
    one = p.with_batch(1)
    for i in range(p.n_i):
        lowered = im2col_transform(x[i : i + 1], one)
        r = gemm(lowered, filt, threads=threads)
        out[i] = r.T.reshape(p.c_o, p.h_o, p.w_o)
    return out


# -- im2win ----------------------------------------------------------------

@njit(parallel=True, cache=True)
def _im2win_basic_kernel(win, f, s, out):
    n, c, _, _ = win.shape
    c_o, _, h_f, w_f = f.shape
    _, _, h_o, w_o = out.shape
    for j in prange(c_o):
        for i in range(n):
            for m in range(h_o):
                for q in range(w_o):
                    acc = 0.0
                    for r in range(c):
                        for u in range(h_f):
                            for v in range(w_f):
                                acc += np.float64(win[i, r, m, (q * s + v) * h_f + u]) * f[j, r, u, v]
                    out[i, j, m, q] = acc


def conv_im2win_basic(x, f, s=1, threads=1):
    x, f, p = _prepare(x, f, s)
    win = im2win_transform(x, p)
    out = np.empty(p.output_shape, dtype=DTYPE)
    with _threads.num_threads(threads):
        _im2win_basic_kernel(win, f, p.s, out)
    return out


@njit(cache=True)
def _fma_span(a, b, acc, n_vec):
    length = a.shape[0]
    k = 0
    while k + n_vec <= length:
        for lane in range(n_vec):
            acc[lane] += np.float64(a[k + lane]) * np.float64(b[k + lane])
        k += n_vec
    # partial vector over the leading lanes
    for lane in range(length - k):
        acc[lane] += np.float64(a[k + lane]) * np.float64(b[k + lane])


def microkernel_fma(win_span, filt_span, acc):
    """Accumulate ``win_span * filt_span`` into the lanes of ``acc`` in place.

    The lane count is ``len(acc)``. Spans are float32; lanes are float64, which
    holds every float32 product exactly. Element ``k`` is added to lane
    ``k % len(acc)`` in ascending ``k``; a final short chunk updates only the
    leading lanes. Reducing across lanes is left to the caller.
    """
    win_span = np.ascontiguousarray(win_span, dtype=DTYPE)
    filt_span = np.ascontiguousarray(filt_span, dtype=DTYPE)
    if win_span.ndim != 1 or win_span.shape != filt_span.shape:
        raise ValueError("spans must be 1-D with equal length")
    if acc.dtype != np.float64 or acc.ndim != 1 or acc.size < 1:
        raise ValueError("acc must be a non-empty 1-D float64 array")
    _fma_span(win_span, filt_span, acc, acc.size)
    return acc


def reduce_lanes(acc):
    """Sum accumulator lanes in ascending lane order."""
    tot = 0.0
    for v in acc:
        tot += float(v)
    return tot


@njit(parallel=True, cache=True)
def _im2win_opt_kernel(win, frep, s, h_f, w_f, out, w_o_b, w_f_b, c_o_b, n_vec):
    n, c, h_o, _ = win.shape
    c_o = out.shape[1]
    w_o = out.shape[3]
    fslice = h_f * w_f
    nblk = (c_o + c_o_b - 1) // c_o_b
    for jj in prange(nblk):
        j0 = jj * c_o_b
        nj = min(c_o_b, c_o - j0)
        # lane accumulators, row (jq * n_vec + lane), column = output x
        acc = np.empty(c_o_b * n_vec * w_o, dtype=np.float64)
        # hoisted windows, row k = window element, column = output in strip
        hoist = np.empty(w_f_b * h_f * w_o_b, dtype=np.float64)
        for i in range(n):
            for m in range(h_o):
                acc[:] = 0.0
                for r in range(c):
                    row = win[i, r, m]
                    for nn0 in range(0, w_o, w_o_b):
                        nb = min(w_o_b, w_o - nn0)
                        for vv0 in range(0, w_f, w_f_b):
                            span = min(w_f_b, w_f - vv0) * h_f
                            for q in range(nb):
                                src = ((nn0 + q) * s + vv0) * h_f
                                for k in range(span):
                                    hoist[k * w_o_b + q] = row[src + k]
                            for jq in range(nj):
                                f0 = ((j0 + jq) * c + r) * fslice + vv0 * h_f
                                for k in range(span):
                                    fk = np.float64(frep[f0 + k])
                                    a0 = (jq * n_vec + k % n_vec) * w_o + nn0
                                    strip = acc[a0 : a0 + nb]
                                    h = hoist[k * w_o_b : k * w_o_b + nb]
                                    for q in range(nb):
                                        strip[q] += fk * h[q]
                for jq in range(nj):
                    for q in range(w_o):
                        tot = 0.0
                        for lane in range(n_vec):
                            tot += acc[(jq * n_vec + lane) * w_o + q]
                        out[i, j0 + jq, m, q] = tot


def conv_im2win_opt(x, f, s=1, blocking=None, threads=1):
    """Blocked im2win convolution.

    Loop nest: output-channel blocks (parallel), batch, output rows, input
    channels, output-width strips, filter-width blocks. Each window span of a
    strip is hoisted once and reused by every channel of the block. For every
    (window, repacked filter) pair the kernel performs exactly the lane
    updates of :func:`microkernel_fma`, vectorised across the ``w_o_b``
    outputs of the strip; lanes persist across input channels and are
    reduced once per output row.
    """
    x, f, p = _prepare(x, f, s)
    if blocking is None:
        blocking = choose_blocking(p, threads=threads)
    blocking.check(p)
    win = im2win_transform(x, p)
    frep = filter_repack_win(f).reshape(-1)
    out = np.empty(p.output_shape, dtype=DTYPE)
    with _threads.num_threads(threads):
        _im2win_opt_kernel(
            win, frep, p.s, p.h_f, p.w_f, out,
            blocking.w_o_b, blocking.w_f_b, blocking.c_o_b, blocking.n_vec,
        )
    return out


def convolve(x, f, s=1, backend=ConvBackend.IM2WIN_OPT, threads=1, blocking=None):
    backend = ConvBackend.parse(backend)
    if backend is ConvBackend.DIRECT:
        return conv_direct(x, f, s, threads=threads)
    if backend is ConvBackend.IM2COL_GEMM:
        return conv_im2col(x, f, s, threads=threads)
    if backend is ConvBackend.IM2WIN_BASIC:
        return conv_im2win_basic(x, f, s, threads=threads)
    return conv_im2win_opt(x, f, s, blocking=blocking, threads=threads)
