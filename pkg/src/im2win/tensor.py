"""Dense NCHW float32 tensors.

Tensors are plain C-contiguous :class:`numpy.ndarray` objects of dtype
float32 and rank 4. The helpers here create, fill, compare and dump them.

Random fill uses SplitMix64 in counter mode: element ``k`` of a tensor
filled with ``seed`` is ``mix(seed + (k + 1) * 0x9E3779B97F4A7C15)``. The
top 24 bits of the mixed word give ``u`` in ``[0, 1)`` exactly representable
in float32, and the stored value is ``2 * u - 1``. The stream depends only on
``(seed, k)`` so results are identical on every platform, numpy version and
thread count.
"""
import struct

import numpy as np

DTYPE = np.float32
BYTES = np.dtype(DTYPE).itemsize

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _check_dims(dims):
    dims = tuple(int(d) for d in dims)
    if len(dims) != 4:
        raise ValueError(f"expected 4 extents (n, c, h, w), got {dims}")
    if any(d < 1 for d in dims):
        raise ValueError(f"all extents must be >= 1, got {dims}")
    return dims


def new_tensor(dims):
    """Return a zero-filled float32 tensor with shape ``dims``."""
    dims = _check_dims(dims)
    size = 1
    for d in dims:
        size *= d
    if size * np.dtype(DTYPE).itemsize > np.iinfo(np.intp).max:
        raise ValueError(f"tensor of dims {dims} is not addressable")
    return np.zeros(dims, dtype=DTYPE)


def offset(dims, i, j, y, x):
    """Linear offset of element ``(i, j, y, x)`` in a tensor of ``dims``."""
    _, c, h, w = dims
    return ((i * c + j) * h + y) * w + x


def splitmix64(seed, count):
    """First ``count`` outputs of the SplitMix64 counter stream for ``seed``."""
    k = np.arange(1, count + 1, dtype=np.uint64)
    z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + k * _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def uniform(count, seed):
    """``count`` float32 values in ``[-1, 1)`` from the seeded stream."""
    bits = splitmix64(seed, count) >> np.uint64(40)
    u = bits.astype(np.float64) * (1.0 / (1 << 24))
    return (2.0 * u - 1.0).astype(DTYPE)


def fill_random(t, seed):
    """Fill ``t`` in place with uniform values in ``[-1, 1]`` and return it."""
    t.reshape(-1)[:] = uniform(t.size, seed)
    return t


def random_tensor(dims, seed):
    return fill_random(new_tensor(dims), seed)


def allclose(a, b, rtol=1e-4, atol=1e-5):
    """True iff ``|a - b| <= atol + rtol * |b|`` element-wise."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    return bool(np.all(np.abs(a64 - b64) <= atol + rtol * np.abs(b64)))


def max_abs_diff(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a.astype(np.float64) - b.astype(np.float64))))


def dump(t, path):
    """Write ``t`` as a 16-byte header of four LE uint32 dims then LE float32 data."""
    if t.ndim != 4:
        raise ValueError("only rank-4 tensors can be dumped")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4I", *t.shape))
        fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def load(path):
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16:
            raise ValueError(f"{path}: truncated header")
        dims = struct.unpack("<4I", header)
        data = np.frombuffer(fh.read(), dtype="<f4")
    expected = dims[0] * dims[1] * dims[2] * dims[3]
    if data.size != expected:
        raise ValueError(f"{path}: expected {expected} values, found {data.size}")
    return data.astype(DTYPE).reshape(dims)
