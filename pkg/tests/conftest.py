import numpy as np
import pytest
from numpy.lib.stride_tricks import sliding_window_view


def conv_oracle(x, f, s):
    """Float64 convolution via sliding windows; shares no code with the package."""
    h_f, w_f = f.shape[2:]
    win = sliding_window_view(x.astype(np.float64), (h_f, w_f), axis=(2, 3))[:, :, ::s, ::s]
    return np.einsum("ncmpuv,jcuv->njmp", win, f.astype(np.float64))


def gather_window(x, i, r, m, n, h_f, w_f, s):
    return x[i, r, m * s : m * s + h_f, n * s : n * s + w_f]


def random_params(rng, max_extent=32, strides=(1, 2, 3)):
    """ConvParams fields with extents <= max_extent and h_f >= s."""
    s = int(rng.choice(strides))
    h_f = int(rng.integers(s, min(max_extent, 11) + 1))
    w_f = int(rng.integers(1, min(max_extent, 11) + 1))
    h_i = int(rng.integers(h_f, max_extent + 1))
    w_i = int(rng.integers(w_f, max_extent + 1))
    n_i = int(rng.integers(1, 3))
    c_i = int(rng.integers(1, 9))
    c_o = int(rng.integers(1, 17))
    return n_i, c_i, h_i, w_i, c_o, h_f, w_f, s


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_input():
    """The 1x1x4x4 input holding 1..16 row-major."""
    return np.arange(1, 17, dtype=np.float32).reshape(1, 1, 4, 4)
