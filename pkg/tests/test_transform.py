import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import gather_window
from im2win.tensor import random_tensor
from im2win.transform import (
    ConvParams,
    filter_refold,
    filter_repack_win,
    filter_unfold,
    im2col_size,
    im2col_transform,
    im2win_size,
    im2win_transform,
    output_dims,
    size_delta,
)

TOY = ConvParams(1, 1, 4, 4, 1, 2, 2, 1)


@pytest.mark.parametrize(
    "h_i,h_f,s,h_o",
    [(227, 11, 4, 55), (4, 2, 1, 3), (7, 3, 1, 5), (224, 7, 2, 109)],
)
def test_output_dims(h_i, h_f, s, h_o):
    p = ConvParams(1, 1, h_i, h_i, 1, h_f, h_f, s)
    assert output_dims(p) == (h_o, h_o)


def test_params_validation():
    with pytest.raises(ValueError):
        ConvParams(1, 1, 4, 4, 1, 5, 2, 1)
    with pytest.raises(ValueError):
        ConvParams(1, 1, 4, 4, 1, 2, 2, 0)
    with pytest.raises(ValueError):
        ConvParams(1, 0, 4, 4, 1, 2, 2, 1)


def test_toy_sizes():
    assert im2win_size(TOY) == 24
    assert im2col_size(TOY) == 36
    assert size_delta(TOY) == 12


def test_conv1_sizes_by_hand():
    p = ConvParams(1, 3, 227, 227, 96, 11, 11, 4)
    assert im2win_size(p) == 55 * 3 * 11 * 227 == 412_005
    assert im2col_size(p) == 3 * 11 * 11 * 55 * 55 == 1_098_075


def test_conv7_delta_by_hand():
    p = ConvParams(1, 3, 224, 224, 64, 3, 3, 1)
    assert size_delta(p) == 3 * 3 * (224 - 3) * 222 * (3 - 1) == 883_116
    assert size_delta(p) == im2col_size(p) - im2win_size(p)


@given(c=st.integers(1, 8), h_o=st.integers(1, 20), w_o=st.integers(1, 20), s=st.integers(1, 5))
def test_filter_equal_stride_sizes_match_input(c, h_o, w_o, s):
    p = ConvParams(2, c, h_o * s, w_o * s, 3, s, s, s)
    n_in = 2 * c * h_o * s * w_o * s
    assert im2win_size(p) == n_in
    assert im2col_size(p) == n_in
    assert size_delta(p) == 0


@st.composite
def exact_square(draw):
    s = draw(st.integers(1, 4))
    f = draw(st.integers(s, 12))
    h_o = draw(st.integers(1, 30))
    w_o = draw(st.integers(1, 30))
    c = draw(st.integers(1, 16))
    return ConvParams(1, c, (h_o - 1) * s + f, (w_o - 1) * s + f, 1, f, f, s)


@given(exact_square())
def test_delta_closed_form_matches_difference(p):
    assert size_delta(p) == im2col_size(p) - im2win_size(p)
    assert im2col_size(p) >= im2win_size(p)
    # a single window column (w_o = 1) also removes all horizontal overlap
    assert (im2col_size(p) == im2win_size(p)) == (p.h_f == p.s or p.w_o == 1)


@given(
    c=st.integers(1, 4), h_i=st.integers(1, 40), w_i=st.integers(1, 40),
    f=st.integers(1, 12), s=st.integers(1, 5),
)
def test_delta_falls_back_to_difference(c, h_i, w_i, f, s):
    if f > min(h_i, w_i):
        return
    p = ConvParams(1, c, h_i, w_i, 1, f, f, s)
    if f >= s:
        assert size_delta(p) == im2col_size(p) - im2win_size(p)
    rect = ConvParams(1, c, h_i, w_i, 1, f, 1, s)
    assert size_delta(rect) == im2col_size(rect) - im2win_size(rect)


def test_im2win_toy_first_row(toy_input):
    win = im2win_transform(toy_input, TOY)
    assert win.shape == (1, 1, 3, 8)
    assert win[0, 0, 0].tolist() == [1, 5, 2, 6, 3, 7, 4, 8]
    assert win[0, 0, 2].tolist() == [9, 13, 10, 14, 11, 15, 12, 16]


def test_im2win_allocation_regimes():
    overlap = ConvParams(1, 2, 9, 9, 1, 3, 3, 2)
    win = im2win_transform(random_tensor(overlap.input_shape, 0), overlap)
    assert win.base.size == im2win_size(overlap) == win.size

    disjoint = ConvParams(1, 2, 9, 9, 1, 2, 2, 3)
    win = im2win_transform(random_tensor(disjoint.input_shape, 0), disjoint)
    assert win.base.size == im2win_size(disjoint) == 2 * 9 * 9
    assert win.size <= win.base.size


def test_im2win_identity_case():
    p = ConvParams(1, 1, 3, 5, 1, 3, 2, 3)
    x = random_tensor(p.input_shape, 1)
    win = im2win_transform(x, p)
    assert win.shape == (1, 1, 1, 15)
    assert np.array_equal(win[0, 0, 0], x[0, 0].T.reshape(-1))
    assert im2win_size(p) == x.size


@pytest.mark.parametrize("params", [
    (2, 3, 9, 11, 1, 3, 2, 1),
    (1, 2, 13, 8, 1, 5, 3, 2),
    (1, 1, 10, 10, 1, 2, 4, 3),
])
def test_im2win_index_map_and_write_count(params):
    p = ConvParams(*params)
    x = random_tensor(p.input_shape, 3)
    win = im2win_transform(x, p)

    shadow = np.zeros(win.shape, dtype=int)
    for i in range(p.n_i):
        for r in range(p.c_i):
            for m in range(p.h_o):
                for k in range(p.w_i):
                    for u in range(p.h_f):
                        assert win[i, r, m, k * p.h_f + u] == x[i, r, m * p.s + u, k]
                        shadow[i, r, m, k * p.h_f + u] += 1
    assert (shadow == 1).all()


@pytest.mark.parametrize("params", [
    (1, 2, 9, 11, 1, 3, 2, 1),
    (1, 1, 13, 8, 1, 5, 3, 2),
])
def test_im2win_window_spans_hold_window_elements(params):
    p = ConvParams(*params)
    x = random_tensor(p.input_shape, 4)
    win = im2win_transform(x, p)
    span = p.h_f * p.w_f
    for r in range(p.c_i):
        for m in range(p.h_o):
            for n in range(p.w_o):
                start = n * p.s * p.h_f
                got = win[0, r, m, start : start + span]
                window = gather_window(x, 0, r, m, n, p.h_f, p.w_f, p.s)
                assert np.array_equal(np.sort(got), np.sort(window.reshape(-1)))
                assert np.array_equal(got, window.T.reshape(-1))


def test_im2win_rejects_wrong_shape():
    with pytest.raises(ValueError):
        im2win_transform(random_tensor((1, 1, 5, 5), 0), TOY)


def test_im2col_toy(toy_input):
    m = im2col_transform(toy_input, TOY)
    assert m.shape == (9, 4)
    assert m[0].tolist() == [1, 2, 5, 6]
    assert m[1].tolist() == [2, 3, 6, 7]
    assert m.size == im2col_size(TOY)


def test_im2col_full_window_is_flat_image():
    p = ConvParams(1, 3, 4, 4, 1, 4, 4, 1)
    x = random_tensor(p.input_shape, 5)
    m = im2col_transform(x, p)
    assert m.shape == (1, 48)
    assert np.array_equal(m[0], x.reshape(-1))


def test_im2col_rows_are_gathered_windows():
    p = ConvParams(1, 2, 11, 9, 1, 3, 2, 2)
    x = random_tensor(p.input_shape, 6)
    m = im2col_transform(x, p)
    assert m.size == im2col_size(p)
    for mm in range(p.h_o):
        for n in range(p.w_o):
            expected = np.concatenate([
                gather_window(x, 0, r, mm, n, p.h_f, p.w_f, p.s).reshape(-1) for r in range(p.c_i)
            ])
            assert np.array_equal(m[mm * p.w_o + n], expected)


def test_im2col_rejects_batch():
    p = ConvParams(2, 1, 4, 4, 1, 2, 2, 1)
    with pytest.raises(ValueError):
        im2col_transform(random_tensor(p.input_shape, 0), p)


def test_filter_unfold():
    f = random_tensor((1, 2, 3, 3), 0)
    n = filter_unfold(f)
    assert n.shape == (18, 1)
    assert np.array_equal(n[:, 0], f.reshape(-1))

    f2 = random_tensor((2, 1, 2, 2), 1)
    n2 = filter_unfold(f2)
    assert n2.shape == (4, 2)
    for j in range(2):
        for r in range(1):
            for u in range(2):
                for v in range(2):
                    assert n2[(r * 2 + u) * 2 + v, j] == f2[j, r, u, v]
    assert np.array_equal(filter_refold(n2, f2.shape), f2)


def test_filter_repack():
    f = np.array([[[[1, 2], [3, 4]]]], dtype=np.float32)
    assert filter_repack_win(f).reshape(-1).tolist() == [1, 3, 2, 4]
    g = random_tensor((3, 2, 3, 3), 2)
    assert np.array_equal(filter_repack_win(filter_repack_win(g)), g)
    rect = random_tensor((2, 2, 3, 5), 3)
    assert filter_repack_win(rect).size == rect.size


@settings(max_examples=30, deadline=None)
@given(
    h_f=st.integers(1, 5), w_f=st.integers(1, 5), s=st.integers(1, 3),
    extra_h=st.integers(0, 6), extra_w=st.integers(0, 6), seed=st.integers(0, 2**32),
)
def test_repacked_filter_dot_matches_window_dot(h_f, w_f, s, extra_h, extra_w, seed):
    p = ConvParams(1, 1, h_f + extra_h, w_f + extra_w, 1, h_f, w_f, s)
    x = random_tensor(p.input_shape, seed)
    f = random_tensor(p.filter_shape, seed + 1)
    win = im2win_transform(x, p)
    rep = filter_repack_win(f)[0, 0].reshape(-1).astype(np.float64)
    for m in range(p.h_o):
        for n in range(p.w_o):
            start = n * s * h_f
            span = win[0, 0, m, start : start + h_f * w_f].astype(np.float64)
            window = gather_window(x, 0, 0, m, n, h_f, w_f, s).astype(np.float64)
            assert np.isclose(span @ rep, np.sum(window * f[0, 0]), rtol=0, atol=1e-12)
