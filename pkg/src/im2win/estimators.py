"""scikit-learn style wrappers so convolutions compose with pipelines.

Inputs are NCHW image batches; ``fit`` only validates and caches
input-independent state (validated filters, blocking), ``transform`` runs the
convolution or layout change.
"""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils import check_array
from sklearn.utils.validation import check_is_fitted

from .conv import ConvBackend, choose_blocking, convolve
from .tensor import DTYPE
from .transform import ConvParams, im2win_transform


def check_nchw(X, name="X"):
    """Validate a finite rank-4 float array and return it as C-contiguous float32."""
    X = check_array(X, allow_nd=True, dtype=DTYPE, order="C", ensure_min_samples=1,
                    input_name=name)
    if X.ndim != 4:
        raise ValueError(f"{name} must be rank-4 NCHW, got shape {X.shape}")
    return X


def check_filters(filters):
    if filters is None:
        raise ValueError("filters must be provided")
    return check_nchw(filters, name="filters")


def check_stride(stride):
    if isinstance(stride, (bool, np.bool_)) or int(stride) != stride or stride < 1:
        raise ValueError(f"stride must be a positive integer, got {stride!r}")
    return int(stride)


class Im2winTransformer(TransformerMixin, BaseEstimator):
    """Rewrite NCHW images as window tensors for a ``(h_f, w_f)`` filter."""

    def __init__(self, filter_size=(3, 3), stride=1):
        self.filter_size = filter_size
        self.stride = stride

    def fit(self, X, y=None):
        X = check_nchw(X)
        h_f, w_f = self.filter_size
        self.params_ = ConvParams(X.shape[0], X.shape[1], X.shape[2], X.shape[3],
                                  1, h_f, w_f, check_stride(self.stride))
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = check_nchw(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} channels, fitted with {self.n_features_in_}")
        p = self.params_
        p = ConvParams(X.shape[0], X.shape[1], X.shape[2], X.shape[3], 1, p.h_f, p.w_f, p.s)
        return im2win_transform(X, p)


class Conv2d(TransformerMixin, BaseEstimator):
    """Valid 2-D convolution with a fixed filter bank.

    Parameters
    ----------
    filters : array of shape (c_o, c_i, h_f, w_f)
    stride : int
    backend : {"direct", "im2col", "im2win_basic", "im2win_opt"}
    threads : int
    n_vec, n_reg : int
        Vector width and register count used to block ``im2win_opt``.
    """

    def __init__(self, filters=None, stride=1, backend="im2win_opt", threads=1, n_vec=8, n_reg=16):
        self.filters = filters
        self.stride = stride
        self.backend = backend
        self.threads = threads
        self.n_vec = n_vec
        self.n_reg = n_reg

    def fit(self, X, y=None):
        X = check_nchw(X)
        f = check_filters(self.filters)
        s = check_stride(self.stride)
        self.backend_ = ConvBackend.parse(self.backend)
        self.params_ = ConvParams.from_tensors(X, f, s)
        self.filters_ = f
        self.n_features_in_ = X.shape[1]
        self.blocking_ = choose_blocking(self.params_, self.n_vec, self.n_reg, self.threads)
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = check_nchw(X)
        p = ConvParams.from_tensors(X, self.filters_, self.params_.s)
        blocking = self.blocking_
        if (p.h_i, p.w_i) != (self.params_.h_i, self.params_.w_i):
            blocking = choose_blocking(p, self.n_vec, self.n_reg, self.threads)
        return convolve(X, self.filters_, p.s, backend=self.backend_,
                        threads=self.threads, blocking=blocking)

    def output_shape(self, X_shape):
        check_is_fitted(self, "params_")
        n, c, h, w = X_shape
        f = self.filters_
        return ConvParams(n, c, h, w, *f.shape[:1], *f.shape[2:], self.params_.s).output_shape
