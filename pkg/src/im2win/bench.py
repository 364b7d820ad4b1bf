"""Benchmark harness for the twelve-layer convolution suite."""
import time
from dataclasses import dataclass, field

from .conv import ConvBackend, convolve
from .tensor import BYTES, allclose, random_tensor
from .transform import ConvParams, im2col_size, im2win_size

DEFAULT_BATCH = 128
DEFAULT_REPS = 5


class ConsistencyError(RuntimeError):
    """A backend produced output of the wrong shape or value."""


@dataclass(frozen=True)
class LayerConfig:
    name: str
    params: ConvParams  # n_i is a placeholder; batch is chosen per run
    expected_output: tuple

    def __post_init__(self):
        got = (self.params.c_o, self.params.h_o, self.params.w_o)
        if got != tuple(self.expected_output):
            raise ValueError(f"{self.name}: computed output {got} != expected {self.expected_output}")

    @classmethod
    def custom(cls, params, name=None):
        if name is None:
            p = params
            name = f"custom_{p.c_i}x{p.h_i}x{p.w_i}_{p.c_o}x{p.h_f}x{p.w_f}_s{p.s}"
        return cls(name, params, (params.c_o, params.h_o, params.w_o))


@dataclass(frozen=True)
class BenchResult:
    layer: str
    backend: ConvBackend
    batch: int
    best_seconds: float
    reps: int
    gflops: float
    extra_bytes: int
    threads: int
    timings: tuple = field(default=(), repr=False)


# (name, c_i, h_i, w_i, c_o, h_f, w_f, s, (c_o, h_o, w_o))
_LAYERS = [
    ("Conv1", 3, 227, 227, 96, 11, 11, 4, (96, 55, 55)),
    ("Conv2", 3, 231, 231, 96, 11, 11, 4, (96, 56, 56)),
    ("Conv3", 3, 227, 227, 64, 7, 7, 2, (64, 111, 111)),
    ("Conv4", 64, 224, 224, 64, 7, 7, 2, (64, 109, 109)),
    ("Conv5", 96, 24, 24, 256, 5, 5, 1, (256, 20, 20)),
    ("Conv6", 256, 12, 12, 512, 3, 3, 1, (512, 10, 10)),
    ("Conv7", 3, 224, 224, 64, 3, 3, 1, (64, 222, 222)),
    ("Conv8", 64, 112, 112, 128, 3, 3, 1, (128, 110, 110)),
    ("Conv9", 64, 56, 56, 64, 3, 3, 1, (64, 54, 54)),
    ("Conv10", 128, 28, 28, 128, 3, 3, 1, (128, 26, 26)),
    ("Conv11", 256, 14, 14, 256, 3, 3, 1, (256, 12, 12)),
    ("Conv12", 512, 7, 7, 512, 3, 3, 1, (512, 5, 5)),
]


def layer_suite():
    return [
        LayerConfig(name, ConvParams(1, c, h, w, co, hf, wf, s), out)
        for name, c, h, w, co, hf, wf, s, out in _LAYERS
    ]


def layer_by_name(name):
    for cfg in layer_suite():
        if cfg.name.lower() == name.lower():
            return cfg
    raise KeyError(f"unknown layer {name!r}")


def flops(p, batch):
    """Multiply-adds counted as two operations."""
    return 2 * batch * p.c_o * p.h_o * p.w_o * p.c_i * p.h_f * p.w_f


def memory_report(p, batch):
    """Bytes of intermediates each backend allocates beyond input, filter and output.

    im2col lowers one image at a time, so its matrix and GEMM result are per
    image; the window tensor covers the whole batch. Per-thread accumulator
    tiles are not counted.
    """
    p = p.with_batch(batch)
    one = p.with_batch(1)
    filt = p.c_o * p.c_i * p.h_f * p.w_f
    window = im2win_size(p) * BYTES
    return {
        ConvBackend.DIRECT: 0,
        ConvBackend.IM2COL_GEMM: (im2col_size(one) + filt + p.h_o * p.w_o * p.c_o) * BYTES,
        ConvBackend.IM2WIN_BASIC: window,
        ConvBackend.IM2WIN_OPT: window + filt * BYTES,
    }


def make_inputs(params, batch, seed):
    p = params.with_batch(batch)
    x = random_tensor(p.input_shape, seed)
    f = random_tensor(p.filter_shape, seed + 1)
    return x, f


def benchmark_layer(cfg, backend, batch=DEFAULT_BATCH, reps=DEFAULT_REPS, threads=1,
                    seed=0, reference=None, clock=time.perf_counter):
    """Time ``backend`` on ``cfg``: one untimed warm-up, then the best of ``reps`` runs.

    Input generation is outside the timed region; data transformation is
    inside it. If ``reference`` is given the output must be allclose to it.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    backend = ConvBackend.parse(backend)
    p = cfg.params.with_batch(batch)
    x, f = make_inputs(cfg.params, batch, seed)

    out = convolve(x, f, p.s, backend=backend, threads=threads)
    expected = (batch, *cfg.expected_output)
    if out.shape != expected:
        raise ConsistencyError(f"{cfg.name}/{backend.value}: output {out.shape}, expected {expected}")
    if reference is not None and not allclose(out, reference):
        raise ConsistencyError(f"{cfg.name}/{backend.value}: output differs from reference")
    del out

    timings = []
    for _ in range(reps):
        t0 = clock()
        convolve(x, f, p.s, backend=backend, threads=threads)
        timings.append(clock() - t0)
    best = min(timings)
    if best <= 0:
        raise ConsistencyError(f"{cfg.name}/{backend.value}: non-positive timing {best}")
    return BenchResult(
        layer=cfg.name,
        backend=backend,
        batch=batch,
        best_seconds=best,
        reps=reps,
        gflops=flops(p, batch) / best / 1e9,
        extra_bytes=memory_report(p, batch)[backend],
        threads=threads,
        timings=tuple(timings),
    )
