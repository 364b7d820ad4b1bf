"""Command-line front end: ``im2win {verify,bench,sizes}``."""
import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field

import numpy as np

from . import _threads
from .bench import (
    DEFAULT_BATCH,
    DEFAULT_REPS,
    LayerConfig,
    benchmark_layer,
    layer_by_name,
    make_inputs,
    layer_suite,
)
from .conv import ConvBackend, conv_direct, convolve
from .tensor import allclose, max_abs_diff
from .transform import ConvParams, im2col_size, im2win_size, input_size, size_delta

BENCH_FIELDS = ["layer", "backend", "batch", "threads", "reps", "best_seconds", "gflops", "extra_bytes"]
SIZE_FIELDS = [
    "layer", "input", "im2col", "im2win", "delta",
    "im2col_over_input", "im2win_over_input", "im2col_over_im2win",
]


@dataclass
class CliConfig:
    subcommand: str
    layers: list
    backends: list
    batch: int = 1
    reps: int = DEFAULT_REPS
    threads: int = 1
    seed: int = 0
    format: str = "csv"
    output: str = None
    batch_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("at least one layer must be selected")
        if not self.backends:
            raise ValueError("at least one backend must be selected")
        for name in ("batch", "reps", "threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"--{name} must be >= 1")
        if self.format not in ("csv", "json"):
            raise ValueError(f"unknown format {self.format!r}")

    def batch_for(self, layer):
        return self.batch_overrides.get(layer.name, self.batch)


def _num(x):
    """Positional decimal with 9 significant digits."""
    return np.format_float_positional(float(x), precision=9, unique=False, fractional=False, trim="-")


def _emit(rows, fields, fmt, out, extra=None):
    if fmt == "json":
        if extra is None:
            json.dump(rows, out, indent=2)
        else:
            json.dump({"layers": rows, **extra}, out, indent=2)
        out.write("\n")
        return
    writer = csv.DictWriter(out, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _csv_value(row[k]) for k in fields})
    if extra:
        for key, value in extra.items():
            writer.writerow({fields[0]: key, fields[-1]: _csv_value(value)})


def _csv_value(v):
    if isinstance(v, float):
        return _num(v)
    return v


def _json_float(x):
    return float(_num(x))


def _open_output(path):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", newline=""), True


def cmd_verify(cfg, registry=None, stream=None):
    """Compare every selected (layer, backend) against the direct oracle.

    ``registry`` maps backend values to callables ``fn(x, f, s, threads)`` and
    replaces the built-in backends, which lets tests inject faulty doubles.
    """
    stream = stream or sys.stdout
    failures = 0
    stream.write(f"{'layer':<28} {'backend':<14} {'result':<6} max_abs_diff\n")
    for layer in cfg.layers:
        batch = cfg.batch_for(layer)
        x, f = make_inputs(layer.params, batch, cfg.seed)
        ref = conv_direct(x, f, layer.params.s, threads=cfg.threads)
        for backend in cfg.backends:
            if registry is not None:
                out = registry[backend.value](x, f, layer.params.s, cfg.threads)
            else:
                out = convolve(x, f, layer.params.s, backend=backend, threads=cfg.threads)
            if out.shape != ref.shape:
                ok, diff = False, float("inf")
            else:
                ok, diff = allclose(out, ref), max_abs_diff(out, ref)
            failures += not ok
            status = "PASS" if ok else "FAIL"
            stream.write(f"{layer.name:<28} {backend.value:<14} {status:<6} {diff:.3e}\n")
    return 0 if failures == 0 else 1


def bench_rows(results):
    rows = []
    for r in results:
        rows.append({
            "layer": r.layer,
            "backend": r.backend.value,
            "batch": r.batch,
            "threads": r.threads,
            "reps": r.reps,
            "best_seconds": _json_float(r.best_seconds),
            "gflops": _json_float(r.gflops),
            "extra_bytes": r.extra_bytes,
        })
    return rows


def cmd_bench(cfg, stream=None, errors=None):
    stream = stream or sys.stdout
    errors = errors or sys.stderr
    results = []
    status = 0
    for layer in cfg.layers:
        for backend in cfg.backends:
            try:
                results.append(benchmark_layer(
                    layer, backend, batch=cfg.batch_for(layer), reps=cfg.reps,
                    threads=cfg.threads, seed=cfg.seed,
                ))
            except MemoryError as exc:
                errors.write(f"error,{layer.name},{backend.value},out of memory: {exc}\n")
                status = 1
    _emit(bench_rows(results), BENCH_FIELDS, cfg.format, stream)
    return status


def size_row(layer):
    p = layer.params.with_batch(1)
    n_in = input_size(p)
    n_col = im2col_size(p)
    n_win = im2win_size(p)
    return {
        "layer": layer.name,
        "input": n_in,
        "im2col": n_col,
        "im2win": n_win,
        "delta": size_delta(p),
        "im2col_over_input": _json_float(n_col / n_in),
        "im2win_over_input": _json_float(n_win / n_in),
        "im2col_over_im2win": _json_float(n_col / n_win),
    }


def mean_im2col_over_im2win(layers):
    ratios = []
    for layer in layers:
        p = layer.params.with_batch(1)
        ratios.append(im2col_size(p) / im2win_size(p))
    return sum(ratios) / len(ratios)


def cmd_sizes(cfg, stream=None):
    """Per-image element counts of input, im2col matrix and window tensor."""
    stream = stream or sys.stdout
    rows = [size_row(layer) for layer in cfg.layers]
    extra = {"mean_im2col_over_im2win": _json_float(mean_im2col_over_im2win(cfg.layers))}
    _emit(rows, SIZE_FIELDS, cfg.format, stream, extra=extra)
    return 0


def parse_custom(text):
    parts = [p for p in text.replace(" ", "").split(",") if p]
    if len(parts) != 8:
        raise argparse.ArgumentTypeError("--custom expects n,c,h,w,co,hf,wf,s")
    try:
        n, c, h, w, co, hf, wf, s = (int(v) for v in parts)
        return n, ConvParams(1, c, h, w, co, hf, wf, s)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _split(values):
    out = []
    for v in values or []:
        out.extend(p for p in v.replace(",", " ").split() if p)
    return out


def build_parser():
    parser = argparse.ArgumentParser(prog="im2win", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, default_batch, default_backends):
        p.add_argument("--layers", nargs="*", help="suite layer names, e.g. Conv1 Conv5 (default: all)")
        p.add_argument("--custom", action="append", type=parse_custom, default=[],
                       metavar="n,c,h,w,co,hf,wf,s",
                       help="custom layer; n is its batch size (repeatable)")
        p.add_argument("--backends", nargs="*", default=None,
                       help=f"backends from {[b.value for b in ConvBackend]} (default: {default_backends})")
        p.add_argument("--batch", type=int, default=default_batch)
        p.add_argument("--threads", type=int, default=_threads.default_threads())
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--format", choices=["csv", "json"], default="csv")
        p.add_argument("--output", "-o", default=None, help="output path (default: stdout)")
        p.set_defaults(default_backends=default_backends)

    all_backends = [b.value for b in ConvBackend]
    verify = sub.add_parser("verify", help="check every backend against direct convolution")
    common(verify, 1, [b for b in all_backends if b != "direct"])
    verify.set_defaults(reps=1)

    bench = sub.add_parser("bench", help="time backends over the layer suite")
    common(bench, DEFAULT_BATCH, all_backends)
    bench.add_argument("--reps", type=int, default=DEFAULT_REPS)

    sizes = sub.add_parser("sizes", help="analytic im2col / im2win element counts")
    common(sizes, 1, all_backends)
    sizes.set_defaults(reps=1)
    return parser


def config_from_args(args, parser):
    layers = []
    overrides = {}
    names = _split(args.layers)
    try:
        layers += [layer_by_name(n) for n in names]
    except KeyError as exc:
        parser.error(str(exc.args[0]))
    for n, params in args.custom:
        layer = LayerConfig.custom(params)
        layers.append(layer)
        overrides[layer.name] = n
    if not names and not args.custom:
        layers = layer_suite()

    if args.backends is None:
        backend_names = args.default_backends
    else:
        backend_names = _split(args.backends)
    try:
        backends = [ConvBackend.parse(b) for b in backend_names]
    except ValueError as exc:
        parser.error(str(exc))
    try:
        return CliConfig(
            subcommand=args.subcommand, layers=layers, backends=backends,
            batch=args.batch, reps=args.reps, threads=args.threads, seed=args.seed,
            format=args.format, output=args.output, batch_overrides=overrides,
        )
    except ValueError as exc:
        parser.error(str(exc))


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = config_from_args(args, parser)
    if cfg.threads > _threads.max_threads():
        parser.error(f"--threads {cfg.threads} exceeds the {_threads.max_threads()} available workers")
    out, close = _open_output(cfg.output)
    try:
        if cfg.subcommand == "verify":
            return cmd_verify(cfg, stream=out)
        if cfg.subcommand == "bench":
            return cmd_bench(cfg, stream=out)
        return cmd_sizes(cfg, stream=out)
    finally:
        if close:
            out.close()


if __name__ == "__main__":
    sys.exit(main())
