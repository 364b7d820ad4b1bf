import os
import sys
from contextlib import contextmanager

# Allow more workers than cores so thread-count invariance can be exercised
# on small machines. Numba reads these once, so only set them before it loads.
if "numba" not in sys.modules:
    os.environ.setdefault("NUMBA_NUM_THREADS", str(max(os.cpu_count() or 1, 8)))
    os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp workqueue tbb")

import numba  # noqa: E402


def default_threads():
    return os.cpu_count() or 1


def max_threads():
    return numba.config.NUMBA_NUM_THREADS


@contextmanager
def num_threads(threads):
    threads = int(threads)
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    if threads > max_threads():
        raise ValueError(
            f"threads={threads} exceeds NUMBA_NUM_THREADS={max_threads()}"
        )
    previous = numba.get_num_threads()
    numba.set_num_threads(threads)
    try:
        yield
    finally:
        numba.set_num_threads(previous)
