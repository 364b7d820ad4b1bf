from . import _threads  # noqa: F401  (configures numba before first import)
