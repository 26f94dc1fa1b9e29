"""Backend selection for the hot numeric kernels.

The kernels in :mod:`swarmmpc.kernels` are written so the same source runs
either JIT-compiled by numba or as plain numpy. Set ``SWARMMPC_NUMBA=0`` to
force the pure-numpy path (useful for debugging and as a reference when
benchmarking, see ``benchmarks/bench_kernels.py``).
"""
import os


def _want_numba():
    value = os.environ.get("SWARMMPC_NUMBA", "1").strip().lower()
    return value not in ("0", "false", "no", "off")


NUMBA_ENABLED = False
if _want_numba():
    try:
        import numba  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:
        NUMBA_ENABLED = False

if NUMBA_ENABLED:
    from numba import njit
else:

    def njit(*args, **kwargs):
        """Stand-in decorator when numba is disabled or missing."""
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap
