"""Kernel backend selection.

Two interchangeable implementations of the hot convolution loops exist:

* ``numpy`` - shifted-tensordot formulation whose inner products run on the
  BLAS behind NumPy; the default, and the faster choice wherever a tuned
  BLAS is present (see benchmarks/kernel_bench.py).
* ``ext``   - compiled Cython direct-loop kernels (OpenMP over output
  rows), useful when NumPy is built against a slow BLAS.

The backend is picked once at import; ``GLPGE_BACKEND`` forces a choice
(``numpy`` / ``ext``). ``GLPGE_THREADS`` bounds the extension's worker
threads; extension results are bit-identical for any thread count.
"""

from __future__ import annotations

import os

import numpy as np

from . import numpy_backend
from .numpy_backend import conv_out_size

try:
    from . import _convext
except ImportError:
    _convext = None


_THREADS = None


def _thread_count() -> int:
    global _THREADS
    if _THREADS is None:
        env = os.environ.get("GLPGE_THREADS")
        _THREADS = max(1, int(env)) if env else max(1, min(os.cpu_count() or 1, 8))
    return _THREADS


class _ExtBackend:
    """Wraps the compiled kernels behind the numpy_backend signatures."""

    name = "ext"

    @staticmethod
    def conv2d_forward(x, w, b, stride, pad, cache=None):
        n, ci, h, wi = x.shape
        co, _, kh, kw = w.shape
        out = np.empty(
            (n, co, conv_out_size(h, kh, stride, pad), conv_out_size(wi, kw, stride, pad)),
            dtype=x.dtype,
        )
        _convext.conv2d_forward(
            np.ascontiguousarray(x), np.ascontiguousarray(w),
            np.ascontiguousarray(b), out, stride, pad, _thread_count(),
        )
        return out

    @staticmethod
    def conv2d_backward_input(dy, w, x_shape, stride, pad):
        dx = np.empty(x_shape, dtype=dy.dtype)
        _convext.conv2d_backward_input(
            np.ascontiguousarray(dy), np.ascontiguousarray(w), dx, stride, pad, _thread_count(),
        )
        return dx

    @staticmethod
    def conv2d_backward_weight(dy, x, w_shape, stride, pad, cache=None):
        dw = np.empty(w_shape, dtype=dy.dtype)
        _convext.conv2d_backward_weight(
            np.ascontiguousarray(dy), np.ascontiguousarray(x), dw, stride, pad, _thread_count(),
        )
        return dw


class _NumpyBackend:
    name = "numpy"
    conv2d_forward = staticmethod(numpy_backend.conv2d_forward)
    conv2d_backward_input = staticmethod(numpy_backend.conv2d_backward_input)
    conv2d_backward_weight = staticmethod(numpy_backend.conv2d_backward_weight)


HAS_EXT = _convext is not None


def _select():
    choice = os.environ.get("GLPGE_BACKEND", "numpy").lower()
    if choice == "ext":
        if not HAS_EXT:
            raise ImportError("GLPGE_BACKEND=ext but the compiled extension is not available")
        return _ExtBackend
    return _NumpyBackend


active = _select()


def backend_name() -> str:
    return active.name


def available_backends():
    return (_NumpyBackend, _ExtBackend) if HAS_EXT else (_NumpyBackend,)


# shapes spanning the regimes this workload hits: wide-spatial/narrow-channel
# entry layers, strided discriminator layers, and channel-heavy grid nodes
BENCH_SHAPES = (
    (4, 3, 128, 128, 16, 3, 1, 1),
    (4, 16, 128, 128, 16, 3, 1, 1),
    (8, 3, 128, 128, 24, 4, 2, 1),
    (4, 32, 16, 16, 12, 3, 1, 1),
    (4, 740, 8, 8, 236, 3, 1, 1),
    (1, 976, 16, 16, 256, 1, 1, 0),
    (1, 3, 512, 512, 16, 3, 1, 1),
)


def compare_backends(repeats: int = 3, shapes=BENCH_SHAPES) -> list:
    """Time conv2d forward+backward on every available backend.

    Returns one record per shape with per-backend best-of-N seconds; used by
    ``glpge bench --compare-kernels`` and benchmarks/kernel_bench.py.
    """
    import time

    rows = []
    for n, ci, h, w, co, k, stride, pad in shapes:
        rng = np.random.default_rng(0)
        x = rng.standard_normal((n, ci, h, w)).astype(np.float32)
        wt = rng.standard_normal((co, ci, k, k)).astype(np.float32)
        b = np.zeros(co, dtype=np.float32)
        record = {"shape": {"n": n, "ci": ci, "h": h, "w": w, "co": co, "k": k,
                            "stride": stride, "pad": pad}, "backends": {}}
        dy = None
        for impl in available_backends():
            out = impl.conv2d_forward(x, wt, b, stride, pad)
            if dy is None:
                dy = rng.standard_normal(out.shape).astype(np.float32)
            timings = {}
            for tag, fn in (
                ("forward", lambda: impl.conv2d_forward(x, wt, b, stride, pad)),
                ("backward_input", lambda: impl.conv2d_backward_input(dy, wt, x.shape, stride, pad)),
                ("backward_weight", lambda: impl.conv2d_backward_weight(dy, x, wt.shape, stride, pad)),
            ):
                best = float("inf")
                for _ in range(repeats):
                    t0 = time.perf_counter()
                    fn()
                    best = min(best, time.perf_counter() - t0)
                timings[tag] = best
            flops = 2 * k * k * ci * co * out.shape[2] * out.shape[3] * n
            timings["forward_gflops"] = flops / timings["forward"] / 1e9
            record["backends"][impl.name] = timings
        rows.append(record)
    return rows
