#!/usr/bin/env python3
"""Compare the NumPy and compiled convolution backends across workload shapes.

Usage: python benchmarks/kernel_bench.py [repeats]

Prints one line per (shape, backend) with best-of-N times; whichever backend
wins on your hardware can be pinned via GLPGE_BACKEND=numpy|ext.
"""

import sys

from glpge.diffcore.kernels import HAS_EXT, backend_name, compare_backends


def main():
    repeats = int(sys.argv[1]) if len(sys.argv) > 1 else 3
    print(f"active backend: {backend_name()} (extension built: {HAS_EXT})")
    rows = compare_backends(repeats=repeats)
    for record in rows:
        s = record["shape"]
        label = (f"N{s['n']} {s['ci']}->{s['co']} {s['h']}x{s['w']} "
                 f"k{s['k']} s{s['stride']}")
        print(f"\n{label}")
        for name, t in record["backends"].items():
            print(f"  {name:6s} fwd {t['forward'] * 1e3:8.2f} ms ({t['forward_gflops']:6.1f} GFLOPS)  "
                  f"bwd_in {t['backward_input'] * 1e3:8.2f} ms  bwd_w {t['backward_weight'] * 1e3:8.2f} ms")


if __name__ == "__main__":
    main()
