#!/usr/bin/env python3
"""Time the compiled kernels against the pure numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeats N]
Equivalent to ``fedlora bench``; kept as a file so the comparison can be
run without installing the console script.
"""

import argparse

from fedlora.cli import run_benchmark


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=500,
                        help="timing iterations per backend (default 500)")
    args = parser.parse_args()
    print(run_benchmark(args.repeats))


if __name__ == "__main__":
    main()
