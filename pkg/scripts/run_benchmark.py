"""Run the desk-scale benchmark and print a per-run summary.

    python3 scripts/run_benchmark.py --out runs/benchmark
"""
import sys

from selfsup_uda.benchmark import main

if __name__ == "__main__":
    sys.exit(main())
