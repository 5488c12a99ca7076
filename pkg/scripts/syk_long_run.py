#!/usr/bin/env python3
"""Opt-in long SYK run: beta = 10000, N = 2^20 steps to T = 50000.

This reproduces the headline low-temperature calculation (the one that
resolves the square-root spectral divergence down to |omega| ~ 1e-3).
It needs several GB of history storage and a correspondingly long wall
time, so it is not part of any test suite.  Expect the imaginary-time
basis to come out around r = 92 and the spectral function to sharpen
dramatically relative to the beta = 100 desk run.
"""
import argparse
import subprocess
import sys


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--outdir", default="runs/syk_beta10000")
    ap.add_argument("--memory-cap-gb", default="24")
    args = ap.parse_args()
    cmd = [
        sys.executable, "-m", "rtdyson.cli", "syk",
        "--beta", "10000", "--lam", "1e5", "--eps", "1e-10",
        "--T", "50000", "--N", str(1 << 20),
        "--fp-tol", "1e-14", "--omega-max", "4.0",
        "--memory-cap-gb", args.memory_cap_gb,
        "--outdir", args.outdir,
    ]
    print("+", " ".join(cmd), flush=True)
    subprocess.run(cmd, check=True)


if __name__ == "__main__":
    main()
