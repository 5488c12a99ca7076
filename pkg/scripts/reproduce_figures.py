#!/usr/bin/env python3
"""Run the desk-scale experiment suite and render every figure kind.

Drives the rtdyson CLI for the Bethe lattice (exact reference), the
convergence and timing studies, and the SYK model, then hands the CSV
outputs to the viz scripts.  Takes a few minutes; results land under
--outdir (default ./runs/paper).

For the full-size SYK run (beta = 10000, N = 2^20, about 1.5 GB of
history and a long wall time) see scripts/syk_long_run.py.
"""
import argparse
import pathlib
import subprocess
import sys


def run(cmd):
    print("+", " ".join(cmd), flush=True)
    subprocess.run(cmd, check=True)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--outdir", default="runs/paper")
    ap.add_argument("--fast", action="store_true",
                    help="smaller grids everywhere (smoke test)")
    args = ap.parse_args()
    out = pathlib.Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    py = sys.executable

    bethe_T = "64" if args.fast else "512"
    syk_N = "4096" if args.fast else str(1 << 15)
    nmax = "12" if args.fast else "16"

    run([py, "-m", "rtdyson.cli", "bethe", "--T", bethe_T,
         "--outdir", str(out / "bethe")])
    run([py, "-m", "rtdyson.cli", "convergence", "--outdir", str(out / "convergence")])
    run([py, "-m", "rtdyson.cli", "bench", "--nmax-exp", nmax,
         "--outdir", str(out / "bench")])
    run([py, "-m", "rtdyson.cli", "syk", "--N", syk_N,
         "--outdir", str(out / "syk")])

    viz = [py, "-m", "rtdyson_viz.render"]
    fig = out / "figures"
    fig.mkdir(exist_ok=True)
    run(viz + ["gtv_slices", str(out / "bethe/gtv.csv"),
               "-o", str(fig / "bethe_gtv.png"), "--title", "Bethe mixed propagator"])
    run(viz + ["spectral", str(out / "bethe/spectral.csv"),
               "-o", str(fig / "bethe_spectral.png"), "--title", "Bethe spectral function"])
    run(viz + ["convergence", str(out / "convergence/convergence.csv"),
               "-o", str(fig / "convergence.png"), "--title", "step-size convergence"])
    run(viz + ["timings", str(out / "bench/timings.csv"),
               "-o", str(fig / "timings.png"), "--title", "fast vs direct summation"])
    run(viz + ["decay_loglog", str(out / "syk/decay.csv"),
               "-o", str(fig / "syk_decay.png"), "--title", "SYK |GR(t)|"])
    run(viz + ["spectral", str(out / "syk/spectral.csv"),
               "-o", str(fig / "syk_spectral.png"), "--title", "SYK spectral function"])
    print(f"done; figures in {fig}")


if __name__ == "__main__":
    main()
