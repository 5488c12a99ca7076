"""Render paper-style figures from rtdyson CSV outputs.

Strictly display-level: these scripts read the documented CSV files and
draw them; they never recompute physics.  Missing or misnamed columns
fail fast with a descriptive error.

Figure kinds
------------
gtv_slices    mixed-propagator slices vs time (gtv.csv)
convergence   max error vs step size per method order (convergence.csv)
timings       fast/direct wall-clock sweep with crossover marker (timings.csv)
decay_loglog  |GR(t)| on log-log axes with a -1/2 reference slope (decay.csv)
spectral      spectral function, with the exact curve when present (spectral.csv)
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

KINDS = ("gtv_slices", "convergence", "timings", "decay_loglog", "spectral")


class FigureError(RuntimeError):
    """Missing file or malformed columns."""


@dataclass
class FigureSpec:
    kind: str
    inputs: list[str]
    output: str
    title: str | None = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise FigureError(f"unknown figure kind {self.kind!r}; pick from {KINDS}")
        if not self.inputs:
            raise FigureError("at least one input CSV is required")


def read_csv(path) -> dict[str, np.ndarray]:
    """Load a one-line-header CSV into named columns."""
    try:
        with open(path) as f:
            header = f.readline().strip().split(",")
            data = np.loadtxt(f, delimiter=",", ndmin=2)
    except OSError as exc:
        raise FigureError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise FigureError(f"malformed CSV {path}: {exc}") from exc
    if data.shape[0] == 0 or data.shape[1] != len(header):
        raise FigureError(f"malformed CSV {path}: {data.shape} vs header {header}")
    return {name: data[:, i] for i, name in enumerate(header)}


def need(cols: dict, path, *names) -> list[np.ndarray]:
    missing = [n for n in names if n not in cols]
    if missing:
        raise FigureError(f"{path} lacks columns {missing}; has {sorted(cols)}")
    return [cols[n] for n in names]


def _render_gtv_slices(spec, ax):
    cols = read_csv(spec.inputs[0])
    (t,) = need(cols, spec.inputs[0], "t")
    drew = 0
    for name in cols:
        if name.startswith("im_g_"):
            label = name[len("im_g_"):].replace("taubeta", "tau=beta").replace("tau0", "tau=0")
            style = "-" if "tau=" in label else ":"
            ax.plot(t, cols[name], style, lw=1.2, label=label)
            drew += 1
    if drew == 0:
        raise FigureError(f"{spec.inputs[0]} has no im_g_* columns to draw")
    ax.set_xlabel("t")
    ax.set_ylabel("Im G(t, tau)")
    ax.legend(fontsize=7, ncol=2)


def _render_convergence(spec, ax):
    cols = read_csv(spec.inputs[0])
    dt, p, err = need(cols, spec.inputs[0], "dt", "p", "max_err")
    for order in np.unique(p):
        sel = p == order
        ax.semilogy(dt[sel], err[sel], "o-", label=f"order {int(order)}")
    ax.set_xlabel("dt")
    ax.set_ylabel("max error")
    ax.legend()


def _render_timings(spec, ax):
    cols = read_csv(spec.inputs[0])
    n, tf, td = need(cols, spec.inputs[0], "N", "t_fast_seconds", "t_direct_seconds")
    ax.loglog(n, tf, "o-", label="fast")
    have_direct = np.isfinite(td)
    if np.any(have_direct):
        ax.loglog(n[have_direct], td[have_direct], "s--", label="direct")
        cross = n[have_direct & (td >= tf)]
        if len(cross):
            ax.axvline(cross[0], color="0.6", ls=":",
                       label=f"crossover N = {int(cross[0])}")
    ax.set_xlabel("N")
    ax.set_ylabel("wall time (s)")
    ax.legend()


def _render_decay_loglog(spec, ax):
    cols = read_csv(spec.inputs[0])
    t, g = need(cols, spec.inputs[0], "t", "abs_gr")
    pos = (t > 0) & (g > 0)
    ax.loglog(t[pos], g[pos], lw=1.0, label="|GR(t)|")
    # -1/2 reference slope anchored mid-record
    tref = np.geomspace(t[pos][len(t[pos]) // 20], t[pos][-1] / 4, 50)
    anchor = np.interp(tref[0], t[pos], g[pos])
    ax.loglog(tref, anchor * (tref / tref[0]) ** -0.5, "k--", lw=0.8,
              label="t^{-1/2} reference")
    ax.set_xlabel("t")
    ax.set_ylabel("|GR|")
    ax.legend()


def _render_spectral(spec, ax):
    cols = read_csv(spec.inputs[0])
    w, a = need(cols, spec.inputs[0], "omega", "A")
    ax.plot(w, a, lw=1.2, label="A(omega)")
    if "A_exact" in cols and np.any(cols["A_exact"] != 0):
        ax.plot(w, cols["A_exact"], "k--", lw=0.8, label="exact")
    ax.set_xlabel("omega")
    ax.set_ylabel("A")
    ax.legend()


_RENDERERS = {
    "gtv_slices": _render_gtv_slices,
    "convergence": _render_convergence,
    "timings": _render_timings,
    "decay_loglog": _render_decay_loglog,
    "spectral": _render_spectral,
}


def render(spec: FigureSpec) -> str:
    """Draw the figure described by spec and write it to spec.output."""
    fig, ax = plt.subplots(figsize=(4.8, 3.4), dpi=150)
    try:
        _RENDERERS[spec.kind](spec, ax)
        if spec.title:
            ax.set_title(spec.title, fontsize=9)
        fig.tight_layout()
        fig.savefig(spec.output)
    finally:
        plt.close(fig)
    return spec.output


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="rtdyson-viz",
        description="render figures from rtdyson CSV outputs",
    )
    ap.add_argument("kind", choices=KINDS)
    ap.add_argument("inputs", nargs="+", help="input CSV file(s)")
    ap.add_argument("-o", "--output", required=True, help="output image (png/svg)")
    ap.add_argument("--title", default=None)
    args = ap.parse_args(argv)
    try:
        path = render(FigureSpec(kind=args.kind, inputs=args.inputs,
                                 output=args.output, title=args.title))
    except FigureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
