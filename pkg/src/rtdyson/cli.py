"""Command-line front end: model runs, benchmarks, convergence studies,
self tests.  Results are written as CSV files (one-line header, 17
significant digits) with a meta.json sibling recording every parameter,
per-step iteration counts and wall times, enough to reproduce the run.

Exit codes: 0 success, 1 argument/validation failure, 2 solver failure.
The output directory defaults to $RTDYSON_OUTDIR or ./runs/<command>.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, blockplan, dyson, history, imtime, stepper

_COMMANDS = ("bethe", "syk", "free", "bench", "convergence", "selftest")


@dataclass
class RunConfig:
    command: str
    # model
    c: float = 1.0
    J: float = 1.0
    h: float = -1.0
    beta: float = 10.0
    # discretization
    dt: float = 1.0 / 64
    T: float = 64.0
    N: int | None = None
    p: int = 8
    lam: float = 40.0
    eps: float = 1e-15
    # solver
    fp_tol: float = 1e-15
    fp_max: int = 50
    damping: float = 1.0
    mix: float = 0.3
    mode: str = "fast"
    base_size: int | None = None
    # bench / convergence
    nmin_exp: int = 8
    nmax_exp: int = 14
    direct_ceiling_exp: int = 12
    repeats: int = 3
    orders: tuple[int, ...] = (2, 4, 8)
    # output
    outdir: str | None = None
    omega_max: float = 6.0
    window_fraction: float = 0.1
    gtv_stride: int = 0  # 0: choose automatically
    memory_cap_gb: float = 8.0

    def steps(self) -> int:
        return self.N if self.N is not None else int(round(self.T / self.dt)) + 1

    def validate(self) -> None:
        if self.command not in _COMMANDS:
            raise ValueError(f"unknown command {self.command!r}")
        if self.dt <= 0 or self.fp_tol <= 0 or self.beta <= 0:
            raise ValueError("dt, fp_tol and beta must be positive")
        if self.p % 2 or not 2 <= self.p <= 8:
            raise ValueError("order p must be even in [2, 8]")
        if self.mode not in stepper.MODES:
            raise ValueError(f"mode must be one of {stepper.MODES}")
        if not 0 < self.mix <= 1 or not 0 < self.damping <= 1:
            raise ValueError("mix and damping must be in (0, 1]")
        if self.steps() < 2:
            raise ValueError("need at least 2 time steps")


def _outdir(cfg: RunConfig) -> Path:
    base = cfg.outdir or os.environ.get("RTDYSON_OUTDIR") or os.path.join("runs", cfg.command)
    path = Path(base)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_csv(path: Path, header: list[str], columns: list[np.ndarray]) -> None:
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in data:
            f.write(",".join(f"{v:.17e}" for v in row) + "\n")


def _write_meta(path: Path, cfg: RunConfig, extra: dict) -> None:
    meta = {"version": __version__, "config": asdict(cfg)}
    meta.update(extra)
    with open(path, "w") as f:
        json.dump(meta, f, indent=1, default=_json_default)
        f.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj)}")


def _iteration_stats(its: np.ndarray) -> dict:
    stats = {
        "max": int(its.max()),
        "max_after_100": int(its[100:].max()) if len(its) > 100 else None,
        "max_after_500": int(its[500:].max()) if len(its) > 500 else None,
        "mean": float(its.mean()),
    }
    if len(its) <= 65536:
        stats["per_step"] = its.tolist()
    else:
        vals, counts = np.unique(its, return_counts=True)
        stats["histogram"] = {int(v): int(c) for v, c in zip(vals, counts)}
    return stats


def _check_memory(cfg: RunConfig, d: int) -> None:
    # y, k, f, S plus engine copies: ~8 complex arrays of N x d
    need = cfg.steps() * d * 16 * 8
    cap = cfg.memory_cap_gb * 2**30
    if need > cap:
        raise ValueError(
            f"run needs ~{need/2**30:.1f} GiB of history storage, above the "
            f"cap {cfg.memory_cap_gb} GiB; raise --memory-cap-gb to proceed"
        )


# ----------------------------------------------------------------------
# model runs
# ----------------------------------------------------------------------

def _solve_equilibrium(cfg: RunConfig, model: str, coupling: float):
    times = {}
    t0 = time.perf_counter()
    basis = imtime.build_basis(cfg.beta, cfg.lam, cfg.eps)
    times["basis_seconds"] = time.perf_counter() - t0
    sigma = (dyson.bethe_sigma_matsubara(coupling) if model == "bethe"
             else dyson.syk_sigma_matsubara(basis, coupling))
    t0 = time.perf_counter()
    gm = imtime.solve_matsubara(cfg.h, sigma, basis, mix=cfg.mix)
    times["matsubara_seconds"] = time.perf_counter() - t0

    N = cfg.steps()
    _check_memory(cfg, basis.rank)
    prob = dyson.mixed_problem(model, coupling, cfg.h, basis, gm, cfg.dt, N,
                               cfg.p, fp_tol=cfg.fp_tol, fp_max=cfg.fp_max,
                               damping=cfg.damping)
    t0 = time.perf_counter()
    traj = stepper.solve(prob, mode=cfg.mode, base_size=cfg.base_size)
    times["realtime_seconds"] = time.perf_counter() - t0
    mg = dyson.mixed_greens_from_trajectory(traj, basis, cfg.h)
    return basis, gm, mg, traj, times


def _gtv_columns(mg: dyson.MixedGreens, stride: int):
    r = mg.basis.rank
    n = len(mg.times)
    if stride <= 0:
        stride = max(1, n // 2000)
    sel = slice(0, n, stride)
    node_ids = sorted(set(np.linspace(0, r - 1, 6).astype(int)))
    cols = [mg.times[sel]]
    names = ["t"]
    edge0 = mg.gtv[sel] @ mg.basis.eval0
    edgeb = mg.gtv[sel] @ mg.basis.evalb
    for name, vals in (("tau0", edge0), ("taubeta", edgeb)):
        cols += [vals.real, vals.imag]
        names += [f"re_g_{name}", f"im_g_{name}"]
    for j in node_ids:
        vals = mg.gtv[sel, j]
        cols += [vals.real, vals.imag]
        names += [f"re_g_node{j}", f"im_g_node{j}"]
    return names, cols, stride


def run_bethe(cfg: RunConfig, out: Path) -> int:
    basis, gm, mg, traj, times = _solve_equilibrium(cfg, "bethe", cfg.c)
    comp = dyson.recover_components(mg)
    t = mg.times
    exact = dyson.bethe_gr_exact(t, cfg.c, cfg.h) if cfg.c > 0 else \
        -1j * np.exp(-1j * cfg.h * t)
    t0 = time.perf_counter()
    prob_r = dyson.bethe_retarded_problem(cfg.c, cfg.h, cfg.dt, len(t), cfg.p,
                                          fp_tol=cfg.fp_tol, fp_max=cfg.fp_max)
    gr_ret = dyson.retarded_from_trajectory(stepper.solve(prob_r, mode=cfg.mode), cfg.h)
    times["retarded_seconds"] = time.perf_counter() - t0

    gr = comp.retarded
    _write_csv(out / "gr.csv",
               ["t", "re_gr", "im_gr", "re_exact", "im_exact", "abs_err"],
               [t, gr.real, gr.imag, exact.real, exact.imag, np.abs(gr - exact)])
    _write_csv(out / "error.csv",
               ["t", "err_mixed_vs_exact", "err_retarded_vs_exact", "diff_mixed_vs_retarded"],
               [t, np.abs(gr - exact), np.abs(gr_ret - exact), np.abs(gr - gr_ret)])
    sd = dyson.spectral_function(gr, cfg.dt, omega_max=cfg.omega_max,
                                 window_fraction=cfg.window_fraction)
    a_exact = (dyson.bethe_semicircle(sd.omega, cfg.c, cfg.h) if cfg.c > 0
               else np.zeros_like(sd.omega))
    _write_csv(out / "spectral.csv", ["omega", "A", "A_exact"], [sd.omega, sd.A, a_exact])
    names, cols, stride = _gtv_columns(mg, cfg.gtv_stride)
    _write_csv(out / "gtv.csv", names, cols)
    _write_meta(out / "meta.json", cfg, {
        "model": "bethe", "dlr_rank": basis.rank,
        "boundary_identity_error": abs(imtime.boundary_identity(gm) + 1),
        "gr0_error": abs(gr[0] + 1j),
        "max_abs_err_vs_exact": float(np.abs(gr - exact).max()),
        "max_diff_mixed_vs_retarded": float(np.abs(gr - gr_ret).max()),
        "sum_rule": dyson.sum_rule(sd),
        "gtv_stride": stride,
        "iterations": _iteration_stats(traj.iterations),
        "wall_times": times, "window": sd.window,
    })
    return 0


def run_syk(cfg: RunConfig, out: Path) -> int:
    basis, gm, mg, traj, times = _solve_equilibrium(cfg, "syk", cfg.J)
    comp = dyson.recover_components(mg)
    t = mg.times
    gr = comp.retarded
    _write_csv(out / "gr.csv", ["t", "re_gr", "im_gr"], [t, gr.real, gr.imag])
    _write_csv(out / "decay.csv", ["t", "abs_gr"], [t, np.abs(gr)])
    sd = dyson.spectral_function(gr, cfg.dt, omega_max=cfg.omega_max,
                                 window_fraction=cfg.window_fraction)
    _write_csv(out / "spectral.csv", ["omega", "A"], [sd.omega, sd.A])
    window = dyson.find_power_law_window(t, np.abs(gr))
    _write_meta(out / "meta.json", cfg, {
        "model": "syk", "dlr_rank": basis.rank,
        "boundary_identity_error": abs(imtime.boundary_identity(gm) + 1),
        "gr0_error": abs(gr[0] + 1j),
        "sum_rule": dyson.sum_rule(sd),
        "power_law_window": window,
        "iterations": _iteration_stats(traj.iterations),
        "wall_times": times, "window": sd.window,
    })
    return 0


def run_free(cfg: RunConfig, out: Path) -> int:
    cfg.c = 0.0
    return run_bethe(cfg, out)


# ----------------------------------------------------------------------
# benchmark / convergence / selftest
# ----------------------------------------------------------------------

def _time_modes(prob: stepper.ProblemDef, repeats: int, with_direct: bool):
    """Interleaved medians of both modes (warmup runs excluded)."""
    stepper.solve(prob, mode="fast")
    if with_direct:
        stepper.solve(prob, mode="direct")
    tf, td = [], []
    for _ in range(repeats):
        t0 = time.perf_counter()
        stepper.solve(prob, mode="fast")
        tf.append(time.perf_counter() - t0)
        if with_direct:
            t0 = time.perf_counter()
            stepper.solve(prob, mode="direct")
            td.append(time.perf_counter() - t0)
    return float(np.median(tf)), (float(np.median(td)) if with_direct else math.nan)


def run_bench(cfg: RunConfig, out: Path) -> int:
    ns = [1 << e for e in range(cfg.nmin_exp, cfg.nmax_exp + 1)]
    rows = {"N": [], "t_fast_seconds": [], "t_direct_seconds": [],
            "ratio": [], "nlog2n_coeff": []}
    for n in ns:
        _check_memory(cfg, 1)
        prob = dyson.bethe_retarded_problem(cfg.c, cfg.h, cfg.dt, n, cfg.p)
        t_fast, t_direct = _time_modes(prob, cfg.repeats,
                                       n <= (1 << cfg.direct_ceiling_exp))
        rows["N"].append(n)
        rows["t_fast_seconds"].append(t_fast)
        rows["t_direct_seconds"].append(t_direct)
        rows["ratio"].append(t_direct / t_fast if math.isfinite(t_direct) else math.nan)
        rows["nlog2n_coeff"].append(t_fast / (n * math.log2(n) ** 2))
    _write_csv(out / "timings.csv", list(rows), [np.array(v) for v in rows.values()])
    doubling = [rows["t_fast_seconds"][i + 1] / rows["t_fast_seconds"][i]
                for i in range(len(ns) - 1)]
    _write_meta(out / "meta.json", cfg, {
        "doubling_ratios": doubling,
        "crossover_ok": bool(rows["ratio"][0] >= 1.0) if ns[0] == 256 else None,
    })
    return 0


def run_convergence(cfg: RunConfig, out: Path) -> int:
    dts = {2: [1 / 8, 1 / 16, 1 / 32, 1 / 64],
           4: [1 / 4, 1 / 8, 1 / 16, 1 / 32],
           8: [1 / 4, 1 / 8, 1 / 16]}
    T = min(cfg.T, 16.0)
    cols = {"dt": [], "p": [], "max_err": [], "observed_order": []}
    for p in cfg.orders:
        prev = None
        for dt in dts[p]:
            n = int(round(T / dt)) + 1
            prob = dyson.bethe_retarded_problem(cfg.c, cfg.h, dt, n, p)
            traj = stepper.solve(prob, mode=cfg.mode)
            gr = dyson.retarded_from_trajectory(traj, cfg.h)
            err = float(np.abs(gr - dyson.bethe_gr_exact(traj.times, cfg.c, cfg.h)).max())
            order = math.log2(prev / err) if prev else math.nan
            cols["dt"].append(dt)
            cols["p"].append(p)
            cols["max_err"].append(err)
            cols["observed_order"].append(order)
            prev = err
    _write_csv(out / "convergence.csv", list(cols), [np.array(v) for v in cols.values()])
    _write_meta(out / "meta.json", cfg, {"T": T})
    return 0


def run_selftest(cfg: RunConfig, out: Path) -> int:
    failures = []
    rng = np.random.default_rng(7)

    def check(name, ok, detail=""):
        print(f"selftest {'PASS' if ok else 'FAIL'}: {name} {detail}")
        if not ok:
            failures.append(name)

    for q in (1, 3, 5, 7):
        mu = stepper.gregory_weights(q)
        worst = 0.0
        for n in (2 * q, 2 * q + 3):
            for e in range(q + 1):
                m = np.arange(n + 1, dtype=float)
                rule = (m**e).sum() + (mu * (np.arange(q, dtype=float)**e
                        + (n - np.arange(q, dtype=float))**e)).sum()
                exact = n ** (e + 1) / (e + 1)
                worst = max(worst, abs(rule - exact) / max(abs(exact), 1.0))
        check(f"gregory q={q} polynomial exactness", worst < 1e-12, f"(rel err {worst:.1e})")

    for variant in blockplan.VARIANTS:
        plan = blockplan.build_plan(129, 4, variant)
        rep = blockplan.validate_plan(plan)
        check(f"plan N=129 {variant}", rep.ok(), str(rep.messages[:1]))

    n, d = 512, 2
    plan = blockplan.plan_for(n, 8, blockplan.KERNEL_NONLINEAR)
    k = rng.normal(size=(n, d)) + 1j * rng.normal(size=(n, d))
    y = rng.normal(size=(n, d)) + 1j * rng.normal(size=(n, d))
    eng = history.HistoryEngine(plan, d, debug=True)
    outv = np.empty_like(y)
    for i in range(n):
        eng.push_step(y[i], k[i])
        outv[i] = eng.finalize_step()
    err = np.max(np.abs(outv - history.direct_sums(k, y))) / np.max(np.abs(outv))
    check("history engine vs direct sums", err < 1e-12, f"(rel err {err:.1e})")

    dt, nn = 1 / 16, 257
    prob = dyson.bethe_retarded_problem(1.0, -1.0, dt, nn, 8)
    trf = stepper.solve(prob, mode="fast")
    trd = stepper.solve(prob, mode="direct")
    dmax = float(np.abs(trf.y - trd.y).max())
    check("fast vs direct trajectories", dmax < 1e-11, f"(diff {dmax:.1e})")
    gerr = float(np.abs(dyson.retarded_from_trajectory(trf, -1.0)
                        - dyson.bethe_gr_exact(trf.times, 1.0, -1.0)).max())
    check("retarded propagator vs closed form", gerr < 1e-8, f"(err {gerr:.1e})")

    basis = imtime.build_basis(2.0, 16.0, 1e-13)
    gm = imtime.solve_matsubara(0.7, lambda g: np.zeros_like(g), basis, mix=1.0)
    taus = np.linspace(0, 2.0, 101)
    ferr = float(np.abs(imtime.evaluate(gm, taus)
                        + imtime.kernel_tau(taus, np.array([0.7]), 2.0)[:, 0]).max())
    check("free-fermion imaginary-time solve", ferr < 1e-9, f"(err {ferr:.1e})")

    _write_meta(out / "meta.json", cfg, {"failures": failures})
    return 0 if not failures else 1


# ----------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="rtdyson",
        description="real-time equilibrium Dyson solver with fast history summation",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def add_common(sp, beta, lam, eps, h, dt, T, fp_tol):
        sp.add_argument("--beta", type=float, default=beta)
        sp.add_argument("--lam", type=float, default=lam, help="energy cutoff beta*omega_max")
        sp.add_argument("--eps", type=float, default=eps, help="imaginary-time accuracy")
        sp.add_argument("--h", type=float, default=h)
        sp.add_argument("--dt", type=float, default=dt)
        sp.add_argument("--T", type=float, default=T, help="final time (sets N unless --N)")
        sp.add_argument("--N", type=int, default=None, help="number of time steps")
        sp.add_argument("--p", type=int, default=8, help="multistep order (even)")
        sp.add_argument("--fp-tol", dest="fp_tol", type=float, default=fp_tol)
        sp.add_argument("--fp-max", dest="fp_max", type=int, default=50)
        sp.add_argument("--damping", type=float, default=1.0)
        sp.add_argument("--mix", type=float, default=0.3)
        sp.add_argument("--mode", choices=stepper.MODES, default="fast")
        sp.add_argument("--base-size", dest="base_size", type=int, default=None)
        sp.add_argument("--outdir", default=None)
        sp.add_argument("--omega-max", dest="omega_max", type=float, default=6.0)
        sp.add_argument("--window-fraction", dest="window_fraction", type=float, default=0.1)
        sp.add_argument("--gtv-stride", dest="gtv_stride", type=int, default=0)
        sp.add_argument("--memory-cap-gb", dest="memory_cap_gb", type=float, default=8.0)

    sp = sub.add_parser("bethe", help="Bethe lattice (Sigma = c^2 G), exact reference")
    sp.add_argument("--c", type=float, default=1.0)
    add_common(sp, beta=10.0, lam=40.0, eps=1e-15, h=-1.0, dt=1 / 64, T=64.0, fp_tol=1e-15)

    sp = sub.add_parser("syk", help="SYK model (cubic self-energy)")
    sp.add_argument("--J", type=float, default=1.0)
    add_common(sp, beta=100.0, lam=1000.0, eps=1e-12, h=0.0, dt=500.0 / 2**15,
               T=500.0, fp_tol=1e-14)

    sp = sub.add_parser("free", help="noninteracting model (Bethe with c = 0)")
    add_common(sp, beta=10.0, lam=40.0, eps=1e-15, h=-1.0, dt=1 / 64, T=64.0, fp_tol=1e-15)

    sp = sub.add_parser("bench", help="fast-vs-direct timing sweep")
    sp.add_argument("--c", type=float, default=1.0)
    sp.add_argument("--nmin-exp", dest="nmin_exp", type=int, default=8)
    sp.add_argument("--nmax-exp", dest="nmax_exp", type=int, default=14)
    sp.add_argument("--direct-ceiling-exp", dest="direct_ceiling_exp", type=int, default=12)
    sp.add_argument("--repeats", type=int, default=3)
    add_common(sp, beta=10.0, lam=40.0, eps=1e-15, h=-1.0, dt=1 / 64, T=64.0, fp_tol=1e-15)

    sp = sub.add_parser("convergence", help="order-of-accuracy study on the Bethe model")
    sp.add_argument("--c", type=float, default=1.0)
    sp.add_argument("--orders", type=int, nargs="+", default=[2, 4, 8])
    add_common(sp, beta=10.0, lam=40.0, eps=1e-15, h=-1.0, dt=1 / 64, T=16.0, fp_tol=1e-15)

    sp = sub.add_parser("selftest", help="run the built-in oracle suite")
    add_common(sp, beta=10.0, lam=40.0, eps=1e-15, h=-1.0, dt=1 / 64, T=8.0, fp_tol=1e-15)
    return ap


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    fields = {f for f in RunConfig.__dataclass_fields__}
    kwargs = {k: v for k, v in vars(args).items() if k in fields and v is not None}
    if "orders" in kwargs:
        kwargs["orders"] = tuple(kwargs["orders"])
    return RunConfig(**kwargs)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        cfg.validate()
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = _outdir(cfg)
    runners = {"bethe": run_bethe, "syk": run_syk, "free": run_free,
               "bench": run_bench, "convergence": run_convergence,
               "selftest": run_selftest}
    try:
        return runners[cfg.command](cfg, out)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except stepper.StepError as exc:
        # flush what exists so a long run is not lost entirely
        if exc.partial is not None:
            t = exc.partial.times
            _write_csv(out / "partial_y.csv",
                       ["t"] + [f"{p}_y{j}" for j in range(exc.partial.y.shape[1])
                                for p in ("re", "im")],
                       [t] + [col for j in range(exc.partial.y.shape[1])
                              for col in (exc.partial.y[:, j].real, exc.partial.y[:, j].imag)])
        _write_meta(out / "meta.json", cfg,
                    {"error": str(exc), "failed_step": exc.step, "residual": exc.residual})
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    except imtime.IterationError as exc:
        _write_meta(out / "meta.json", cfg,
                    {"error": str(exc), "residual_history": exc.history[-20:]})
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
