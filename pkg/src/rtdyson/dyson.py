"""Physics layer: equilibrium Dyson equations in real time.

Maps the retarded and mixed-time Dyson equations onto the generic
coupled Volterra system solved by `stepper`, for two model
self-energies: the Bethe lattice (Sigma = c^2 G, exactly solvable) and
the SYK model (Sigma cubic in G).  Also recovers the physical
lesser/greater/retarded components from the mixed propagator and
computes spectral functions.

Conventions (fermionic, xi = -1 throughout):

* retarded equation: (i d/dt - h) GR - int_0^t SigmaR(t-t') GR(t') dt' = 0,
  GR(0) = -i;
* mixed equation for g_j(t) = G(t, tau_j) on the imaginary-time nodes:
  (i d/dt - h) g - int SigmaR g = q(t),  q = M sigma_mix(t),
  g_j(0) = -i GM(beta - tau_j), with M the imaginary-time convolution
  matrix of GM;
* components: G<(t) = G(t, 0), G>(t) = -G(t, beta),
  GR(t) = -(G(t, 0) + G(t, beta)), and the same relations for Sigma;
* Fourier transform f(w) = int e^{iwt} f(t) dt and
  A(w) = -Im GR(w) / pi, so GR(0) = -i gives the sum rule int A = 1.

The phase change of variables y(t) = e^{iht} g(t) removes the bare
dispersion from the stepping; it makes the Volterra kernel
k(w, s) = -e^{ihs} SigmaR(e^{-ihs} w, s) and source f = e^{iht} q(t).
For the Bethe lattice the phases cancel exactly: k(w, s) = -c^2 w.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import imtime
from .imtime import DlrBasis, ImTimeFn
from .stepper import ProblemDef, Trajectory

# ----------------------------------------------------------------------
# Bessel J1 and the exact Bethe solution
# ----------------------------------------------------------------------

_J1_SERIES_CUT = 9.0
_J1_QUAD_CUT = 30.0


def _j1_series(x: np.ndarray) -> np.ndarray:
    # sum_k (-1)^k (x/2)^{2k+1} / (k! (k+1)!), converged for |x| <~ 9
    half = 0.5 * x
    term = half.copy()
    out = term.copy()
    for k in range(1, 40):
        term = term * (-(half * half)) / (k * (k + 1))
        out += term
    return out


def _j1_quadrature(x: np.ndarray) -> np.ndarray:
    # (1/pi) int_{-pi/2}^{pi/2} sin(x sin t) sin t dt; 80 Gauss-Legendre
    # nodes resolve the oscillation for |x| <= ~30 to machine accuracy
    xg, wg = np.polynomial.legendre.leggauss(80)
    th = 0.5 * np.pi * xg
    w = 0.5 * np.pi * wg
    s = np.sin(th)
    return (np.sin(np.outer(x, s)) * (w * s)).sum(axis=1) / np.pi


def _j1_asymptotic(x: np.ndarray) -> np.ndarray:
    # Hankel expansion: J1(x) = sqrt(2/(pi x)) [cos(w) P(x) - sin(w) Q(x)],
    # w = x - 3 pi/4; coefficients c_m = prod_j (4 - (2j-1)^2) / (8 j)
    mu = 4.0
    nterms = 9
    c = [1.0]
    for j in range(1, 2 * nterms):
        c.append(c[-1] * (mu - (2 * j - 1) ** 2) / (8.0 * j))
    P = np.zeros_like(x)
    Q = np.zeros_like(x)
    xi2 = 1.0 / (x * x)
    for m in range(nterms - 1, -1, -1):
        P = P * xi2 + (-1) ** m * c[2 * m]
        if 2 * m + 1 < len(c):
            Q = Q * xi2 + (-1) ** m * c[2 * m + 1]
    Q = Q / x
    w = x - 0.75 * np.pi
    return np.sqrt(2.0 / (np.pi * x)) * (np.cos(w) * P - np.sin(w) * Q)


def bessel_j1(x):
    """J1 to >= 12 significant digits: power series for small argument,
    high-order quadrature of the integral representation
    (1/pi) int_{-pi/2}^{pi/2} sin(x sin t) sin t dt in the midrange, and
    Hankel asymptotics once those are converged past machine accuracy."""
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    sign = np.sign(x_arr)
    ax = np.abs(x_arr)
    out = np.empty_like(ax)
    small = ax <= _J1_SERIES_CUT
    mid = (~small) & (ax <= _J1_QUAD_CUT)
    big = ax > _J1_QUAD_CUT
    if np.any(small):
        out[small] = _j1_series(ax[small])
    if np.any(mid):
        out[mid] = _j1_quadrature(ax[mid])
    if np.any(big):
        out[big] = _j1_asymptotic(ax[big])
    out *= sign  # J1 is odd
    return out if np.ndim(x) else float(out[0])


def bethe_gr_exact(t, c: float, h: float):
    """Closed-form retarded propagator of the Bethe lattice:
    -i theta(t) e^{-iht} J1(2ct)/(ct), with the t = 0 limit -i."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    ct = c * t_arr
    env = np.ones_like(ct)
    pos = ct > 0
    env[pos] = bessel_j1(2.0 * ct[pos]) / ct[pos]
    out = np.where(t_arr < 0, 0.0, -1j * np.exp(-1j * h * t_arr) * env)
    return out if np.ndim(t) else complex(out[0])


def bethe_semicircle(omega, c: float, h: float):
    """Semicircular density of states sqrt(4c^2 - (w-h)^2) / (2 pi c^2)."""
    w = np.atleast_1d(np.asarray(omega, dtype=float)) - h
    inside = 4 * c * c - w * w
    out = np.where(inside > 0, np.sqrt(np.maximum(inside, 0.0)) / (2 * np.pi * c * c), 0.0)
    return out if np.ndim(omega) else float(out[0])


# ----------------------------------------------------------------------
# model self-energies on the imaginary-time nodes
# ----------------------------------------------------------------------

def bethe_sigma_matsubara(c: float):
    """Sigma^M = c^2 G^M as a node-sample map."""
    return lambda g: (c * c) * g


def syk_sigma_matsubara(basis: DlrBasis, J: float):
    """Sigma^M(tau) = J^2 G(tau)^2 G(beta - tau) as a node-sample map."""
    R = basis.reflect_matrix

    def sigma(g):
        return (J * J) * g * g * (R @ g)

    return sigma


def syk_sigma_mixed(gtv_row: np.ndarray, basis: DlrBasis, J: float = 1.0) -> np.ndarray:
    """Mixed self-energy J^2 G(t,tau)^2 conj(G(t, beta-tau)) at the nodes.

    The reflected samples come from refitting the row in the basis, so a
    single precomputed matrix does the evaluation.
    """
    refl = basis.reflect_matrix @ gtv_row
    return (J * J) * gtv_row * gtv_row * np.conj(refl)


def retarded_sigma_from_mixed(sigma_row: np.ndarray, basis: DlrBasis) -> complex:
    """Sigma^R(t) = -(Sigma(t, 0) + Sigma(t, beta)) from node samples,
    the same lesser/greater combination used for G itself."""
    return -(basis.eval0 @ sigma_row + basis.evalb @ sigma_row)


# ----------------------------------------------------------------------
# problem builders
# ----------------------------------------------------------------------

def bethe_retarded_problem(c: float, h: float, dt: float, N: int, p: int = 8,
                           **solver_opts) -> ProblemDef:
    """Retarded-only Bethe problem in phase-stripped variables.

    The change of variables y = e^{iht} GR cancels every phase for the
    linear self-energy, leaving k(w, s) = -c^2 w and zero source; map
    back with GR(t_n) = e^{-i h t_n} y_n.
    """
    cc = c * c
    zero = np.zeros(1, dtype=np.complex128)

    def kern(y, t):
        return -cc * y

    def src(y, t):
        return zero

    return ProblemDef(d=1, kernel_eval=kern, source_eval=src,
                      y0=np.array([-1j]), dt=dt, N=N, p=p, **solver_opts)


def retarded_from_trajectory(traj: Trajectory, h: float) -> np.ndarray:
    """Undo the phase change of variables for a retarded-only run."""
    return np.exp(-1j * h * traj.times) * traj.y[:, 0]


def mixed_problem(model: str, coupling: float, h: float, basis: DlrBasis,
                  gm: ImTimeFn, dt: float, N: int, p: int = 8,
                  **solver_opts) -> ProblemDef:
    """Semi-discrete mixed-time Dyson problem with d = r components.

    Components are the node samples of e^{iht} G(t, tau_j).  The kernel
    broadcasts the scalar retarded self-energy over components; the
    source applies the imaginary-time convolution matrix of gm to the
    mixed self-energy samples.  model is "bethe" (coupling c) or "syk"
    (coupling J); the free propagator is bethe with c = 0.
    """
    if model not in ("bethe", "syk"):
        raise ValueError(f"unknown model {model!r}")
    if gm.basis is not basis:
        raise ValueError("gm was fitted in a different basis")
    r = basis.rank
    M = imtime.conv_matrix(gm)
    ev0, evb = basis.eval0, basis.evalb
    cc = coupling * coupling

    if model == "bethe":
        def sigma_nodes(g_row):
            return cc * g_row
    else:
        refl = basis.reflect_matrix

        def sigma_nodes(g_row):
            return cc * g_row * g_row * np.conj(refl @ g_row)

    def kern(y, t):
        phase = np.exp(-1j * h * t)
        sig = sigma_nodes(phase * y)
        sig_r = -(ev0 @ sig + evb @ sig)
        return np.full(r, -sig_r / phase)

    def src(y, t):
        phase = np.exp(-1j * h * t)
        return (M @ sigma_nodes(phase * y)) / phase

    y0 = -1j * (basis.reflect_matrix @ imtime.node_values(gm))
    return ProblemDef(d=r, kernel_eval=kern, source_eval=src, y0=y0,
                      dt=dt, N=N, p=p, **solver_opts)


# ----------------------------------------------------------------------
# component recovery and spectra
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class MixedGreens:
    """Node samples of the mixed propagator over the time grid."""

    basis: DlrBasis
    times: np.ndarray  # (N,)
    gtv: np.ndarray  # (N, r) samples G(t_n, tau_j)
    beta: float
    h: float


def mixed_greens_from_trajectory(traj: Trajectory, basis: DlrBasis, h: float) -> MixedGreens:
    """Strip the phase change of variables from a mixed-problem trajectory."""
    times = traj.times
    gtv = np.exp(-1j * h * times)[:, None] * traj.y
    return MixedGreens(basis=basis, times=times, gtv=gtv, beta=basis.beta, h=h)


@dataclass(frozen=True)
class GreensComponents:
    lesser: np.ndarray
    greater: np.ndarray
    retarded: np.ndarray


def recover_components(mg: MixedGreens) -> GreensComponents:
    """G<, G> and GR from the tau = 0 and tau = beta edges of each row."""
    g0 = mg.gtv @ mg.basis.eval0
    gb = mg.gtv @ mg.basis.evalb
    return GreensComponents(lesser=g0, greater=-gb, retarded=-(g0 + gb))


@dataclass(frozen=True)
class SpectralData:
    omega: np.ndarray
    A: np.ndarray
    window: str


def _taper(n: int, kind: str, fraction: float) -> np.ndarray:
    w = np.ones(n)
    if kind == "none" or fraction <= 0:
        return w
    m = max(2, int(round(fraction * n)))
    ramp = 0.5 * (1.0 + np.cos(np.pi * np.arange(m) / (m - 1)))
    w[n - m :] = ramp
    return w


def spectral_function(gr: np.ndarray, dt: float, omega=None, omega_max: float = 8.0,
                      window: str = "cos", window_fraction: float = 0.1,
                      pad_factor: int = 4) -> SpectralData:
    """A(w) = -(1/pi) Im int_0^T e^{iwt} w(t) GR(t) dt on a frequency grid.

    Uniform grids come from a zero-padded FFT; an explicit `omega` array
    switches to direct summation (the oracle path for tests).  The
    quadrature is trapezoidal: half weight on both ends, which is what
    enforces the sum rule exactly at the t = 0 boundary.  A cosine taper
    over the final fraction of the record suppresses truncation ringing;
    the taper is recorded in the output.
    """
    gr = np.asarray(gr, dtype=np.complex128)
    n = len(gr)
    wdesc = f"{window}:{window_fraction}"
    g = gr * _taper(n, window, window_fraction)
    g[0] *= 0.5
    g[-1] *= 0.5
    if np.abs(g[-1]) > 1e-6 * np.max(np.abs(g)):
        import warnings

        warnings.warn("retarded function has not decayed by the final time; "
                      "spectrum will carry truncation artifacts")
    if omega is not None:
        omega = np.asarray(omega, dtype=float)
        t = dt * np.arange(n)
        transform = (np.exp(1j * np.outer(omega, t)) @ g) * dt
        return SpectralData(omega=omega, A=-transform.imag / np.pi, window=wdesc)
    nfft = pad_factor * (1 << max(3, (n - 1).bit_length()))
    spec = np.fft.ifft(g, nfft) * nfft * dt  # sum_n g_n e^{+i w t_n}
    w_all = np.fft.fftfreq(nfft, d=dt) * 2.0 * np.pi
    order = np.argsort(w_all)
    w_all, spec = w_all[order], spec[order]
    keep = np.abs(w_all) <= omega_max
    return SpectralData(omega=w_all[keep], A=-spec[keep].imag / np.pi, window=wdesc)


def sum_rule(sd: SpectralData) -> float:
    """int A dw by trapezoid on the stored grid (should be 1)."""
    return float(np.trapezoid(sd.A, sd.omega))


def decay_slope(times: np.ndarray, absgr: np.ndarray, t_lo: float, t_hi: float) -> float:
    """Log-log slope of |GR| over [t_lo, t_hi] by least squares."""
    m = (times >= t_lo) & (times <= t_hi) & (absgr > 0)
    lt, lg = np.log(times[m]), np.log(absgr[m])
    return float(np.polyfit(lt, lg, 1)[0])


def find_power_law_window(times: np.ndarray, absgr: np.ndarray, target: float = -0.5,
                          tol: float = 0.1, decade: float = 10.0):
    """Search for a window [t, decade*t] where the log-log slope is
    target +- tol; returns (t_lo, t_hi, slope) or None."""
    valid = times > 0
    tmin, tmax = times[valid][1], times[-1]
    for t_lo in np.geomspace(tmin, tmax / decade, 64):
        t_hi = decade * t_lo
        m = (times >= t_lo) & (times <= t_hi) & (absgr > 0)
        if np.count_nonzero(m) < 16:
            continue
        slope = decay_slope(times, absgr, t_lo, t_hi)
        if abs(slope - target) <= tol:
            return float(t_lo), float(t_hi), slope
    return None
