"""Compact imaginary-time representation and Matsubara-axis Dyson solver.

Fermionic imaginary-time propagators are numerically low-rank: on
tau in [0, beta] they are resolved to accuracy eps by r = O(log Lambda
log 1/eps) exponentials exp(-omega_k tau)/(1 + exp(-beta omega_k)) with
frequencies selected from a fine grid by rank-revealing column pivoting
(Lambda = beta * omega_max is the dimensionless energy cutoff).
Interpolation nodes tau_j come from row pivoting on the orthonormalized
selected columns, which keeps the interpolation operator well behaved
even though the node matrix itself is ill conditioned; fits therefore go
through an LU solve of the node matrix, never its explicit inverse.

The same basis supports: evaluation anywhere on [0, beta], reflection
tau -> beta - tau, the convolution matrix mapping node samples of a
self-energy to node samples of int_0^beta Sigma(tau') G(tau' - tau) dtau'
(with the antiperiodic extension on negative arguments), and a
self-consistent solver for the imaginary-time Dyson equation working on
a matching set of pivoted Matsubara frequencies, where each basis
function transforms to the simple pole -1/(i nu - omega).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

_PANEL_ORDER = 24
_XI = -1  # fermionic statistics throughout


class BasisError(RuntimeError):
    """Basis construction failed (pivoting stagnation or certification)."""


class IterationError(RuntimeError):
    """Self-consistency iteration failed to converge."""

    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = history


def kernel_tau(tau, omega, beta: float):
    """K(tau, omega) = exp(-omega tau)/(1 + exp(-beta omega)) as the
    (len(tau), len(omega)) outer-product matrix, evaluated in
    overflow-safe form on both sign branches."""
    x = np.atleast_1d(np.asarray(tau, dtype=float))[:, None] / beta
    u = np.atleast_1d(np.asarray(omega, dtype=float))[None, :] * beta
    pos = u >= 0
    up = np.where(pos, u, 0.0)
    un = np.where(pos, 0.0, u)
    return np.where(
        pos,
        np.exp(-up * x) / (1.0 + np.exp(-up)),
        np.exp(un * (1.0 - x)) / (1.0 + np.exp(un)),
    )


def kernel_matsubara(nu, omega):
    """Transform of each basis exponential: int_0^beta e^{i nu tau} K dtau
    = -1/(i nu - omega) at fermionic nu = (2n+1) pi / beta."""
    nu = np.asarray(nu, dtype=float)
    omega = np.asarray(omega, dtype=float)
    return -1.0 / (1j * nu[:, None] - omega[None, :])


def _gl_panels(breaks: np.ndarray, order: int):
    """Composite Gauss-Legendre nodes and weights over consecutive panels."""
    xg, wg = np.polynomial.legendre.leggauss(order)
    a = breaks[:-1][:, None]
    b = breaks[1:][:, None]
    pts = 0.5 * (a + b) + 0.5 * (b - a) * xg[None, :]
    wts = 0.5 * (b - a) * np.broadcast_to(wg, pts.shape)
    return pts.ravel(), wts.ravel()


def _geometric_breaks(levels: int) -> np.ndarray:
    """[0, 2^-levels, ..., 1/4, 1/2] mirrored onto [1/2, 1]."""
    left = np.concatenate([[0.0], 0.5 ** np.arange(levels, 0, -1.0)])
    return np.concatenate([left, (1.0 - left[:-1])[::-1]])


def _refined_breaks(a: float, b: float, levels: int) -> np.ndarray:
    """Breakpoints on [a, b] geometrically refined toward both ends."""
    return a + (b - a) * _geometric_breaks(levels)


@dataclass(frozen=True)
class DlrBasis:
    """Frequencies, interpolation nodes and fit operator of one basis.

    Treat instances as immutable.  eval0/evalb are row vectors giving
    G(0) and G(beta) from node values; reflect_matrix maps node values of
    G to node values of G(beta - .).  fit_matrix is the explicit inverse
    of the node matrix for inspection and dumping; numerical fits use the
    stored LU factorization instead.
    """

    beta: float
    lam: float
    eps: float
    freqs: np.ndarray  # (r,) real frequencies
    tau_nodes: np.ndarray  # (r,) in [0, beta]
    fit_matrix: np.ndarray = field(repr=False)  # (r, r) reference inverse
    statistics: int = _XI
    node_lu: tuple = field(default=None, repr=False)
    eval0: np.ndarray = field(default=None, repr=False)
    evalb: np.ndarray = field(default=None, repr=False)
    reflect_matrix: np.ndarray = field(default=None, repr=False)
    tau_fine: np.ndarray = field(default=None, repr=False)
    tau_fine_w: np.ndarray = field(default=None, repr=False)

    @property
    def rank(self) -> int:
        return len(self.freqs)

    def fit_values(self, node_values: np.ndarray) -> np.ndarray:
        """Expansion coefficients from node samples (stable LU solve)."""
        return scipy.linalg.lu_solve(self.node_lu, np.asarray(node_values, dtype=np.complex128))

    def interp_rows(self, taus: np.ndarray) -> np.ndarray:
        """Rows mapping node samples directly to values at `taus`."""
        cols = kernel_tau(taus, self.freqs, self.beta)
        return scipy.linalg.lu_solve(self.node_lu, cols.T, trans=1).T


@dataclass(frozen=True)
class ImTimeFn:
    """Function on [0, beta] expanded in a DlrBasis."""

    basis: DlrBasis
    coeffs: np.ndarray

    def __call__(self, tau):
        return evaluate(self, tau)


def _derived(beta, lam, eps, freqs, tau_nodes, x_fine, xw) -> DlrBasis:
    node_matrix = kernel_tau(tau_nodes, freqs, beta)
    lu = scipy.linalg.lu_factor(node_matrix)
    fitm = scipy.linalg.lu_solve(lu, np.eye(len(freqs)))
    ev0 = scipy.linalg.lu_solve(lu, kernel_tau(np.array([0.0]), freqs, beta).T, trans=1)[:, 0]
    evb = scipy.linalg.lu_solve(lu, kernel_tau(np.array([beta]), freqs, beta).T, trans=1)[:, 0]
    refl = scipy.linalg.lu_solve(lu, kernel_tau(beta - tau_nodes, freqs, beta).T, trans=1).T
    return DlrBasis(
        beta=beta, lam=lam, eps=eps, freqs=freqs, tau_nodes=tau_nodes,
        fit_matrix=fitm, node_lu=lu, eval0=ev0, evalb=evb, reflect_matrix=refl,
        tau_fine=x_fine * beta, tau_fine_w=xw * beta,
    )


def build_basis(beta: float, lam: float, eps: float) -> DlrBasis:
    """Select frequencies and imaginary-time nodes to target accuracy eps.

    The kernel is sampled on composite Gauss-Legendre grids refined
    geometrically toward tau = 0, beta and omega = 0 (its boundary
    layers), finely enough that the grid itself resolves K well below
    eps; rows and columns are weighted by the quadrature so pivoting
    sees the continuous operator.  Construction is certified by
    interpolating every fine-grid kernel column through the selected
    nodes and comparing on the full grid.
    """
    if lam < 1 or not 0 < eps < 1:
        raise ValueError("need lambda >= 1 and 0 < eps < 1")
    levels = int(np.ceil(np.log2(lam))) + 4
    x_fine, xw = _gl_panels(_geometric_breaks(levels), _PANEL_ORDER)
    uhalf = np.concatenate([[0.0], lam * 0.5 ** np.arange(levels, -1, -1.0)])
    ub = np.concatenate([-uhalf[::-1], uhalf[1:]])
    u_fine, uw = _gl_panels(ub, _PANEL_ORDER)

    K = kernel_tau(x_fine * beta, u_fine / beta, beta)
    Kw = np.sqrt(xw)[:, None] * K * np.sqrt(uw)[None, :]
    sing = scipy.linalg.svdvals(Kw)
    r = int(np.sum(sing > eps * sing[0]))
    if r < 1 or r >= min(K.shape) // 2:
        raise BasisError(f"pivoting stagnated: eps-rank {r} of {K.shape}")
    _, _, piv = scipy.linalg.qr(Kw, mode="economic", pivoting=True)
    freqs = np.sort(u_fine[piv[:r]]) / beta

    cols = kernel_tau(x_fine * beta, freqs, beta)
    Q, _ = np.linalg.qr(np.sqrt(xw)[:, None] * cols)
    _, _, rowpiv = scipy.linalg.qr(Q.T, mode="economic", pivoting=True)
    tau_nodes = np.sort(x_fine[rowpiv[:r]]) * beta

    basis = _derived(beta, lam, eps, freqs, tau_nodes, x_fine, xw)

    coeff_all = scipy.linalg.lu_solve(basis.node_lu, kernel_tau(tau_nodes, u_fine / beta, beta))
    resid = float(np.max(np.abs(cols @ coeff_all - K)))
    if resid > 10 * eps:
        raise BasisError(f"certification failed: residual {resid:.3e} > 10*eps")
    return basis


def fit(basis: DlrBasis, node_values) -> ImTimeFn:
    """Expansion through the r node samples."""
    v = np.asarray(node_values, dtype=np.complex128)
    if v.shape != basis.tau_nodes.shape:
        raise ValueError(f"expected {basis.rank} node values")
    return ImTimeFn(basis, basis.fit_values(v))


def evaluate(fn: ImTimeFn, tau):
    """Evaluate anywhere on [0, beta]."""
    tau_arr = np.atleast_1d(np.asarray(tau, dtype=float))
    b = fn.basis
    if np.any(tau_arr < -1e-12 * b.beta) or np.any(tau_arr > b.beta * (1 + 1e-12)):
        raise ValueError("tau outside [0, beta]; use reflect for the extension")
    out = kernel_tau(np.clip(tau_arr, 0.0, b.beta), b.freqs, b.beta) @ fn.coeffs
    return out if np.ndim(tau) else out[0]


def node_values(fn: ImTimeFn) -> np.ndarray:
    return kernel_tau(fn.basis.tau_nodes, fn.basis.freqs, fn.basis.beta) @ fn.coeffs


def reflect(fn: ImTimeFn) -> ImTimeFn:
    """Expansion of tau -> G(beta - tau)."""
    return fit(fn.basis, fn.basis.reflect_matrix @ node_values(fn))


def _antiperiodic_eval(fn: ImTimeFn, arg: np.ndarray) -> np.ndarray:
    """G extended to (-beta, beta] by G(x) = -G(beta + x) for x < 0."""
    b = fn.basis
    neg = arg < 0
    shifted = np.where(neg, arg + b.beta, arg)
    vals = evaluate(fn, shifted)
    return np.where(neg, -vals, vals)


def conv_matrix(gm: ImTimeFn) -> np.ndarray:
    """r x r matrix M with (M sigma)_j ~ int_0^beta Sigma(t') G(t'-tau_j) dt'.

    Built row by row against the basis functions with composite panel
    quadrature split at tau_j, where the antiperiodic extension of G
    jumps; the result acts directly on node samples of Sigma.
    """
    b = gm.basis
    beta = b.beta
    levels = int(np.ceil(np.log2(b.lam))) + 4
    rows = np.empty((b.rank, b.rank), dtype=np.complex128)
    for j, tj in enumerate(b.tau_nodes):
        pieces = []
        if tj > 0:
            pieces.append(_gl_panels(_refined_breaks(0.0, tj, levels), _PANEL_ORDER))
        if tj < beta:
            pieces.append(_gl_panels(_refined_breaks(tj, beta, levels), _PANEL_ORDER))
        pts = np.concatenate([p for p, _ in pieces])
        wts = np.concatenate([w for _, w in pieces])
        g = _antiperiodic_eval(gm, pts - tj)
        rows[j] = (wts * g) @ kernel_tau(pts, b.freqs, beta)
    return scipy.linalg.lu_solve(gm.basis.node_lu, rows.T, trans=1).T


def matsubara_nodes(basis: DlrBasis) -> np.ndarray:
    """Fermionic Matsubara indices selected by pivoting the pole kernel."""
    nmax = max(256, int(2 * basis.lam))
    dense = np.unique(np.concatenate([
        np.arange(0, 65),
        np.unique(np.geomspace(65, nmax, 160).astype(int)),
    ]))
    dense = np.concatenate([-dense[::-1] - 1, dense])  # n and -n-1: symmetric nu
    nu = (2 * dense + 1) * np.pi / basis.beta
    F = kernel_matsubara(nu, basis.freqs)
    _, _, piv = scipy.linalg.qr(F.T, mode="economic", pivoting=True)
    return np.sort(dense[piv[: basis.rank]])


def solve_matsubara(h: float, sigma_eval, basis: DlrBasis, mix: float = 0.3,
                    tol: float = 1e-13, max_iter: int = 500) -> ImTimeFn:
    """Self-consistent imaginary-time propagator for dispersion h.

    sigma_eval maps node samples of G to node samples of Sigma.  Each
    sweep transforms Sigma to the selected Matsubara frequencies through
    the pole form of the basis, applies G(i nu) = 1/(i nu - h - Sigma),
    and fits back to the nodes; iterates are mixed with weight `mix`.
    """
    if not 0 < mix <= 1:
        raise ValueError("mix must be in (0, 1]")
    beta = basis.beta
    nidx = matsubara_nodes(basis)
    nu = (2 * nidx + 1) * np.pi / beta
    Kfreq = kernel_matsubara(nu, basis.freqs)  # coeffs -> G(i nu)
    Ktau = kernel_tau(basis.tau_nodes, basis.freqs, beta)
    lu = scipy.linalg.lu_factor(Kfreq)

    g = -kernel_tau(basis.tau_nodes, np.array([h]), beta)[:, 0].astype(np.complex128)
    history: list[float] = []
    for _ in range(max_iter):
        sig = np.asarray(sigma_eval(g), dtype=np.complex128)
        sig_nu = Kfreq @ basis.fit_values(sig)
        g_nu = 1.0 / (1j * nu - h - sig_nu)
        g_new = Ktau @ scipy.linalg.lu_solve(lu, g_nu)
        delta = float(np.max(np.abs(g_new - g)))
        history.append(delta)
        g = (1 - mix) * g + mix * g_new
        if delta < tol:
            return fit(basis, g)
    raise IterationError(
        f"no self-consistency after {max_iter} sweeps (last delta {history[-1]:.3e})",
        history,
    )


def matsubara_residual(gm: ImTimeFn, sigma: ImTimeFn, h: float, ntest: int = 200) -> float:
    """Max residual of (-d/dtau - h) G - Sigma * G = 0 on a dense tau grid.

    The convolution uses the antiperiodic extension of Sigma and panel
    quadrature split at the kink.  Endpoints are excluded (the equation
    holds in the interior; the boundary condition is checked separately).
    """
    b = gm.basis
    beta = b.beta
    levels = int(np.ceil(np.log2(b.lam))) + 4
    taus = (np.arange(1, ntest + 1) / (ntest + 1)) * beta
    worst = 0.0
    for tau in taus:
        dG = kernel_tau(np.array([tau]), b.freqs, beta)[0] @ (-b.freqs * gm.coeffs)
        G = evaluate(gm, tau)
        pts1, w1 = _gl_panels(_refined_breaks(0.0, tau, levels), _PANEL_ORDER)
        pts2, w2 = _gl_panels(_refined_breaks(tau, beta, levels), _PANEL_ORDER)
        pts = np.concatenate([pts1, pts2])
        wts = np.concatenate([w1, w2])
        conv = np.sum(wts * _antiperiodic_eval(sigma, tau - pts) * evaluate(gm, pts))
        worst = max(worst, abs(-dG - h * G - conv))
    return worst


def boundary_identity(gm: ImTimeFn) -> complex:
    """G(0) + G(beta); equals -1 for a converged fermionic propagator."""
    return evaluate(gm, 0.0) + evaluate(gm, gm.basis.beta)


def dump_basis(basis: DlrBasis, path) -> None:
    """Plain-text serialization (beta, lambda, eps, freqs, nodes, fit matrix)."""
    with open(path, "w") as f:
        f.write(f"# dlr-basis r={basis.rank}\n")
        f.write(f"{basis.beta:.17e} {basis.lam:.17e} {basis.eps:.17e}\n")
        for name, arr in (("freqs", basis.freqs), ("tau_nodes", basis.tau_nodes)):
            f.write(name + " " + " ".join(f"{v:.17e}" for v in arr) + "\n")
        f.write("fit_matrix\n")
        for row in basis.fit_matrix:
            f.write(" ".join(f"{v:.17e}" for v in row) + "\n")


def load_basis(path) -> DlrBasis:
    """Rebuild a basis from dump_basis output.

    Frequencies and nodes determine everything; derived operators are
    recomputed from them rather than trusting the serialized inverse.
    """
    with open(path) as f:
        f.readline()
        beta, lam, eps = map(float, f.readline().split())
        freqs = np.array([float(v) for v in f.readline().split()[1:]])
        tau_nodes = np.array([float(v) for v in f.readline().split()[1:]])
    levels = int(np.ceil(np.log2(lam))) + 4
    x_fine, xw = _gl_panels(_geometric_breaks(levels), _PANEL_ORDER)
    return _derived(beta, lam, eps, freqs, tau_nodes, x_fine, xw)
