"""On-the-fly accumulation of history sums s_n = sum_{m=0}^n k_{n-m} y_m.

A `HistoryEngine` ingests one (y_n, k_n) pair per time step for a batch
of d independent convolutions sharing a single `BlockPlan`, and keeps
partial sums such that finalizing step n yields the exact s_n.  Block
contributions are applied by FFT as soon as their trigger row is
finalized; the remaining per-row tails are summed directly inside one
compiled kernel per step, which also precomputes the middle sum of the
upcoming row (everything except the two endpoint products), the quantity
an implicit time stepper needs while iterating on the new point.

For the kernel-nonlinear plan variant the engine never reads y or k at
indices above the cursor; with debug=True unwritten entries are poisoned
with NaN and block reads are checked, so a forward read fails loudly
instead of corrupting results.  Fixed-kernel (hls) plans reference
kernel lags beyond the cursor by design, so those engines take the full
kernel up front.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from . import fftconv
from .blockplan import (
    HLS,
    KERNEL_NONLINEAR,
    BlockDescriptor,
    BlockPlan,
    segment_triggers,
)
from .fftconv import LOWER_TRIANGULAR, PARALLELOGRAM, SQUARE, UPPER_TRIANGULAR

# blocks with fewer output*band elements than this are applied by a
# compiled dense loop instead of FFT (single-component engines only)
_DENSE_BLOCK_CUTOFF = 32768


class EngineStateError(RuntimeError):
    """push/finalize called out of order."""


def direct_sums(k: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Exact O(N^2) reference: s_n = sum_{m=0}^n k_{n-m} y_m.

    Implemented with a direct (non-FFT) convolution so it stays an
    independent oracle for the fast path.
    """
    k = np.asarray(k, dtype=np.complex128)
    y = np.asarray(y, dtype=np.complex128)
    if k.shape != y.shape:
        raise ValueError("k and y must have equal shape")
    n = k.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.complex128)
    if k.ndim == 1:
        return np.convolve(k, y)[:n]
    out = np.empty_like(k)
    for c in range(k.shape[1]):
        out[:, c] = np.convolve(k[:, c], y[:, c])[:n]
    return out


@njit(cache=True)
def _nb_advance(k, y, s, tails, out, y_n, k_n, seg, r, flags):
    """Record step r, complete its row, precompute the next middle sum.

    tails holds, on entry, the middle tail sums of row r (maintained by
    the previous call; zeros for r = 0); on exit it holds those of row
    r+1.  out[0] receives s_r and out[1] the middle sum of row r+1.
    Flags as in _nb_advance1.
    """
    N = k.shape[0]
    d = k.shape[1]
    t_r = seg[r]
    t_next = seg[r + 1]
    store_k = flags & 1 != 0
    two_sided = flags & 2 != 0
    fixed_kernel = flags & 4 != 0
    for c in range(d):
        y[r, c] = y_n[c]
        if store_k:
            k[r, c] = k_n[c]
    if r == 0:
        for c in range(d):
            s[0, c] += k[0, c] * y[0, c]
    else:
        for c in range(d):
            v = tails[c] + k[0, c] * y[r, c]
            if t_r < 0 or two_sided:
                v += k[r, c] * y[0, c]
            s[r, c] += v
    for c in range(d):
        out[0, c] = s[r, c]
        tails[c] = 0
        out[1, c] = 0

    rn = r + 1
    if rn < N:
        if t_next < 0:
            for m in range(1, rn):
                for c in range(d):
                    tails[c] += k[rn - m, c] * y[m, c]
        else:
            if two_sided:
                for m in range(1, rn - t_next):
                    for c in range(d):
                        tails[c] += k[rn - m, c] * y[m, c]
            for m in range(t_next + 1, rn):
                for c in range(d):
                    tails[c] += k[rn - m, c] * y[m, c]
        for c in range(d):
            out[1, c] = s[rn, c] + tails[c]
        if t_next >= 0 and fixed_kernel:
            # fixed-kernel blocks already include column 0 (lag r+1)
            for c in range(d):
                out[1, c] -= k[rn, c] * y[0, c]


@njit(cache=True)
def _nb_advance1(k, y, s, buf, y_val, k_val, seg, r, flags):
    """Single-component advance on flat views; buf = (tails, s_r, mid).

    flags bits: 1 = kernel stored per step, 2 = two-sided local tails,
    4 = fixed kernel (column 0 handled by blocks).  seg carries the
    per-row triggers with one sentinel entry appended.
    """
    N = k.shape[0]
    t_r = seg[r]
    t_next = seg[r + 1]
    two_sided = flags & 2 != 0
    fixed_kernel = flags & 4 != 0
    y[r] = y_val
    if flags & 1:
        k[r] = k_val
    if r == 0:
        s[0] += k[0] * y[0]
    else:
        v = buf[0] + k[0] * y[r]
        if t_r < 0 or two_sided:
            v += k[r] * y[0]
        s[r] += v
    buf[1] = s[r]
    tails = 0.0 + 0.0j
    mid = 0.0 + 0.0j
    rn = r + 1
    if rn < N:
        if t_next < 0:
            for m in range(1, rn):
                tails += k[rn - m] * y[m]
        else:
            if two_sided:
                for m in range(1, rn - t_next):
                    tails += k[rn - m] * y[m]
            for m in range(t_next + 1, rn):
                tails += k[rn - m] * y[m]
        mid = s[rn] + tails
        if t_next >= 0 and fixed_kernel:
            mid -= k[rn] * y[0]
    buf[0] = tails
    buf[2] = mid


@njit(cache=True)
def _nb_dense_block(k, y, s, row_first, nrows, col_first, ncols, lag_lo, lag_hi):
    """Dense application of one diagonal-banded block (single component).

    Adds sum over columns of k[row-col] * y[col] to s[row] for every
    (row, col) inside the block whose lag lies in [lag_lo, lag_hi].
    """
    for i in range(nrows):
        row = row_first + i
        acc = 0.0 + 0.0j
        jlo = max(col_first, row - lag_hi)
        jhi = min(col_first + ncols - 1, row - lag_lo)
        for col in range(jlo, jhi + 1):
            acc += k[row - col, 0] * y[col, 0]
        s[row, 0] += acc


class HistoryEngine:
    """Streaming history-sum accumulator for d components on one plan."""

    def __init__(self, plan: BlockPlan, d: int, kernel: np.ndarray | None = None,
                 debug: bool = False):
        if d < 1:
            raise ValueError("need at least one component")
        self.plan = plan
        self.d = d
        self.debug = debug
        N = plan.N
        fill = complex("nan") * (1 + 1j)
        self.y_hist = np.full((N, d), fill, dtype=np.complex128)
        if plan.variant == HLS:
            if kernel is None:
                raise ValueError("fixed-kernel plans need the full kernel up front")
            kernel = np.asarray(kernel, dtype=np.complex128)
            if kernel.ndim == 1:
                kernel = kernel[:, None]
            if kernel.shape != (N, d):
                raise ValueError(f"kernel must have shape ({N}, {d})")
            self.k_hist = kernel.copy()
        else:
            if kernel is not None:
                raise ValueError("kernel-nonlinear engines take k step by step")
            self.k_hist = np.full((N, d), fill, dtype=np.complex128)
        self.s_partial = np.zeros((N, d), dtype=np.complex128)
        self.cursor = 0
        self._pending: tuple | None = None
        self._tails = np.zeros(d, dtype=np.complex128)
        self._out = np.zeros((2, d), dtype=np.complex128)  # (s_r, mid_{r+1})
        if d == 1:  # flat views and a scalar kernel dodge batch overhead
            self._k1 = self.k_hist[:, 0]
            self._y1 = self.y_hist[:, 0]
            self._s1 = self.s_partial[:, 0]
            self._buf3 = np.zeros(3, dtype=np.complex128)  # tails, s_r, mid
        seg = segment_triggers(plan)
        self._seg = np.concatenate([seg, [0]])  # +sentinel for the last mid
        self._two_sided = plan.variant == KERNEL_NONLINEAR
        self._fixed_kernel = plan.variant == HLS
        self._flags = ((0 if self._fixed_kernel else 1)
                       | (2 if self._two_sided else 0)
                       | (4 if self._fixed_kernel else 0))
        self._by_trigger: list[list[BlockDescriptor] | None] = [None] * N
        for b in plan.blocks:
            if self._by_trigger[b.trigger_row] is None:
                self._by_trigger[b.trigger_row] = []
            self._by_trigger[b.trigger_row].append(b)

    # -- streaming API ---------------------------------------------------

    def push_step(self, y_n, k_n) -> None:
        """Record the values for the current time step (exactly once)."""
        if self._pending is not None:
            raise EngineStateError(f"step {self.cursor} already pushed")
        if self.cursor >= self.plan.N:
            raise EngineStateError("engine is complete")
        self._pending = (y_n, k_n)

    def next_row_mid(self) -> np.ndarray:
        """sum_{m=1}^{r-1} k_{r-m} y_m for the upcoming row r = cursor.

        Available before push_step: it involves neither y_r nor k_r, and
        every block contributing to row r has already fired; the value
        was precomputed when row r-1 was finalized.  The returned view is
        valid until the next advance.
        """
        if self._pending is not None:
            raise EngineStateError("next_row_mid must be called before push_step")
        return self._buf3[2:3] if self.d == 1 else self._out[1]

    def finalize_step(self) -> np.ndarray:
        """Complete row `cursor`: fire its blocks, add local tails, return s."""
        if self._pending is None:
            raise EngineStateError(f"step {self.cursor} not pushed yet")
        y_n, k_n = self._pending
        self._pending = None
        self.advance(y_n, k_n)
        return (self._buf3[1:2] if self.d == 1 else self._out[0]).copy()

    def advance(self, y_n, k_n) -> None:
        """Fused step: record the values and complete row `cursor`.

        Results land in per-engine buffers: the completed s_r and the
        middle sum of the next row (see next_row_mid).
        """
        r = self.cursor
        if r >= self.plan.N:
            raise EngineStateError("engine is complete")
        if self.d == 1:
            yv = y_n if type(y_n) is complex else complex(np.asarray(y_n).reshape(1)[0])
            if self._fixed_kernel:
                kv = self._k1[r]
            elif type(k_n) is complex:
                kv = k_n
            else:
                kv = complex(np.asarray(k_n).reshape(1)[0])
            blocks = self._by_trigger[r]
            if blocks is not None:
                # block symbols may include this row's values: store first
                self._y1[r] = yv
                if not self._fixed_kernel:
                    self._k1[r] = kv
                for b in blocks:
                    self._apply_block(b)
            _nb_advance1(self._k1, self._y1, self._s1, self._buf3, yv, kv,
                         self._seg, r, self._flags)
            self.cursor = r + 1
            return

        y_n = np.asarray(y_n, dtype=np.complex128)
        if y_n.shape != (self.d,):
            y_n = np.reshape(y_n, (self.d,))
        if self._fixed_kernel:
            k_n = self.k_hist[r]
        else:
            k_n = np.asarray(k_n, dtype=np.complex128)
            if k_n.shape != (self.d,):
                k_n = np.reshape(k_n, (self.d,))
        blocks = self._by_trigger[r]
        if blocks is not None:
            # block symbols may include this row's values: store first
            self.y_hist[r] = y_n
            if not self._fixed_kernel:
                self.k_hist[r] = k_n
            for b in blocks:
                self._apply_block(b)
        _nb_advance(self.k_hist, self.y_hist, self.s_partial, self._tails,
                    self._out, y_n, k_n, self._seg, r, self._flags)
        self.cursor = r + 1

    # -- internals ---------------------------------------------------------

    def _symbol(self, b: BlockDescriptor) -> np.ndarray:
        """Kernel slice for the block's diagonals, in increasing-lag order.

        Diagonals outside the shape mask are zero-filled without touching
        k_hist, so no unavailable lag is ever read.
        """
        k = self.k_hist
        lag_lo, lag_hi = b.lag_range()
        vals = k[lag_lo : lag_hi + 1]
        if self.debug and not np.all(np.isfinite(vals)):
            raise AssertionError(
                f"block at trigger {b.trigger_row} read unwritten kernel lags"
            )
        if b.shape in (SQUARE, PARALLELOGRAM):
            return vals
        sym = np.zeros((b.nrows + b.ncols - 1, self.d), dtype=np.complex128)
        full_lo = b.row_first - b.col_last
        sym[lag_lo - full_lo : lag_hi + 1 - full_lo] = vals
        return sym

    def _apply_block(self, b: BlockDescriptor) -> None:
        lag_lo, lag_hi = b.lag_range()
        if self.d == 1 and b.nrows * (lag_hi - lag_lo + 2) <= _DENSE_BLOCK_CUTOFF:
            if self.debug:
                self._debug_check(b)
            _nb_dense_block(self.k_hist, self.y_hist, self.s_partial,
                            b.row_first, b.nrows, b.col_first, b.ncols,
                            lag_lo, lag_hi)
            return
        x = self.y_hist[b.col_first : b.col_last + 1]
        if self.debug and not np.all(np.isfinite(x)):
            raise AssertionError(
                f"block at trigger {b.trigger_row} read unwritten solution values"
            )
        sym = self._symbol(b)
        if self.d == 1:  # 1-D transforms dodge batch overhead
            sym, x = sym[:, 0], x[:, 0]
        if b.shape == PARALLELOGRAM:
            out = fftconv._apply_band(sym, b.nrows, b.ncols, x)
        else:
            out = fftconv._apply_full_symbol(sym, b.nrows, b.ncols, x)
        if self.d == 1:
            self.s_partial[b.row_first : b.row_last + 1, 0] += out
        else:
            self.s_partial[b.row_first : b.row_last + 1] += out

    def _debug_check(self, b: BlockDescriptor) -> None:
        lag_lo, lag_hi = b.lag_range()
        if not np.all(np.isfinite(self.k_hist[lag_lo : lag_hi + 1])):
            raise AssertionError(
                f"block at trigger {b.trigger_row} read unwritten kernel lags"
            )
        if not np.all(np.isfinite(self.y_hist[b.col_first : b.col_last + 1])):
            raise AssertionError(
                f"block at trigger {b.trigger_row} read unwritten solution values"
            )
