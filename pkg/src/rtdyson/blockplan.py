"""Hierarchical block partitions of the lower-triangular kernel matrix.

The running sums s_n = sum_{m<=n} k_{n-m} y_m form a lower-triangular
Toeplitz matrix-vector product.  Computing them on the fly during time
stepping is made quasilinear by tiling the triangle with Toeplitz blocks
applied by FFT as soon as their inputs exist, leaving only O(1) direct
work per row.

Two tilings are provided:

``hls``
    The classic fixed-kernel scheme: dyadic square blocks below the
    diagonal, each applied once the solution values spanning its columns
    are known.  Kernel values are assumed known in advance.

``kernel_nonlinear``
    The tiling for kernels computed on the fly from the solution.  A
    block fired at step t may only reference kernel lags <= t, which
    rules out the wide column-zero squares of the fixed-kernel scheme.
    Each of those squares splits into (a) its upper-triangular part,
    whose lags are all <= t, and (b) the remaining strictly-lower part.
    Rewritten in (row, lag) coordinates the strictly-lower part is again
    a dyadic triangle over the same boundary grid, so the same recursion
    tiles it; its "squares" shear back into parallelogram bands in
    (row, column) coordinates.  Everything stays O(N log^2 N).

Block triggers are chosen one row early: a block fired at boundary b
covers rows [b+1, ...].  This way the partial sum of the *next* row is
complete (apart from the per-row local tails) before the new solution
and kernel values exist, which is what an implicit multistep method
needs.  Causality margins were checked against the ceiling-based
boundary grid: every emitted block satisfies max-lag <= trigger with
room to spare, and `validate_plan` re-checks entry by entry.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .fftconv import LOWER_TRIANGULAR, PARALLELOGRAM, SQUARE, UPPER_TRIANGULAR

HLS = "hls"
KERNEL_NONLINEAR = "kernel_nonlinear"
VARIANTS = (HLS, KERNEL_NONLINEAR)


class PlanError(ValueError):
    """Invalid plan construction parameters."""


@dataclass(frozen=True)
class BlockDescriptor:
    """One Toeplitz block of a plan, in global time-step indices.

    Row/column ranges are inclusive.  ``trigger_row`` is the time step at
    whose finalize the block is applied; all kernel lags and column
    indices the block references are <= trigger_row for the
    kernel-nonlinear variant.  Blocks sharing ``group_id`` fire together.
    """

    row_first: int
    row_last: int
    col_first: int
    col_last: int
    shape: str
    trigger_row: int
    group_id: int

    @property
    def nrows(self) -> int:
        return self.row_last - self.row_first + 1

    @property
    def ncols(self) -> int:
        return self.col_last - self.col_first + 1

    @property
    def bandwidth(self) -> int:
        return self.ncols - self.nrows + 1

    def lag_range(self) -> tuple[int, int]:
        """Inclusive range of kernel lags the block actually references."""
        if self.shape == SQUARE:
            return self.row_first - self.col_last, self.row_last - self.col_first
        if self.shape == UPPER_TRIANGULAR:
            return self.row_first - self.col_last, self.row_first - self.col_first
        if self.shape == LOWER_TRIANGULAR:
            return self.row_first - self.col_first, self.row_last - self.col_first
        lag_max = self.row_first - self.col_first
        return lag_max - self.bandwidth + 1, lag_max


@dataclass(frozen=True)
class BlockPlan:
    """Immutable tiling of the N x N lower triangle.

    ``boundaries`` is the dyadic grid n_j = ceil(j N / 2^L) for
    j = 1..2^L-1 plus the closing entry N-1.  A degenerate plan (no
    boundaries, no blocks) means pure direct summation.
    """

    N: int
    L: int
    boundaries: tuple[int, ...]
    blocks: tuple[BlockDescriptor, ...]
    variant: str


@dataclass(frozen=True)
class PlanReport:
    coverage_ok: bool
    causality_ok: bool
    order_ok: bool
    messages: tuple[str, ...] = ()

    def ok(self) -> bool:
        return self.coverage_ok and self.causality_ok and self.order_ok


def boundary_grid(N: int, L: int) -> list[int]:
    """[n_1 .. n_{2^L}] with n_j = ceil(jN/2^L) and n_{2^L} = N - 1."""
    m = 1 << L
    bs = [-(-j * N // m) for j in range(1, m)]
    bs.append(N - 1)
    return bs


def choose_levels(N: int, base_size: int) -> int:
    """Largest L with ceil(N/2^L) >= base_size, clamped to [1, floor(log2 N)].

    The clamp keeps degenerate inputs (N barely above base_size) on the
    single-level plan rather than an empty hierarchy.
    """
    if N < 2 or base_size < 1:
        raise PlanError("need N >= 2 and base_size >= 1")
    L = 0
    while (1 << (L + 1)) <= N and -(-N // (1 << (L + 1))) >= base_size:
        L += 1
    return max(1, min(L, int(math.log2(N))))


def build_plan(N: int, L: int, variant: str) -> BlockPlan:
    """Construct the block tiling for N time steps with 2^L base segments."""
    if variant not in VARIANTS:
        raise PlanError(f"unknown variant {variant!r}")
    if N < 2:
        raise PlanError("need N >= 2")
    if not 1 <= L <= int(math.log2(N)):
        raise PlanError(f"need 1 <= L <= floor(log2 N) = {int(math.log2(N))}, got L={L}")

    bs = boundary_grid(N, L)

    def B(j: int) -> int:
        return 0 if j == 0 else bs[j - 1]

    blocks: list[BlockDescriptor] = []

    def emit_sheared(unit_base: int, rel: list[int], s_lo: int, s_hi: int, lag_lo: int) -> None:
        # Tiles {(row, lag): unit_base < lag <= trigger(row)} of one
        # column-zero unit with parallelograms; `rel` are boundary
        # offsets relative to unit_base, rel[0] = 0.
        if s_hi - s_lo <= 1:
            return
        smid = (s_lo + s_hi) // 2
        bmid, bhi = rel[smid], rel[s_hi]
        nrows = bhi - bmid
        bw = bmid - lag_lo + 1
        if nrows >= 1 and bw >= 1:
            row_first = unit_base + bmid + 1
            blocks.append(
                BlockDescriptor(
                    row_first=row_first,
                    row_last=unit_base + bhi,
                    col_first=1,
                    col_last=bhi - lag_lo,
                    shape=PARALLELOGRAM,
                    trigger_row=unit_base + bmid,
                    group_id=0,  # assigned after sorting
                )
            )
        emit_sheared(unit_base, rel, s_lo, smid, lag_lo)
        emit_sheared(unit_base, rel, smid, s_hi, bmid + 1)

    def emit(j_lo: int, j_hi: int, col_lo: int) -> None:
        if j_hi - j_lo <= 1:
            return
        mid = (j_lo + j_hi) // 2
        t = B(mid)
        row_first, row_last = t + 1, B(j_hi)
        if row_first <= row_last:
            if variant == HLS or col_lo > 0:
                blocks.append(
                    BlockDescriptor(row_first, row_last, col_lo, t, SQUARE, t, 0)
                )
            else:
                # column-zero unit: causal upper-triangular part ...
                blocks.append(
                    BlockDescriptor(row_first, row_last, 1, t, UPPER_TRIANGULAR, t, 0)
                )
                # ... plus the lag-sheared tiling of the rest.
                rel = [B(mid + s) - t for s in range(0, j_hi - mid + 1)]
                emit_sheared(t, rel, 0, j_hi - mid, 1)
        emit(j_lo, mid, col_lo)
        emit(mid, j_hi, t + 1)

    emit(0, 1 << L, 0)

    blocks.sort(key=lambda b: (b.trigger_row, b.shape != SQUARE, b.row_first))
    trigger_ord = {t: i for i, t in enumerate(sorted({b.trigger_row for b in blocks}))}
    blocks = [replace(b, group_id=trigger_ord[b.trigger_row]) for b in blocks]
    return BlockPlan(N=N, L=L, boundaries=tuple(bs), blocks=tuple(blocks), variant=variant)


def plan_for(N: int, base_size: int, variant: str) -> BlockPlan:
    """build_plan with an automatic level count.

    For N < 2*base_size there is nothing worth blocking: the returned
    degenerate plan has no boundaries and an engine built on it falls
    back to pure direct summation.
    """
    if N < 2 * base_size or N < 4:
        return BlockPlan(N=N, L=0, boundaries=(), blocks=(), variant=variant)
    return build_plan(N, choose_levels(N, base_size), variant)


def segment_triggers(plan: BlockPlan) -> np.ndarray:
    """Per-row trigger: largest boundary <= row-1, or -1 if none.

    Rows with trigger -1 (the leading segment, or every row of a
    degenerate plan) are summed fully directly.
    """
    trig = np.full(plan.N, -1, dtype=np.int64)
    if not plan.boundaries:
        return trig
    bs = np.asarray(plan.boundaries)
    rows = np.arange(plan.N)
    idx = np.searchsorted(bs, rows - 1, side="right") - 1
    have = idx >= 0
    trig[have] = bs[idx[have]]
    return trig


def local_column_ranges(plan: BlockPlan, row: int, trig: int) -> list[tuple[int, int]]:
    """Inclusive column ranges summed directly at `row` (may be empty)."""
    if trig < 0:
        return [(0, row)]
    if plan.variant == HLS:
        return [(trig + 1, row)]
    return [(0, row - trig - 1), (trig + 1, row)]


def _block_mask(b: BlockDescriptor) -> np.ndarray:
    i = np.arange(b.nrows)[:, None]
    j = np.arange(b.ncols)[None, :]
    o = j - i
    if b.shape == SQUARE:
        return np.ones((b.nrows, b.ncols), dtype=bool)
    if b.shape == LOWER_TRIANGULAR:
        return o <= 0
    if b.shape == UPPER_TRIANGULAR:
        return o >= 0
    return (o >= 0) & (o <= b.bandwidth - 1)


def validate_plan(plan: BlockPlan, rules: str | None = None) -> PlanReport:
    """Entry-level self check of coverage, causality and ordering.

    ``rules`` selects which causality notion applies (defaults to the
    plan's own variant): under kernel-nonlinear rules every referenced
    kernel lag must be <= the block trigger; under fixed-kernel rules
    only the solution columns must be available.
    """
    if plan.N > 4096:
        raise PlanError("validate_plan densifies; use N <= 4096")
    rules = rules or plan.variant
    msgs: list[str] = []

    count = np.zeros((plan.N, plan.N), dtype=np.int16)
    for b in plan.blocks:
        count[b.row_first : b.row_last + 1, b.col_first : b.col_last + 1] += _block_mask(b)
    trig = segment_triggers(plan)
    for r in range(plan.N):
        for a, z in local_column_ranges(plan, r, int(trig[r])):
            if a <= z:
                count[r, a : z + 1] += 1

    lower = np.tril(np.ones_like(count, dtype=bool))
    coverage_ok = bool(np.all(count[lower] == 1) and np.all(count[~lower] == 0))
    if not coverage_ok:
        bad = np.argwhere((count != 1) & lower) if np.all(count[~lower] == 0) else np.argwhere(count[~lower])
        msgs.append(f"coverage violated at {len(bad)} entries, first {bad[:3].tolist()}")

    causality_ok = True
    for b in plan.blocks:
        lag_lo, lag_hi = b.lag_range()
        if lag_lo < 0:
            causality_ok = False
            msgs.append(f"negative lag in {b}")
        if b.col_last > b.trigger_row:
            causality_ok = False
            msgs.append(f"block reads columns past its trigger: {b}")
        if rules == KERNEL_NONLINEAR and lag_hi > b.trigger_row:
            causality_ok = False
            msgs.append(f"block reads kernel lag {lag_hi} > trigger {b.trigger_row}: {b}")

    order_ok = True
    prev = -1
    per_group: dict[int, int] = {}
    for b in plan.blocks:
        if b.trigger_row < prev:
            order_ok = False
            msgs.append("blocks not ordered by trigger")
        prev = b.trigger_row
        if b.trigger_row > b.row_first:
            order_ok = False
            msgs.append(f"trigger after first output row: {b}")
        per_group[b.group_id] = per_group.get(b.group_id, 0) + 1
    limit = 1 if plan.variant == HLS else 2
    if any(n > limit for n in per_group.values()):
        order_ok = False
        msgs.append(f"more than {limit} blocks share a trigger")

    return PlanReport(coverage_ok, causality_ok, order_ok, tuple(msgs))


def block_work_estimate(plan: BlockPlan) -> float:
    """sum over blocks of (rows+cols) * log2(rows+cols), an FFT work proxy."""
    tot = 0.0
    for b in plan.blocks:
        n = b.nrows + b.ncols
        tot += n * math.log2(n)
    return tot


def dump_plan(plan: BlockPlan, path) -> None:
    """Write the plan as text: one block per line.

    Format: a header with N, L, variant and the boundary list, then
    ``row_first row_last col_first col_last shape trigger group`` per
    block.
    """
    with open(path, "w") as f:
        f.write(f"# blockplan N={plan.N} L={plan.L} variant={plan.variant}\n")
        f.write("# boundaries " + " ".join(map(str, plan.boundaries)) + "\n")
        f.write("# row_first row_last col_first col_last shape trigger group\n")
        for b in plan.blocks:
            f.write(
                f"{b.row_first} {b.row_last} {b.col_first} {b.col_last} "
                f"{b.shape} {b.trigger_row} {b.group_id}\n"
            )
