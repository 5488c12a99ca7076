import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rtdyson import blockplan as bp


class TestBoundaries:
    def test_example_grid(self):
        plan = bp.build_plan(8, 2, bp.HLS)
        assert plan.boundaries == (2, 4, 6, 7)

    def test_grid_formula(self):
        for N in (9, 64, 129, 1000):
            L = 3
            plan = bp.build_plan(N, L, bp.HLS)
            want = [math.ceil(j * N / 2**L) for j in range(1, 2**L)] + [N - 1]
            assert list(plan.boundaries) == want


class TestChooseLevels:
    def test_examples(self):
        assert bp.choose_levels(1024, 32) == 5
        assert bp.choose_levels(2**20, 64) == 14
        assert bp.choose_levels(8, 8) == 1  # degenerate, clamped up

    def test_clamped_to_log2(self):
        assert bp.choose_levels(16, 1) == 4


class TestBuildPlan:
    @pytest.mark.parametrize("variant", bp.VARIANTS)
    def test_coverage_small_grid(self, variant):
        plan = bp.build_plan(8, 2, variant)
        assert bp.validate_plan(plan).ok()

    def test_kernel_nonlinear_causality_entrywise(self):
        plan = bp.build_plan(8, 2, bp.KERNEL_NONLINEAR)
        for b in plan.blocks:
            mask = bp._block_mask(b)
            rows, cols = np.nonzero(mask)
            lags = (rows + b.row_first) - (cols + b.col_first)
            assert lags.max() <= b.trigger_row
            assert (cols + b.col_first).max() <= b.trigger_row

    def test_single_level_degenerate(self):
        plan = bp.build_plan(16, 1, bp.KERNEL_NONLINEAR)
        assert bp.validate_plan(plan).ok()
        # one square-type unit (its causal triangle) plus local regions
        assert len(plan.blocks) == 1

    @pytest.mark.parametrize("variant", bp.VARIANTS)
    @pytest.mark.parametrize("N", [2, 3, 5, 7, 8, 64, 129, 255, 1000])
    def test_coverage_many_sizes(self, N, variant):
        for L in range(1, int(math.log2(N)) + 1):
            report = bp.validate_plan(bp.build_plan(N, L, variant))
            assert report.ok(), (N, L, variant, report.messages)

    def test_parameter_errors(self):
        with pytest.raises(bp.PlanError):
            bp.build_plan(8, 4, bp.HLS)  # L too large
        with pytest.raises(bp.PlanError):
            bp.build_plan(1, 1, bp.HLS)
        with pytest.raises(bp.PlanError):
            bp.build_plan(8, 2, "nope")

    def test_trigger_counts_per_boundary(self):
        # fixed-kernel: one block per interior boundary; kernel-nonlinear:
        # at most two, sharing a group id
        for variant, limit in ((bp.HLS, 1), (bp.KERNEL_NONLINEAR, 2)):
            plan = bp.build_plan(256, 4, variant)
            per = {}
            for b in plan.blocks:
                per.setdefault(b.trigger_row, []).append(b.group_id)
            assert max(len(v) for v in per.values()) <= limit
            for gids in per.values():
                assert len(set(gids)) == 1

    def test_degenerate_plan_for(self):
        plan = bp.plan_for(10, 8, bp.KERNEL_NONLINEAR)
        assert plan.blocks == () and plan.boundaries == ()
        assert bp.validate_plan(plan).ok()


class TestValidatePlan:
    def test_injected_overlap_breaks_coverage(self):
        plan = bp.build_plan(64, 3, bp.HLS)
        blocks = list(plan.blocks)
        bad = dataclasses.replace(blocks[0], col_last=blocks[0].col_last + 1)
        broken = dataclasses.replace(plan, blocks=tuple([bad] + blocks[1:]))
        assert not bp.validate_plan(broken).coverage_ok

    def test_hls_fails_kernel_nonlinear_rules(self):
        plan = bp.build_plan(64, 3, bp.HLS)
        assert bp.validate_plan(plan).causality_ok
        assert not bp.validate_plan(plan, rules=bp.KERNEL_NONLINEAR).causality_ok

    def test_rejects_oversized(self):
        with pytest.raises(bp.PlanError):
            bp.validate_plan(bp.plan_for(8192, 16, bp.HLS))


@settings(max_examples=40, deadline=None)
@given(N=st.integers(4, 300), seed=st.integers(0, 10**6))
def test_random_plans_validate(N, seed):
    rng = np.random.default_rng(seed)
    L = int(rng.integers(1, int(math.log2(N)) + 1))
    variant = bp.VARIANTS[int(rng.integers(0, 2))]
    assert bp.validate_plan(bp.build_plan(N, L, variant)).ok()


def test_work_bound():
    # FFT work proxy stays within a constant multiple of N log2(N)^2
    ratios = []
    for e in range(8, 17):
        N = 1 << e
        plan = bp.plan_for(N, 22, bp.KERNEL_NONLINEAR)
        ratios.append(bp.block_work_estimate(plan) / (N * math.log2(N) ** 2))
    assert max(ratios) <= 1.5
    # growth has flattened out by the top of the range
    assert ratios[-1] / ratios[-2] < 1.05


def test_dump_plan(tmp_path):
    plan = bp.build_plan(32, 2, bp.KERNEL_NONLINEAR)
    path = tmp_path / "plan.txt"
    bp.dump_plan(plan, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("# blockplan N=32")
    rows = [ln.split() for ln in lines if not ln.startswith("#")]
    assert len(rows) == len(plan.blocks)
    first = plan.blocks[0]
    assert rows[0][:4] == [str(first.row_first), str(first.row_last),
                           str(first.col_first), str(first.col_last)]
