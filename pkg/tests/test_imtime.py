import numpy as np
import pytest
from scipy.integrate import quad

from rtdyson import dyson as dy
from rtdyson import imtime as it

BETA = 10.0


@pytest.fixture(scope="module")
def basis():
    return it.build_basis(BETA, 40.0, 1e-13)


@pytest.fixture(scope="module")
def basis_tight():
    return it.build_basis(BETA, 40.0, 1e-15)


def free_values(tau, h, beta=BETA):
    return -it.kernel_tau(np.atleast_1d(tau), np.array([h]), beta)[:, 0]


class TestKernel:
    def test_value_at_zero(self):
        for w in (-3.0, 0.0, 2.5):
            want = 1.0 / (1.0 + np.exp(-BETA * w))
            assert abs(it.kernel_tau(np.array([0.0]), np.array([w]), BETA)[0, 0] - want) < 1e-15

    def test_no_overflow_large_arguments(self):
        vals = it.kernel_tau(np.linspace(0, 1e4, 7), np.array([-50.0, 50.0]), 1e4)
        assert np.all(np.isfinite(vals)) and np.all(vals >= 0) and np.all(vals <= 1)


class TestBuildBasis:
    def test_rank_band_tight(self, basis_tight):
        assert 25 <= basis_tight.rank <= 40

    def test_rank_band_large_cutoff(self):
        b = it.build_basis(10000.0, 1e5, 1e-10)
        assert 80 <= b.rank <= 110

    def test_fit_eval_identity_at_nodes(self, basis):
        v = free_values(basis.tau_nodes, -0.7).astype(complex)
        fn = it.fit(basis, v)
        assert np.max(np.abs(it.evaluate(fn, basis.tau_nodes) - v)) < 1e-10

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            it.build_basis(1.0, 0.5, 1e-10)
        with pytest.raises(ValueError):
            it.build_basis(1.0, 10.0, 2.0)

    def test_dump_load_round_trip(self, basis, tmp_path):
        path = tmp_path / "basis.txt"
        it.dump_basis(basis, path)
        loaded = it.load_basis(path)
        assert loaded.rank == basis.rank
        assert np.allclose(loaded.freqs, basis.freqs)
        assert np.allclose(loaded.tau_nodes, basis.tau_nodes)
        v = free_values(basis.tau_nodes, 1.3).astype(complex)
        taus = np.linspace(0, BETA, 57)
        a = it.evaluate(it.fit(basis, v), taus)
        b = it.evaluate(it.fit(loaded, v), taus)
        assert np.max(np.abs(a - b)) < 1e-12


class TestFitEval:
    def test_constant_free_fermion(self, basis):
        fn = it.fit(basis, np.full(basis.rank, -0.5 + 0j))
        taus = np.linspace(0, BETA, 301)
        assert np.max(np.abs(it.evaluate(fn, taus) + 0.5)) < 1e-10

    def test_unit_coefficient_round_trip(self, basis):
        # sampling one basis function returns the unit coefficient vector
        # up to the node-matrix conditioning; evaluations stay tight
        j = basis.rank // 2
        v = it.kernel_tau(basis.tau_nodes, basis.freqs[j : j + 1], BETA)[:, 0]
        fn = it.fit(basis, v.astype(complex))
        unit = np.zeros(basis.rank)
        unit[j] = 1.0
        assert np.max(np.abs(fn.coeffs - unit)) < 1e-3
        taus = np.linspace(0, BETA, 100)
        want = it.kernel_tau(taus, basis.freqs[j : j + 1], BETA)[:, 0]
        assert np.max(np.abs(it.evaluate(fn, taus) - want)) < 1e-12

    def test_smooth_spectral_density(self, basis):
        # G(tau) = int K(tau, w) rho(w) dw for a smooth density inside the
        # cutoff window is representable to basis accuracy
        rho = lambda w: np.exp(-(w**2)) / np.sqrt(np.pi)
        taus = np.linspace(0, BETA, 41)
        dense = np.array([
            quad(lambda w: it.kernel_tau(np.array([t]), np.array([w]), BETA)[0, 0] * rho(w),
                 -4, 4, limit=200)[0]
            for t in taus
        ])
        nodes = np.array([
            quad(lambda w: it.kernel_tau(np.array([t]), np.array([w]), BETA)[0, 0] * rho(w),
                 -4, 4, limit=200)[0]
            for t in basis.tau_nodes
        ])
        fn = it.fit(basis, nodes.astype(complex))
        assert np.max(np.abs(it.evaluate(fn, taus) - dense)) < 10 * basis.eps * 100

    def test_domain_error(self, basis):
        fn = it.fit(basis, np.full(basis.rank, -0.5 + 0j))
        with pytest.raises(ValueError):
            it.evaluate(fn, -1.0)
        with pytest.raises(ValueError):
            it.evaluate(fn, BETA + 1.0)


class TestReflect:
    def test_constant_fixed_point(self, basis):
        fn = it.fit(basis, np.full(basis.rank, -0.5 + 0j))
        refl = it.reflect(fn)
        taus = np.linspace(0, BETA, 50)
        assert np.max(np.abs(it.evaluate(refl, taus) + 0.5)) < 1e-10

    def test_free_fermion_pointwise(self, basis):
        h = 0.9
        fn = it.fit(basis, free_values(basis.tau_nodes, h).astype(complex))
        refl = it.reflect(fn)
        taus = np.linspace(0, BETA, 101)
        want = free_values(BETA - taus, h)
        assert np.max(np.abs(it.evaluate(refl, taus) - want)) < 1e-9

    def test_involution(self, basis):
        # identity holds to basis accuracy in value space (coefficients
        # are not unique at the node-matrix conditioning)
        v = free_values(basis.tau_nodes, -1.1) + 0.3 * free_values(basis.tau_nodes, 2.0)
        fn = it.fit(basis, v.astype(complex))
        back = it.reflect(it.reflect(fn))
        taus = np.linspace(0, BETA, 157)
        err = np.max(np.abs(it.evaluate(back, taus) - it.evaluate(fn, taus)))
        assert err < 1e-9


class TestConvMatrix:
    def test_zero_sigma(self, basis):
        gm = it.fit(basis, free_values(basis.tau_nodes, -1.0).astype(complex))
        M = it.conv_matrix(gm)
        assert np.max(np.abs(M @ np.zeros(basis.rank))) == 0

    def test_constant_propagator(self, basis):
        # G = -1/2 with unit sigma: the antiperiodic branch flips sign, so
        # the integral is tau_j - beta/2, not -beta/2
        gm = it.fit(basis, np.full(basis.rank, -0.5 + 0j))
        q = it.conv_matrix(gm) @ np.ones(basis.rank)
        assert np.max(np.abs(q - (basis.tau_nodes - BETA / 2))) < 1e-10

    def test_dense_quadrature_oracle(self, basis):
        h = -1.0
        gm = it.fit(basis, free_values(basis.tau_nodes, h).astype(complex))
        sig_fn = it.fit(basis, free_values(basis.tau_nodes, 0.4).astype(complex))
        sig_nodes = it.node_values(sig_fn)
        got = it.conv_matrix(gm) @ sig_nodes

        def integrand(tp, tj):
            s = it.evaluate(sig_fn, tp)
            arg = tp - tj
            g = it.evaluate(gm, arg + BETA) * -1 if arg < 0 else it.evaluate(gm, arg)
            return (s * g).real

        for idx in (0, basis.rank // 2, basis.rank - 1):
            tj = basis.tau_nodes[idx]
            want = (quad(integrand, 0, tj, args=(tj,), limit=300)[0]
                    + quad(integrand, tj, BETA, args=(tj,), limit=300)[0])
            assert abs(got[idx] - want) < 1e-8 * max(1, abs(want))


class TestSolveMatsubara:
    def test_free_fermion_h0(self, basis):
        gm = it.solve_matsubara(0.0, lambda g: np.zeros_like(g), basis, mix=1.0)
        taus = np.linspace(0, BETA, 101)
        assert np.max(np.abs(it.evaluate(gm, taus) + 0.5)) < 1e-9

    def test_free_fermion_general_h(self, basis):
        for h in (-1.0, 0.35, 2.4):
            gm = it.solve_matsubara(h, lambda g: np.zeros_like(g), basis, mix=1.0)
            taus = np.linspace(0, BETA, 101)
            err = np.max(np.abs(it.evaluate(gm, taus) - free_values(taus, h)))
            assert err < 1e-9, h

    def test_bethe_self_consistency(self, basis):
        gm = it.solve_matsubara(-1.0, dy.bethe_sigma_matsubara(1.0), basis, mix=0.4)
        assert abs(it.boundary_identity(gm) + 1) < 1e-9
        sigma = it.fit(basis, it.node_values(gm))
        assert it.matsubara_residual(gm, sigma, -1.0, ntest=50) < 1e-7

    def test_iteration_error(self, basis):
        with pytest.raises(it.IterationError) as exc:
            it.solve_matsubara(-1.0, dy.bethe_sigma_matsubara(1.0), basis,
                               mix=0.4, max_iter=2)
        assert len(exc.value.history) == 2

    def test_mix_validation(self, basis):
        with pytest.raises(ValueError):
            it.solve_matsubara(0.0, lambda g: g, basis, mix=1.5)


class TestCertification:
    def test_representation_accuracy_dense_grid(self, basis):
        # every kernel column on a dense random frequency set fits to 10 eps
        rng = np.random.default_rng(4)
        omegas = rng.uniform(-4.0, 4.0, size=60)
        cols = it.kernel_tau(basis.tau_fine, omegas, BETA)
        node_cols = it.kernel_tau(basis.tau_nodes, omegas, BETA)
        approx = it.kernel_tau(basis.tau_fine, basis.freqs, BETA) @ basis.fit_values(node_cols)
        assert np.max(np.abs(approx - cols)) < 10 * basis.eps
