"""Laplace approximation tests: expansion terms, Newton mode, posterior scan."""

import math

import numpy as np
import pytest
from scipy.optimize import root

import _oracles
from bumpbayes import laplace, model, simulate


def toy_cov(n, eta=2.0, sigma2=0.3, jitter_rel=1e-8):
    grid = (np.arange(n) + 0.5) / n
    return model.covariance_matrix(grid, eta, sigma2, jitter=jitter_rel * sigma2)


class TestExpansionTerms:
    def test_hand_case_zero_signal_zero_count(self):
        terms = laplace.expansion_terms(np.array([0.0]), np.array([0]), np.array([0.0]))
        assert terms.a[0] == pytest.approx(-1.0, abs=1e-14)
        assert terms.b[0] == pytest.approx(-1.0, abs=1e-14)
        assert terms.c[0] == pytest.approx(0.5, abs=1e-14)
        assert not terms.clamped

    def test_zero_count_curvature_positive(self):
        psi = np.linspace(-2, 4, 9)
        terms = laplace.expansion_terms(psi, np.zeros(9), np.zeros(9))
        np.testing.assert_allclose(terms.c, 0.5 * np.exp(psi))
        assert np.all(terms.c > 0)

    def test_sign_condition_for_curvature(self):
        rng = np.random.default_rng(5)
        psi = rng.uniform(0.0, 4.0, 200)
        y = rng.poisson(10.0, 200).astype(float)
        s = rng.uniform(0.0, 10.0, 200)
        terms = laplace.expansion_terms(psi, y, s)
        lam = np.exp(psi) + s
        discriminant = y * s / lam**2
        np.testing.assert_array_equal(terms.c >= 0, discriminant <= 1.0)

    def test_quadratic_surrogate_matches_finite_differences(self):
        # surrogate a + b x - c x^2 must agree with g and its first two
        # derivatives at the expansion point (central differences, h=1e-5);
        # the second difference carries an irreducible double-precision
        # noise floor ~4*eps*|g|/h^2 which is added to the 1e-4 tolerance
        rng = np.random.default_rng(42)
        h = 1e-5
        eps = np.finfo(float).eps
        for _ in range(100):
            psi = float(rng.uniform(-1.5, 3.0))
            y = float(rng.integers(0, 40))
            s = float(rng.uniform(0.0, 8.0))

            def g(x):
                lam = math.exp(x) + s
                val = -math.exp(x) - s - math.lgamma(y + 1.0)
                if y > 0:
                    val += y * math.log(lam)
                return val

            terms = laplace.expansion_terms(
                np.array([psi]), np.array([y]), np.array([s])
            )
            a, b, c = terms.a[0], terms.b[0], terms.c[0]
            surrogate = a + b * psi - c * psi**2
            d1_fd = (g(psi + h) - g(psi - h)) / (2 * h)
            d2_fd = (g(psi + h) - 2 * g(psi) + g(psi - h)) / h**2
            d1_surrogate = b - 2 * c * psi
            d2_surrogate = -2 * c
            # rounding noise scales with the magnitudes of g's internal
            # terms (they largely cancel in g itself)
            lam = math.exp(psi) + s
            g_scale = max(
                math.exp(psi) + s + abs(y * math.log(lam)) + abs(math.lgamma(y + 1.0)),
                1.0,
            )
            noise_d1 = 2 * eps * g_scale / h
            noise_d2 = 8 * eps * g_scale / h**2
            assert surrogate == pytest.approx(g(psi), rel=1e-10, abs=1e-10)
            assert abs(d1_surrogate - d1_fd) <= 1e-4 * max(abs(d1_fd), 1.0) + noise_d1
            assert abs(d2_surrogate - d2_fd) <= 1e-4 * max(abs(d2_fd), 1.0) + noise_d2

    def test_clamping_flags_extreme_psi(self):
        # beyond the clamp the flag must be raised and nothing becomes NaN
        # (coefficients may saturate to -inf at exp(700) scale)
        terms = laplace.expansion_terms(np.array([800.0]), np.array([1]), np.array([0.0]))
        assert terms.clamped
        assert not np.any(np.isnan(terms.a))
        assert not np.any(np.isnan(terms.b))
        assert not np.any(np.isnan(terms.c))
        inside = laplace.expansion_terms(np.array([5.0]), np.array([1]), np.array([0.0]))
        assert not inside.clamped


class TestGaussianApprox:
    def test_zero_data_mode_equation_vs_root_finder(self):
        # y = 0, s = 0: the mode solves cov^-1 (psi - mean) = -exp(psi); the
        # oracle is a general-purpose vector root finder on that equation
        n = 6
        cov = toy_cov(n)
        mean = np.log(np.full(n, 4.0))
        res = laplace.gaussian_approx(np.zeros(n, dtype=int), np.zeros(n), mean, cov)
        assert res.converged

        cov_inv = np.linalg.inv(cov)
        oracle = root(
            lambda p: cov_inv @ (p - mean) + np.exp(p), x0=mean, tol=1e-12
        )
        assert oracle.success
        np.testing.assert_allclose(res.mode_psi, oracle.x, atol=1e-6)

    def test_one_bin_flat_prior_recovers_poisson_mle(self):
        res = laplace.gaussian_approx(
            np.array([5]), np.array([0.0]), np.array([0.0]), np.array([[1e6]])
        )
        assert res.mode_psi[0] == pytest.approx(math.log(5.0), abs=1e-4)

    def test_gradient_at_mode_vanishes(self):
        # finite-difference gradient of the log conditional at the mode
        rng = np.random.default_rng(3)
        n = 5
        cov = toy_cov(n, eta=1.0, sigma2=0.4)
        mean = np.log(rng.uniform(3.0, 30.0, n))
        y = rng.poisson(np.exp(mean))
        s = rng.uniform(0.0, 3.0, n)
        res = laplace.gaussian_approx(y, s, mean, cov)
        assert res.converged
        cov_inv = np.linalg.inv(cov)

        def objective(psi):
            lam = np.exp(psi) + s
            return float(
                -0.5 * (psi - mean) @ cov_inv @ (psi - mean)
                + np.sum(y * np.log(lam) - lam)
            )

        h = 1e-6
        grad = np.empty(n)
        for i in range(n):
            up = res.mode_psi.copy()
            dn = res.mode_psi.copy()
            up[i] += h
            dn[i] -= h
            grad[i] = (objective(up) - objective(dn)) / (2 * h)
        assert np.max(np.abs(grad)) < 1e-6

    def test_permutation_invariance(self):
        rng = np.random.default_rng(11)
        n = 7
        grid = np.sort(rng.uniform(0, 1, n))
        cov = model.covariance_matrix(grid, 3.0, 0.2, jitter=1e-8 * 0.2)
        mean = np.log(rng.uniform(5.0, 20.0, n))
        y = rng.poisson(np.exp(mean))
        s = rng.uniform(0, 2.0, n)
        res = laplace.gaussian_approx(y, s, mean, cov)

        perm = rng.permutation(n)
        res_p = laplace.gaussian_approx(y[perm], s[perm], mean[perm], cov[np.ix_(perm, perm)])
        np.testing.assert_allclose(res_p.mode_psi, res.mode_psi[perm], atol=1e-10)
        assert res_p.log_marginal_unnorm == pytest.approx(
            res.log_marginal_unnorm, abs=1e-8
        )

    def test_precision_is_prior_precision_plus_curvature(self):
        n = 4
        cov = toy_cov(n)
        mean = np.log(np.full(n, 9.0))
        y = np.array([7, 11, 9, 8])
        s = np.zeros(n)
        res = laplace.gaussian_approx(y, s, mean, cov)
        expected = np.linalg.inv(cov) + np.diag(np.exp(res.mode_psi))
        np.testing.assert_allclose(res.precision, expected, rtol=1e-6)


def two_bin_problem(rng, signal=False):
    window = (100.0, 180.0)
    edges = np.linspace(*window, 3)
    level = rng.uniform(20.0, 400.0)
    coeffs = np.full(5, math.log(level / 80.0))
    eta = float(rng.uniform(0.5, 5.0))
    sigma2 = float(rng.uniform(0.02, 0.3))
    prior = model.GpBackgroundPrior(mean_coeffs=coeffs, eta=eta, sigma2=sigma2)
    template = model.SignalTemplate(
        anchor_masses=np.array([110.0, 170.0]),
        anchor_scales=np.array([rng.uniform(5, 40), rng.uniform(5, 40)]),
        anchor_widths=np.array([rng.uniform(4, 12), rng.uniform(4, 12)]),
    )
    mean_vec = model.prior_mean_vector(prior, edges)
    lam = np.exp(mean_vec)
    if signal:
        lam = lam + model.signal_bin_integrals(
            model.MassHypothesis.at(rng.uniform(110, 170)), template, edges
        )
    counts = rng.poisson(lam)
    spectrum = model.BinnedSpectrum(edges=edges, counts=counts)
    return spectrum, template, prior


class TestMassPosteriorScan:
    def test_two_bin_suite_matches_quadrature(self):
        # fixed 20-case random suite; atom and interval probabilities from
        # the Laplace scan vs tensor-grid quadrature, within 1% absolute
        rng = np.random.default_rng(2024)
        mass_grid = np.linspace(100.5, 179.5, 159)
        worst = 0.0
        for case in range(20):
            spectrum, template, prior = two_bin_problem(rng, signal=bool(case % 2))
            mass_prior = model.MassPrior(0.5, spectrum.window)
            config = laplace.LaplaceConfig(eta=prior.eta, sigma2=prior.sigma2)
            scan = laplace.mass_posterior_scan(
                spectrum, template, prior, mass_prior, grid=mass_grid, config=config
            )
            mid = spectrum.midpoints
            z = (mid - spectrum.edges[0]) / 80.0
            cov = model.covariance_matrix(
                z, prior.eta, prior.sigma2, jitter=prior.jitter_rel * prior.sigma2
            )
            mean_vec = model.prior_mean_vector(prior, spectrum.edges)
            p_quad, dens_quad = _oracles.mass_posterior_2bin_quadrature(
                spectrum.counts, mean_vec, cov, template, spectrum.edges, 0.5, mass_grid
            )
            worst = max(worst, abs(scan.p_absent - p_quad))
            assert abs(scan.p_absent - p_quad) <= 0.01
            # interval probabilities over thirds of the window
            for lo, hi in ((100.5, 127.0), (127.0, 153.0), (153.0, 179.5)):
                sel = (mass_grid >= lo) & (mass_grid <= hi)
                p_scan = np.trapezoid(
                    np.interp(mass_grid[sel], scan.grid, scan.density), mass_grid[sel]
                )
                p_q = np.trapezoid(dens_quad[sel], mass_grid[sel])
                assert abs(p_scan - p_q) <= 0.01

    def test_zero_template_recovers_prior(self):
        sc = simulate.make_toy_scenario(seed=6, signal_mass=None)
        template = model.SignalTemplate(
            anchor_masses=np.array([110.0, 170.0]),
            anchor_scales=np.array([1e-12, 1e-12]),
            anchor_widths=np.array([2.0, 2.0]),
        )
        mass_prior = model.MassPrior(0.5, sc.spectrum.window)
        config = laplace.LaplaceConfig(eta=sc.gp_prior.eta, sigma2=sc.gp_prior.sigma2)
        scan = laplace.mass_posterior_scan(
            sc.spectrum, template, sc.gp_prior, mass_prior, config=config
        )
        assert scan.p_absent == pytest.approx(0.5, abs=1e-6)

    def test_total_probability_is_one(self):
        sc = simulate.make_toy_scenario(seed=7, signal_mass=150.0)
        mass_prior = model.MassPrior(0.5, sc.spectrum.window)
        config = laplace.LaplaceConfig(eta=sc.gp_prior.eta, sigma2=sc.gp_prior.sigma2)
        scan = laplace.mass_posterior_scan(
            sc.spectrum, sc.template, sc.gp_prior, mass_prior, config=config
        )
        assert scan.total_mass() == pytest.approx(1.0, abs=1e-8)

    def test_injected_signal_drives_p_absent_down(self):
        sc = simulate.make_toy_scenario(
            seed=8, signal_mass=140.0, background_total=3000.0,
            anchor_scales=(260.0, 270.0, 280.0),
        )
        mass_prior = model.MassPrior(0.5, sc.spectrum.window)
        config = laplace.LaplaceConfig(eta=sc.gp_prior.eta, sigma2=sc.gp_prior.sigma2)
        scan = laplace.mass_posterior_scan(
            sc.spectrum, sc.template, sc.gp_prior, mass_prior, config=config
        )
        assert scan.p_absent < 0.01
        peak = scan.grid[np.argmax(scan.density)]
        assert abs(peak - 140.0) < 2.0

    def test_grid_validation(self):
        sc = simulate.make_toy_scenario(seed=9)
        mass_prior = model.MassPrior(0.5, sc.spectrum.window)
        config = laplace.LaplaceConfig(eta=1.0, sigma2=0.1)
        with pytest.raises(ValueError):
            laplace.mass_posterior_scan(
                sc.spectrum, sc.template, sc.gp_prior, mass_prior,
                grid=np.array([90.0, 120.0]), config=config,
            )

    def test_log_marginal_mass_normalizes_over_grid(self):
        sc = simulate.make_toy_scenario(seed=10, signal_mass=None)
        mass_prior = model.MassPrior(0.5, sc.spectrum.window)
        config = laplace.LaplaceConfig(eta=sc.gp_prior.eta, sigma2=sc.gp_prior.sigma2)
        values = [
            laplace.log_marginal_mass(
                hyp, sc.spectrum, sc.template, sc.gp_prior, mass_prior, config
            )
            for hyp in (model.Absent, model.MassHypothesis.at(130.0),
                        model.MassHypothesis.at(150.0))
        ]
        assert all(np.isfinite(values))
        rel = np.exp(np.array(values) - max(values))
        assert np.all(rel > 0) and np.all(rel <= 1.0)

    def test_default_grid_spacing(self):
        grid = laplace.default_mass_grid((100.0, 180.0), 0.25)
        assert grid[0] == pytest.approx(100.25)
        assert grid[-1] == pytest.approx(179.75)
        np.testing.assert_allclose(np.diff(grid), 0.25)
