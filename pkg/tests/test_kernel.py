import math
import warnings

import numpy as np
import pytest
from scipy.stats import norm

import emergolab as eg
from emergolab.errors import ApplicabilityError, GridTooSmallError
from emergolab.kernel import gaussian_on_grid

from conftest import gaussian_tv


class TestGridMeasure:
    def test_gaussian_integral_and_tail(self, grid12):
        m = gaussian_on_grid(grid12, 0.0, 1.0)
        assert m.integral() == pytest.approx(1.0, abs=1e-8)
        assert m.tail_bound == pytest.approx(2 * norm.sf(12.0), rel=1e-6)
        assert m.mean() == pytest.approx(0.0, abs=1e-10)
        assert m.variance() == pytest.approx(1.0, abs=1e-6)

    def test_prob_interval_matches_cdf(self, grid12):
        m = gaussian_on_grid(grid12, 0.5, 2.0)
        got = m.prob_interval(-1.0, 1.0)
        want = norm.cdf(1.0, 0.5, math.sqrt(2)) - norm.cdf(-1.0, 0.5, math.sqrt(2))
        assert got == pytest.approx(want, abs=1e-6)

    def test_cdf_monotone(self, grid12):
        m = gaussian_on_grid(grid12, 0.0, 1.0)
        pts = np.linspace(-11, 11, 101)
        c = m.cdf_at(pts)
        assert np.all(np.diff(c) >= 0)
        assert c[-1] == pytest.approx(1.0, abs=1e-6)

    def test_sampling_matches_law(self, grid12):
        m = gaussian_on_grid(grid12, 0.0, 1.0)
        xs = m.sample(200000, np.random.default_rng(0))
        # DKW bound on the empirical CDF against the measure's own CDF
        from emergolab.empirical import dkw_envelope, ks_statistic
        assert ks_statistic(xs, m.cdf_at) <= dkw_envelope(200000)

    def test_normalization_enforced(self, grid12):
        with pytest.raises(ValueError, match="integrates"):
            eg.GridMeasure(grid12, np.ones(grid12.n_nodes), tail_bound=0.0)

    def test_write_csv_deterministic(self, grid12, tmp_path):
        m = gaussian_on_grid(grid12, 0.0, 1.0)
        m.write_csv(tmp_path / "a.csv")
        m.write_csv(tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        header = (tmp_path / "a.csv").read_text().splitlines()[0]
        assert header.startswith("#") and "tail_bound=" in header


class TestKernelStep:
    def test_transition_density_matches_norm(self, ou):
        x, y = 1.3, -0.2
        mean = x - 0.1 * x
        want = norm.pdf(y, mean, math.sqrt(0.1))
        assert eg.transition_density(ou, 0.1, x, y) == pytest.approx(want)

    def test_gaussian_conjugacy(self, ou, grid12):
        # OU step maps N(mu, v) to N((1-eta)mu, (1-eta)^2 v + eta sigma^2)
        xi = gaussian_on_grid(grid12, 1.0, 0.5)
        out = eg.apply_kernel(ou, 0.5, xi)
        want = gaussian_on_grid(grid12, 0.5, 0.25 * 0.5 + 0.5)
        assert eg.tv_distance(out, want) <= 1e-8

    def test_mass_preserved(self, ou, grid12):
        xi = gaussian_on_grid(grid12, 0.0, 1.0)
        out = eg.apply_kernel(ou, 0.1, xi)
        assert out.integral() == pytest.approx(1.0, abs=1e-7)
        assert out.tail_bound >= xi.tail_bound

    def test_leak_raises_with_suggestion(self, ou):
        small = eg.Grid(-1.0, 1.0, 2049)
        xi = gaussian_on_grid(small, 0.0, 0.02)
        with pytest.raises(GridTooSmallError) as err:
            eg.apply_kernel(ou, 0.5, xi)
        assert err.value.suggested_upper > 1.0
        assert err.value.suggested_lower < -1.0

    def test_n_step_oracle(self, ou, grid12):
        # AR(1): P^n(0,.) = N(0, v_n), v_n = eta sigma^2 (1-rho^{2n})/(1-rho^2)
        out = eg.n_step_from_point(ou, 0.5, 0.0, 3, grid12)
        v3 = (2.0 / 3.0) * (1.0 - 0.25 ** 3)
        want = gaussian_on_grid(grid12, 0.0, v3)
        assert eg.tv_distance(out, want) <= 1e-8

    def test_matrix_free_agrees_with_dense(self, ou):
        dense_grid = eg.Grid(-10.0, 10.0, 513)
        xi = gaussian_on_grid(dense_grid, 0.0, 1.0)
        want = eg.apply_kernel(ou, 0.1, xi)
        import emergolab.kernel as ke
        old = ke.DENSE_MATRIX_LIMIT
        try:
            ke.DENSE_MATRIX_LIMIT = 1
            got = eg.apply_kernel(ou, 0.1, xi)
        finally:
            ke.DENSE_MATRIX_LIMIT = old
        assert eg.tv_distance(got, want) <= 1e-12


class TestInvariantMeasure:
    def test_fixed_point(self, ou, grid12):
        pi = eg.invariant_measure(ou, 0.1, grid12, tol=1e-9).measure
        assert eg.tv_distance(pi, eg.apply_kernel(ou, 0.1, pi)) <= 1e-8

    def test_seed_independence(self, ou, grid12):
        res1 = eg.invariant_measure(ou, 0.1, grid12)
        alt = gaussian_on_grid(grid12, 3.0, 0.25)
        res2 = eg.invariant_measure(ou, 0.1, grid12, seed_measure=alt)
        assert eg.tv_distance(res1.measure, res2.measure) <= 1e-8

    def test_warns_outside_validity(self, ou, grid12):
        with pytest.warns(UserWarning, match="outside"):
            eg.invariant_measure(ou, 0.5, grid12)

    def test_budget_exhaustion(self, ou, grid12):
        from emergolab.errors import ConvergenceError
        with pytest.raises(ConvergenceError) as err:
            eg.invariant_measure(ou, 0.1, grid12, tol=1e-16, max_iters=5)
        assert err.value.last_increment > 0


class TestTvDistance:
    def test_metric_properties(self, grid12):
        rng = np.random.default_rng(1)
        ms = [gaussian_on_grid(grid12, rng.uniform(-2, 2), rng.uniform(0.5, 2))
              for _ in range(3)]
        a, b, c = ms
        assert eg.tv_distance(a, b) == pytest.approx(eg.tv_distance(b, a))
        assert eg.tv_distance(a, a) == 0.0
        assert eg.tv_distance(a, c) <= eg.tv_distance(a, b) + eg.tv_distance(b, c) + 1e-12
        assert 0.0 <= eg.tv_distance(a, b) <= 1.0

    def test_closed_form_oracle(self, grid12):
        # TV(N(0,1), N(3,1)) = 2 Phi(1.5) - 1
        a = gaussian_on_grid(grid12, 0.0, 1.0)
        b = gaussian_on_grid(grid12, 3.0, 1.0)
        # tolerance set by the trapezoid error at the |p-q| kink
        assert eg.tv_distance(a, b) == pytest.approx(2 * norm.cdf(1.5) - 1, abs=5e-6)

    def test_kernel_contracts(self, ou, grid12):
        a = gaussian_on_grid(grid12, -1.0, 1.0)
        b = gaussian_on_grid(grid12, 2.0, 0.5)
        assert (eg.tv_distance(eg.apply_kernel(ou, 0.1, a), eg.apply_kernel(ou, 0.1, b))
                <= eg.tv_distance(a, b) + 1e-12)

    def test_grid_mismatch_rejected(self, grid12):
        other = eg.Grid(-10.0, 10.0, 4097)
        with pytest.raises(ValueError):
            eg.tv_distance(gaussian_on_grid(grid12, 0, 1),
                           gaussian_on_grid(other, 0, 1))


class TestMinorization:
    def test_epsilon_oracle(self, smallset_ou):
        # corner infimum at |y - x/2| = 1.5: eps = 2 exp(-2.25)/sqrt(pi)
        want = 2.0 * math.exp(-2.25) / math.sqrt(math.pi)
        assert smallset_ou.epsilon == pytest.approx(want, abs=1e-5)

    def test_pointwise_domination(self, ou, smallset_ou):
        rng = np.random.default_rng(2)
        x = rng.uniform(-1, 1, 10000)
        y = rng.uniform(-1, 1, 10000)
        p = eg.transition_density(ou, 0.5, x, y)
        assert np.all(p >= smallset_ou.epsilon * smallset_ou.nu_pdf(y) - 1e-12)

    def test_epsilon_linear_in_small_sets(self, ou):
        e1 = eg.minorization_epsilon(ou, 0.5, -0.01, 0.01).epsilon
        e2 = eg.minorization_epsilon(ou, 0.5, -0.005, 0.005).epsilon
        assert e1 / e2 == pytest.approx(2.0, rel=1e-3)

    def test_epsilon_in_unit_interval(self, ou):
        for half in (1e-6, 0.1, 1.0, 3.0):
            eps = eg.minorization_epsilon(ou, 0.5, -half, half).epsilon
            assert 0.0 < eps <= 1.0


class TestWholeSpaceMinorization:
    def test_ou_identity_map_gives_full_mass(self, ou):
        assert eg.whole_space_minorization(ou, 0.5) == pytest.approx(1.0, abs=1e-9)

    def test_bounded_perturbation_oracle(self, bp):
        want = 2.0 * norm.sf(0.5 / math.sqrt(0.5))
        assert eg.whole_space_minorization(bp, 0.5) == pytest.approx(want, abs=1e-5)

    def test_continuity_to_identity(self):
        tiny = eg.bounded_perturbation(kappa=1.0, a=1e-4)
        assert eg.whole_space_minorization(tiny, 0.5) == pytest.approx(1.0, abs=1e-3)

    def test_unbounded_raises(self):
        fast = eg.ornstein_uhlenbeck(kappa=2.0)  # x + g(x) = -x
        with pytest.raises(ApplicabilityError, match="x"):
            eg.whole_space_minorization(fast, 0.5)

    def test_doeblin_rate(self):
        assert eg.doeblin_rate(0.5) == 2.0
        assert eg.doeblin_rate(1.0) == math.inf
        with pytest.raises(ValueError):
            eg.doeblin_rate(0.0)


class TestDefaultGrid:
    def test_covers_return_set(self, ou):
        g = eg.default_grid(ou, 0.1)
        r = eg.drifts.radius_of(ou, 0.1)
        assert g.upper >= 4 * r
        assert g.lower == -g.upper
