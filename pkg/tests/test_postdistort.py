"""Post-distorter tests: polynomial LS/RLS baseline, ELM predictors, and the
SISO likelihood estimators."""

import numpy as np
import pytest

from ledcomm.channel import (MemoryPolynomialModel, add_awgn,
                             default_hammerstein, hammerstein_apply, mp_apply)
from ledcomm.coding import LlrFrame, make_pam
from ledcomm.elm import elm_predict
from ledcomm.postdistort import (DegenerateRegressorError, LikelihoodParams,
                                 SisoElmPostDistorter, causal_windows,
                                 centered_windows, conditional_signal_means,
                                 elm_channel_train, elm_pd_apply, elm_pd_train,
                                 estimate_covariance, estimate_interference_mean,
                                 estimate_signal_table, forward_windows,
                                 gaussian_symbol_posteriors,
                                 genie_likelihood_params, interference_means,
                                 poly_pd_apply, poly_pd_train_ls,
                                 poly_pd_train_rls, poly_regressors,
                                 siso_postdistort, training_residual_variance,
                                 zero_reference)

from helpers import awgn_pam_posteriors


def uniform_symbols(rng, constellation, n):
    return constellation.levels[rng.integers(0, constellation.size, n)]


class TestWindows:
    def test_causal_zero_padding(self):
        w = causal_windows(np.array([1.0, 2.0, 3.0]), 2)
        assert np.array_equal(w, [[1, 0, 0], [2, 1, 0], [3, 2, 1]])

    def test_forward_zero_padding(self):
        w = forward_windows(np.array([1.0, 2.0, 3.0]), 2)
        assert np.array_equal(w, [[1, 2, 3], [2, 3, 0], [3, 0, 0]])

    def test_forward_with_extra_samples(self):
        w = forward_windows(np.array([1.0, 2.0, 3.0, 4.0, 5.0]), 2, count=3)
        assert np.array_equal(w, [[1, 2, 3], [2, 3, 4], [3, 4, 5]])

    def test_centered(self):
        w = centered_windows(np.array([1.0, 2.0, 3.0]), 1)
        assert np.array_equal(w, [[0, 1, 2], [1, 2, 3], [2, 3, 0]])


class TestPolyRegressors:
    def test_layout_power_fastest(self):
        r = poly_regressors(np.array([2.0, 3.0]), order=2, memory=1)
        # Row n: [y_n, y_n^2, y_{n-1}, y_{n-1}^2]
        assert np.array_equal(r, [[2, 4, 0, 0], [3, 9, 2, 4]])


class TestPolyTrainLs:
    def test_identity_channel(self):
        rng = np.random.default_rng(0)
        y = rng.uniform(0.1, 1.0, 200)
        pd = poly_pd_train_ls(y, y, order=1, memory=0)
        assert abs(pd.coefficients[0] - 1.0) <= 1e-8

    def test_condition_number_exceeds_1e10_on_default_channel(self):
        # Order 7, memory 4 on the default Hammerstein channel at high SNR.
        rng = np.random.default_rng(1)
        c = make_pam(3)
        x = uniform_symbols(rng, c, 800)
        y = add_awgn(hammerstein_apply(default_hammerstein(), x), 30.0, 2)
        pd = poly_pd_train_ls(y.samples, x, order=7, memory=4)
        assert pd.condition > 1e10

    def test_invertible_cubic_channel_rmse(self):
        # Memoryless invertible cubic; the trained distorter should land the
        # symbol RMSE within 2x the noise floor.
        rng = np.random.default_rng(2)
        channel = MemoryPolynomialModel(np.array([[1.0], [0.2], [0.1]]))
        c = make_pam(3)
        x = uniform_symbols(rng, c, 2000)
        sigma = 0.02
        y = mp_apply(channel, x) + sigma * rng.standard_normal(2000)
        pd = poly_pd_train_ls(y[:1000], x[:1000], order=3, memory=0)
        x_hat = poly_pd_apply(pd, y[1000:])
        rmse = np.sqrt(np.mean((x_hat - x[1000:]) ** 2))
        assert rmse <= 2 * sigma

    def test_degenerate_raises_with_diagnostic(self):
        with pytest.raises(DegenerateRegressorError) as err:
            poly_pd_train_ls(np.ones(100), np.ones(100), order=2, memory=1)
        assert err.value.condition > 1e10 or np.isinf(err.value.condition)

    def test_too_short_training(self):
        with pytest.raises(ValueError):
            poly_pd_train_ls(np.ones(30), np.ones(30), order=7, memory=4)


class TestPolyTrainRls:
    def test_matches_ls_at_unit_forgetting(self):
        rng = np.random.default_rng(3)
        channel = MemoryPolynomialModel(np.array([[1.0], [0.15]]))
        c = make_pam(3)
        x = uniform_symbols(rng, c, 600)
        y = mp_apply(channel, x) + 0.01 * rng.standard_normal(600)
        ls = poly_pd_train_ls(y, x, order=2, memory=1)
        rls = poly_pd_train_rls(y, x, order=2, memory=1, forgetting=1.0)
        assert np.max(np.abs(ls.coefficients - rls.coefficients)) <= 1e-4

    def test_identity_channel(self):
        rng = np.random.default_rng(4)
        y = rng.uniform(0.1, 1.0, 400)
        pd = poly_pd_train_rls(y, y, order=2, memory=1, forgetting=0.999)
        want = np.zeros(4)
        want[0] = 1.0
        assert np.max(np.abs(pd.coefficients - want)) <= 1e-3

    def test_failing_baseline_configuration_runs(self):
        # Order 7 / memory 4: the baseline configuration always returns
        # coefficients (divergence shows in outputs, not exceptions).
        rng = np.random.default_rng(5)
        c = make_pam(3)
        x = uniform_symbols(rng, c, 800)
        y = add_awgn(hammerstein_apply(default_hammerstein(), x), 24.0, 6)
        pd = poly_pd_train_rls(y.samples, x, order=7, memory=4)
        assert pd.coefficients.shape == (35,)
        assert np.all(np.isfinite(pd.coefficients))

    def test_forgetting_range_enforced(self):
        with pytest.raises(ValueError):
            poly_pd_train_rls(np.ones(10), np.ones(10), 1, 0, forgetting=0.5)


class TestPolyApply:
    def test_identity_distorter(self):
        pd = poly_pd_train_ls(np.linspace(0.1, 1, 50), np.linspace(0.1, 1, 50),
                              order=1, memory=0)
        y = np.array([0.3, 0.7])
        assert np.allclose(poly_pd_apply(pd, y), y, atol=1e-10)

    def test_zero_coefficients(self):
        from ledcomm.postdistort import PolyPostDistorter
        pd = PolyPostDistorter(2, 1, np.zeros(4))
        assert np.allclose(poly_pd_apply(pd, np.ones(5)), 0.0)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(6)
        from ledcomm.postdistort import PolyPostDistorter
        coeffs = rng.standard_normal(6)
        pd = PolyPostDistorter(2, 2, coeffs)
        y = rng.uniform(0, 1, 15)
        got = poly_pd_apply(pd, y)
        for n in range(15):
            want = 0.0
            idx = 0
            for m in range(3):
                for k in range(1, 3):
                    yv = y[n - m] if n - m >= 0 else 0.0
                    want += coeffs[m * 2 + (k - 1)] * yv ** k
                    idx += 1
            assert abs(got[n] - want) <= 1e-12


class TestElmPd:
    def test_linear_identity_channel_heldout(self):
        rng = np.random.default_rng(7)
        c = make_pam(3)
        x = uniform_symbols(rng, c, 1200)
        model = elm_pd_train(x[:800], x[:800], window=2, hidden=100, seed=1)
        x_hat = elm_pd_apply(model, x[800:], window=2)
        assert np.sqrt(np.mean((x_hat[2:] - x[802:]) ** 2)) <= 1e-3

    def test_constant_training_target(self):
        rng = np.random.default_rng(8)
        y = rng.uniform(0.1, 1.0, 300)
        model = elm_pd_train(y, np.full(300, 0.6), window=2, hidden=50, seed=2)
        out = elm_pd_apply(model, rng.uniform(0.1, 1.0, 100), window=2)
        assert np.max(np.abs(out - 0.6)) <= 1e-2

    def test_zero_noise_invertible_channel_no_symbol_errors(self):
        rng = np.random.default_rng(9)
        channel = default_hammerstein()
        c = make_pam(3)
        x = uniform_symbols(rng, c, 1400)
        y = hammerstein_apply(channel, x)
        model = elm_pd_train(y[:800], x[:800], window=2, hidden=100, seed=3)
        x_hat, hard = elm_pd_apply(model, y[800:], window=2, constellation=c)
        # Skip the first window positions (zero-padded cold start).
        assert np.all(hard[2:] == x[802:])

    def test_window_too_long_rejected(self):
        with pytest.raises(ValueError):
            elm_pd_train(np.ones(3), np.ones(3), window=5, hidden=10, seed=0)


class TestChannelElm:
    def test_hammerstein_heldout_rmse(self):
        rng = np.random.default_rng(10)
        channel = default_hammerstein()
        c = make_pam(3)
        x = uniform_symbols(rng, c, 1400)
        noise_std = 0.02
        y = hammerstein_apply(channel, x) + noise_std * rng.standard_normal(1400)
        model = elm_channel_train(x[:800], y[:800], window=2, hidden=150, seed=4)
        inputs = centered_windows(x[800:], 2)[2:-2]
        targets = forward_windows(y[800:], 2)[2:-2]
        resid = elm_predict(model, inputs) - targets
        assert np.sqrt(np.mean(resid ** 2)) <= 2 * noise_std

    def test_linear_channel_matches_true_taps(self):
        rng = np.random.default_rng(11)
        channel = MemoryPolynomialModel(np.array([[1.0, 0.3]]))
        c = make_pam(3)
        x = uniform_symbols(rng, c, 1000)
        y = mp_apply(channel, x)
        model = elm_channel_train(x, y, window=1, hidden=80, seed=5)
        test_x = uniform_symbols(rng, c, 200)
        inputs = centered_windows(test_x, 1)[1:-1]
        pred = elm_predict(model, inputs)
        want = forward_windows(mp_apply(channel, test_x), 1)[1:-1]
        assert np.max(np.abs(pred - want)) <= 0.05

    def test_zero_targets_zero_weights(self):
        rng = np.random.default_rng(12)
        x = rng.uniform(0, 1, 500)
        model = elm_channel_train(x, np.zeros(500), window=2, hidden=50, seed=6)
        assert np.allclose(model.output_weights, 0.0)


class TestSignalTable:
    def train_identity_elm(self, seed=13, n=1000):
        rng = np.random.default_rng(seed)
        c = make_pam(3)
        x = uniform_symbols(rng, c, n)
        return elm_channel_train(x, x.copy(), window=2, hidden=150, seed=7), c

    def test_identity_channel_table(self):
        model, c = self.train_identity_elm()
        table = estimate_signal_table(model, c)
        assert table.shape == (8, 3)
        assert np.max(np.abs(table[:, 0] - c.levels)) <= 0.05
        assert np.max(np.abs(table[:, 1:])) <= 0.05

    def test_zero_level_equals_zero_reference(self):
        model, c = self.train_identity_elm()
        table = estimate_signal_table(model, c)
        # The lowest level is zero drive, so its probe IS the all-zero vector.
        assert np.allclose(table[0], zero_reference(model))

    def test_table_size(self):
        model, c = self.train_identity_elm()
        assert estimate_signal_table(model, c).shape[0] == c.size

    def test_known_memory_polynomial_table(self):
        # >= 800 noiseless samples of a known model reproduce the analytic
        # a(alpha) within 0.1 per coordinate.
        rng = np.random.default_rng(14)
        channel = MemoryPolynomialModel(np.array([[1.0, 0.2, 0.05],
                                                  [0.4, 0.06, 0.0]]))
        c = make_pam(3)
        x = uniform_symbols(rng, c, 1000)
        model = elm_channel_train(x, mp_apply(channel, x), window=2,
                                  hidden=150, seed=8)
        table = estimate_signal_table(model, c)
        powers = c.levels[:, None] ** np.arange(1, 3)
        want = np.stack([powers @ channel.coefficients[:, q] for q in range(3)],
                        axis=1)
        assert np.max(np.abs(table - want)) <= 0.1


class TestInterferenceMean:
    def test_all_zero_neighbors_equal_zero_reference(self):
        rng = np.random.default_rng(15)
        c = make_pam(3)
        x = uniform_symbols(rng, c, 900)
        model = elm_channel_train(x, x.copy(), window=2, hidden=150, seed=9)
        probe = np.zeros(5)
        assert np.allclose(estimate_interference_mean(model, probe),
                           zero_reference(model))

    def test_center_value_ignored(self):
        rng = np.random.default_rng(16)
        c = make_pam(3)
        x = uniform_symbols(rng, c, 900)
        model = elm_channel_train(x, x.copy(), window=2, hidden=150, seed=10)
        a = estimate_interference_mean(model, np.array([0.1, 0.2, 0.9, 0.4, 0.5]))
        b = estimate_interference_mean(model, np.array([0.1, 0.2, 0.0, 0.4, 0.5]))
        assert np.allclose(a, b)

    def test_memoryless_channel_small_neighbor_contribution(self):
        rng = np.random.default_rng(17)
        c = make_pam(3)
        x = uniform_symbols(rng, c, 1000)
        model = elm_channel_train(x, x.copy(), window=2, hidden=150, seed=11)
        neighbors = np.array([0.5, 0.7, 0.0, 0.3, 0.9])
        i_bar = estimate_interference_mean(model, neighbors)
        # Identity channel: coordinate 0 depends only on the (zeroed) center;
        # the probe's coordinate-0 response stays near the zero reference.
        assert abs(i_bar[0] - zero_reference(model)[0]) <= 0.05

    def test_point_mass_feedback_tracks_analytic_interference(self):
        rng = np.random.default_rng(18)
        channel = MemoryPolynomialModel(np.array([[1.0, 0.2, 0.05]]))
        c = make_pam(3)
        x = uniform_symbols(rng, c, 1200)
        model = elm_channel_train(x, mp_apply(channel, x), window=2,
                                  hidden=150, seed=12)
        data = uniform_symbols(rng, c, 60)
        i_bar = interference_means(model, data)
        # Analytic interference per coordinate from the expanded model,
        # center symbol excluded.
        coeffs = channel.coefficients
        want = np.zeros((60, 3))
        padded = np.concatenate([np.zeros(2), data, np.zeros(2)])
        for n in range(60):
            for q in range(3):
                for m in range(3):
                    if m == q:
                        continue
                    want[n, q] += coeffs[0, m] * padded[n + q - m + 2]
        assert np.max(np.abs(i_bar[3:-3] - want[3:-3])) <= 0.1


class TestCovariance:
    def make_exact_elm(self, seed=19, n=1200):
        rng = np.random.default_rng(seed)
        c = make_pam(3)
        x = uniform_symbols(rng, c, n)
        return elm_channel_train(x, x.copy(), window=2, hidden=200, seed=13), c, rng

    def test_zero_residuals_floor(self):
        # Construct y windows equal to a(x_hat) + i_bar exactly: the
        # residuals vanish and every diagonal entry collapses to the floor.
        model, c, rng = self.make_exact_elm()
        x = uniform_symbols(rng, c, 50)
        probes = np.zeros((50, 5))
        probes[:, 2] = x
        a_soft = elm_predict(model, probes)
        i_bar = interference_means(model, x)
        v = estimate_covariance(model, a_soft + i_bar, x, i_bar,
                                var_floor=1e-12)
        assert np.allclose(v, 1e-12)

    def test_awgn_residuals_match_sigma2(self):
        model, c, rng = self.make_exact_elm()
        n = 10**4
        x = uniform_symbols(rng, c, n)
        sigma2 = 0.05 ** 2
        y = x + np.sqrt(sigma2) * rng.standard_normal(n)
        y_windows = forward_windows(y, 2, count=n)
        i_bar = interference_means(model, x)
        v = estimate_covariance(model, y_windows, x, i_bar,
                                zero_ref=zero_reference(model))
        # Interior coordinates see signal+noise residuals of pure noise size.
        assert np.all(np.abs(v - sigma2) <= 0.1 * sigma2 + 2e-4)

    def test_output_is_diagonal_vector(self):
        model, c, rng = self.make_exact_elm()
        x = uniform_symbols(rng, c, 100)
        v = estimate_covariance(model, forward_windows(x, 2, count=100), x,
                                interference_means(model, x))
        assert v.shape == (3,)
        assert np.all(v >= 1e-12)

    def test_too_few_windows(self):
        model, c, rng = self.make_exact_elm()
        with pytest.raises(ValueError):
            estimate_covariance(model, np.zeros((2, 3)), np.zeros(2),
                                np.zeros((2, 3)))

    def test_training_residual_variance_dof_scaling(self):
        model, c, rng = self.make_exact_elm()
        x = uniform_symbols(rng, c, 600)
        y = x + 0.05 * rng.standard_normal(600)
        v = training_residual_variance(model, x, y, 2)
        assert v.shape == (3,)
        assert np.all(v > 0)


class TestSisoPostDistorter:
    def test_genie_memoryless_matches_textbook_demapper(self):
        # Acceptance criterion 4 at unit scale: exact genie table on a
        # memoryless AWGN channel reproduces the closed-form PAM posteriors.
        rng = np.random.default_rng(20)
        c = make_pam(3)
        n = 300
        x = uniform_symbols(rng, c, n)
        sigma2 = 0.03 ** 2
        y = x + np.sqrt(sigma2) * rng.standard_normal(n)
        priors = rng.dirichlet(np.ones(8), size=n)
        params = LikelihoodParams(
            signal_table=c.levels[:, None],
            interference_mean=np.zeros((n, 1)),
            cov_diag=np.array([sigma2]))
        post = gaussian_symbol_posteriors(y[:, None], priors, params)
        want = awgn_pam_posteriors(y, c.levels, sigma2, priors)
        assert np.max(np.abs(post - want)) <= 1e-6

    def test_posteriors_normalized(self):
        rng = np.random.default_rng(21)
        c = make_pam(3)
        params = LikelihoodParams(rng.standard_normal((8, 3)),
                                  rng.standard_normal((40, 3)),
                                  np.full(3, 0.1))
        post = gaussian_symbol_posteriors(rng.standard_normal((40, 3)),
                                          np.full((40, 8), 1 / 8), params)
        assert np.max(np.abs(post.sum(axis=1) - 1.0)) <= 1e-12

    def test_huge_covariance_kills_information(self):
        rng = np.random.default_rng(22)
        c = make_pam(3)
        n = 20
        params = LikelihoodParams(rng.standard_normal((8, 3)),
                                  np.zeros((n, 3)), np.full(3, 1e6))
        pd = self._wrap_params(params, c)
        ext = siso_postdistort(rng.standard_normal((n, 3)),
                               np.zeros(n * 3), pd)
        assert np.max(np.abs(ext.values)) <= 1e-3

    def test_symmetric_likelihood_zero_extrinsic(self):
        c = make_pam(3)
        n = 10
        params = LikelihoodParams(np.zeros((8, 3)), np.zeros((n, 3)),
                                  np.full(3, 1.0))
        pd = self._wrap_params(params, c)
        ext = siso_postdistort(np.zeros((n, 3)), np.zeros(n * 3), pd)
        assert np.allclose(ext.values, 0.0)

    def test_extrinsic_decomposition_exact(self):
        rng = np.random.default_rng(23)
        c = make_pam(3)
        n = 30
        params = LikelihoodParams(rng.uniform(0, 1, (8, 3)),
                                  rng.uniform(0, 0.2, (n, 3)),
                                  np.full(3, 0.05))
        pd = self._wrap_params(params, c)
        la = rng.normal(0, 2, n * 3)
        ext = siso_postdistort(rng.uniform(0, 1, (n, 3)), la, pd)
        from ledcomm.coding import symbol_priors_from_llrs, extrinsic_bit_llrs
        priors = symbol_priors_from_llrs(la.reshape(n, 3), c)
        post = gaussian_symbol_posteriors(
            np.zeros((n, 3)), priors, params)  # different y: only checks glue
        assert ext.kind == "extrinsic"

    @staticmethod
    def _wrap_params(params, c):
        from ledcomm.elm import elm_init, elm_train_ls
        model = elm_train_ls(elm_init(3, 3, 5, seed=0),
                             np.zeros((6, 3)), np.zeros((6, 3)))
        window = 1
        pd = SisoElmPostDistorter(model, window, c,
                                  signal_table=params.signal_table,
                                  zero_ref=np.zeros(params.signal_table.shape[1]),
                                  params=params)
        return pd

    def test_unprepared_raises(self):
        c = make_pam(3)
        from ledcomm.elm import elm_init, elm_train_ls
        model = elm_train_ls(elm_init(5, 3, 5, seed=0),
                             np.zeros((6, 5)), np.zeros((6, 3)))
        pd = SisoElmPostDistorter.from_elm(model, 2, c)
        with pytest.raises(ValueError):
            siso_postdistort(np.zeros((4, 3)), np.zeros(12), pd)


class TestGenieParams:
    def test_point_mass_zero_noise_residual(self):
        rng = np.random.default_rng(24)
        channel = MemoryPolynomialModel(np.array([[1.0, 0.15, 0.05],
                                                  [0.3, 0.045, 0.015]]))
        c = make_pam(3)
        n = 80
        x = uniform_symbols(rng, c, n)
        z = mp_apply(channel, np.concatenate([x, np.zeros(2)]))
        y_windows = forward_windows(z, 2, count=n)
        idx = np.searchsorted(c.levels, x)
        priors = np.zeros((n, 8))
        priors[np.arange(n), idx] = 1.0
        params = genie_likelihood_params(channel, priors, 0.0, c, 2)
        means = params.likelihood_means()[np.arange(n), idx]
        # Skip the first window positions (cold-start symbols before the
        # frame are zero inside the genie as well).
        assert np.max(np.abs(means[2:] - y_windows[2:])) <= 1e-10

    def test_perfect_feedback_noise_only_variance(self):
        rng = np.random.default_rng(25)
        channel = MemoryPolynomialModel(np.array([[1.0, 0.15]]))
        c = make_pam(3)
        n = 40
        x = uniform_symbols(rng, c, n)
        idx = np.searchsorted(c.levels, x)
        priors = np.zeros((n, 8))
        priors[np.arange(n), idx] = 1.0
        sigma2 = 0.01
        params = genie_likelihood_params(channel, priors, sigma2, c, 1)
        assert np.max(np.abs(params.cov_diag - sigma2)) <= 1e-12

    def test_linear_channel_matches_direct_soft_canceller(self):
        rng = np.random.default_rng(26)
        channel = MemoryPolynomialModel(np.array([[1.0, 0.3]]))
        c = make_pam(3)
        n = 50
        priors = rng.dirichlet(np.ones(8), size=n)
        sigma2 = 0.005
        params = genie_likelihood_params(channel, priors, sigma2, c, 1)
        soft = priors @ c.levels
        var = priors @ c.levels ** 2 - soft ** 2
        # Coordinate 0 of position n: interference 0.3 x_{n-1}.
        want_mean = 0.3 * np.concatenate([[0.0], soft[:-1]])
        want_var = sigma2 + 0.09 * np.concatenate([[0.0], var[:-1]])
        assert np.allclose(params.interference_mean[:, 0], want_mean)
        assert np.allclose(params.cov_diag[:, 0], want_var)
        # Coordinate 1 of position n: interference 1.0 x_{n+1}.
        want_mean1 = np.concatenate([soft[1:], [0.0]])
        assert np.allclose(params.interference_mean[:, 1], want_mean1)

    def test_signal_table_truncates_beyond_channel_memory(self):
        channel = MemoryPolynomialModel(np.array([[1.0]]))
        c = make_pam(3)
        params = genie_likelihood_params(channel, np.full((10, 8), 1 / 8),
                                         0.01, c, 2)
        assert np.allclose(params.signal_table[:, 0], c.levels)
        assert np.allclose(params.signal_table[:, 1:], 0.0)


class TestConditionalMeans:
    def test_joint_probe_matches_forward_prediction_at_truth(self):
        rng = np.random.default_rng(27)
        c = make_pam(3)
        x = uniform_symbols(rng, c, 900)
        model = elm_channel_train(x, x.copy(), window=2, hidden=150, seed=14)
        data = uniform_symbols(rng, c, 30)
        idx = np.searchsorted(c.levels, data)
        means = conditional_signal_means(model, data, c)
        direct = elm_predict(model, centered_windows(data, 2))
        picked = means[np.arange(30), idx]
        assert np.max(np.abs(picked - direct)) <= 1e-12
