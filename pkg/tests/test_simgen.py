"""Tests for the synthetic count-series generators."""

import numpy as np
import pytest
from scipy import stats

from warpdlm.simgen import CountSeries, gen_ingarch, gen_mpsb, gen_zip_bounded


class TestZipBounded:
    def test_support_and_shapes(self):
        cs = gen_zip_bounded(20000, np.random.default_rng(0))
        assert cs.y.shape == (20000,)
        assert cs.latent.shape == (20000,)
        assert cs.y.dtype == np.int64
        assert cs.y.min() >= 0
        assert cs.y.max() <= 24
        assert (cs.latent >= 0).all()

    def test_zero_rate_at_least_inflation(self):
        # P(y=0) = pi + (1 - pi) * P(Poisson(lam)=0) >= pi; the empirical
        # rate over a long run should clear the floor
        cs = gen_zip_bounded(100000, np.random.default_rng(1), pi=0.25)
        rate = (cs.y == 0).mean()
        assert rate >= 0.25
        se = np.sqrt(0.25 * 0.75 / cs.y.size)
        assert rate >= 0.25 - 3 * se

    def test_all_zero_when_inflation_is_one(self):
        cs = gen_zip_bounded(500, np.random.default_rng(2), pi=1.0)
        assert (cs.y == 0).all()

    def test_capped_mean_matches_oracle(self):
        """With no inflation and a frozen rate the sample mean must match
        the capped-Poisson expectation.  The closed-form value is cross
        checked against a direct simulation with an independent stream."""
        lam = 20.0
        j = np.arange(0, 25)
        pmf = stats.poisson.pmf(j, lam)
        tail = stats.poisson.sf(24, lam)
        mean_exact = float((j * pmf).sum() + 24 * tail)
        m2 = float((j**2 * pmf).sum() + 24**2 * tail)
        sd_exact = np.sqrt(m2 - mean_exact**2)

        oracle_rng = np.random.default_rng(99)
        sim_oracle = np.minimum(oracle_rng.poisson(lam, 400000), 24).mean()
        assert abs(sim_oracle - mean_exact) < 4 * sd_exact / np.sqrt(400000)

        T = 200000
        cs = gen_zip_bounded(T, np.random.default_rng(7), pi=0.0, lam_init=lam, walk_var=0.0)
        assert abs(cs.y.mean() - mean_exact) < 3 * sd_exact / np.sqrt(T)

    def test_reflection_keeps_rate_nonnegative(self):
        cs = gen_zip_bounded(2000, np.random.default_rng(3), lam_init=0.1, walk_var=5.0)
        assert (cs.latent >= 0).all()

    def test_drawn_parameters_recorded(self):
        cs = gen_zip_bounded(10, np.random.default_rng(4))
        assert 0.1 <= cs.params["pi"] <= 0.3
        assert 5.0 <= cs.params["lam_init"] <= 15.0
        assert cs.params["walk_var_unit"] == "variance"

    def test_deterministic_given_seed(self):
        a = gen_zip_bounded(300, np.random.default_rng(42))
        b = gen_zip_bounded(300, np.random.default_rng(42))
        assert np.array_equal(a.y, b.y)
        assert np.array_equal(a.latent, b.latent)
        assert a.params == b.params

    def test_rejects_bad_arguments(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            gen_zip_bounded(0, rng)
        with pytest.raises(ValueError):
            gen_zip_bounded(10, rng, pi=1.5)
        with pytest.raises(ValueError):
            gen_zip_bounded(10, rng, walk_var=-0.1)


class TestIngarch:
    def test_no_feedback_is_iid_poisson(self):
        cs = gen_ingarch(200000, np.random.default_rng(11), beta0=0.3, betas=(), alphas=())
        m = cs.y.mean()
        assert abs(m - 0.3) < 3 * np.sqrt(0.3 / cs.y.size)
        assert 0.95 < cs.y.var(ddof=1) / m < 1.05
        p0 = (cs.y == 0).mean()
        se0 = np.sqrt(np.exp(-0.3) * (1 - np.exp(-0.3)) / cs.y.size)
        assert abs(p0 - np.exp(-0.3)) < 3 * se0

    def test_default_long_run_mean(self):
        # stationary mean beta0 / (1 - beta1 - alpha1) = 0.3 / 0.2 = 1.5
        cs = gen_ingarch(100000, np.random.default_rng(12))
        assert abs(cs.y.mean() - 1.5) < 0.15

    def test_rate_stays_positive(self):
        cs = gen_ingarch(5000, np.random.default_rng(5))
        assert (cs.latent >= 0.3).all()

    def test_lag_bookkeeping_matches_hand_recursion(self):
        """Re-run the recursion by hand on the same stream.  The generator
        consumes exactly one Poisson draw per step, so a manual replay with
        explicit lag handling must reproduce it bit for bit."""
        b0, b, a = 0.25, (0.3, 0.2), (0.25,)
        cs = gen_ingarch(8, np.random.default_rng(314), beta0=b0, betas=b, alphas=a, burnin=0)
        r = np.random.default_rng(314)
        start = b0 / (1 - sum(b) - sum(a))
        y1 = y2 = int(np.floor(start))
        l1 = start
        ys, ls = [], []
        for _ in range(8):
            lam = b0 + b[0] * y1 + b[1] * y2 + a[0] * l1
            yt = int(r.poisson(lam))
            ys.append(yt)
            ls.append(lam)
            y2, y1, l1 = y1, yt, lam
        assert np.array_equal(cs.y, ys)
        assert np.allclose(cs.latent, ls)

    def test_negative_coefficients_rejected(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            gen_ingarch(10, rng, beta0=-0.1)
        with pytest.raises(ValueError):
            gen_ingarch(10, rng, betas=(-0.5,))
        with pytest.raises(ValueError):
            gen_ingarch(10, rng, alphas=(0.1, -0.2))

    def test_nonstationary_weights_warn(self):
        with pytest.warns(RuntimeWarning, match="no\\s+stationary mean"):
            cs = gen_ingarch(30, np.random.default_rng(13), betas=(0.7,), alphas=(0.4,), burnin=0)
        assert np.isfinite(cs.latent).all()

    def test_deterministic_given_seed(self):
        a = gen_ingarch(500, np.random.default_rng(77))
        b = gen_ingarch(500, np.random.default_rng(77))
        assert np.array_equal(a.y, b.y)
        assert np.array_equal(a.latent, b.latent)


class TestMpsb:
    def test_degenerate_start_gives_exact_poisson_first_row(self):
        # with theta fixed at 1 the first row is a plain Poisson(lam) draw,
        # identical to pulling it straight off the same stream
        for seed in range(5):
            got = gen_mpsb(1, np.random.default_rng(seed), n=1, lambdas=(1.0,), theta0=1.0)
            raw = np.random.default_rng(seed).poisson(np.array([1.0]))[0]
            assert got.y[0, 0] == raw

    def test_degenerate_start_first_row_frequencies(self):
        draws = np.array(
            [
                gen_mpsb(1, np.random.default_rng(5000 + i), n=1, lambdas=(1.0,), theta0=1.0).y[0, 0]
                for i in range(5000)
            ]
        )
        kmax = max(6, int(draws.max()))
        obs = np.bincount(draws, minlength=kmax + 1).astype(float)
        exp = stats.poisson.pmf(np.arange(kmax + 1), 1.0) * draws.size
        cut = int(np.searchsorted(exp[::-1].cumsum()[::-1] < 5, True))
        obs = np.append(obs[:cut], obs[cut:].sum())
        exp = np.append(exp[:cut], exp[cut:].sum())
        chi = ((obs - exp) ** 2 / exp).sum()
        assert stats.chi2.sf(chi, obs.size - 1) > 0.01

    def test_state_is_a_martingale(self):
        # E[eps] = gamma, so E[theta_t | theta_{t-1}] = theta_{t-1} and the
        # replicate mean of the final state must sit at the start value
        R, T = 3000, 4
        finals = np.array(
            [gen_mpsb(T, np.random.default_rng(10_000 + i), theta0=2.0).latent[-1] for i in range(R)]
        )
        se = finals.std(ddof=1) / np.sqrt(R)
        assert abs(finals.mean() - 2.0) < 3 * se

    def test_defaults_do_not_collapse_over_long_run(self):
        cs = gen_mpsb(4000, np.random.default_rng(2026))
        assert cs.y.shape == (4000, 5)
        assert (cs.y[3600:].mean(axis=0) > 0).all()
        assert (cs.latent > 0).all()

    def test_information_weight_underflow_raises(self):
        # a starving gamma drains the weight geometrically until the Beta
        # parameters hit zero
        with pytest.raises(ValueError, match="underflowed"):
            gen_mpsb(
                200,
                np.random.default_rng(0),
                n=1,
                lambdas=(1e-9,),
                gamma=1e-8,
                alpha0=1.0,
                theta0=1e-9,
            )

    def test_mean_scales_with_lambda(self):
        # all coordinates share one state, so column mean / lambda estimates
        # the same quantity everywhere
        cs = gen_mpsb(20000, np.random.default_rng(8))
        ratio = cs.y.mean(axis=0) / np.array(cs.params["lambdas"])
        assert ratio.max() - ratio.min() < 0.1 * ratio.mean()

    def test_argument_validation(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            gen_mpsb(10, rng, n=3)
        with pytest.raises(ValueError):
            gen_mpsb(10, rng, n=2, lambdas=(1.0, 2.0, 3.0))
        with pytest.raises(ValueError):
            gen_mpsb(10, rng, lambdas=(1.0, -2.0))
        with pytest.raises(ValueError):
            gen_mpsb(10, rng, gamma=1.2)
        with pytest.raises(ValueError):
            gen_mpsb(10, rng, alpha0=0.0)
        with pytest.raises(ValueError):
            gen_mpsb(10, rng, theta0=-1.0)
        with pytest.raises(ValueError):
            gen_mpsb(0, rng)

    def test_deterministic_given_seed(self):
        a = gen_mpsb(100, np.random.default_rng(55))
        b = gen_mpsb(100, np.random.default_rng(55))
        assert np.array_equal(a.y, b.y)
        assert np.array_equal(a.latent, b.latent)
        assert a.params == b.params

    def test_recorded_theta0_is_the_draw(self):
        cs = gen_mpsb(5, np.random.default_rng(9))
        assert cs.params["theta0"] == cs.latent[0]
        assert cs.params["theta0"] > 0
