import numpy as np
import pytest
from scipy.special import ndtr

from warpdlm.mvn import MvnParams, Rectangle, rect_prob
from warpdlm.warp import (
    RoundingOperator,
    Transformation,
    Warp,
    count_to_rect,
    fit_nonparametric,
    latent_to_count,
    latent_to_count_many,
    transform_from_text,
    transform_to_text,
)


def _warp1(kind="identity", y_max=None):
    return Warp(RoundingOperator(y_max=y_max), (Transformation(kind),))


class TestCountToRect:
    def test_identity_zero_cell(self):
        r = count_to_rect(_warp1(), [0])
        assert r.lower[0] == -np.inf
        assert r.upper[0] == 0.0

    def test_identity_interior_cell(self):
        r = count_to_rect(_warp1(), [3])
        assert r.lower[0] == 3.0
        assert r.upper[0] == 4.0

    def test_identity_bounded_top_cell(self):
        r = count_to_rect(_warp1(y_max=24), [24])
        assert r.lower[0] == 24.0
        assert r.upper[0] == np.inf

    def test_identity_cell_below_anchor(self):
        # with g(1) = 0 the y=1 cell stretches from 0 up to g(2) = 2
        r = count_to_rect(_warp1(), [1])
        assert r.lower[0] == 0.0
        assert r.upper[0] == 2.0

    def test_log_cells(self):
        r = count_to_rect(_warp1("log"), [1])
        assert r.lower[0] == 0.0
        assert np.isclose(r.upper[0], np.log(2.0))
        r0 = count_to_rect(_warp1("log"), [0])
        assert r0.upper[0] == 0.0

    def test_sqrt_cells(self):
        r = count_to_rect(_warp1("sqrt"), [2])
        assert np.isclose(r.lower[0], np.sqrt(2.0))
        assert np.isclose(r.upper[0], np.sqrt(3.0))

    def test_missing_coordinate_is_whole_line(self):
        w = Warp(RoundingOperator(), (Transformation("identity"), Transformation("log")))
        r = count_to_rect(w, [np.nan, 2])
        assert r.lower[0] == -np.inf and r.upper[0] == np.inf
        assert np.isclose(r.lower[1], np.log(2.0))

    def test_rejects_out_of_support(self):
        with pytest.raises(ValueError):
            count_to_rect(_warp1(y_max=5), [6])
        with pytest.raises(ValueError):
            count_to_rect(_warp1(), [-1])
        with pytest.raises(ValueError):
            count_to_rect(_warp1(), [2.5])
        with pytest.raises(ValueError):
            count_to_rect(_warp1(), [1, 2])


class TestLatentToCount:
    def test_zero_modification(self):
        assert latent_to_count(_warp1(), [-3.2])[0] == 0

    def test_floor_boundary(self):
        assert latent_to_count(_warp1(), [3.999])[0] == 3
        assert latent_to_count(_warp1(), [4.0])[0] == 4

    def test_bounded(self):
        assert latent_to_count(_warp1(y_max=24), [100.0])[0] == 24

    def test_inverse_consistency_all_kinds(self):
        rng = np.random.default_rng(7)
        for kind in ("identity", "log", "sqrt"):
            w = _warp1(kind)
            for z in rng.normal(0.0, 2.0, size=50):
                y = latent_to_count(w, [z])
                r = count_to_rect(w, y)
                assert r.contains(np.array([z]))

    def test_matches_rounding_of_gstar(self):
        # h(g^{-1}(g(y*))) must equal h(y*) directly
        tr = Transformation("sqrt")
        w = Warp(RoundingOperator(y_max=10), (tr,))
        for ystar in np.linspace(0.1, 14.0, 113):
            direct = min(int(np.floor(ystar)) if ystar >= 1 else 0, 10)
            assert latent_to_count(w, [tr.g(ystar)])[0] == direct

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            latent_to_count(_warp1(), [np.inf])

    @pytest.mark.parametrize("kind,y_max", [("identity", None), ("sqrt", 8), ("log", None)])
    def test_vectorized_agrees_with_scalar(self, kind, y_max):
        rng = np.random.default_rng(17)
        w = _warp1(kind, y_max=y_max)
        z = rng.normal(1.0, 2.0, size=(300, 1))
        bulk = latent_to_count_many(w, z)
        for k in range(300):
            assert bulk[k, 0] == latent_to_count(w, z[k])[0]

    def test_vectorized_boundary_values(self):
        w = _warp1("identity")
        z = np.array([[-3.2], [3.999], [4.0], [0.0]])
        assert latent_to_count_many(w, z)[:, 0].tolist() == [0, 3, 4, 1]


class TestTransforms:
    def test_anchored_at_one(self):
        for kind in ("identity", "log", "sqrt"):
            assert Transformation(kind).g(1.0) == pytest.approx(0.0, abs=1e-15)

    def test_mutual_inverses_parametric(self):
        grids = {
            "identity": np.linspace(-6.0, 40.0, 200),
            "log": np.linspace(0.05, 40.0, 200),
            "sqrt": np.linspace(-3.0, 40.0, 200),
        }
        for kind, grid in grids.items():
            tr = Transformation(kind)
            back = tr.g_inv(tr.g(grid))
            assert np.max(np.abs(back - grid)) < 1e-8

    def test_strictly_increasing(self):
        grid = np.linspace(0.01, 50.0, 500)
        for kind in ("identity", "log", "sqrt"):
            vals = Transformation(kind).g(grid)
            assert np.all(np.diff(vals) > 0)

    def test_threshold_ladder_matches_g(self):
        tr = Transformation("sqrt")
        t = tr.thresholds(6)
        assert t.shape == (6,)
        assert t[0] == pytest.approx(0.0, abs=1e-15)
        assert np.allclose(t[1:], np.sqrt(np.arange(2.0, 7.0)))

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            Transformation("cube")


class TestFitNonparametric:
    def test_empirical_cdf_formula(self):
        y = np.tile([0, 1], 10)  # T = 20
        tr = fit_nonparametric(y)
        # knot at a_1 = 1 carries ybar + s * ndtri(count(<=0)/(T+1))
        expect = np.mean(y) + np.std(y, ddof=1) * _ndtri(10 / 21)
        assert tr.knots[0, 0] == 1.0
        assert tr.knots[0, 1] == pytest.approx(expect, rel=1e-12)

    def test_knot_values_strictly_increasing(self):
        rng = np.random.default_rng(3)
        y = rng.poisson(4.0, size=150)
        tr = fit_nonparametric(y)
        assert np.all(np.diff(tr.knots[:, 1]) > 0)

    def test_poisson_round_trip(self):
        rng = np.random.default_rng(11)
        y = rng.poisson(5.0, size=200)
        tr = fit_nonparametric(y)
        grid = np.linspace(0.05, 30.0, 400)
        back = tr.g_inv(tr.g(grid))
        assert np.max(np.abs(back - grid)) < 1e-8

    def test_default_support_max(self):
        rng = np.random.default_rng(5)
        y = rng.poisson(5.0, size=100)
        tr = fit_nonparametric(y)
        assert tr.support_max == min(4 * int(y.max()), 10_000)

    def test_constant_series_rejected(self):
        with pytest.raises(ValueError):
            fit_nonparametric([4, 4, 4, 4])

    def test_support_max_violation_rejected(self):
        with pytest.raises(ValueError):
            fit_nonparametric([1, 2, 3, 50], support_max=10)

    def test_missing_values_dropped(self):
        y = [1.0, np.nan, 2.0, 3.0, np.nan, 1.0]
        tr = fit_nonparametric(y)
        assert tr.knots.shape[0] == 3


class TestPartition:
    @pytest.mark.parametrize("kind", ["identity", "log", "sqrt"])
    def test_cells_tile_the_line(self, kind):
        w = _warp1(kind, y_max=12)
        prev_upper = None
        for j in range(13):
            r = count_to_rect(w, [j])
            if prev_upper is not None:
                assert r.lower[0] == prev_upper
            prev_upper = r.upper[0]
        assert prev_upper == np.inf

    def test_midpoint_round_trip(self):
        w = _warp1("sqrt")
        for j in range(1, 200):
            r = count_to_rect(w, [j])
            mid = 0.5 * (r.lower[0] + r.upper[0])
            assert latent_to_count(w, [mid])[0] == j
        r0 = count_to_rect(w, [0])
        assert latent_to_count(w, [r0.upper[0] - 1.0])[0] == 0

    def test_likelihood_normalization_bounded(self):
        w = _warp1("identity", y_max=24)
        p = MvnParams(np.array([3.0]), np.array([[4.0]]))
        total = 0.0
        for j in range(25):
            prob, _ = rect_prob(count_to_rect(w, [j]), p)
            total += prob
        assert total == pytest.approx(1.0, abs=1e-10)

    def test_likelihood_normalization_nonparametric(self):
        rng = np.random.default_rng(2)
        y = rng.poisson(6.0, size=120)
        tr = fit_nonparametric(y)
        w = Warp(RoundingOperator(y_max=tr.support_max), (tr,))
        p = MvnParams(np.array([float(np.mean(y))]), np.array([[float(np.var(y))]]))
        total = 0.0
        for j in range(tr.support_max + 1):
            prob, _ = rect_prob(count_to_rect(w, [j]), p)
            total += prob
        assert total == pytest.approx(1.0, abs=1e-10)

    def test_likelihood_normalization_unbounded_with_tail(self):
        w = _warp1("identity")
        p = MvnParams(np.array([2.0]), np.array([[1.5]]))
        total = 0.0
        for j in range(60):
            prob, _ = rect_prob(count_to_rect(w, [j]), p)
            total += prob
        tail = 1.0 - ndtr((60.0 - 2.0) / np.sqrt(1.5))
        assert total + tail == pytest.approx(1.0, abs=1e-9)


class TestSerialization:
    def test_nonparametric_round_trip(self):
        rng = np.random.default_rng(9)
        y = rng.poisson(3.0, size=80)
        tr = fit_nonparametric(y)
        text = transform_to_text(tr)
        tr2 = transform_from_text(text)
        assert tr2.kind == "nonparametric"
        assert tr2.support_max == tr.support_max
        grid = np.linspace(-1.0, 15.0, 100)
        assert np.array_equal(tr.g(grid), tr2.g(grid))

    def test_parametric_round_trip(self):
        text = transform_to_text(Transformation("log"))
        tr = transform_from_text(text)
        assert tr.kind == "log"
        assert tr.knots is None

    def test_missing_kind_rejected(self):
        with pytest.raises(ValueError):
            transform_from_text("1.0 2.0\n")


class TestWarpType:
    def test_single_transform_promoted(self):
        w = Warp(RoundingOperator(), Transformation("identity"))
        assert w.n == 1

    def test_rejects_bad_y_max(self):
        with pytest.raises(ValueError):
            RoundingOperator(y_max=0)

    def test_rejects_non_transform(self):
        with pytest.raises(TypeError):
            Warp(RoundingOperator(), ("identity",))


def _ndtri(p):
    from scipy.special import ndtri as f

    return f(p)
