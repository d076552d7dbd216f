import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from levyasclt import estimators as est
from levyasclt.errors import DimensionMismatch, DomainTooSmall, MissingEvalTime, OutOfHorizon, WeightMismatch
from levyasclt.levy import (
    DiscreteJumps,
    ExpWeight,
    LevyModel,
    NormalJumps,
    PowerWeight,
    SamplePath,
    WeightedPath,
    simulate_path,
    simulate_vector_path,
    weighted_integral,
)
from levyasclt.normalization import ExpScale, PowerDiag, SqrtScalar


def scaled(path, c):
    return SamplePath(path.grid, c * path.values, path.jump_times, c * path.jump_sizes, path.knot_times,
                      c * path.knot_cont, path.grid_index, c * path.drift, path.seed_tag)


def without_extra_knots(path):
    """Drop knots that are neither grid points nor jump times."""
    keep = np.isin(path.knot_times, np.concatenate((path.grid, path.jump_times)))
    knots = path.knot_times[keep]
    return SamplePath(path.grid, path.values, path.jump_times, path.jump_sizes, knots, path.knot_cont[keep],
                      np.searchsorted(knots, path.grid), path.drift, path.seed_tag)


def zero_path(horizon=100.0, step=0.5):
    grid = np.arange(0.0, horizon + step / 2, step)
    z = np.zeros(grid.size)
    idx = np.arange(grid.size)
    return SamplePath(grid, z, np.empty(0), np.empty(0), grid, z.copy(), idx, 0.0)


class TestSigmaHat:
    def test_deterministic_path(self):
        model = LevyModel(drift=0.7, gaussian_vol=0.0)
        p = simulate_path(model, 100.0, 0.1, np.random.default_rng(0))
        np.testing.assert_array_equal(est.sigma2_hat(p, 0.7, [10.0, 100.0]).values, 0.0)

    def test_homogeneity(self, jump_model, rng):
        p = simulate_path(jump_model, 200.0, 0.1, rng)
        ts = [20.0, 200.0]
        base = est.sigma2_hat(p, jump_model.m, ts).values
        for c in (0.5, 3.0):
            np.testing.assert_allclose(est.sigma2_hat(scaled(p, c), c * jump_model.m, ts).values, c * c * base,
                                       rtol=1e-12)

    def test_against_direct_quadrature(self, bm_model, rng):
        # Brownian path: no jumps, so the integrand is continuous on the grid
        p = simulate_path(bm_model, 50.0, 0.01, rng)
        m = p.values
        g = p.grid
        direct = integrate.trapezoid(m * m / (1 + g) ** 2, g) / math.log1p(50.0)
        assert est.sigma2_hat(p, 0.0, [50.0]).values[0] == pytest.approx(direct, rel=1e-4)

    def test_step_refinement(self, jump_model):
        fine = simulate_path(jump_model, 1000.0, 0.005, np.random.default_rng(1))
        coarse = without_extra_knots(fine.coarsened(2))
        a = est.sigma2_hat(fine, jump_model.m, [1000.0]).values[0]
        b = est.sigma2_hat(coarse, jump_model.m, [1000.0]).values[0]
        assert abs(a - b) <= 1e-3 * abs(a)

    def test_out_of_horizon(self, bm_model, rng):
        p = simulate_path(bm_model, 10.0, 0.1, rng)
        with pytest.raises(OutOfHorizon):
            est.sigma2_hat(p, 0.0, [11.0])

    def test_consistency_small_mc(self, bm_model):
        rng = np.random.default_rng(2)
        vals = [est.sigma2_hat(simulate_path(bm_model, 1000.0, 0.1, rng), 0.0, [1000.0]).values[0]
                for _ in range(50)]
        # per-replicate sd ~ 2/sqrt(log 1000) = 0.76
        assert abs(np.mean(vals) - 1.0) <= 0.4


class TestSigmaTilde:
    def test_zero(self):
        p = zero_path()
        w = WeightedPath(p.grid, np.zeros(p.grid.size), ExpWeight(0.5).log_scale(p.grid), ExpWeight(0.5),
                         np.zeros(p.grid.size - 1))
        np.testing.assert_array_equal(est.sigma2_tilde(w, 0.5, [50.0, 100.0]).values, 0.0)

    def test_raw_vs_rescaled(self, jump_model, rng):
        p = simulate_path(jump_model, 50.0, 0.01, rng, seed_tag=1)
        w = weighted_integral(p, jump_model, ExpWeight(0.5))
        ts = [5.0, 20.0, 50.0]
        np.testing.assert_allclose(est.sigma2_tilde(w, 0.5, ts).values,
                                   est.sigma2_tilde_raw(w, 0.5, ts).values, rtol=1e-10)

    def test_weight_mismatch(self, bm_model, rng):
        p = simulate_path(bm_model, 10.0, 0.1, rng, seed_tag=1)
        with pytest.raises(WeightMismatch):
            est.sigma2_tilde(weighted_integral(p, bm_model, ExpWeight(0.3)), 0.5, [10.0])
        with pytest.raises(WeightMismatch):
            est.sigma2_tilde(weighted_integral(p, bm_model, PowerWeight(0.5)), 0.5, [10.0])

    def test_homogeneity(self, jump_model, rng):
        p = simulate_path(jump_model, 100.0, 0.05, rng, seed_tag=4)
        base = est.sigma2_tilde(weighted_integral(p, jump_model, ExpWeight(0.5)), 0.5, [100.0]).values[0]
        w3 = weighted_integral(scaled(p, 3.0), LevyModel(0.6, 1.5, 1.5, NormalJumps(0.0, 3 * math.sqrt(0.5))),
                               ExpWeight(0.5))
        assert est.sigma2_tilde(w3, 0.5, [100.0]).values[0] == pytest.approx(9 * base, rel=1e-10)

    @pytest.mark.parametrize("seed", range(4))
    def test_step_refinement(self, jump_model, seed):
        # experiment settings: T = 1e4, step 0.01 against its halving
        fine = simulate_path(jump_model, 1e4, 0.005, np.random.default_rng(seed), seed_tag=seed)
        w = ExpWeight(0.5)
        a = est.sigma2_tilde(weighted_integral(fine, jump_model, w), 0.5, [1e4]).values[0]
        b = est.sigma2_tilde(weighted_integral(fine.coarsened(2), jump_model, w), 0.5, [1e4]).values[0]
        assert abs(a - b) <= 1e-3 * abs(a)


class TestMatrixLFQ:
    def test_zero(self):
        p = zero_path()
        v = est.matrix_lfq([p, p], [0.0, 0.0], SqrtScalar(2), [50.0]).values
        np.testing.assert_array_equal(v, 0.0)

    def test_matches_sigma_hat(self, jump_model, rng):
        p = simulate_path(jump_model, 1000.0, 0.01, rng)
        ts = [10.0, 100.0, 1000.0]
        a = est.sigma2_hat(p, jump_model.m, ts).values
        b = est.matrix_lfq(p, jump_model.m, SqrtScalar(1), ts).values[:, 0, 0]
        assert np.max(np.abs(a - b)) <= 1e-6

    def test_symmetric(self, jump_model, rng):
        paths = simulate_vector_path([jump_model] * 3, 100.0, 0.1, rng)
        v = est.matrix_lfq(paths, [jump_model.m] * 3, SqrtScalar(3), [100.0]).values[0]
        assert np.array_equal(v, v.T)

    def test_dimension_mismatch(self, bm_model, rng):
        p = simulate_path(bm_model, 10.0, 0.1, rng)
        with pytest.raises(DimensionMismatch):
            est.matrix_lfq([p], [0.0], SqrtScalar(2), [10.0])

    def test_unshared_knots(self, jump_model):
        a = simulate_path(jump_model, 10.0, 0.1, np.random.default_rng(1))
        b = simulate_path(jump_model, 10.0, 0.1, np.random.default_rng(2))
        with pytest.raises(DimensionMismatch):
            est.matrix_lfq([a, b], [0.0, 0.0], SqrtScalar(2), [10.0])

    def test_off_diagonal_independence(self, bm_model):
        rng = np.random.default_rng(4)
        off = []
        for _ in range(200):
            paths = simulate_vector_path([bm_model] * 2, 200.0, 0.1, rng)
            off.append(est.matrix_lfq(paths, [0.0, 0.0], PowerDiag([1.0, 1.0]), [200.0]).values[0, 0, 1])
        off = np.array(off)
        assert abs(off.mean()) <= 3 * off.std(ddof=1) / math.sqrt(off.size)


class TestCltStatistics:
    def test_zero_at_truth(self):
        s = est.EstimatorSeries(est.EstimatorKind.SIGMA_HAT, np.array([10.0]), np.array([1.5]))
        assert est.clt_statistic(s, 1.5, 10.0, est.LogRate()) == 0.0

    def test_targets(self):
        assert est.LogRate().target_variance(1.0) == 4.0
        assert est.PolyRate(0.5).target_variance(1.0) == 2.0
        assert est.PolyRate(0.5).target_variance(2.0) == 8.0

    def test_scaling(self):
        s = est.EstimatorSeries(est.EstimatorKind.SIGMA_TILDE, np.array([100.0]), np.array([1.2]))
        assert est.clt_statistic(s, 1.0, 100.0, est.PolyRate(0.5)) == pytest.approx(100 ** 0.25 * 0.2)
        s = est.EstimatorSeries(est.EstimatorKind.SIGMA_HAT, np.array([100.0]), np.array([1.2]))
        assert est.clt_statistic(s, 1.0, 100.0, est.LogRate()) == pytest.approx(math.sqrt(math.log(101)) * 0.2)

    def test_missing_time(self):
        s = est.EstimatorSeries(est.EstimatorKind.SIGMA_HAT, np.array([10.0]), np.array([1.0]))
        with pytest.raises(MissingEvalTime):
            est.clt_statistic(s, 1.0, 20.0, est.LogRate())

    def test_constants_d1(self):
        c = est.clt_constants([[0.5]], [[1.0]])
        assert c["matrix"] == pytest.approx(2.0)
        assert c["scalar"] == pytest.approx(1.0)
        assert c["applied"] == pytest.approx(2.0)
        # the matrix form and the variance-estimator form agree in d = 1
        assert c["matrix"] == pytest.approx(c["applied"])

    def test_constants_d2(self):
        c = est.clt_constants(np.diag([0.5, 1.0]), np.eye(2))
        assert c["matrix"] == pytest.approx(2 * math.sqrt(4.5), rel=1e-12)
        assert c["matrix"] == pytest.approx(4.2426, abs=1e-4)

    def test_matrix_stat_zero(self):
        p = zero_path()
        stat, target = est.matrix_clt_statistic([p], [0.0], SqrtScalar(1), 0.0, 100.0)
        assert stat == 0.0 and target == 0.0

    def test_matrix_stat_matches_sigma_hat_clt(self, jump_model, rng):
        p = simulate_path(jump_model, 1000.0, 0.01, rng)
        stat, _ = est.matrix_clt_statistic([p], [jump_model.m], SqrtScalar(1), 1.0, 1000.0)
        hat = est.sigma2_hat(p, jump_model.m, [1000.0])
        assert stat == pytest.approx(est.clt_statistic(hat, 1.0, 1000.0, est.LogRate()), rel=1e-9)


class TestLil:
    def test_zero(self):
        p = zero_path(1000.0, 1.0)
        s = est.lil_statistic([p], [0.0], SqrtScalar(1), 0.0, [100.0, 1000.0])
        np.testing.assert_array_equal(s.values, 0.0)

    def test_domain_guard(self, bm_model, rng):
        p = simulate_path(bm_model, 100.0, 0.1, rng)
        # log(1 + t) <= e for t <= e^e - 1 ~ 14.15
        with pytest.raises(DomainTooSmall):
            est.lil_statistic([p], [0.0], SqrtScalar(1), 1.0, [10.0, 100.0])
        with pytest.raises(DomainTooSmall):
            est.lil_sup([p], [0.0], SqrtScalar(1), 1.0, 10.0, 100.0)
        s = est.lil_statistic([p], [0.0], SqrtScalar(1), 1.0, [15.0, 100.0])
        assert np.all(SqrtScalar(1).logdet(s.eval_times) > math.e)

    def test_bounds(self):
        assert est.scalar_lil_bound(0.5, 1.0) == 1.0
        assert est.lil_bound(SqrtScalar(1), 1.0) == pytest.approx(1.0)

    def test_sup_dominates_series(self, jump_model, rng):
        p = simulate_path(jump_model, 1000.0, 0.1, rng)
        s = est.lil_statistic([p], [jump_model.m], SqrtScalar(1), 1.0, np.geomspace(100, 1000, 7))
        assert est.lil_sup([p], [jump_model.m], SqrtScalar(1), 1.0, 100.0, 1000.0) >= np.max(np.abs(s.values))


class TestLindeberg:
    def test_no_jumps(self, bm_model):
        for t in (1.0, 100.0):
            assert est.lindeberg_diagnostic(bm_model, SqrtScalar(1), t, 0.1) == 0.0

    def test_discrete_unit_jumps(self):
        model = LevyModel(0.0, 0.0, 1.0, DiscreteJumps((-1.0, 1.0), (0.5, 0.5)))
        for t in (0.01, 1.0, 100.0):
            assert est.lindeberg_diagnostic(model, SqrtScalar(1), t, 1.0) == 0.0

    def test_normal_jumps(self):
        model = LevyModel(0.0, 0.0, 1.0, NormalJumps(0.0, 1.0))
        vals = [est.lindeberg_diagnostic(model, SqrtScalar(1), t, 0.1) for t in (1e2, 1e3, 1e4)]
        assert vals[0] > vals[1] > vals[2]
        assert vals[2] < 1e-6

    def test_analytic_against_quadrature(self):
        model = LevyModel(0.0, 0.0, 1.3, NormalJumps(0.2, 0.8))
        for t in (10.0, 100.0, 1000.0):
            v = math.sqrt(1 + t)
            c = 0.1 * v
            f = lambda y: y * y * stats.norm.pdf(y, 0.2, 0.8)  # noqa: E731
            tail = integrate.quad(f, c, np.inf, epsabs=0, epsrel=1e-12)[0]
            tail += integrate.quad(f, -np.inf, -c, epsabs=0, epsrel=1e-12)[0]
            ref = 1.3 * t / v ** 2 * tail
            assert est.lindeberg_diagnostic(model, SqrtScalar(1), t, 0.1) == pytest.approx(ref, rel=1e-8, abs=1e-300)


class TestRateCheck:
    def test_brownian_closed_form(self, bm_model, rng):
        p = simulate_path(bm_model, 1e4, 1.0, rng)
        ts = np.array([1e2, 1e3, 1e4])
        got = est.hypothesis_rate_check(p, bm_model, SqrtScalar(1), ts, 0.75)
        np.testing.assert_allclose(got, np.log1p(ts) ** 0.75 / (1 + ts), rtol=1e-10)

    def test_poisson_decreasing(self):
        model = LevyModel(0.0, 0.0, 1.0, DiscreteJumps((1.0,), (1.0,)))
        rng = np.random.default_rng(8)
        ts = np.array([1e2, 1e3, 1e4])
        rows = [est.hypothesis_rate_check(simulate_path(model, 1e4, 10.0, rng), model, SqrtScalar(1), ts, 0.75)
                for _ in range(100)]
        med = np.median(np.array(rows), axis=0)
        assert med[0] > med[1] > med[2]

    def test_monotone_in_rho(self, jump_model, rng):
        p = simulate_path(jump_model, 1e3, 1.0, rng)
        ts = np.array([10.0, 100.0, 1000.0])
        lo = est.hypothesis_rate_check(p, jump_model, SqrtScalar(1), ts, 0.51)
        hi = est.hypothesis_rate_check(p, jump_model, SqrtScalar(1), ts, 2.0)
        assert np.all(hi >= lo)

    def test_rho_guard(self, jump_model, rng):
        p = simulate_path(jump_model, 10.0, 1.0, rng)
        with pytest.raises(ValueError):
            est.hypothesis_rate_check(p, jump_model, SqrtScalar(1), [5.0], 0.5)

    def test_boundedness_proxy(self):
        assert est.rate_boundedness(np.ones(40)) == 1.0
        assert est.rate_boundedness(np.r_[np.ones(39), 100.0]) > 10


class TestCharExponent:
    def test_zero(self, jump_model):
        assert est.char_exponent(jump_model, SqrtScalar(1), 0.0, 10.0) == 1.0

    def test_gaussian(self):
        model = LevyModel(0.0, 1.3, 0.0)
        t, u = 50.0, 0.7
        expected = math.exp(-0.5 * u * u * 1.69 * t / (1 + t))
        assert est.char_exponent(model, SqrtScalar(1), u, t) == pytest.approx(expected, rel=1e-14)
        assert est.gaussian_gap(model, SqrtScalar(1), u, 1e8) < 1e-8

    def test_discrete_symmetric(self):
        model = LevyModel(0.0, 0.0, 2.0, DiscreteJumps((-1.0, 1.0), (0.5, 0.5)))
        t = 1e4
        closed = math.exp(2 * t * (math.cos(1 / math.sqrt(1 + t)) - 1))
        assert est.char_exponent(model, SqrtScalar(1), 1.0, t).real == pytest.approx(closed, rel=1e-12)
        assert est.gaussian_gap(model, SqrtScalar(1), 1.0, t) <= 1e-3


def test_series_csv(tmp_path, jump_model, rng):
    paths = simulate_vector_path([jump_model] * 2, 50.0, 0.1, rng)
    s = est.matrix_lfq(paths, [jump_model.m] * 2, SqrtScalar(2), [10.0, 50.0], config_hash="abc")
    s.to_csv(tmp_path / "lfq.csv", {"family": "sqrt"})
    lines = (tmp_path / "lfq.csv").read_text().splitlines()
    assert lines[0] == "kind,t,value_0,value_1,value_2,value_3"
    assert lines[1].startswith("MatrixLFQ,10.0,")
    side = json.loads((tmp_path / "lfq.csv.json").read_text())
    assert side == {"config_hash": "abc", "count": 2, "family": "sqrt", "kind": "MatrixLFQ"}
    np.testing.assert_array_equal(s.value_at(50.0), s.values[1])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
def test_lfq_homogeneity_property(seed, c):
    model = LevyModel(0.0, 1.0, 0.5, NormalJumps(0.0, 1.0))
    paths = simulate_vector_path([model] * 2, 30.0, 0.1, np.random.default_rng(seed))
    base = est.matrix_lfq(paths, [0.0, 0.0], SqrtScalar(2), [30.0]).values
    big = est.matrix_lfq([scaled(p, c) for p in paths], [0.0, 0.0], SqrtScalar(2), [30.0]).values
    np.testing.assert_allclose(big, c * c * base, rtol=1e-10, atol=1e-14)
