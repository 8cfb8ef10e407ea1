import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from balance_lab import (
    Dataset,
    enumeration_oracle,
    exact_cov_delta,
    exact_variance_delta_j,
    normal_approx_test,
    variance_report,
)
from balance_lab.errors import DegenerateAssignment, TooManyAssignments, ZeroVariance
from balance_lab.variance import _revolving_door_swaps


def standardized(values):
    v = np.asarray(values, dtype=float)
    return (v - v.mean()) / v.std()


class TestExactVarianceDeltaJ:
    def test_standardized_small_case(self):
        # N=4, n1=n0=2, unit population variance: 16 / (3*4) = 4/3
        col = standardized([1.0, 2.0, 3.0, 4.0])
        assert np.isclose(exact_variance_delta_j(col, 2, 2), 4.0 / 3.0, rtol=1e-14)

    def test_matches_enumeration(self):
        col = standardized([1.0, 2.0, 3.0, 4.0])
        values = []
        for comb in itertools.combinations(range(4), 2):
            mask = np.zeros(4, dtype=bool)
            mask[list(comb)] = True
            values.append(col[mask].mean() - col[~mask].mean())
        assert np.isclose(np.var(values), 4.0 / 3.0, rtol=1e-12)

    def test_constant_column(self):
        assert exact_variance_delta_j(np.full(6, 2.0), 3, 3) == 0.0

    def test_scale_equivariance(self, rng):
        col = rng.normal(size=10)
        assert np.isclose(
            exact_variance_delta_j(2 * col, 4, 6),
            4 * exact_variance_delta_j(col, 4, 6),
            rtol=1e-12,
        )

    def test_degenerate(self):
        with pytest.raises(DegenerateAssignment):
            exact_variance_delta_j(np.ones(4), 0, 4)


class TestExactCovDelta:
    def test_self_covariance_is_variance(self, rng):
        col = rng.normal(size=8)
        assert np.isclose(
            exact_cov_delta(col, col, 3, 5), exact_variance_delta_j(col, 3, 5), rtol=1e-14
        )

    def test_orthogonal_columns(self):
        a = standardized([1.0, -1.0, 1.0, -1.0, 1.0, -1.0])
        b = standardized([1.0, 1.0, -1.0, -1.0, 1.0, -1.0])
        b = b - (b @ a) / (a @ a) * a  # exact zero population covariance
        assert abs(exact_cov_delta(a, b, 3, 3)) < 1e-15

    def test_correlated_pair_n6(self, rng):
        # Cov = rho * 36 / (5*9); with rho = 0.5 this is 0.4
        a = rng.normal(size=6)
        b = 0.5 * a + rng.normal(size=6)
        a_std, b_std = standardized(a), standardized(b)
        rho = float(np.mean(a_std * b_std))
        formula = 36.0 / 45.0 * rho
        assert np.isclose(exact_cov_delta(a_std, b_std, 3, 3), formula, rtol=1e-12)
        oracle = enumeration_oracle(np.column_stack([a_std, b_std]), 3, "uw")
        var_uw = (
            exact_variance_delta_j(a_std, 3, 3)
            + exact_variance_delta_j(b_std, 3, 3)
            + 2 * exact_cov_delta(a_std, b_std, 3, 3)
        )
        assert np.isclose(oracle.variance, var_uw, rtol=1e-10)
        assert np.isclose(36.0 / 45.0 * 0.5, 0.4)


class TestVarianceReport:
    def make(self, x, n1, y=None):
        n = x.shape[0]
        z = np.zeros(n, dtype=int)
        z[:n1] = 1
        return Dataset(x=x, z=z, y_obs=y if y is not None else np.arange(float(n)))

    def test_perfectly_correlated_pair(self):
        col = standardized([1.0, 2.0, 3.0, 4.0])
        d = self.make(np.column_stack([col, col]), 2)
        report = variance_report(d, np.ones(2))
        assert np.isclose(report.var_delta_uw, 16.0 / 3.0, rtol=1e-12)
        oracle = enumeration_oracle(np.column_stack([col, col]), 2, "uw")
        assert np.isclose(oracle.variance, 16.0 / 3.0, rtol=1e-12)

    def test_unit_weights_reduce_to_uw(self, rng):
        d = self.make(rng.normal(size=(12, 3)), 5)
        report = variance_report(d, np.ones(3))
        assert np.isclose(report.var_delta_rw_conditional, report.var_delta_uw, rtol=1e-14)

    def test_independent_columns_approximation(self):
        g = np.random.default_rng(3)
        n, p = 2000, 4
        d = self.make(g.normal(size=(n, p)), n // 2)
        report = variance_report(d, np.ones(p))
        base = n * n / ((n - 1) * (n // 2) ** 2)
        rho_sum = report.population_cov[np.triu_indices(p, 1)].sum()
        assert abs(report.var_delta_uw - p * base) <= 2.5 * base * abs(rho_sum) + 1e-12

    def test_matrix_invariants(self, rng):
        d = self.make(rng.normal(size=(14, 4)), 6)
        w = rng.normal(size=4)
        report = variance_report(d, w, scale="raw")
        np.testing.assert_allclose(report.cov_delta, report.cov_delta.T, atol=1e-14)
        np.testing.assert_allclose(np.diag(report.cov_delta), report.var_delta_j, atol=1e-14)
        ones = np.ones(4)
        assert abs(report.var_delta_uw - ones @ report.cov_delta @ ones) < 1e-12
        assert abs(report.var_delta_rw_conditional - w @ report.cov_delta @ w) < 1e-12
        assert (report.var_delta_j >= 0).all()
        assert np.linalg.eigvalsh(report.cov_delta).min() >= -1e-10


class TestRevolvingDoor:
    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(2, 10), k=st.integers(1, 9))
    def test_visits_each_subset_once_by_single_swaps(self, n, k):
        if k >= n:
            return
        current = set(range(k))
        seen = {frozenset(current)}
        for out_i, in_i in _revolving_door_swaps(n, k):
            assert out_i in current and in_i not in current
            current.remove(out_i)
            current.add(in_i)
            key = frozenset(current)
            assert key not in seen
            seen.add(key)
        assert len(seen) == math.comb(n, k)


class TestEnumerationOracle:
    def test_mean_zero(self, rng):
        x = rng.normal(size=(8, 2))
        for stat, kwargs in (
            ("uw", {}),
            ("rw", {"weights": rng.normal(size=2)}),
            ("delta_j", {"j": 1}),
        ):
            res = enumeration_oracle(x, 3, stat, **kwargs)
            assert abs(res.mean) < 1e-12

    def test_variance_matches_formula_n8(self, rng):
        col = standardized(rng.normal(size=8))
        res = enumeration_oracle(col[:, None], 4, "delta_j", j=0)
        assert np.isclose(res.variance, exact_variance_delta_j(col, 4, 4), rtol=1e-12)

    def test_rw_variance_matches_quadratic_form(self, rng):
        x = rng.normal(size=(8, 3))
        w = rng.normal(size=3)
        z = np.zeros(8, dtype=int)
        z[:4] = 1
        d = Dataset(x=x, z=z, y_obs=np.arange(8.0))
        report = variance_report(d, w, scale="raw")
        res = enumeration_oracle(x, 4, "rw", weights=w)
        assert np.isclose(res.variance, report.var_delta_rw_conditional, rtol=1e-12)

    def test_values_match_itertools(self, rng):
        x = rng.normal(size=(7, 2))
        res = enumeration_oracle(x, 3, "uw")
        scores = x.sum(axis=1)
        expected = []
        for comb in itertools.combinations(range(7), 3):
            mask = np.zeros(7, dtype=bool)
            mask[list(comb)] = True
            expected.append(scores[mask].mean() - scores[~mask].mean())
        assert np.allclose(sorted(res.values), sorted(expected), atol=1e-12)
        assert res.values.size == math.comb(7, 3)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_formula_agreement_small_populations(self, seed):
        g = np.random.default_rng(seed)
        n = int(g.integers(4, 13))
        n1 = int(g.integers(1, n))
        p = int(g.integers(1, 5))
        x = g.normal(size=(n, p)) * g.uniform(0.5, 3.0)
        z = np.zeros(n, dtype=int)
        z[:n1] = 1
        d = Dataset(x=x, z=z, y_obs=np.arange(float(n)))
        w = g.normal(size=p)
        report = variance_report(d, w, scale="raw")
        uw = enumeration_oracle(x, n1, "uw")
        rw = enumeration_oracle(x, n1, "rw", weights=w)
        assert np.isclose(uw.variance, report.var_delta_uw, rtol=1e-10)
        assert np.isclose(rw.variance, report.var_delta_rw_conditional, rtol=1e-10)
        for j in range(p):
            dj = enumeration_oracle(x, n1, "delta_j", j=j)
            assert np.isclose(dj.variance, report.var_delta_j[j], rtol=1e-10)

    def test_long_walk_stays_exact(self, rng):
        # 48620 assignments: exercises the periodic exact re-anchoring of
        # the incremental subset sums
        x = rng.normal(size=(18, 2))
        z = np.zeros(18, dtype=int)
        z[:9] = 1
        d = Dataset(x=x, z=z, y_obs=np.arange(18.0))
        res = enumeration_oracle(x, 9, "uw")
        assert res.values.size == math.comb(18, 9)
        report = variance_report(d, np.ones(2), scale="raw")
        assert abs(res.mean) < 1e-12
        assert np.isclose(res.variance, report.var_delta_uw, rtol=1e-10)

    def test_guard(self):
        with pytest.raises(TooManyAssignments):
            enumeration_oracle(np.ones((30, 1)), 15, "uw")

    def test_degenerate(self):
        with pytest.raises(DegenerateAssignment):
            enumeration_oracle(np.ones((5, 1)), 5, "uw")


def quadrature_two_sided_p(z: float) -> float:
    """Independent oracle: tail mass of the standard normal via Simpson."""
    grid = np.linspace(z, z + 40.0, 200001)
    pdf = np.exp(-grid * grid / 2.0) / math.sqrt(2.0 * math.pi)
    h = grid[1] - grid[0]
    tail = h / 3.0 * (pdf[0] + pdf[-1] + 4.0 * pdf[1::2].sum() + 2.0 * pdf[2:-1:2].sum())
    return 2.0 * tail


class TestNormalApproxTest:
    def test_zero_statistic(self):
        assert normal_approx_test(0.0, 2.0) == 1.0

    def test_classic_quantile(self):
        assert abs(normal_approx_test(1.959964, 1.0) - 0.05) < 1e-6

    def test_unit_z(self):
        p = normal_approx_test(1.0, 1.0)
        assert abs(p - 0.3173105078629141) < 1e-12
        assert abs(p - quadrature_two_sided_p(1.0)) < 1e-10

    def test_matches_quadrature_oracle(self):
        for z in (0.5, 1.5, 2.5, 3.5):
            assert abs(normal_approx_test(z, 1.0) - quadrature_two_sided_p(z)) < 1e-10

    def test_variance_scaling(self):
        assert np.isclose(normal_approx_test(2.0, 4.0), normal_approx_test(1.0, 1.0))

    def test_zero_variance(self):
        with pytest.raises(ZeroVariance):
            normal_approx_test(1.0, 0.0)
