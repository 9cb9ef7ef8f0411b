import math

import numpy as np
import pytest

from sflab.dataset import SeparationReport, TrainingSet, generate
from sflab.errors import AssumptionViolationError, InvalidInputError
from sflab.linalg_core import eigenvalues, lambda_min
from sflab.network import NetParams, init
from sflab.ntk_kernel import (
    arccos_expectation,
    block_drift_check,
    chernoff_tail_bound,
    estimate_H_infinity,
    expected_M,
    feature_matrix,
    hat_permutation,
    hatH_factorization_check,
    kernel_at,
    kernel_from_jacobian,
    lemma2_width,
    lift_bias,
    lift_params,
    neuron_kernel_norms,
    prop1_bound,
    spectrum_report,
    theorem2_bound,
)

MC = 20_000


def _points(*xs):
    x = np.array(xs, dtype=np.float64)
    return TrainingSet(x=x, y=np.zeros(len(xs)), V=np.zeros((len(xs), x.shape[1], 0)), h=np.zeros((len(xs), 0)))


def _separation(delta1, delta2, delta1_hat=None):
    return SeparationReport(
        delta1=delta1,
        delta1_hat=delta1 if delta1_hat is None else delta1_hat,
        delta2=delta2,
        gamma=0.0,
        satisfies_assumption1=True,
        satisfies_assumption2=True,
    )


class TestFeatureMatrix:
    def test_all_inactive(self, small_set):
        # minimum-norm w with x_i^T w = -1 for every sample
        w = -np.linalg.lstsq(small_set.x, np.ones(small_set.n), rcond=None)[0]
        np.testing.assert_array_equal(feature_matrix(w, small_set), np.zeros((6, 12)))

    def test_single_active_sample(self):
        V = np.array([[[0.0], [1.0], [0.0]]])
        ts = TrainingSet(x=[[1.0, 0.0, 0.0]], y=[0.0], V=V, h=[[0.0]])
        np.testing.assert_array_equal(feature_matrix(ts.x[0], ts), np.column_stack([ts.x[0], V[0]]))

    def test_gram_closed_forms(self, small_set):
        rng = np.random.default_rng(0)
        n, k = small_set.n, small_set.k
        w = rng.standard_normal(small_set.d)
        omega = feature_matrix(w, small_set)
        gram = omega.T @ omega
        active = (small_set.x @ w > 0).astype(float)
        for i in range(n):
            for j in range(n):
                gate = active[i] * active[j]
                assert gram[i, j] == pytest.approx(gate * small_set.x[i] @ small_set.x[j], abs=1e-12)
                np.testing.assert_allclose(
                    gram[i, n + j * k:n + (j + 1) * k], gate * small_set.x[i] @ small_set.V[j], atol=1e-12
                )
                np.testing.assert_allclose(
                    gram[n + i * k:n + (i + 1) * k, n + j * k:n + (j + 1) * k],
                    gate * small_set.V[i].T @ small_set.V[j],
                    atol=1e-12,
                )

    def test_shape_check(self, small_set):
        with pytest.raises(InvalidInputError):
            feature_matrix(np.ones(small_set.d + 1), small_set)


def _instance(seed):
    """Random (params, dataset) with n <= 6, d <= 10, k <= 2, m <= 64; odd seeds carry a bias"""
    rng = np.random.default_rng(seed)
    d = int(rng.integers(3, 11))
    k = int(rng.integers(0, 3))
    n = int(rng.integers(1, 7))
    m = int(rng.integers(1, 65))
    ts = generate(n, d, k, "random_labels", seed=seed)
    return init(m, d, k, seed % 2 == 1, seed=1000 + seed), ts


class TestKernelAt:
    @pytest.mark.parametrize("seed", range(50))
    def test_matches_jacobian_gram(self, seed):
        p, ts = _instance(seed)
        closed = kernel_at(p, ts).H.entries
        reference = kernel_from_jacobian(p, ts).H.entries
        assert closed.shape == (ts.n * (ts.k + 1),) * 2
        assert np.linalg.norm(closed - reference) <= 1e-12 * max(np.linalg.norm(reference), 1.0)
        assert lambda_min(kernel_at(p, ts).H) >= -1e-10

    def test_width_differs_from_stacked_dimension(self):
        ts = generate(4, 6, 2, "random_labels", seed=3)
        p = init(32, 6, 2, False, seed=11)
        H = kernel_at(p, ts).H.entries
        assert H.shape == (12, 12)
        np.testing.assert_allclose(H, kernel_from_jacobian(p, ts).H.entries, atol=1e-12)

    def test_single_neuron_is_its_own_gram(self):
        ts = generate(3, 5, 1, "random_labels", seed=4)
        p = init(1, 5, 1, False, seed=2)
        omega = feature_matrix(p.W[0], ts) * p.a[0]
        np.testing.assert_allclose(kernel_at(p, ts).H.entries, omega.T @ omega, atol=1e-15)

    def test_bias_kernel_is_lifted_kernel(self, small_set, small_bias_net):
        p = small_bias_net
        lifted = lift_bias(small_set, p.alpha, p.beta)
        np.testing.assert_allclose(
            kernel_at(p, small_set).H.entries, kernel_at(lift_params(p), lifted).H.entries, atol=1e-12
        )

    def test_psd(self, small_set, small_net):
        assert lambda_min(kernel_at(small_net, small_set).H) >= -1e-10

    def test_block_views(self, small_set, small_net):
        K = kernel_at(small_net, small_set)
        assert K.A.shape == (4, 4)
        assert K.B.shape == (4, 8)
        assert K.C.shape == (8, 8)

    def test_neuron_kernel_norm_bound(self):
        ts = generate(5, 8, 2, "random_labels", seed=2)
        p = init(100, 8, 2, False, seed=3)
        assert np.all(neuron_kernel_norms(p, ts) <= 15.0 / 100 + 1e-12)

    def test_dead_network(self, small_set):
        p = NetParams(W=np.zeros((4, small_set.d)), a=np.full(4, 0.5))
        np.testing.assert_array_equal(kernel_at(p, small_set).H.entries, np.zeros((12, 12)))


class TestMonteCarlo:
    def test_half_space(self):
        est = estimate_H_infinity(_points([1.0, 0.0, 0.0]), MC, seed=1)
        assert abs(est.mean.entries[0, 0] - 0.5) <= 3 * est.std_error[0, 0]

    def test_orthogonal_direction(self):
        V = np.array([[[0.0], [1.0], [0.0]]])
        ts = TrainingSet(x=[[1.0, 0.0, 0.0]], y=[0.0], V=V, h=[[0.0]])
        est = estimate_H_infinity(ts, MC, seed=2)
        assert est.mean.entries[0, 1] == 0.0
        for i in range(2):
            assert abs(est.mean.entries[i, i] - 0.5) <= 3 * est.std_error[i, i]

    def test_arc_cosine_entry(self):
        est = estimate_H_infinity(_points([1.0, 0.0], [0.5, np.sqrt(0.75)]), MC, seed=3)
        expected = arccos_expectation(0.5) * 0.5
        assert expected == pytest.approx(1.0 / 6.0)
        assert abs(est.mean.entries[0, 1] - expected) <= 3 * est.std_error[0, 1]

    def test_expected_M_entries(self):
        est = expected_M(_points([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]), MC, seed=4)
        assert abs(est.mean.entries[0, 0] - 0.5) <= 3 * est.std_error[0, 0]
        assert abs(est.mean.entries[0, 1] - 0.25) <= 3 * est.std_error[0, 1]

    def test_std_error_shrinks_with_samples(self):
        ts = _points([1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
        small = expected_M(ts, MC, seed=5)
        large = expected_M(ts, 2 * MC, seed=5)
        assert small.std_error[0, 1] / large.std_error[0, 1] == pytest.approx(np.sqrt(2.0), rel=0.05)

    def test_same_seed_any_worker_count(self, small_set):
        one = estimate_H_infinity(small_set, 200_000, seed=6, workers=1)
        four = estimate_H_infinity(small_set, 200_000, seed=6, workers=4)
        np.testing.assert_array_equal(one.mean.entries, four.mean.entries)

    def test_too_few_samples(self, small_set):
        with pytest.raises(InvalidInputError):
            expected_M(small_set, 100, seed=0)

    def test_wide_initial_kernel_near_limit(self, small_set):
        est = estimate_H_infinity(small_set, 100_000, seed=7)
        H0 = kernel_at(init(20_000, small_set.d, small_set.k, False, seed=8), small_set)
        np.testing.assert_allclose(H0.H.entries, est.mean.entries, atol=0.03)


class TestBounds:
    def test_prop1_example(self):
        assert prop1_bound(_separation(1.0, 0.0), 2, 1) == pytest.approx(0.0025)

    def test_prop1_singleton_convention(self):
        assert prop1_bound(_separation(2.0, 0.0), 1, 0) == pytest.approx(0.02)

    def test_prop1_degenerate_factor(self):
        assert prop1_bound(_separation(1.0, 0.5), 4, 2) == 0.0

    def test_prop1_tilt_factor(self):
        assert prop1_bound(_separation(1.0, 0.3), 2, 2) == pytest.approx(0.4 / 400)

    def test_prop1_violations(self):
        with pytest.raises(AssumptionViolationError):
            prop1_bound(_separation(1.0, 0.6), 2, 2)
        with pytest.raises(AssumptionViolationError):
            prop1_bound(_separation(0.0, 0.0), 2, 1)

    def test_theorem2_example(self):
        bound = theorem2_bound(_separation(0.0, 0.0, delta1_hat=1.0), 2, 2, 0.25, np.sqrt(15.0) / 4)
        assert bound == pytest.approx(3.125e-4)

    def test_theorem2_saturates(self):
        beta = np.sqrt(15.0) / 4
        bound = theorem2_bound(_separation(0.0, 0.0, delta1_hat=100.0), 2, 2, 0.25, beta)
        assert bound == pytest.approx(2 * beta / 800)

    def test_theorem2_duplicates(self):
        with pytest.raises(AssumptionViolationError):
            theorem2_bound(_separation(0.0, 0.0, delta1_hat=0.0), 2, 2, 0.25, 0.9)


class TestSpectrumReport:
    def test_singleton(self):
        report, _ = spectrum_report(_points([0.0, 0.0, 1.0]), MC, seed=1)
        assert report.singleton_convention
        assert report.prop1_bound == pytest.approx(0.02)
        assert report.lambda_min_estimate == pytest.approx(0.5, abs=0.02)
        assert report.bound_satisfied

    def test_generated_set_meets_bound(self):
        report, _ = spectrum_report(generate(2, 10, 1, "quadratic", seed=4), MC, seed=4)
        assert report.prop1_bound == pytest.approx(report.delta1 / 400)
        assert report.bound_satisfied

    def test_bias_variant_handles_antipodal_pair(self):
        ts = generate(4, 8, 2, "quadratic", seed=5, antipodal_pair=True)
        report, _ = spectrum_report(ts, MC, seed=5, bias=True)
        assert report.prop1_bound is None
        assert report.theorem2_bound is not None
        assert report.bound_satisfied

    def test_serializable(self, small_set):
        report, _ = spectrum_report(small_set, MC, seed=1)
        assert set(report.to_dict()) >= {"lambda_min_estimate", "mc_samples", "std_error", "prop1_bound", "bound_satisfied"}


class TestBlockStructure:
    def test_factorization(self):
        ts = generate(3, 8, 2, "random_labels", seed=9)
        w = np.random.default_rng(9).standard_normal((100, 8))
        assert hatH_factorization_check(ts, w)

    def test_single_sample(self):
        V = np.array([[[0.0], [1.0]]])
        ts = TrainingSet(x=[[1.0, 0.0]], y=[0.0], V=V, h=[[0.0]])
        assert hatH_factorization_check(ts, [[1.0, 0.0], [-1.0, 0.0]])

    def test_permuted_spectrum(self, small_set):
        est = estimate_H_infinity(small_set, MC, seed=10)
        order = hat_permutation(small_set.n, small_set.k)
        np.testing.assert_allclose(eigenvalues(est.mean.permuted(order)), eigenvalues(est.mean), atol=1e-12)

    def test_hat_permutation(self):
        np.testing.assert_array_equal(hat_permutation(2, 2), [0, 2, 3, 1, 4, 5])

    def test_block_drift(self, small_set, small_net):
        rng = np.random.default_rng(11)
        moved = small_net.with_weights(small_net.W + 0.3 * rng.standard_normal(small_net.W.shape))
        assert block_drift_check(small_net, moved, small_set)


class TestScalarBounds:
    def test_arccos(self):
        assert arccos_expectation(1.0) == 0.5
        assert arccos_expectation(0.0) == 0.25
        assert arccos_expectation(-1.0) == 0.0

    def test_lemma2_width(self):
        expected = math.ceil(32.0 / 0.1 * 6 * math.log(6 / 0.1))
        assert lemma2_width(0.1, 2, 2, 0.1) == expected
        with pytest.raises(InvalidInputError):
            lemma2_width(0.0, 2, 2, 0.1)

    def test_chernoff(self):
        assert chernoff_tail_bound(4, 2.0, 1.0, 0.0) == pytest.approx(4 * math.exp(-1.0))
        assert chernoff_tail_bound(4, 0.0, 1.0, 0.5) == 4.0
