import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import (
    central_difference,
    random_gaussian_params,
    random_gaussian_sample,
)
from moestream import datagen, linalg
from moestream.exceptions import NumericError, ShapeError
from moestream.gaussian import (
    GaussianDims,
    GaussianFamily,
    GaussianParams,
    GaussianSuffStats,
    gating_curvature,
    gating_features,
    gating_probs,
    mean_features,
    nll,
    nll_batch,
    nll_gradient,
    pack_optimizer_vector,
    regression_mean,
    regression_mean_batch,
    responsibilities,
    solve_params,
    suff_stat,
    surrogate_loss,
    unpack_optimizer_vector,
)


def small_dims(k=2, p=2, q=1, dw=1, dv=1):
    return GaussianDims(k, p, q, dw, dv)


class TestFeatureMaps:
    def test_gating_layout_covariate_major(self):
        x = np.array([2.0, 3.0])
        np.testing.assert_array_equal(gating_features(x, 2), [1, 2, 4, 1, 3, 9])

    def test_mean_layout_degree_major(self):
        x = np.array([2.0, 3.0])
        np.testing.assert_array_equal(mean_features(x, 2), [1, 1, 2, 3, 4, 9])

    def test_zero_covariates_keep_intercepts(self):
        np.testing.assert_array_equal(gating_features(np.zeros(2), 1), [1, 0, 1, 0])
        np.testing.assert_array_equal(mean_features(np.zeros(2), 1), [1, 1, 0, 0])


class TestGatingProbs:
    def test_zero_coefficients_uniform(self):
        dims = small_dims(k=4)
        g = gating_probs(np.zeros(dims.gating_len), np.array([0.3, -0.2]), dims)
        np.testing.assert_allclose(g, np.full(4, 0.25), atol=1e-15)

    def test_two_expert_logistic_value(self):
        dims = small_dims(k=2, p=1, dw=0)
        # single coefficient 8 on the intercept: w1 = 8
        g = gating_probs(np.array([8.0]), np.array([0.0]), dims)
        sigma8 = 1.0 / (1.0 + math.exp(-8.0))
        np.testing.assert_allclose(g, [sigma8, 1 - sigma8], rtol=1e-12)
        assert g[0] == pytest.approx(0.999665, abs=1e-6)
        assert g[1] == pytest.approx(0.000335, abs=1e-6)

    def test_matches_unconstrained_softmax_with_pinned_block(self, rng):
        dims = small_dims(k=4)
        omega = rng.standard_normal(dims.gating_len)
        x = rng.uniform(-1, 1, 2)
        xh = gating_features(x, dims.gating_degree)
        scores = np.append(omega.reshape(3, -1) @ xh, 0.0)
        naive = np.exp(scores) / np.exp(scores).sum()
        np.testing.assert_allclose(gating_probs(omega, x, dims), naive, atol=1e-12)

    def test_translation_changes_probs_under_constraint(self, rng):
        dims = small_dims(k=3)
        omega = rng.standard_normal(dims.gating_len)
        x = rng.uniform(-1, 1, 2)
        shifted = omega + 1.0
        g0 = gating_probs(omega, x, dims)
        g1 = gating_probs(shifted, x, dims)
        assert not np.allclose(g0, g1)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_probabilities_normalize(self, seed):
        rng = np.random.default_rng(seed)
        dims = small_dims(k=int(rng.integers(1, 6)))
        omega = 3 * rng.standard_normal(dims.gating_len)
        g = gating_probs(omega, rng.uniform(-1, 1, 2), dims)
        assert abs(g.sum() - 1.0) < 1e-12
        assert np.all(g > 0)


class TestNll:
    def test_standard_normal_at_mode(self):
        dims = GaussianDims(1, 1, 1, 0, 0)
        theta = GaussianParams(dims, np.zeros(0), np.zeros((1, 1, 1)), np.ones((1, 1)))
        assert nll(theta, (np.zeros(1), np.zeros(1))) == pytest.approx(
            0.5 * math.log(2 * math.pi), abs=1e-12
        )
        assert nll(theta, (np.zeros(1), np.zeros(1))) == pytest.approx(0.9189385, abs=1e-7)

    def test_identical_experts_collapse(self, rng):
        dims = small_dims(k=3)
        single = GaussianDims(1, 2, 1, 1, 1)
        ups = rng.standard_normal((1, 1, 4))
        theta1 = GaussianParams(single, np.zeros(0), ups, np.full((1, 1), 1.3))
        theta3 = GaussianParams(
            dims,
            rng.standard_normal(dims.gating_len),
            np.repeat(ups, 3, axis=0),
            np.full((3, 1), 1.3),
        )
        z = random_gaussian_sample(rng, dims)
        assert nll(theta3, z) == pytest.approx(nll(theta1, z), rel=1e-12)

    def test_naive_density_sum_oracle(self):
        truth = datagen.lowdim_truth()
        x = np.array([1.0, 1.0])
        y = np.array([-2.5])
        # direct evaluation without log-space tricks
        w1 = 8.0 * x[0]
        g = np.array([np.exp(w1) / (1 + np.exp(w1)), 1 / (1 + np.exp(w1))])
        mus = np.array([-2.5 * x[0], 2.5 * x[0]])
        dens = np.exp(-((y[0] - mus) ** 2) / 2) / np.sqrt(2 * np.pi)
        expected = -np.log(np.sum(g * dens))
        assert nll(truth, (x, y)) == pytest.approx(expected, abs=1e-10)

    def test_nonpositive_variance_rejected(self):
        dims = GaussianDims(1, 1, 1, 0, 0)
        theta = GaussianParams(dims, np.zeros(0), np.zeros((1, 1, 1)), np.zeros((1, 1)))
        with pytest.raises(ValueError):
            nll(theta, (np.zeros(1), np.zeros(1)))

    def test_batch_matches_loop(self, rng):
        dims = small_dims(k=3, q=2)
        theta = random_gaussian_params(rng, dims)
        X = rng.uniform(-1, 1, (20, 2))
        Y = rng.standard_normal((20, 2))
        loop = [nll(theta, (x, y)) for x, y in zip(X, Y)]
        np.testing.assert_allclose(nll_batch(theta, X, Y), loop, atol=1e-12)


class TestResponsibilities:
    def test_single_expert(self, rng):
        dims = GaussianDims(1, 2, 1, 1, 1)
        theta = random_gaussian_params(rng, dims)
        np.testing.assert_array_equal(responsibilities(theta, random_gaussian_sample(rng, dims)), [1.0])

    def test_symmetric_config_uniform(self, rng):
        dims = small_dims(k=3)
        ups = rng.standard_normal((1, 1, 4))
        theta = GaussianParams(
            dims, np.zeros(dims.gating_len), np.repeat(ups, 3, axis=0), np.ones((3, 1))
        )
        tau = responsibilities(theta, random_gaussian_sample(rng, dims))
        np.testing.assert_allclose(tau, np.full(3, 1 / 3), atol=1e-12)

    def test_deep_region_assignment(self):
        truth = datagen.lowdim_truth()
        tau = responsibilities(truth, (np.array([1.0, 0.0]), np.array([-2.5])))
        assert tau[0] > 0.99
        assert tau.sum() == pytest.approx(1.0, abs=1e-12)


class TestRegressionMean:
    def test_single_expert_returns_mean(self, rng):
        dims = GaussianDims(1, 2, 2, 1, 1)
        theta = random_gaussian_params(rng, dims)
        x = rng.uniform(-1, 1, 2)
        np.testing.assert_allclose(
            regression_mean(theta, x), theta.upsilon[0] @ mean_features(x, 1), atol=1e-14
        )

    def test_symmetric_cancellation(self, rng):
        dims = small_dims(k=2)
        ups = rng.standard_normal((1, 1, 4))
        theta = GaussianParams(
            dims, np.zeros(dims.gating_len), np.concatenate([ups, -ups]), np.ones((2, 1))
        )
        assert regression_mean(theta, rng.uniform(-1, 1, 2))[0] == pytest.approx(0.0, abs=1e-14)

    def test_lowdim_truth_value(self):
        truth = datagen.lowdim_truth()
        x = np.array([0.5, -0.7])
        g1 = 1.0 / (1.0 + math.exp(-4.0))
        expected = g1 * (-1.25) + (1 - g1) * 1.25
        assert regression_mean(truth, x)[0] == pytest.approx(expected, rel=1e-12)
        np.testing.assert_allclose(
            regression_mean_batch(truth, x[None])[0], [expected], rtol=1e-12
        )


class TestSurrogate:
    def test_tangency(self, rng):
        for _ in range(50):
            dims = small_dims(k=int(rng.integers(1, 5)), q=int(rng.integers(1, 3)))
            anchor = random_gaussian_params(rng, dims)
            z = random_gaussian_sample(rng, dims)
            assert surrogate_loss(anchor, z, anchor) == pytest.approx(
                nll(anchor, z), abs=1e-9
            )

    def test_majorizes_under_gating_perturbations(self, rng):
        truth = datagen.lowdim_truth()
        z = random_gaussian_sample(rng, truth.dims)
        worst = np.inf
        for _ in range(300):
            theta = truth.copy()
            theta.omega = theta.omega + rng.standard_normal(4) * rng.uniform(0.1, 5)
            gap = surrogate_loss(theta, z, truth) - nll(theta, z)
            worst = min(worst, gap)
        assert worst >= -1e-9

    def test_single_expert_reduces_to_nll(self, rng):
        dims = GaussianDims(1, 2, 1, 1, 1)
        anchor = random_gaussian_params(rng, dims)
        theta = random_gaussian_params(rng, dims)
        z = random_gaussian_sample(rng, dims)
        assert surrogate_loss(theta, z, anchor) == pytest.approx(nll(theta, z), rel=1e-12)


class TestSuffStat:
    def test_single_expert_blocks(self, rng):
        dims = GaussianDims(1, 2, 2, 1, 1)
        theta = random_gaussian_params(rng, dims)
        x, y = random_gaussian_sample(rng, dims)
        stats = GaussianSuffStats(suff_stat(theta, (x, y)), dims)
        assert stats.s1.size == 0 and stats.s2.size == 0
        np.testing.assert_allclose(stats.s3, y**2, atol=1e-15)
        np.testing.assert_array_equal(stats.s6, [1.0, 1.0])

    def test_zero_covariate_curvature_block(self):
        dims = small_dims(k=3)
        rng = np.random.default_rng(0)
        theta = random_gaussian_params(rng, dims)
        x = np.zeros(2)
        y = np.array([0.3])
        eps = 1e-6
        stats = GaussianSuffStats(suff_stat(theta, (x, y), eps), dims)
        xh = np.array([1.0, 0, 1, 0])
        core = linalg.bohning_corrected_bound(2)
        expected = 0.5 * linalg.vec(linalg.kron(core, np.outer(xh, xh)) + eps * np.eye(8))
        np.testing.assert_allclose(stats.s2, expected, atol=1e-15)
        np.testing.assert_array_equal(mean_features(x, 1), [1, 1, 0, 0])

    def test_block_lengths_audit(self, rng):
        for k, p, q, dw, dv in [(2, 2, 1, 1, 1), (3, 2, 2, 1, 0), (4, 1, 2, 0, 1)]:
            dims = GaussianDims(k, p, q, dw, dv)
            theta = random_gaussian_params(rng, dims)
            stats = GaussianSuffStats(suff_stat(theta, random_gaussian_sample(rng, dims)), dims)
            g = (k - 1) * p * (dw + 1)
            ell = p * (dv + 1)
            assert stats.s1.size == g
            assert stats.s2.size == g * g
            assert stats.s3.size == k * q
            assert stats.s4.size == k * p * q * (dv + 1)
            assert stats.s5.size == k * q * ell * ell
            assert stats.s6.size == k * q

    def test_per_target_slices(self, rng):
        dims = small_dims(k=2, q=2)
        theta = random_gaussian_params(rng, dims)
        z = random_gaussian_sample(rng, dims)
        tau = responsibilities(theta, z)
        r = mean_features(z[0], dims.mean_degree)
        stats = GaussianSuffStats(suff_stat(theta, z), dims)
        for k in range(2):
            for q in range(2):
                np.testing.assert_allclose(stats.s5_matrix(k, q), tau[k] * np.outer(r, r), atol=1e-15)
                np.testing.assert_allclose(
                    stats.s4_slice(k, q), -2 * tau[k] * z[1][q] * r, atol=1e-15
                )


class TestSolveParams:
    def _admissible_stat(self, rng, dims, fam):
        anchor = random_gaussian_params(rng, dims)
        samples = [random_gaussian_sample(rng, dims) for _ in range(30)]
        return np.mean([fam.suff_stat(anchor, z) for z in samples], axis=0)

    def test_identity_curvature_returns_negated_s1(self, rng):
        dims = small_dims(k=2, p=1, dw=0)  # gating length 1
        fam = GaussianFamily(dims)
        s = self._admissible_stat(rng, dims, fam)
        view = GaussianSuffStats(s.copy(), dims)
        s = s.copy()
        s[dims.block_offsets[1] : dims.block_offsets[2]] = linalg.vec(np.eye(1) / 2)
        out = solve_params(s, dims)
        np.testing.assert_allclose(out.omega, -view.s1, atol=1e-12)

    def test_unit_variance_case(self):
        dims = GaussianDims(1, 1, 1, 0, 0)
        s = np.concatenate([[1.0], [0.0], [0.5], [1.0]])  # s3, s4, s5, s6
        out = solve_params(s, dims)
        np.testing.assert_allclose(out.upsilon, np.zeros((1, 1, 1)), atol=1e-14)
        assert out.sigma2[0, 0] == pytest.approx(1.0)

    def test_matches_numeric_minimizer(self, rng):
        from scipy.optimize import minimize

        dims = GaussianDims(2, 1, 1, 1, 1)
        fam = GaussianFamily(dims)
        s = self._admissible_stat(rng, dims, fam)
        solved = solve_params(s, dims)

        def h(v):
            theta = unpack_optimizer_vector(dims, v)
            return -fam.psi(theta) + float(s @ fam.phi(theta))

        start = pack_optimizer_vector(solved) + 0.25 * rng.standard_normal(8)
        res = minimize(h, start, method="BFGS", options={"gtol": 1e-12, "maxiter": 2000})
        numeric = unpack_optimizer_vector(dims, res.x)
        np.testing.assert_allclose(numeric.omega, solved.omega, atol=1e-6)
        np.testing.assert_allclose(numeric.upsilon, solved.upsilon, atol=1e-6)
        np.testing.assert_allclose(numeric.sigma2, solved.sigma2, atol=1e-6)

    def test_variance_floor_raises(self):
        dims = GaussianDims(1, 1, 1, 0, 0)
        # A single statistic interpolates exactly: variance collapses.
        theta = GaussianParams(dims, np.zeros(0), np.ones((1, 1, 1)), np.ones((1, 1)))
        s = suff_stat(theta, (np.zeros(1), np.array([0.7])))
        with pytest.raises(NumericError):
            solve_params(s, dims)


class TestCurvatureDomination:
    def test_hessian_below_bound(self, rng):
        for _ in range(100):
            k = int(rng.integers(2, 7))
            dims = GaussianDims(k, 2, 1, 1, 1)
            omega = 2 * rng.standard_normal(dims.gating_len)
            x = rng.uniform(-1, 1, 2)
            hess = gating_curvature(omega, x, dims)
            bound = linalg.build_B(
                linalg.CurvatureBoundSpec(k - 1, gating_features(x, 1), 1e-6)
            )
            assert linalg.max_eigenvalue(hess - bound) <= 1e-10


class TestGradient:
    def test_zero_residual_zero_mean_gradient(self):
        dims = GaussianDims(1, 1, 1, 0, 1)
        theta = GaussianParams(dims, np.zeros(0), np.array([[[0.5, 2.0]]]), np.ones((1, 1)))
        x = np.array([0.3])
        y = theta.upsilon[0] @ mean_features(x, 1)
        grad = nll_gradient(theta, (x, y))
        np.testing.assert_allclose(grad[:2], 0.0, atol=1e-14)

    def test_symmetric_two_expert_zero_gating_gradient(self):
        dims = small_dims(k=2)
        ups = np.zeros((2, 1, 4))
        ups[0, 0, 2] = 1.0
        ups[1, 0, 2] = -1.0
        theta = GaussianParams(dims, np.zeros(4), ups, np.ones((2, 1)))
        x = np.array([0.4, -0.1])
        grad = nll_gradient(theta, (x, np.zeros(1)))  # y equidistant from both means
        np.testing.assert_allclose(grad[:4], 0.0, atol=1e-14)

    def test_finite_difference_match(self, rng):
        for _ in range(25):
            dims = small_dims(
                k=int(rng.integers(1, 4)), q=int(rng.integers(1, 3)), dv=int(rng.integers(0, 2))
            )
            theta = random_gaussian_params(rng, dims)
            z = random_gaussian_sample(rng, dims)
            v = pack_optimizer_vector(theta)
            analytic = nll_gradient(theta, z)
            fd = central_difference(lambda w: nll(unpack_optimizer_vector(dims, w), z), v)
            denom = max(1.0, np.linalg.norm(analytic))
            assert np.linalg.norm(analytic - fd) / denom < 1e-5


class TestSerialization:
    def test_json_roundtrip(self, rng):
        dims = small_dims(k=3, q=2)
        theta = random_gaussian_params(rng, dims)
        payload = json.loads(json.dumps(theta.to_json_dict()))
        assert payload["dims"] == {"K": 3, "P": 2, "Q": 2, "D_W": 1, "D_V": 1}
        back = GaussianParams.from_json_dict(payload)
        np.testing.assert_array_equal(back.omega, theta.omega)
        np.testing.assert_array_equal(back.upsilon, theta.upsilon)
        np.testing.assert_array_equal(back.sigma2, theta.sigma2)

    def test_vector_roundtrip(self, rng):
        dims = small_dims(k=2, q=2)
        theta = random_gaussian_params(rng, dims)
        back = GaussianParams.from_vector(dims, theta.to_vector())
        np.testing.assert_array_equal(back.upsilon, theta.upsilon)
        np.testing.assert_array_equal(back.sigma2, theta.sigma2)

    def test_shape_validation(self):
        dims = small_dims()
        with pytest.raises(ShapeError):
            GaussianParams(dims, np.zeros(3), np.zeros((2, 1, 4)), np.ones((2, 1)))
