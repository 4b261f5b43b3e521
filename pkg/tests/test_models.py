"""
Tests for the dual-rate model, output parameterizations, guidance and the
analytic mixture denoiser.
"""

import math

import numpy as np
import pytest

from data.gmm import GmmSpec, gmm_log_density
from diffusion.process import NoisyState
from diffusion.schedule import SnrPoint, schedule_eval
from errors import ConfigurationError, TimeOrderingError
from models import (
    DualRatePredictor,
    build_dual_rate_model,
    build_standard_model,
    copy_into_encoder,
    denoise,
    encode_context,
    guided_denoise,
    guided_predict,
    model_backward,
    null_features,
    oracle_denoiser,
    v_to_x,
    x_to_v,
)

HALF = SnrPoint(t=0.5, lam=0.0, alpha=math.sqrt(0.5), sigma=math.sqrt(0.5), dlambda_dt=-2.0 * math.pi)


def _tiny_model(rng, **overrides):
    settings = dict(data_dim=2, encoder_hidden=[8, 8, 8], denoiser_hidden=[6, 6], rng=rng, time_embed_dim=4)
    settings.update(overrides)
    return build_dual_rate_model(**settings)


# =============================================================================
# Parameterization
# =============================================================================

class TestParameterization:
    def test_v_to_x_at_zero_noise(self):
        z = np.array([[0.3, -0.7]])
        clean = SnrPoint(t=0.0, lam=math.inf, alpha=1.0, sigma=0.0, dlambda_dt=-1.0)
        np.testing.assert_array_equal(v_to_x(np.ones_like(z), z, clean), z)

    def test_x_to_v_singular_at_zero_noise(self):
        clean = SnrPoint(t=0.0, lam=math.inf, alpha=1.0, sigma=0.0, dlambda_dt=-1.0)
        with pytest.raises(ConfigurationError):
            x_to_v(np.zeros((1, 2)), np.zeros((1, 2)), clean)

    def test_conversions_invert(self, rng):
        x = rng.standard_normal((5, 3))
        eps = rng.standard_normal((5, 3))
        z = HALF.alpha * x + HALF.sigma * eps
        v = x_to_v(x, z, HALF)
        np.testing.assert_allclose(v, HALF.alpha * eps - HALF.sigma * x, atol=1e-12)
        np.testing.assert_allclose(v_to_x(v, z, HALF), x, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            v_to_x(np.zeros((2, 2)), np.zeros((2, 3)), HALF)


# =============================================================================
# Dual-rate model
# =============================================================================

class TestDualRateModel:
    def test_zero_weights_predict_zero(self, rng):
        model = _tiny_model(rng, param_mode="xpred")
        model = model.with_params(np.zeros(len(model.params)))
        z_tau = NoisyState(z=rng.standard_normal((4, 2)), t=0.7)
        feats = encode_context(model, z_tau)
        x_hat, _ = denoise(model, NoisyState(z=z_tau.z, t=0.5), feats, None, HALF)
        np.testing.assert_array_equal(x_hat, np.zeros((4, 2)))

    def test_vpred_at_zero_noise_returns_state(self, rng):
        model = _tiny_model(rng)
        clean = SnrPoint(t=0.0, lam=math.inf, alpha=1.0, sigma=0.0, dlambda_dt=-1.0)
        z = rng.standard_normal((3, 2))
        x_hat, _ = denoise(model, NoisyState(z=z, t=0.0), null_features(model, 3, 0.5), None, clean)
        np.testing.assert_array_equal(x_hat, z)

    def test_feature_levels(self, rng):
        multi = _tiny_model(rng)
        single = _tiny_model(rng, multi_level=False)
        assert multi.feature_levels == (1, 2)
        assert single.feature_levels == (2,)
        feats = encode_context(multi, NoisyState(z=np.zeros((2, 2)), t=0.5))
        assert [f.shape for f in feats.layers] == [(2, 8), (2, 8)]

    def test_multi_level_needs_deep_encoder(self, rng):
        with pytest.raises(ConfigurationError):
            build_dual_rate_model(2, [8], [6, 6], rng)

    def test_dropped_features_equal_null_encoding(self, rng):
        model = _tiny_model(rng)
        z_tau = NoisyState(z=rng.standard_normal((5, 2)), t=0.8)
        z_t = NoisyState(z=rng.standard_normal((5, 2)), t=0.5)
        point = HALF
        dropped = encode_context(model, z_tau, drop_features=True)
        assert dropped.null_flag.all()
        assert all(np.all(layer == 0.0) for layer in dropped.layers)
        a, _ = denoise(model, z_t, dropped, None, point)
        b, _ = denoise(model, z_t, null_features(model, 5, 0.8), None, point)
        np.testing.assert_array_equal(a, b)

    def test_feature_dropout_rate(self, rng):
        model = _tiny_model(rng)
        feats = encode_context(model, NoisyState(z=np.zeros((100_000, 2)), t=0.6), drop_features=0.3, rng=rng)
        se = math.sqrt(0.3 * 0.7 / 100_000)
        assert abs(feats.null_flag.mean() - 0.3) < 4 * se

    def test_stale_features_rejected_only_when_earlier(self, rng):
        model = _tiny_model(rng)
        feats = encode_context(model, NoisyState(z=np.zeros((1, 2)), t=0.4))
        with pytest.raises(TimeOrderingError):
            denoise(model, NoisyState(z=np.zeros((1, 2)), t=0.5), feats, None, HALF)

    def test_label_out_of_range(self, rng):
        model = _tiny_model(rng, n_classes=3)
        with pytest.raises(ConfigurationError):
            encode_context(model, NoisyState(z=np.zeros((1, 2)), t=0.5), labels=np.array([4]))

    def test_joint_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        model = build_dual_rate_model(2, [5, 4], [4, 3], rng, n_classes=2, time_embed_dim=4)
        model = model.with_params(model.params.values + 0.2 * rng.standard_normal(len(model.params)))
        z_tau = NoisyState(z=rng.standard_normal((3, 2)), t=0.8)
        z_t = NoisyState(z=rng.standard_normal((3, 2)), t=0.5)
        labels = np.array([0, 1, 2])
        upstream = rng.standard_normal((3, 2))

        def loss(values):
            m = model.with_params(values)
            x_hat, _ = denoise(m, z_t, encode_context(m, z_tau, labels), labels, HALF)
            return float(np.sum(x_hat * upstream))

        _, tape = denoise(model, z_t, encode_context(model, z_tau, labels), labels, HALF)
        grads = model_backward(model, tape, upstream).values
        numeric = np.zeros_like(grads)
        for i in range(grads.shape[0]):
            plus, minus = model.params.values.copy(), model.params.values.copy()
            plus[i] += 1e-6
            minus[i] -= 1e-6
            numeric[i] = (loss(plus) - loss(minus)) / 2e-6
        err = np.linalg.norm(grads - numeric) / (np.linalg.norm(grads) + np.linalg.norm(numeric))
        assert err < 1e-5
        assert np.any(grads[model.params.span("encoder")] != 0.0)

    def test_dropped_features_block_encoder_gradient(self, rng):
        model = _tiny_model(rng)
        z_tau = NoisyState(z=rng.standard_normal((4, 2)), t=0.9)
        feats = encode_context(model, z_tau, drop_features=1.0)
        _, tape = denoise(model, NoisyState(z=z_tau.z, t=0.5), feats, None, HALF)
        grads = model_backward(model, tape, np.ones((4, 2)))
        assert np.all(grads.values[model.params.span("encoder")] == 0.0)

    def test_copy_into_encoder(self, rng):
        teacher = build_standard_model(2, [8, 8, 8], rng, time_embed_dim=4)
        student = _tiny_model(rng)
        seeded = copy_into_encoder(student, teacher)
        np.testing.assert_array_equal(seeded.encoder_params().values, teacher.denoiser_params().values)
        np.testing.assert_array_equal(seeded.denoiser_params().values, student.denoiser_params().values)

    def test_copy_into_encoder_shape_mismatch(self, rng):
        teacher = build_standard_model(2, [8, 8], rng, time_embed_dim=4)
        with pytest.raises(ConfigurationError):
            copy_into_encoder(_tiny_model(rng), teacher)


# =============================================================================
# Guidance
# =============================================================================

class _ConstantPredictor:
    has_encoder = False
    n_classes = 3
    data_dim = 2

    def encode(self, z_tau, labels):
        return None

    def predict(self, z_t, features, labels, point):
        return np.full(z_t.z.shape, 0.5)


class TestGuidance:
    def test_zero_weight_is_conditional(self, rng):
        model = _tiny_model(rng, n_classes=3)
        z_tau = NoisyState(z=rng.standard_normal((4, 2)), t=0.7)
        z_t = NoisyState(z=z_tau.z, t=0.5)
        labels = np.array([0, 1, 2, 0])
        fc = encode_context(model, z_tau, labels)
        fu = encode_context(model, z_tau, np.full(4, 3))
        plain, _ = denoise(model, z_t, fc, labels, HALF)
        guided = guided_denoise(model, z_t, fc, fu, labels, 0.0, (-10.0, 10.0), HALF)
        np.testing.assert_array_equal(guided, plain)

    def test_outside_interval_is_conditional(self, rng):
        model = _tiny_model(rng, n_classes=3)
        z_tau = NoisyState(z=rng.standard_normal((2, 2)), t=0.7)
        z_t = NoisyState(z=z_tau.z, t=0.5)
        labels = np.array([0, 1])
        fc = encode_context(model, z_tau, labels)
        plain = DualRatePredictor(model).predict(z_t, fc, labels, HALF)
        guided = guided_denoise(model, z_t, fc, None, labels, 3.0, (1.5, 5.0), HALF)
        np.testing.assert_array_equal(guided, plain)

    def test_identical_branches_cancel(self):
        z_t = NoisyState(z=np.zeros((2, 2)), t=0.5)
        out = guided_predict(_ConstantPredictor(), z_t, None, None, np.array([0, 1]), 4.0, (-1.0, 1.0), HALF)
        np.testing.assert_array_equal(out, np.full((2, 2), 0.5))


# =============================================================================
# Mixture oracle
# =============================================================================

class TestOracle:
    def test_single_standard_gaussian(self, rng):
        spec = GmmSpec(weights=np.array([1.0]), means=np.zeros((1, 2)), comp_std=1.0)
        z = rng.standard_normal((6, 2))
        np.testing.assert_allclose(oracle_denoiser(spec, NoisyState(z=z, t=0.5), HALF), HALF.alpha * z, atol=1e-12)

    def test_symmetric_pair_at_origin(self):
        spec = GmmSpec(weights=np.array([0.5, 0.5]), means=np.array([[1.0, 0.0], [-1.0, 0.0]]), comp_std=1e-6)
        out = oracle_denoiser(spec, NoisyState(z=np.zeros((1, 2)), t=0.5), HALF)
        np.testing.assert_allclose(out, np.zeros((1, 2)), atol=1e-12)

    def test_label_selects_component(self):
        spec = GmmSpec(weights=np.array([0.5, 0.5]), means=np.array([[1.0, 0.0], [-1.0, 0.0]]), comp_std=0.2)
        z = NoisyState(z=np.zeros((2, 2)), t=0.5)
        s2 = 0.04
        shrink = HALF.alpha * s2 / (HALF.alpha ** 2 * s2 + HALF.sigma ** 2)
        out = oracle_denoiser(spec, z, HALF, label=np.array([0, 2]))
        np.testing.assert_allclose(out[0], [1.0 - shrink * HALF.alpha, 0.0], atol=1e-12)
        np.testing.assert_allclose(out[1], [0.0, 0.0], atol=1e-12)

    def test_matches_numerical_quadrature(self, sched):
        spec = GmmSpec(weights=np.array([0.5, 0.3, 0.2]),
                       means=np.array([[1.0, 0.0], [-0.5, 0.5], [0.0, -1.0]]), comp_std=0.3)
        point = schedule_eval(sched, sched.t_of_lambda(0.0))
        step = 0.01
        axis = np.arange(-3.0, 3.0, step) + step / 2
        xx, yy = np.meshgrid(axis, axis)
        grid = np.column_stack([xx.ravel(), yy.ravel()])
        prior = gmm_log_density(spec, grid)
        for z in ([0.2, 0.1], [-0.6, 0.4], [0.0, -0.9]):
            z = np.asarray(z)
            log_post = prior - 0.5 * np.sum((z - point.alpha * grid) ** 2, axis=1) / point.sigma ** 2
            w = np.exp(log_post - log_post.max())
            expected = (w[:, None] * grid).sum(axis=0) / w.sum()
            got = oracle_denoiser(spec, NoisyState(z=z[None, :], t=point.t), point)[0]
            np.testing.assert_allclose(got, expected, atol=1e-6)
