"""
Tests for dual-rate moment matching distillation.
"""

import math
from dataclasses import replace

import numpy as np
import pytest

from data.sources import DataSource
from diffusion.process import NoisyState, posterior_params
from diffusion.schedule import LossWeight, elbo_factor, schedule_eval
from diffusion.timesteps import sample_distill_times
from engine.distiller import (
    DistillConfig,
    LiveSample,
    aux_step,
    distill_loop,
    full_rollout,
    init_distill_state,
    rollout_light,
    student_step,
)
from errors import ConfigurationError, SequencingError
from models import build_dual_rate_model, build_standard_model, denoise, encode_context, model_backward


def _teacher(seed=0):
    return build_standard_model(2, [16, 16], np.random.default_rng(seed), time_embed_dim=8)


def _student(seed=1):
    return build_dual_rate_model(2, [16, 16], [8, 8], np.random.default_rng(seed), time_embed_dim=8)


def _config(**overrides):
    settings = dict(K=2, k=8, n_steps=6, batch_size=16, pretrain_steps=4, snapshot_every=2,
                    eval_samples=64, eval_projections=16, warmup_steps=0, divergence_threshold=1e15)
    settings.update(overrides)
    return DistillConfig(**settings)


def _live(student, sched, rng, n=8, tau=0.75, t=0.5):
    z_tau = NoisyState(z=rng.standard_normal((n, 2)), t=tau)
    feats = encode_context(student, z_tau)
    z_t = NoisyState(z=rng.standard_normal((n, 2)), t=t)
    x_tilde, tape = denoise(student, z_t, feats, None, schedule_eval(sched, t))
    return LiveSample(x_tilde=x_tilde, tape=tape)


# =============================================================================
# Times and rollouts
# =============================================================================

class TestDistillTimes:
    def test_equal_rates_put_t_on_tau(self, rng):
        for _ in range(200):
            tau, t, s = sample_distill_times(4, 4, rng)
            assert t == tau
            assert t - 0.25 <= s < t

    def test_times_on_grids(self, rng):
        counts = {}
        n = 100_000
        for _ in range(n):
            tau, t, s = sample_distill_times(2, 8, rng)
            assert tau in (0.5, 1.0)
            assert tau - 0.5 < t <= tau
            assert 0.0 <= s < t
            assert float(t * 8).is_integer()
            counts[t] = counts.get(t, 0) + 1
        assert sorted(counts) == [i / 8 for i in range(1, 9)]
        se = math.sqrt(0.125 * 0.875 / n)
        assert all(abs(c / n - 0.125) < 4 * se for c in counts.values())

    def test_indivisible_rates(self, rng):
        with pytest.raises(ConfigurationError):
            sample_distill_times(3, 8, rng)


class TestRollouts:
    def test_zero_length_rollout(self, sched, rng):
        student = _student()
        z_tau = NoisyState(z=rng.standard_normal((4, 2)), t=0.5)
        out = rollout_light(student, z_tau, encode_context(student, z_tau), 0.5, 8, sched, rng)
        np.testing.assert_array_equal(out.z, z_tau.z)

    def test_one_light_step_is_posterior_sample(self, sched):
        student = _student()
        z_tau = NoisyState(z=np.random.default_rng(0).standard_normal((4, 2)), t=0.5)
        feats = encode_context(student, z_tau)
        out = rollout_light(student, z_tau, feats, 0.375, 8, sched, np.random.default_rng(1))
        p_t, p_s = schedule_eval(sched, 0.5), schedule_eval(sched, 0.375)
        x_hat, _ = denoise(student, z_tau, feats, None, p_t)
        post = posterior_params(z_tau, x_hat, p_s, p_t, noise_interp=0.0)
        expected = post.mean + post.std * np.random.default_rng(1).standard_normal((4, 2))
        np.testing.assert_array_equal(out.z, expected)
        assert out.t == 0.375

    def test_off_grid_target(self, sched, rng):
        student = _student()
        z_tau = NoisyState(z=np.zeros((1, 2)), t=0.5)
        with pytest.raises(ConfigurationError):
            rollout_light(student, z_tau, encode_context(student, z_tau), 0.3, 8, sched, rng)

    def test_full_rollout_from_top_is_noise(self, sched):
        out = full_rollout(_student(), 1.0, 2, 8, 5, sched, np.random.default_rng(4))
        np.testing.assert_array_equal(out.z, np.random.default_rng(4).standard_normal((5, 2)))

    def test_full_rollout_stops_at_tau(self, sched, rng):
        out = full_rollout(_student(), 0.5, 2, 8, 5, sched, rng)
        assert out.t == 0.5
        assert out.z.shape == (5, 2)


# =============================================================================
# Alternating updates
# =============================================================================

class TestUpdates:
    def test_aux_step_order(self, sched, rng):
        state = init_distill_state(_config(), _teacher(), _student())
        state = replace(state, step=1)
        z_s = NoisyState(z=np.zeros((2, 2)), t=0.4)
        with pytest.raises(SequencingError):
            aux_step(state, z_s, schedule_eval(sched, 0.4), np.zeros((2, 2)), LossWeight())

    def test_student_step_order(self, sched, rng):
        state = init_distill_state(_config(), _teacher(), _student())
        z_s = NoisyState(z=np.zeros((8, 2)), t=0.4)
        with pytest.raises(SequencingError):
            student_step(state, z_s, schedule_eval(sched, 0.4), _live(state.student, sched, rng), LossWeight())

    def test_aux_matching_teacher_and_samples_is_fixed_point(self, sched, rng):
        state = init_distill_state(_config(), _teacher(), _student())
        point = schedule_eval(sched, 0.4)
        z_s = NoisyState(z=rng.standard_normal((8, 2)), t=0.4)
        x_tilde, _ = denoise(state.teacher, z_s, None, None, point)
        new, loss, grads = aux_step(state, z_s, point, x_tilde, LossWeight())
        assert loss == 0.0
        assert not np.any(grads.aux.values)
        assert grads.student is None
        np.testing.assert_array_equal(new.aux.params.values, state.aux.params.values)
        np.testing.assert_array_equal(new.student.params.values, state.student.params.values)
        assert (new.step, new.aux_updates, new.student_updates) == (1, 1, 0)

    def test_teacher_term_pulls_aux_toward_teacher(self, sched):
        config = _config(lr=1e-2, beta1=0.9)
        state = init_distill_state(config, _teacher(), _student())
        state = replace(state, aux=_teacher(seed=7))
        point = schedule_eval(sched, 0.5)
        z_s = NoisyState(z=np.random.default_rng(2).standard_normal((16, 2)), t=0.5)
        losses = []
        for _ in range(100):
            state, loss, _ = aux_step(replace(state, step=0), z_s, point, np.zeros((16, 2)),
                                      LossWeight(), sample_term_weight=0.0)
            losses.append(loss)
        assert losses[-1] < losses[0]

    def test_student_step_with_matching_aux_is_still(self, sched, rng):
        state = replace(init_distill_state(_config(), _teacher(), _student()), step=1)
        point = schedule_eval(sched, 0.4)
        z_s = NoisyState(z=rng.standard_normal((8, 2)), t=0.4)
        new, loss, grads = student_step(state, z_s, point, _live(state.student, sched, rng), LossWeight())
        assert loss == 0.0
        assert not np.any(grads.student.values)
        np.testing.assert_array_equal(new.student.params.values, state.student.params.values)

    def test_student_step_never_touches_aux_or_teacher(self, sched, rng):
        state = init_distill_state(_config(), _teacher(), _student())
        state = replace(state, aux=_teacher(seed=9), step=1)
        aux_before = state.aux.params.values.copy()
        teacher_before = state.teacher.params.values.copy()
        point = schedule_eval(sched, 0.4)
        z_s = NoisyState(z=rng.standard_normal((8, 2)), t=0.4)
        new, _, grads = student_step(state, z_s, point, _live(state.student, sched, rng), LossWeight())
        assert grads.aux is None
        assert np.any(grads.student.values)
        np.testing.assert_array_equal(new.aux.params.values, aux_before)
        np.testing.assert_array_equal(new.aux_opt.m, state.aux_opt.m)
        assert new.aux_opt.step == state.aux_opt.step
        np.testing.assert_array_equal(new.teacher.params.values, teacher_before)

    def test_student_gradient_matches_finite_differences(self, sched):
        rng = np.random.default_rng(12)
        teacher, aux = _teacher(), _teacher(seed=3)
        student = _student()
        student = student.with_params(student.params.values + 0.1 * rng.standard_normal(len(student.params)))
        point_s, point_t = schedule_eval(sched, 0.4), schedule_eval(sched, 0.5)
        z_tau = NoisyState(z=rng.standard_normal((4, 2)), t=0.75)
        z_t = NoisyState(z=rng.standard_normal((4, 2)), t=0.5)
        z_s = NoisyState(z=rng.standard_normal((4, 2)), t=0.4)
        gap = denoise(aux, z_s, None, None, point_s)[0] - denoise(teacher, z_s, None, None, point_s)[0]
        weight = LossWeight()
        factor = elbo_factor(point_s, weight)

        def loss(values):
            m = student.with_params(values)
            x_tilde, _ = denoise(m, z_t, encode_context(m, z_tau), None, point_t)
            return factor * float(np.mean(np.sum(x_tilde * gap, axis=1)))

        x_tilde, tape = denoise(student, z_t, encode_context(student, z_tau), None, point_t)
        analytic = model_backward(student, tape, factor * gap / 4).values
        state = init_distill_state(_config(), teacher, student)
        state = replace(state, aux=aux, step=1)
        _, _, grads = student_step(state, z_s, point_s, LiveSample(x_tilde=x_tilde, tape=tape), weight)
        np.testing.assert_array_equal(grads.student.values, analytic)

        numeric = np.zeros_like(analytic)
        for i in range(analytic.shape[0]):
            plus, minus = student.params.values.copy(), student.params.values.copy()
            plus[i] += 1e-6
            minus[i] -= 1e-6
            numeric[i] = (loss(plus) - loss(minus)) / 2e-6
        err = np.linalg.norm(analytic - numeric) / (np.linalg.norm(analytic) + np.linalg.norm(numeric))
        assert err < 1e-5

    def test_teacher_must_be_standard(self):
        with pytest.raises(ConfigurationError):
            init_distill_state(_config(), _student(), _student())
        with pytest.raises(ConfigurationError):
            init_distill_state(_config(), _teacher(), _teacher())


# =============================================================================
# Stop-gradient
# =============================================================================

class TestStopGradient:
    def _state(self, step):
        rng = np.random.default_rng(21)
        aux = _teacher(seed=3)
        aux = aux.with_params(aux.params.values + 0.1 * rng.standard_normal(len(aux.params)))
        state = init_distill_state(_config(), _teacher(), _student())
        return replace(state, aux=aux, step=step)

    def test_student_loss_depends_on_aux_but_leaves_it_fixed(self, sched):
        rng = np.random.default_rng(22)
        state = self._state(step=1)
        point = schedule_eval(sched, 0.4)
        z_s = NoisyState(z=rng.standard_normal((8, 2)), t=0.4)
        live = _live(state.student, sched, rng)
        direction = rng.standard_normal(len(state.aux.params))

        def run(eps):
            aux = state.aux.with_params(state.aux.params.values + eps * direction)
            return student_step(replace(state, aux=aux), z_s, point, live, LossWeight())

        slope = (run(1e-5)[1] - run(-1e-5)[1]) / 2e-5
        assert abs(slope) > 1e-6

        # φ enters the student gradient as a constant
        new, _, grads = run(1e-2)
        shifted = state.aux.with_params(state.aux.params.values + 1e-2 * direction)
        gap = denoise(shifted, z_s, None, None, point)[0] - denoise(state.teacher, z_s, None, None, point)[0]
        expected = model_backward(state.student, live.tape, elbo_factor(point, LossWeight()) * gap / 8)
        np.testing.assert_allclose(grads.student.values, expected.values, rtol=1e-12, atol=1e-14)
        assert grads.aux is None
        np.testing.assert_array_equal(new.aux.params.values, shifted.params.values)
        np.testing.assert_array_equal(new.aux_opt.m, state.aux_opt.m)
        np.testing.assert_array_equal(new.aux_opt.v, state.aux_opt.v)
        assert (new.aux_opt.step, new.aux_updates) == (state.aux_opt.step, state.aux_updates)

    def test_aux_loss_depends_on_student_but_leaves_it_fixed(self, sched):
        rng = np.random.default_rng(23)
        state = self._state(step=0)
        point = schedule_eval(sched, 0.4)
        point_t = schedule_eval(sched, 0.5)
        z_s = NoisyState(z=rng.standard_normal((8, 2)), t=0.4)
        z_tau = NoisyState(z=rng.standard_normal((8, 2)), t=0.75)
        z_t = NoisyState(z=rng.standard_normal((8, 2)), t=0.5)
        direction = rng.standard_normal(len(state.student.params))

        def x_tilde_for(eps):
            student = state.student.with_params(state.student.params.values + eps * direction)
            return denoise(student, z_t, encode_context(student, z_tau), None, point_t)[0]

        def aux_loss(eps):
            return aux_step(state, z_s, point, x_tilde_for(eps), LossWeight())[1]

        assert abs((aux_loss(1e-5) - aux_loss(-1e-5)) / 2e-5) > 1e-6

        new, _, grads = aux_step(state, z_s, point, x_tilde_for(0.0), LossWeight())
        assert grads.student is None
        np.testing.assert_array_equal(new.student.params.values, state.student.params.values)
        np.testing.assert_array_equal(new.student_opt.m, state.student_opt.m)
        np.testing.assert_array_equal(new.student_ema.shadow, state.student_ema.shadow)
        assert (new.student_opt.step, new.student_updates) == (state.student_opt.step, state.student_updates)

    def test_aux_gradient_matches_directional_difference(self, sched):
        rng = np.random.default_rng(24)
        state = self._state(step=0)
        point = schedule_eval(sched, 0.4)
        z_s = NoisyState(z=rng.standard_normal((8, 2)), t=0.4)
        x_tilde = rng.standard_normal((8, 2))
        _, _, grads = aux_step(state, z_s, point, x_tilde, LossWeight(), sample_term_weight=0.5)
        direction = rng.standard_normal(len(state.aux.params))

        def loss(eps):
            aux = state.aux.with_params(state.aux.params.values + eps * direction)
            return aux_step(replace(state, aux=aux), z_s, point, x_tilde, LossWeight(), sample_term_weight=0.5)[1]

        numeric = (loss(1e-6) - loss(-1e-6)) / 2e-6
        analytic = float(grads.aux.values @ direction)
        assert numeric == pytest.approx(analytic, rel=1e-5)


# =============================================================================
# Loop
# =============================================================================

class TestDistillLoop:
    @pytest.mark.parametrize("variant", ["standard", "rollout"])
    def test_updates_alternate(self, variant, gmm, sched):
        config = _config(variant=variant)
        teacher = _teacher()
        before = teacher.params.values.copy()
        state = distill_loop(config, teacher, _student(), DataSource(gmm), sched, np.random.default_rng(0))
        assert state.aux_updates == state.student_updates == 3
        assert state.step == 6
        np.testing.assert_array_equal(teacher.params.values, before)
        assert [r.step for r in state.records] == [0, 2, 4, 6]
        assert all(np.isfinite(r.w2) for r in state.records)

    def test_zero_steps_still_reports_initial_quality(self, gmm, sched):
        state = distill_loop(_config(n_steps=0), _teacher(), _student(), DataSource(gmm), sched,
                             np.random.default_rng(0))
        assert len(state.records) == 1
        assert state.records[0].step == 0

    def test_pretrained_initialisation(self, gmm, sched):
        config = _config(init="pretrained_dual_rate", n_steps=2)
        state = distill_loop(config, _teacher(), _student(), DataSource(gmm), sched, np.random.default_rng(0))
        assert state.aux_updates == state.student_updates == 1

    def test_frozen_teacher_encoder_needs_matching_shapes(self, gmm, sched):
        teacher = build_standard_model(2, [8, 8], np.random.default_rng(0), time_embed_dim=8)
        with pytest.raises(ConfigurationError):
            distill_loop(_config(), teacher, _student(), DataSource(gmm), sched, np.random.default_rng(0))
