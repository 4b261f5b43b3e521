"""
Tests for the MLP toolkit: forward/backward exactness, parameter storage,
Adam and EMA.
"""

import math

import numpy as np
import pytest

from errors import ConfigurationError, NumericalDivergenceError, TapeError
from nnkit.mlp import (
    MlpSpec,
    ParamVector,
    film_apply,
    fourier_time_embed,
    init_params,
    mlp_backward,
    mlp_forward,
)
from nnkit.optim import EmaState, OptimState, adam_step, clip_by_global_norm, ema_update


# =============================================================================
# Helpers
# =============================================================================

def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / denom)


def _random_spec(rng: np.random.Generator) -> MlpSpec:
    n_hidden = int(rng.integers(1, 3))
    hidden = tuple(int(h) for h in rng.integers(2, 5, size=n_hidden))
    cond = tuple(int(c) for c in rng.integers(0, 3, size=n_hidden))
    return MlpSpec(
        input_dim=int(rng.integers(1, 4)),
        hidden_dims=hidden,
        output_dim=int(rng.integers(1, 3)),
        time_embed_dim=4,
        film_enabled=True,
        cond_dims=cond,
        n_time_embeds=int(rng.integers(1, 3)),
        n_classes=int(rng.integers(0, 3)),
    )


def _inputs(spec: MlpSpec, batch: int, rng: np.random.Generator):
    x = rng.standard_normal((batch, spec.input_dim))
    embeds = [fourier_time_embed(float(rng.random()), spec.time_embed_dim) for _ in range(spec.n_time_embeds)]
    cond = [rng.standard_normal((batch, spec.cond_width(i))) if spec.cond_width(i) else None
            for i in range(len(spec.hidden_dims))]
    labels = rng.integers(0, spec.n_classes + 1, size=batch) if spec.n_classes else None
    return x, embeds, cond, labels


def _perturbed_params(params: ParamVector) -> ParamVector:
    # FiLM projections start at zero; randomise them so their gradients are exercised
    rng = np.random.default_rng(7)
    return params.with_values(params.values + 0.3 * rng.standard_normal(len(params)))


# =============================================================================
# Embeddings and FiLM
# =============================================================================

class TestEmbeddings:
    def test_fourier_layout(self):
        emb = fourier_time_embed(0.0, 8)
        assert emb.shape == (8,)
        np.testing.assert_array_equal(emb[:4], np.zeros(4))
        np.testing.assert_array_equal(emb[4:], np.ones(4))

    def test_fourier_rejects_odd_dim(self):
        with pytest.raises(ConfigurationError):
            fourier_time_embed(0.5, 7)

    def test_film_identity(self):
        h = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(film_apply(h, np.zeros_like(h), np.zeros_like(h)), h)

    def test_film_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            film_apply(np.zeros((2, 3)), np.zeros((2, 2)), np.zeros((2, 3)))


# =============================================================================
# Parameter storage
# =============================================================================

class TestParamVector:
    def test_concat_part_shares_memory(self):
        a = ParamVector.from_shapes({"w": (2, 2)}, np.arange(4.0))
        b = ParamVector.from_shapes({"w": (3,)}, np.arange(3.0))
        joint = ParamVector.concat({"encoder": a, "denoiser": b})
        assert len(joint) == 7
        assert joint.names() == ["encoder/w", "denoiser/w"]
        joint.part("denoiser").values[...] = 5.0
        np.testing.assert_array_equal(joint.values[4:], [5.0, 5.0, 5.0])
        assert joint.span("encoder") == slice(0, 4)

    def test_layout_size_mismatch(self):
        with pytest.raises(ConfigurationError):
            ParamVector.from_shapes({"w": (2, 2)}, np.zeros(3))

    def test_init_zeroes_film_and_biases(self, rng):
        spec = MlpSpec(input_dim=2, hidden_dims=(4,), output_dim=2)
        params = init_params(spec, rng)
        assert np.all(params.tensor("film.0.scale.w") == 0.0)
        assert np.all(params.tensor("hidden.0.b") == 0.0)
        assert np.any(params.tensor("hidden.0.w") != 0.0)


# =============================================================================
# Forward / backward
# =============================================================================

class TestMlpGradients:
    def test_random_specs_match_central_differences(self):
        rng = np.random.default_rng(0)
        checked = 0
        h = 1e-6
        while checked < 50:
            spec = _random_spec(rng)
            params = _perturbed_params(init_params(spec, rng))
            if len(params) > 500:
                continue
            x, embeds, cond, labels = _inputs(spec, 3, rng)
            upstream = rng.standard_normal((3, spec.output_dim))

            def loss(p, xx=x, cc=cond):
                y, _ = mlp_forward(spec, p, xx, embeds=embeds, cond=cc, labels=labels)
                return float(np.sum(y * upstream))

            _, tape = mlp_forward(spec, params, x, embeds=embeds, cond=cond, labels=labels)
            grads = mlp_backward(tape, upstream)

            numeric = np.zeros(len(params))
            for i in range(len(params)):
                plus = params.values.copy()
                minus = params.values.copy()
                plus[i] += h
                minus[i] -= h
                numeric[i] = (loss(params.with_values(plus)) - loss(params.with_values(minus))) / (2 * h)
            assert _rel_err(grads.params.values, numeric) < 1e-5

            numeric_x = np.zeros_like(x)
            for idx in np.ndindex(x.shape):
                xp, xm = x.copy(), x.copy()
                xp[idx] += h
                xm[idx] -= h
                numeric_x[idx] = (loss(params, xx=xp) - loss(params, xx=xm)) / (2 * h)
            assert _rel_err(grads.x, numeric_x) < 1e-5

            for level, c in enumerate(cond):
                if c is None:
                    assert grads.cond[level] is None
                    continue
                numeric_c = np.zeros_like(c)
                for idx in np.ndindex(c.shape):
                    cp = [None if v is None else v.copy() for v in cond]
                    cm = [None if v is None else v.copy() for v in cond]
                    cp[level][idx] += h
                    cm[level][idx] -= h
                    numeric_c[idx] = (loss(params, cc=cp) - loss(params, cc=cm)) / (2 * h)
                assert _rel_err(grads.cond[level], numeric_c) < 1e-5
            checked += 1

    def test_hidden_upstream_and_dropout(self):
        rng = np.random.default_rng(3)
        spec = MlpSpec(input_dim=2, hidden_dims=(5, 4), output_dim=2, time_embed_dim=4)
        params = _perturbed_params(init_params(spec, rng))
        x = rng.standard_normal((4, 2))
        embeds = [fourier_time_embed(0.3, 4)]
        upstream = rng.standard_normal((4, 2))
        side_grad = rng.standard_normal((4, 5))

        def loss(p):
            y, tape = mlp_forward(spec, p, x, embeds=embeds, dropout=0.25, rng=np.random.default_rng(11))
            return float(np.sum(y * upstream) + np.sum(tape.hidden[0] * side_grad))

        _, tape = mlp_forward(spec, params, x, embeds=embeds, dropout=0.25, rng=np.random.default_rng(11))
        grads = mlp_backward(tape, upstream, hidden_upstream={0: side_grad})
        numeric = np.zeros(len(params))
        for i in range(len(params)):
            plus, minus = params.values.copy(), params.values.copy()
            plus[i] += 1e-6
            minus[i] -= 1e-6
            numeric[i] = (loss(params.with_values(plus)) - loss(params.with_values(minus))) / 2e-6
        assert _rel_err(grads.params.values, numeric) < 1e-5

    def test_upstream_shape_mismatch(self, rng):
        spec = MlpSpec(input_dim=2, hidden_dims=(3,), output_dim=2, film_enabled=False)
        y, tape = mlp_forward(spec, init_params(spec, rng), np.zeros((4, 2)))
        with pytest.raises(TapeError):
            mlp_backward(tape, np.zeros((3, 2)))

    def test_film_disabled_has_no_conditioning_params(self):
        spec = MlpSpec(input_dim=2, hidden_dims=(3,), output_dim=2, film_enabled=False)
        assert not any(name.startswith(("film.", "time_proj")) for name in spec.layout())

    def test_label_out_of_range(self, rng):
        spec = MlpSpec(input_dim=2, hidden_dims=(3,), output_dim=2, n_classes=2)
        with pytest.raises(ConfigurationError):
            mlp_forward(spec, init_params(spec, rng), np.zeros((1, 2)),
                        embeds=[fourier_time_embed(0.1, 16)], labels=np.array([3]))


# =============================================================================
# Optimiser
# =============================================================================

class TestAdam:
    def _params(self):
        return ParamVector.from_shapes({"w": (3,)}, np.array([1.0, -2.0, 0.5]))

    def test_zero_gradient_leaves_params(self):
        params = self._params()
        new, state = adam_step(params, params.zeros_like(), OptimState.fresh(3, lr=0.1))
        np.testing.assert_array_equal(new.values, params.values)
        assert state.step == 1

    def test_first_step_moves_by_lr(self):
        params = self._params()
        grads = params.with_values(np.array([0.1, -0.2, 0.05]))
        new, _ = adam_step(params, grads, OptimState.fresh(3, lr=0.01))
        np.testing.assert_allclose(new.values, params.values - 0.01 * np.sign(grads.values), atol=1e-9)

    def test_non_finite_gradient_names_tensor(self):
        params = self._params()
        grads = params.with_values(np.array([np.nan, 0.0, 0.0]))
        with pytest.raises(NumericalDivergenceError, match="w"):
            adam_step(params, grads, OptimState.fresh(3))

    def test_clip_by_global_norm(self):
        clipped = clip_by_global_norm(np.array([3.0, 4.0]), 1.0)
        assert math.isclose(float(np.linalg.norm(clipped)), 1.0)
        np.testing.assert_array_equal(clip_by_global_norm(np.array([0.3, 0.4]), 1.0), [0.3, 0.4])

    def test_clipping_keeps_direction(self):
        params = self._params()
        grads = params.with_values(np.array([30.0, -40.0, 0.0]))
        _, state = adam_step(params, grads, OptimState.fresh(3, beta1=0.9, clip_norm=1.0))
        # first moment is (1 - β1) times the clipped gradient
        np.testing.assert_allclose(state.m, 0.1 * grads.values / 50.0, rtol=1e-12)
        cos = np.dot(state.m, grads.values) / (np.linalg.norm(state.m) * np.linalg.norm(grads.values))
        assert cos == pytest.approx(1.0, abs=1e-12)

    def test_warmup_is_linear(self):
        state = OptimState.fresh(1, lr=1.0, warmup_steps=4)
        assert state.current_lr() == 0.25

    def test_invalid_beta(self):
        with pytest.raises(ConfigurationError):
            OptimState.fresh(1, beta1=1.0)

    def test_ema_update(self):
        params = self._params()
        ema = EmaState.of(params.zeros_like(), decay=0.9)
        ema = ema_update(ema, params)
        np.testing.assert_allclose(ema.shadow, 0.1 * params.values)

    def test_ema_is_convex_combination_of_history(self):
        rng = np.random.default_rng(4)
        decay, n = 0.7, 30
        params = ParamVector.from_shapes({"w": (5,)}, rng.standard_normal(5))
        ema = EmaState.of(params, decay=decay)
        history = [params.values.copy()]
        for _ in range(n):
            params = params.with_values(3.0 * rng.standard_normal(5))
            history.append(params.values.copy())
            ema = ema_update(ema, params)
        weights = np.array([decay ** n] + [(1.0 - decay) * decay ** (n - i) for i in range(1, n + 1)])
        assert weights.sum() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(ema.shadow, weights @ np.array(history), atol=1e-12)
        history = np.array(history)
        assert np.all(ema.shadow >= history.min(axis=0)) and np.all(ema.shadow <= history.max(axis=0))
