"""
The dual-rate architecture: a heavy context encoder E(z_τ, τ, c) and a light
denoiser g(z_t, t, e_τ, τ, c).

Both networks share one joint parameter vector ("encoder/..." and
"denoiser/...") so a single optimizer clips across them. A model without
an encoder is a standard diffusion denoiser g(z_t, t, c); that form is used
for baselines, distillation teachers and auxiliary moment estimators.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np

from diffusion.process import NoisyState
from diffusion.schedule import SnrPoint
from errors import ConfigurationError, TimeOrderingError
from models.parameterization import v_to_x
from nnkit.mlp import (
    MlpSpec,
    MlpTape,
    ParamVector,
    fourier_time_embed,
    init_params,
    mlp_backward,
    mlp_forward,
)

logger = logging.getLogger(__name__)

ParamMode = Literal["xpred", "vpred"]


@dataclass
class ContextFeatures:
    layers: List[np.ndarray]
    tau: float
    null_flag: np.ndarray
    tape: Optional[MlpTape] = field(default=None, repr=False)

    @property
    def batch_size(self) -> int:
        return int(self.null_flag.shape[0])


@dataclass
class DenoiseTape:
    mlp: MlpTape
    point: SnrPoint
    param_mode: str
    features: Optional[ContextFeatures]


@dataclass(frozen=True)
class DualRateModel:
    denoiser_spec: MlpSpec
    params: ParamVector
    encoder_spec: Optional[MlpSpec] = None
    multi_level: bool = True
    param_mode: ParamMode = "vpred"
    n_classes: int = 0
    embed_drop_p: float = 0.0
    dropout: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.embed_drop_p <= 1.0:
            raise ConfigurationError(f"embed_drop_p must lie in [0, 1], got {self.embed_drop_p}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.param_mode not in ("xpred", "vpred"):
            raise ConfigurationError(f"unknown param_mode {self.param_mode!r}")
        if self.encoder_spec is not None:
            levels = self.feature_levels
            widths = tuple(self.encoder_spec.hidden_dims[i] for i in levels)
            if widths != self.denoiser_spec.cond_dims:
                raise ConfigurationError(
                    f"encoder feature widths {widths} differ from denoiser cond_dims {self.denoiser_spec.cond_dims}"
                )

    @property
    def has_encoder(self) -> bool:
        return self.encoder_spec is not None

    @property
    def feature_levels(self) -> Tuple[int, ...]:
        """Encoder hidden-layer indices emitted as features, in denoiser layer order."""
        if self.encoder_spec is None:
            return ()
        n_enc = len(self.encoder_spec.hidden_dims)
        if not self.multi_level:
            return (n_enc - 1,)
        n_den = len(self.denoiser_spec.hidden_dims)
        return tuple(range(n_enc - n_den, n_enc))

    @property
    def data_dim(self) -> int:
        return self.denoiser_spec.input_dim

    def encoder_params(self) -> ParamVector:
        return self.params.part("encoder")

    def denoiser_params(self) -> ParamVector:
        return self.params.part("denoiser")

    def with_params(self, params: Union[ParamVector, np.ndarray]) -> "DualRateModel":
        values = params.values if isinstance(params, ParamVector) else params
        return replace(self, params=self.params.with_values(values))


def _base_spec(data_dim: int, hidden: Sequence[int], time_embed_dim: int, activation: str,
               film_enabled: bool, n_classes: int, n_time_embeds: int, cond_dims: Tuple[int, ...] = ()) -> MlpSpec:
    return MlpSpec(
        input_dim=data_dim,
        hidden_dims=tuple(hidden),
        output_dim=data_dim,
        activation=activation,
        time_embed_dim=time_embed_dim,
        film_enabled=film_enabled,
        cond_dims=cond_dims,
        n_time_embeds=n_time_embeds,
        n_classes=n_classes,
    )


def build_dual_rate_model(
    data_dim: int,
    encoder_hidden: Sequence[int],
    denoiser_hidden: Sequence[int],
    rng: np.random.Generator,
    multi_level: bool = True,
    param_mode: ParamMode = "vpred",
    n_classes: int = 0,
    embed_drop_p: float = 0.0,
    dropout: float = 0.0,
    time_embed_dim: int = 16,
    activation: str = "silu",
    film_enabled: bool = True,
) -> DualRateModel:
    if not encoder_hidden or not denoiser_hidden:
        raise ConfigurationError("dual-rate models need at least one hidden layer in encoder and denoiser")
    if multi_level and len(encoder_hidden) < len(denoiser_hidden):
        raise ConfigurationError(
            f"multi-level conditioning needs >= {len(denoiser_hidden)} encoder layers, got {len(encoder_hidden)}"
        )
    encoder_spec = _base_spec(data_dim, encoder_hidden, time_embed_dim, activation, film_enabled, n_classes, 1)
    if multi_level:
        cond_dims = tuple(encoder_hidden[len(encoder_hidden) - len(denoiser_hidden):])
    else:
        cond_dims = (encoder_hidden[-1],)
    denoiser_spec = _base_spec(
        data_dim, denoiser_hidden, time_embed_dim, activation, film_enabled, n_classes, 2, cond_dims
    )
    params = ParamVector.concat(
        {"encoder": init_params(encoder_spec, rng), "denoiser": init_params(denoiser_spec, rng)}
    )
    logger.debug(f"[MODEL] dual-rate model with {len(params)} parameters (multi_level={multi_level})")
    return DualRateModel(
        denoiser_spec=denoiser_spec,
        params=params,
        encoder_spec=encoder_spec,
        multi_level=multi_level,
        param_mode=param_mode,
        n_classes=n_classes,
        embed_drop_p=embed_drop_p,
        dropout=dropout,
    )


def build_standard_model(
    data_dim: int,
    hidden: Sequence[int],
    rng: np.random.Generator,
    param_mode: ParamMode = "vpred",
    n_classes: int = 0,
    dropout: float = 0.0,
    time_embed_dim: int = 16,
    activation: str = "silu",
    film_enabled: bool = True,
) -> DualRateModel:
    spec = _base_spec(data_dim, hidden, time_embed_dim, activation, film_enabled, n_classes, 1)
    params = ParamVector.concat({"denoiser": init_params(spec, rng)})
    return DualRateModel(denoiser_spec=spec, params=params, param_mode=param_mode, n_classes=n_classes, dropout=dropout)


def _drop_rate(drop_features: Union[bool, float, None]) -> float:
    if drop_features is None or drop_features is False:
        return 0.0
    if drop_features is True:
        return 1.0
    rate = float(drop_features)
    if not 0.0 <= rate <= 1.0:
        raise ConfigurationError(f"feature drop probability must lie in [0, 1], got {rate}")
    return rate


def encode_context(
    model: DualRateModel,
    z_tau: NoisyState,
    labels: Optional[np.ndarray] = None,
    drop_features: Union[bool, float, None] = None,
    rng: Optional[np.random.Generator] = None,
    training: bool = False,
) -> ContextFeatures:
    """Runs E(z_τ, τ, c) and collects the configured hidden activations.

    drop_features is a flag or a per-item probability; dropped items get
    all-zero features on every level.
    """
    if model.encoder_spec is None:
        raise ConfigurationError("model has no context encoder")
    batch = z_tau.z.shape[0]
    rate = _drop_rate(drop_features)
    if rate >= 1.0:
        dropped = np.ones(batch, dtype=bool)
    elif rate > 0.0:
        if rng is None:
            raise ConfigurationError("feature dropout requires an rng")
        dropped = rng.random(batch) < rate
    else:
        dropped = np.zeros(batch, dtype=bool)

    net_dropout = model.dropout if training else 0.0
    embeds = [fourier_time_embed(z_tau.t, model.encoder_spec.time_embed_dim)]
    _, tape = mlp_forward(
        model.encoder_spec,
        model.encoder_params(),
        z_tau.z,
        embeds=embeds,
        labels=labels if model.n_classes > 0 else None,
        dropout=net_dropout,
        rng=rng,
    )
    keep = (~dropped).astype(np.float64)[:, None]
    layers = [tape.hidden[i] * keep for i in model.feature_levels]
    return ContextFeatures(layers=layers, tau=float(z_tau.t), null_flag=dropped, tape=tape)


def null_features(model: DualRateModel, batch: int, tau: float) -> ContextFeatures:
    """All-zero features, the encoding of a dropped context."""
    widths = model.denoiser_spec.cond_dims
    return ContextFeatures(
        layers=[np.zeros((batch, w)) for w in widths],
        tau=float(tau),
        null_flag=np.ones(batch, dtype=bool),
    )


def denoise(
    model: DualRateModel,
    z_t: NoisyState,
    features: Optional[ContextFeatures],
    labels: Optional[np.ndarray],
    point: SnrPoint,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, DenoiseTape]:
    """x̂ = g(z_t, t, e_τ, τ, c), always returned in x-space."""
    if abs(point.t - z_t.t) > 1e-12:
        raise ConfigurationError(f"schedule point t={point.t} does not match state t={z_t.t}")
    spec = model.denoiser_spec
    embeds = [fourier_time_embed(z_t.t, spec.time_embed_dim)]
    cond = None
    if model.has_encoder:
        if features is None:
            raise ConfigurationError("dual-rate denoiser needs context features")
        if features.tau < z_t.t:
            raise TimeOrderingError(f"features from tau={features.tau} cannot condition t={z_t.t}")
        embeds.append(fourier_time_embed(features.tau, spec.time_embed_dim))
        cond = features.layers
    raw, tape = mlp_forward(
        spec,
        model.denoiser_params(),
        z_t.z,
        embeds=embeds,
        cond=cond,
        labels=labels if model.n_classes > 0 else None,
        dropout=model.dropout if training else 0.0,
        rng=rng,
    )
    x_hat = v_to_x(raw, z_t.z, point) if model.param_mode == "vpred" else raw
    return x_hat, DenoiseTape(mlp=tape, point=point, param_mode=model.param_mode, features=features)


def encoder_backward(model: DualRateModel, features: ContextFeatures, d_levels: Sequence[np.ndarray]) -> ParamVector:
    """Gradient of the encoder parameters given gradients at the emitted feature levels."""
    if features.tape is None:
        return model.encoder_params().zeros_like()
    keep = (~features.null_flag).astype(np.float64)[:, None]
    hidden_upstream = {
        level: np.asarray(d, dtype=np.float64) * keep
        for level, d in zip(model.feature_levels, d_levels)
        if d is not None
    }
    zero_head = np.zeros(features.tape.output_shape)
    return mlp_backward(features.tape, zero_head, hidden_upstream=hidden_upstream).params


def model_backward(model: DualRateModel, tape: DenoiseTape, d_x_hat: np.ndarray) -> ParamVector:
    """Joint gradient over encoder and denoiser for an upstream gradient on x̂."""
    d_raw = -tape.point.sigma * np.asarray(d_x_hat) if tape.param_mode == "vpred" else np.asarray(d_x_hat)
    den = mlp_backward(tape.mlp, d_raw)
    grads = model.params.zeros_like()
    grads.part("denoiser").values[...] = den.params.values
    if model.has_encoder and tape.features is not None:
        d_levels = den.cond[: len(tape.features.layers)]
        grads.part("encoder").values[...] = encoder_backward(model, tape.features, d_levels).values
    return grads


def copy_into_encoder(model: DualRateModel, source: DualRateModel) -> DualRateModel:
    """Initialises the encoder from a same-shaped standard model's denoiser."""
    if not model.has_encoder or source.has_encoder:
        raise ConfigurationError("copy_into_encoder needs a dual-rate target and a standard source")
    src = source.denoiser_params()
    dst = model.encoder_params()
    if dst.layout != src.layout:
        raise ConfigurationError("teacher network and student encoder have different shapes")
    params = model.params.copy()
    params.part("encoder").values[...] = src.values
    return model.with_params(params)
