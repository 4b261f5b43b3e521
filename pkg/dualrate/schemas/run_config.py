"""
Run configuration: a flat dotted `key = value` document validated into one
pydantic section per subsystem. Every field default is the documented
default; unknown keys are rejected with their dotted path.
"""

from __future__ import annotations

import logging
import re
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from diffusion.schedule import LogSnrSchedule, LossWeight
from engine.distiller import DistillConfig
from engine.sampler import SampleConfig
from engine.trainer import TrainConfig
from errors import ConfigurationError
from evaluation.cost import CostModel

logger = logging.getLogger(__name__)

Command = Literal["train", "sample", "distill", "eval", "ablate"]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _check_divides(K: int, k: int) -> None:
    if k % K:
        raise ValueError(f"K={K} must divide k={k} (light steps are grouped into K heavy blocks)")


class DataSection(_Section):
    kind: Literal["gmm", "grid"] = Field(default="gmm", description="gmm: benchmark mixture; grid: stripe images")
    n_components: int = Field(default=8, ge=1, description="Mixture components (also class count)")
    dim: int = Field(default=2, ge=1, description="Mixture dimension")
    comp_std: float = Field(default=0.1, gt=0.0, description="Per-component standard deviation")
    radius: float = Field(default=2.0, gt=0.0, description="Radius of the circle holding the component means")
    side: int = Field(default=8, ge=2, description="Grid image side length")
    n_classes: int = Field(default=4, ge=1, description="Grid pattern classes")
    noise_std: float = Field(default=0.05, ge=0.0, description="Pixel noise on grid patterns")


class AugmentSection(_Section):
    translate_prob: float = Field(default=0.0, ge=0.0, le=1.0, description="Per-item cyclic shift probability")
    max_shift: int = Field(default=1, ge=0, description="Largest shift in pixels along each axis")


class ModelSection(_Section):
    kind: Literal["dual_rate", "standard"] = Field(default="dual_rate", description="standard has no encoder")
    encoder_hidden: List[int] = Field(default_factory=lambda: [128, 128, 128])
    denoiser_hidden: List[int] = Field(default_factory=lambda: [64, 64])
    multi_level: bool = Field(default=True, description="Condition every denoiser layer, else the first only")
    param_mode: Literal["xpred", "vpred"] = "vpred"
    embed_drop_p: float = Field(default=0.0, ge=0.0, le=1.0, description="Feature dropout rate in training")
    dropout: float = Field(default=0.0, ge=0.0, lt=1.0, description="Hidden-activation dropout in training")
    time_embed_dim: int = Field(default=16, ge=2)
    activation: Literal["silu", "relu"] = "silu"
    film_enabled: bool = True
    class_conditional: bool = Field(default=False, description="Learn a class table sized by the data's classes")

    @model_validator(mode="after")
    def _check_levels(self) -> "ModelSection":
        if self.kind == "dual_rate" and self.multi_level and len(self.encoder_hidden) < len(self.denoiser_hidden):
            raise ValueError(
                f"multi_level needs at least {len(self.denoiser_hidden)} encoder_hidden layers, "
                f"got {len(self.encoder_hidden)}"
            )
        if any(w < 1 for w in self.encoder_hidden + self.denoiser_hidden):
            raise ValueError("hidden widths must be >= 1")
        return self


class GuidanceSection(_Section):
    w: float = Field(default=0.0, ge=0.0, description="Guidance weight; 0 disables guidance")
    lo: float = Field(default=1.5, description="Guidance is applied when lo <= λ_t <= hi")
    hi: float = 5.0


class TrainSection(_Section):
    K: int = Field(default=8, ge=1)
    k: int = Field(default=64, ge=1)
    steps: int = Field(default=2000, ge=0)
    batch: int = Field(default=256, ge=1)
    lr: float = Field(default=1e-3, gt=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.99, ge=0.0, lt=1.0)
    warmup: int = Field(default=100, ge=0)
    clip_norm: float = Field(default=1.0, gt=0.0)
    ema_decay: float = Field(default=0.999, ge=0.0, le=1.0)
    weight_bias: float = Field(default=1.0, description="b in the sigmoid(λ - b) loss weight")
    weight_mode: Literal["sigmoid", "unit"] = "sigmoid"
    class_drop_p: float = Field(default=0.1, ge=0.0, le=1.0, description="Label dropout for guidance training")
    snapshot_every: int = Field(default=500, ge=1)
    eval_points: int = Field(default=256, ge=1)
    divergence_threshold: float = Field(default=1e6, gt=0.0, description="Largest unweighted squared error per item")
    resume_from: Optional[str] = Field(default=None, description="Checkpoint to continue from")

    @model_validator(mode="after")
    def _check_rates(self) -> "TrainSection":
        _check_divides(self.K, self.k)
        return self


class SamplerSection(_Section):
    K: int = Field(default=8, ge=1)
    k: int = Field(default=64, ge=1)
    n: int = Field(default=2000, ge=1)
    noise_interp: float = Field(default=0.2, ge=0.0, le=1.0)
    clip: Optional[bool] = Field(default=None, description="Unset: on for grid data, off for mixtures")
    use_ema: bool = True
    checkpoint: Optional[str] = Field(default=None, description="Model checkpoint; defaults to <output_dir>/model.ckpt")
    oracle: bool = Field(default=False, description="Sample with the analytic mixture denoiser")
    trace_out: Optional[str] = None

    @model_validator(mode="after")
    def _check_rates(self) -> "SamplerSection":
        _check_divides(self.K, self.k)
        return self


class DistillSection(_Section):
    K: int = Field(default=2, ge=1)
    k: int = Field(default=8, ge=1)
    variant: Literal["standard", "rollout"] = "standard"
    init: Literal["pretrained_dual_rate", "frozen_teacher_encoder"] = "frozen_teacher_encoder"
    teacher: Optional[str] = Field(default=None, description="Teacher checkpoint (a standard model)")
    teacher_max_oracle_mse: Optional[float] = Field(default=None, description="Refuse teachers worse than this")
    steps: int = Field(default=1000, ge=0)
    batch: int = Field(default=256, ge=1)
    lr: float = Field(default=1e-4, gt=0.0)
    beta1: float = Field(default=0.0, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.99, ge=0.0, lt=1.0)
    warmup: int = Field(default=100, ge=0)
    ema_decay: float = Field(default=0.999, ge=0.0, le=1.0)
    pretrain_steps: int = Field(default=500, ge=0)
    pretrain_lr: float = Field(default=1e-3, gt=0.0)
    sample_term_weight: float = Field(default=1.0, ge=0.0)
    snapshot_every: int = Field(default=100, ge=1)
    eval_samples: int = Field(default=2000, ge=1)
    divergence_threshold: float = Field(default=1e9, gt=0.0, description="Largest |loss| before the run is stopped")

    @model_validator(mode="after")
    def _check_rates(self) -> "DistillSection":
        _check_divides(self.K, self.k)
        return self


class EvalSection(_Section):
    checkpoint: Optional[str] = None
    n_samples: int = Field(default=2000, ge=1)
    n_projections: int = Field(default=128, ge=1)
    n_per_point: int = Field(default=256, ge=1)
    n_mc: int = Field(default=64, ge=1)
    lambda_lo: float = -8.0
    lambda_hi: float = 8.0
    lambda_points: int = Field(default=17, ge=1)
    c_encoder: float = Field(default=108.45, ge=0.0)
    c_denoiser: float = Field(default=44.02, ge=0.0)
    guidance_doubling: bool = True
    plots: bool = True


class AblateSection(_Section):
    multi_level: List[bool] = Field(default_factory=lambda: [True, False])
    embed_drop_p: List[float] = Field(default_factory=lambda: [0.0, 0.5])
    translate_prob: List[float] = Field(default_factory=lambda: [0.0])
    workers: int = Field(default=1, ge=1)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    command: Command
    seed: int = 0
    output_dir: str = "runs/default"
    schedule: LogSnrSchedule = Field(default_factory=LogSnrSchedule)
    data: DataSection = Field(default_factory=DataSection)
    augment: AugmentSection = Field(default_factory=AugmentSection)
    model: ModelSection = Field(default_factory=ModelSection)
    guidance: GuidanceSection = Field(default_factory=GuidanceSection)
    train: TrainSection = Field(default_factory=TrainSection)
    sampler: SamplerSection = Field(default_factory=SamplerSection)
    distill: DistillSection = Field(default_factory=DistillSection)
    eval: EvalSection = Field(default_factory=EvalSection)
    ablate: AblateSection = Field(default_factory=AblateSection)

    @model_validator(mode="after")
    def _check_cross_sections(self) -> "RunConfig":
        if self.augment.translate_prob > 0 and self.data.kind != "grid":
            raise ValueError("augment.translate_prob: translation augmentation requires data.kind = grid")
        if any(p > 0 for p in self.ablate.translate_prob) and self.data.kind != "grid":
            raise ValueError("ablate.translate_prob: translation augmentation requires data.kind = grid")
        if any(not 0.0 <= p <= 1.0 for p in self.ablate.embed_drop_p + self.ablate.translate_prob):
            raise ValueError("ablate: probabilities must lie in [0, 1]")
        return self

    # --------------------------- derived configs ---------------------------
    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(
            K=t.K,
            k=t.k,
            batch_size=t.batch,
            n_steps=t.steps,
            weight=LossWeight(bias=t.weight_bias, mode=t.weight_mode),
            lr=t.lr,
            beta1=t.beta1,
            beta2=t.beta2,
            warmup_steps=t.warmup,
            clip_norm=t.clip_norm,
            ema_decay=t.ema_decay,
            embed_drop_p=self.model.embed_drop_p,
            class_drop_p=t.class_drop_p if self.model.class_conditional else 0.0,
            translate_prob=self.augment.translate_prob,
            max_shift=self.augment.max_shift,
            snapshot_every=t.snapshot_every,
            eval_points=t.eval_points,
            divergence_threshold=t.divergence_threshold,
        )

    def sample_config(self) -> SampleConfig:
        s = self.sampler
        return SampleConfig(
            K=s.K,
            k=s.k,
            guidance_w=self.guidance.w,
            guidance_lo=self.guidance.lo,
            guidance_hi=self.guidance.hi,
            noise_interp=s.noise_interp,
            clip=s.clip if s.clip is not None else self.data.kind == "grid",
            n_samples=s.n,
            use_ema=s.use_ema,
            record_states=s.trace_out is not None,
        )

    def distill_config(self) -> DistillConfig:
        d = self.distill
        return DistillConfig(
            K=d.K,
            k=d.k,
            variant=d.variant,
            init=d.init,
            n_steps=d.steps,
            batch_size=d.batch,
            lr=d.lr,
            beta1=d.beta1,
            beta2=d.beta2,
            warmup_steps=d.warmup,
            ema_decay=d.ema_decay,
            weight=LossWeight(bias=self.train.weight_bias, mode=self.train.weight_mode),
            pretrain_steps=d.pretrain_steps,
            pretrain_lr=d.pretrain_lr,
            sample_term_weight=d.sample_term_weight,
            snapshot_every=d.snapshot_every,
            eval_samples=d.eval_samples,
            eval_projections=self.eval.n_projections,
            eval_noise_interp=self.sampler.noise_interp,
            divergence_threshold=d.divergence_threshold,
        )

    def cost_model(self) -> CostModel:
        return CostModel(
            c_encoder=self.eval.c_encoder,
            c_denoiser=self.eval.c_denoiser,
            guidance_doubling=self.eval.guidance_doubling,
        )


# --------------------------- text parsing ---------------------------

_KEY_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*$")
_INT_RE = re.compile(r"^[+-]?\d+$")


def _parse_scalar(raw: str) -> Any:
    text = raw.strip()
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered in ("none", "null"):
        return None
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    if _INT_RE.match(text):
        return int(text)
    try:
        return float(text)
    except ValueError:
        return text


def parse_value(raw: str) -> Any:
    text = raw.strip()
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        return [_parse_scalar(part) for part in inner.split(",")] if inner else []
    return _parse_scalar(text)


def _strip_comment(line: str) -> str:
    quote = None
    for i, ch in enumerate(line):
        if ch in "\"'":
            quote = None if quote == ch else (quote or ch)
        elif ch == "#" and quote is None:
            return line[:i]
    return line


def parse_pairs(text: str) -> Dict[str, Any]:
    """Flat dotted keys in document order; duplicates are rejected."""
    pairs: Dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = _strip_comment(line).strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {body!r}")
        key, _, value = body.partition("=")
        key = key.strip()
        if not _KEY_RE.match(key):
            raise ConfigurationError(f"line {lineno}: malformed key {key!r}")
        if key in pairs:
            raise ConfigurationError(f"{key}: duplicate key (line {lineno})")
        pairs[key] = parse_value(value)
    return pairs


def _nest(pairs: Dict[str, Any]) -> Dict[str, Any]:
    tree: Dict[str, Any] = {}
    for key, value in pairs.items():
        node = tree
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigurationError(f"{key}: '{part}' is a value, not a section")
            node = child
        if isinstance(node.get(parts[-1]), dict):
            raise ConfigurationError(f"{key}: is a section, not a value")
        node[parts[-1]] = value
    return tree


def _format_validation(exc: ValidationError) -> str:
    messages = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err.get("loc", ()))
        msg = err.get("msg", "invalid value")
        messages.append(f"{path}: {msg}" if path else msg)
    return "; ".join(messages)


def parse_config(text: str, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Parses and validates a run config; overrides are dotted keys applied last."""
    pairs = parse_pairs(text)
    for key, value in (overrides or {}).items():
        if value is not None:
            pairs[key] = value
    try:
        config = RunConfig(**_nest(pairs))
    except ValidationError as exc:
        raise ConfigurationError(_format_validation(exc)) from exc
    logger.debug(f"[CONFIG] parsed {len(pairs)} keys for command {config.command}")
    return config


def documented_defaults() -> List[Tuple[str, Any, str]]:
    """(dotted key, default, description) for every section field."""
    rows: List[Tuple[str, Any, str]] = []
    for section, info in RunConfig.model_fields.items():
        annotation = info.annotation
        if isinstance(annotation, type) and issubclass(annotation, BaseModel):
            for name, field in annotation.model_fields.items():
                default = field.default_factory() if field.default_factory else field.default
                rows.append((f"{section}.{name}", default, field.description or ""))
        else:
            rows.append((section, None if info.is_required() else info.default, info.description or ""))
    return rows
