"""
Dense MLPs over a flat parameter vector with a hand-written reverse pass.

Conditioning path (when FiLM is enabled): each time embedding gets its own
linear projection, the projections are summed together with a learned class
embedding, passed through SiLU, and then mapped to a per-layer FiLM scale and
shift. Per-layer context features are concatenated to a hidden layer's input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from errors import ConfigurationError, TapeError

Activation = Literal["silu", "relu"]

# Geometric frequency ladder (cycles over [0, 1])
FOURIER_MIN_FREQ = 1.0
FOURIER_MAX_FREQ = 1.0e4


class MlpSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    input_dim: int = Field(ge=1)
    hidden_dims: Tuple[int, ...] = ()
    output_dim: int = Field(ge=1)
    activation: Activation = "silu"
    time_embed_dim: int = Field(default=16, ge=2)
    film_enabled: bool = True
    cond_dims: Tuple[int, ...] = Field(default=(), description="Context width concatenated into hidden layer i; 0 means none")
    n_time_embeds: int = Field(default=1, ge=1, description="Number of time embeddings projected and summed")
    n_classes: int = Field(default=0, ge=0, description="Class table rows; index n_classes is the null class")

    @model_validator(mode="after")
    def _check_dims(self) -> "MlpSpec":
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError(f"hidden_dims must be >= 1, got {list(self.hidden_dims)}")
        if self.time_embed_dim % 2:
            raise ValueError(f"time_embed_dim must be even, got {self.time_embed_dim}")
        if len(self.cond_dims) > len(self.hidden_dims):
            raise ValueError(
                f"cond_dims has {len(self.cond_dims)} entries but only {len(self.hidden_dims)} hidden layers"
            )
        if any(c < 0 for c in self.cond_dims):
            raise ValueError(f"cond_dims must be >= 0, got {list(self.cond_dims)}")
        return self

    def cond_width(self, layer: int) -> int:
        return self.cond_dims[layer] if layer < len(self.cond_dims) else 0

    def layout(self) -> Dict[str, Tuple[int, ...]]:
        """Ordered tensor shapes; the flat parameter vector follows this order."""
        shapes: Dict[str, Tuple[int, ...]] = {}
        emb = self.time_embed_dim
        if self.film_enabled:
            for j in range(self.n_time_embeds):
                shapes[f"time_proj.{j}.w"] = (emb, emb)
            shapes["time_proj.b"] = (emb,)
            if self.n_classes > 0:
                shapes["class_embed"] = (self.n_classes + 1, emb)
        prev = self.input_dim
        for layer, width in enumerate(self.hidden_dims):
            shapes[f"hidden.{layer}.w"] = (prev + self.cond_width(layer), width)
            shapes[f"hidden.{layer}.b"] = (width,)
            if self.film_enabled:
                for part in ("scale", "shift"):
                    shapes[f"film.{layer}.{part}.w"] = (emb, width)
                    shapes[f"film.{layer}.{part}.b"] = (width,)
            prev = width
        shapes["out.w"] = (prev, self.output_dim)
        shapes["out.b"] = (self.output_dim,)
        return shapes


@dataclass
class ParamVector:
    """Flat float64 storage plus a name -> (offset, shape) table."""

    values: np.ndarray
    layout: Dict[str, Tuple[int, Tuple[int, ...]]]

    def __post_init__(self) -> None:
        expected = sum(int(np.prod(shape)) for _, shape in self.layout.values())
        if self.values.ndim != 1 or self.values.shape[0] != expected:
            raise ConfigurationError(f"parameter vector has {self.values.size} values, layout needs {expected}")

    @classmethod
    def from_shapes(cls, shapes: Dict[str, Tuple[int, ...]], values: Optional[np.ndarray] = None) -> "ParamVector":
        layout: Dict[str, Tuple[int, Tuple[int, ...]]] = {}
        offset = 0
        for name, shape in shapes.items():
            layout[name] = (offset, tuple(shape))
            offset += int(np.prod(shape))
        if values is None:
            values = np.zeros(offset, dtype=np.float64)
        return cls(values=np.asarray(values, dtype=np.float64), layout=layout)

    @classmethod
    def concat(cls, parts: Dict[str, "ParamVector"]) -> "ParamVector":
        """Joins named vectors; tensor names become '<prefix>/<name>'."""
        shapes: Dict[str, Tuple[int, ...]] = {}
        for prefix, part in parts.items():
            for name, (_, shape) in part.layout.items():
                shapes[f"{prefix}/{name}"] = shape
        values = np.concatenate([p.values for p in parts.values()]) if parts else np.zeros(0)
        return cls.from_shapes(shapes, values)

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def tensor(self, name: str) -> np.ndarray:
        offset, shape = self.layout[name]
        size = int(np.prod(shape))
        return self.values[offset : offset + size].reshape(shape)

    def names(self) -> List[str]:
        return list(self.layout)

    def part(self, prefix: str) -> "ParamVector":
        """View of all tensors under '<prefix>/'; shares memory with self."""
        marker = f"{prefix}/"
        entries = [(n, o, s) for n, (o, s) in self.layout.items() if n.startswith(marker)]
        if not entries:
            raise KeyError(prefix)
        start = entries[0][1]
        layout = {n[len(marker):]: (o - start, s) for n, o, s in entries}
        stop = entries[-1][1] + int(np.prod(entries[-1][2]))
        return ParamVector(values=self.values[start:stop], layout=layout)

    def span(self, prefix: str) -> slice:
        marker = f"{prefix}/"
        offsets = [(o, int(np.prod(s))) for n, (o, s) in self.layout.items() if n.startswith(marker)]
        if not offsets:
            raise KeyError(prefix)
        return slice(offsets[0][0], offsets[-1][0] + offsets[-1][1])

    def copy(self) -> "ParamVector":
        return ParamVector(values=self.values.copy(), layout=dict(self.layout))

    def zeros_like(self) -> "ParamVector":
        return ParamVector(values=np.zeros_like(self.values), layout=dict(self.layout))

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values=np.asarray(values, dtype=np.float64), layout=dict(self.layout))


def init_params(spec: MlpSpec, rng: np.random.Generator) -> ParamVector:
    """He-scaled Gaussian weights, zero biases, zero FiLM projections."""
    params = ParamVector.from_shapes(spec.layout())
    for name in params.names():
        view = params.tensor(name)
        if name.endswith(".b") or name.startswith("film."):
            continue
        if name == "class_embed":
            view[...] = rng.standard_normal(view.shape)
            continue
        fan_in = view.shape[0]
        view[...] = rng.standard_normal(view.shape) * math.sqrt(2.0 / fan_in)
    return params


def fourier_time_embed(t: float, dim: int) -> np.ndarray:
    """[sin(2π f t) ... | cos(2π f t) ...] with f geometric from 1 to 1e4."""
    if dim <= 0 or dim % 2:
        raise ConfigurationError(f"Fourier embedding dimension must be a positive even number, got {dim}")
    freqs = 2.0 * math.pi * np.geomspace(FOURIER_MIN_FREQ, FOURIER_MAX_FREQ, dim // 2)
    angles = float(t) * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)])


def film_apply(h: np.ndarray, scale: np.ndarray, shift: np.ndarray) -> np.ndarray:
    if np.shape(h) != np.shape(scale) or np.shape(h) != np.shape(shift):
        raise ConfigurationError(
            f"FiLM shapes differ: h={np.shape(h)} scale={np.shape(scale)} shift={np.shape(shift)}"
        )
    return np.asarray(h) * (1.0 + np.asarray(scale)) + np.asarray(shift)


def _sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def _activate(kind: str, a: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(a, 0.0)
    return a * _sigmoid(a)


def _activate_grad(kind: str, a: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return (a > 0).astype(np.float64)
    s = _sigmoid(a)
    return s * (1.0 + a * (1.0 - s))


@dataclass
class _LayerRecord:
    inputs: np.ndarray
    pre: np.ndarray
    scale: Optional[np.ndarray]
    modulated: np.ndarray
    mask: Optional[np.ndarray]
    out: np.ndarray


@dataclass
class MlpTape:
    spec: MlpSpec
    params: ParamVector
    x: np.ndarray
    embeds: List[np.ndarray]
    labels: Optional[np.ndarray]
    cond_pre: Optional[np.ndarray]
    cond: Optional[np.ndarray]
    layers: List[_LayerRecord] = field(default_factory=list)
    output_shape: Tuple[int, ...] = ()

    @property
    def hidden(self) -> List[np.ndarray]:
        return [rec.out for rec in self.layers]


@dataclass
class MlpGradients:
    params: ParamVector
    x: np.ndarray
    cond: List[Optional[np.ndarray]]


def _as_batch(array: np.ndarray, batch: int, width: int, what: str) -> np.ndarray:
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim == 1:
        arr = np.broadcast_to(arr, (batch, arr.shape[0]))
    if arr.shape != (batch, width):
        raise ConfigurationError(f"{what} has shape {arr.shape}, expected ({batch}, {width})")
    return arr


def mlp_forward(
    spec: MlpSpec,
    params: ParamVector,
    x: np.ndarray,
    embeds: Sequence[np.ndarray] = (),
    cond: Optional[Sequence[Optional[np.ndarray]]] = None,
    labels: Optional[np.ndarray] = None,
    dropout: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, MlpTape]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ConfigurationError(f"input has shape {x.shape}, expected (batch, {spec.input_dim})")
    if not np.all(np.isfinite(x)):
        raise ConfigurationError("input contains non-finite values")
    if dropout > 0.0 and rng is None:
        raise ConfigurationError("dropout requires an rng")
    batch = x.shape[0]
    cond = list(cond or [])
    emb = spec.time_embed_dim

    cond_pre = cond_vec = None
    embed_batches: List[np.ndarray] = []
    label_ids: Optional[np.ndarray] = None
    if spec.film_enabled:
        if len(embeds) != spec.n_time_embeds:
            raise ConfigurationError(f"expected {spec.n_time_embeds} time embeddings, got {len(embeds)}")
        cond_pre = np.broadcast_to(params.tensor("time_proj.b"), (batch, emb)).copy()
        for j, e in enumerate(embeds):
            eb = _as_batch(e, batch, emb, f"time embedding {j}")
            embed_batches.append(eb)
            cond_pre += eb @ params.tensor(f"time_proj.{j}.w")
        if spec.n_classes > 0:
            if labels is None:
                label_ids = np.full(batch, spec.n_classes, dtype=np.int64)
            else:
                label_ids = np.asarray(labels, dtype=np.int64).reshape(batch)
                if label_ids.size and (label_ids.min() < 0 or label_ids.max() > spec.n_classes):
                    raise ConfigurationError(f"class labels must lie in [0, {spec.n_classes}]")
            cond_pre += params.tensor("class_embed")[label_ids]
        cond_vec = _activate("silu", cond_pre)

    tape = MlpTape(spec=spec, params=params, x=x, embeds=embed_batches, labels=label_ids,
                   cond_pre=cond_pre, cond=cond_vec)
    h = x
    for layer, width in enumerate(spec.hidden_dims):
        cw = spec.cond_width(layer)
        if cw:
            if layer >= len(cond) or cond[layer] is None:
                raise ConfigurationError(f"hidden layer {layer} expects {cw} conditioning features")
            inputs = np.concatenate([h, _as_batch(cond[layer], batch, cw, f"conditioning level {layer}")], axis=1)
        else:
            inputs = h
        pre = inputs @ params.tensor(f"hidden.{layer}.w") + params.tensor(f"hidden.{layer}.b")
        scale = None
        modulated = pre
        if spec.film_enabled:
            scale = cond_vec @ params.tensor(f"film.{layer}.scale.w") + params.tensor(f"film.{layer}.scale.b")
            shift = cond_vec @ params.tensor(f"film.{layer}.shift.w") + params.tensor(f"film.{layer}.shift.b")
            modulated = film_apply(pre, scale, shift)
        out = _activate(spec.activation, modulated)
        mask = None
        if dropout > 0.0:
            mask = (rng.random(out.shape) >= dropout) / (1.0 - dropout)
            out = out * mask
        tape.layers.append(_LayerRecord(inputs=inputs, pre=pre, scale=scale, modulated=modulated, mask=mask, out=out))
        h = out

    y = h @ params.tensor("out.w") + params.tensor("out.b")
    tape.output_shape = y.shape
    return y, tape


def mlp_backward(
    tape: MlpTape,
    upstream: np.ndarray,
    hidden_upstream: Optional[Dict[int, np.ndarray]] = None,
) -> MlpGradients:
    """Reverse pass; hidden_upstream adds gradients arriving at hidden activations."""
    spec, params = tape.spec, tape.params
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != tape.output_shape:
        raise TapeError(f"upstream gradient has shape {upstream.shape}, tape produced {tape.output_shape}")
    if len(tape.layers) != len(spec.hidden_dims):
        raise TapeError("tape does not match its spec")
    hidden_upstream = hidden_upstream or {}
    grads = params.zeros_like()
    n_hidden = len(spec.hidden_dims)

    last = tape.layers[-1].out if n_hidden else tape.x
    grads.tensor("out.w")[...] = last.T @ upstream
    grads.tensor("out.b")[...] = upstream.sum(axis=0)
    dh = upstream @ params.tensor("out.w").T

    d_cond_vec = np.zeros_like(tape.cond) if tape.cond is not None else None
    d_levels: List[Optional[np.ndarray]] = [None] * n_hidden
    for layer in reversed(range(n_hidden)):
        rec = tape.layers[layer]
        if layer in hidden_upstream:
            dh = dh + hidden_upstream[layer]
        if rec.mask is not None:
            dh = dh * rec.mask
        d_mod = dh * _activate_grad(spec.activation, rec.modulated)
        if spec.film_enabled:
            d_pre = d_mod * (1.0 + rec.scale)
            d_scale = d_mod * rec.pre
            grads.tensor(f"film.{layer}.scale.w")[...] = tape.cond.T @ d_scale
            grads.tensor(f"film.{layer}.scale.b")[...] = d_scale.sum(axis=0)
            grads.tensor(f"film.{layer}.shift.w")[...] = tape.cond.T @ d_mod
            grads.tensor(f"film.{layer}.shift.b")[...] = d_mod.sum(axis=0)
            d_cond_vec += d_scale @ params.tensor(f"film.{layer}.scale.w").T
            d_cond_vec += d_mod @ params.tensor(f"film.{layer}.shift.w").T
        else:
            d_pre = d_mod
        grads.tensor(f"hidden.{layer}.w")[...] = rec.inputs.T @ d_pre
        grads.tensor(f"hidden.{layer}.b")[...] = d_pre.sum(axis=0)
        d_inputs = d_pre @ params.tensor(f"hidden.{layer}.w").T
        prev = rec.inputs.shape[1] - spec.cond_width(layer)
        if spec.cond_width(layer):
            d_levels[layer] = d_inputs[:, prev:]
        dh = d_inputs[:, :prev]

    if spec.film_enabled:
        d_cond_pre = d_cond_vec * _activate_grad("silu", tape.cond_pre)
        grads.tensor("time_proj.b")[...] = d_cond_pre.sum(axis=0)
        for j, eb in enumerate(tape.embeds):
            grads.tensor(f"time_proj.{j}.w")[...] = eb.T @ d_cond_pre
        if tape.labels is not None:
            np.add.at(grads.tensor("class_embed"), tape.labels, d_cond_pre)

    return MlpGradients(params=grads, x=dh, cond=d_levels)
