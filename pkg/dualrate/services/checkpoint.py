"""
Versioned binary checkpoint container.

Layout (all integers little-endian):

    magic      4 bytes   b"DRCK"
    version    u16
    n_sections u32
    section*   u16 name length | utf-8 name | u64 payload length | payload
    checksum   32 bytes  sha256 of every preceding byte

The "meta" section is UTF-8 JSON; every other section is a raw '<f8' array
whose shape is recorded in meta["arrays"].
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

from diffusion.schedule import LogSnrSchedule
from errors import CheckpointError
from models.dual_rate import DualRateModel
from nnkit.mlp import MlpSpec, ParamVector
from nnkit.optim import EmaState, OptimState

logger = logging.getLogger(__name__)

MAGIC = b"DRCK"
FORMAT_VERSION = 1
_DIGEST_BYTES = 32
_OPT_SCALARS = ("step", "lr", "beta1", "beta2", "epsilon", "warmup_steps", "clip_norm")


@dataclass
class Checkpoint:
    meta: Dict[str, Any] = field(default_factory=dict)
    arrays: Dict[str, np.ndarray] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION


def _encode(ckpt: Checkpoint) -> bytes:
    meta = dict(ckpt.meta)
    meta["arrays"] = {name: list(arr.shape) for name, arr in ckpt.arrays.items()}
    sections = [("meta", json.dumps(meta, sort_keys=True).encode("utf-8"))]
    for name, arr in ckpt.arrays.items():
        sections.append((name, np.ascontiguousarray(arr, dtype="<f8").tobytes()))
    out = bytearray(MAGIC)
    out += struct.pack("<HI", ckpt.format_version, len(sections))
    for name, payload in sections:
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw + struct.pack("<Q", len(payload)) + payload
    out += hashlib.sha256(bytes(out)).digest()
    return bytes(out)


def _decode(blob: bytes) -> Checkpoint:
    if len(blob) < len(MAGIC) + 6 + _DIGEST_BYTES:
        raise CheckpointError("checkpoint checksum mismatch: file is truncated")
    body, digest = blob[:-_DIGEST_BYTES], blob[-_DIGEST_BYTES:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch: file is corrupt or truncated")
    if body[:4] != MAGIC:
        raise CheckpointError(f"not a checkpoint (magic {body[:4]!r})")
    version, n_sections = struct.unpack_from("<HI", body, 4)
    if version > FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format {version} is newer than supported {FORMAT_VERSION}")
    offset = 10
    sections: Dict[str, bytes] = {}
    try:
        for _ in range(n_sections):
            (name_len,) = struct.unpack_from("<H", body, offset)
            offset += 2
            name = body[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (size,) = struct.unpack_from("<Q", body, offset)
            offset += 8
            if offset + size > len(body):
                raise CheckpointError(f"section {name!r} overruns the file")
            sections[name] = body[offset : offset + size]
            offset += size
    except struct.error as exc:
        raise CheckpointError(f"malformed section table: {exc}") from exc
    if "meta" not in sections:
        raise CheckpointError("checkpoint has no meta section")
    meta = json.loads(sections.pop("meta").decode("utf-8"))
    shapes = meta.pop("arrays", {})
    arrays = {}
    for name, payload in sections.items():
        arr = np.frombuffer(payload, dtype="<f8").astype(np.float64)
        arrays[name] = arr.reshape(shapes.get(name, arr.shape))
    return Checkpoint(meta=meta, arrays=arrays, format_version=version)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(_encode(ckpt))
    os.replace(tmp, path)
    logger.info(f"[CKPT] wrote {path} ({len(ckpt.arrays)} arrays)")
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return _decode(blob)


# --------------------------- record packing ---------------------------

def model_meta(model: DualRateModel) -> Dict[str, Any]:
    return {
        "denoiser_spec": model.denoiser_spec.model_dump(mode="json"),
        "encoder_spec": model.encoder_spec.model_dump(mode="json") if model.encoder_spec else None,
        "multi_level": model.multi_level,
        "param_mode": model.param_mode,
        "n_classes": model.n_classes,
        "embed_drop_p": model.embed_drop_p,
        "dropout": model.dropout,
    }


def model_from_meta(meta: Dict[str, Any], values: np.ndarray) -> DualRateModel:
    denoiser_spec = MlpSpec(**meta["denoiser_spec"])
    encoder_spec = MlpSpec(**meta["encoder_spec"]) if meta.get("encoder_spec") else None
    parts = {}
    if encoder_spec is not None:
        parts["encoder"] = ParamVector.from_shapes(encoder_spec.layout())
    parts["denoiser"] = ParamVector.from_shapes(denoiser_spec.layout())
    params = ParamVector.concat(parts).with_values(values)
    return DualRateModel(
        denoiser_spec=denoiser_spec,
        params=params,
        encoder_spec=encoder_spec,
        multi_level=meta["multi_level"],
        param_mode=meta["param_mode"],
        n_classes=meta["n_classes"],
        embed_drop_p=meta["embed_drop_p"],
        dropout=meta["dropout"],
    )


def pack_model(ckpt: Checkpoint, prefix: str, model: DualRateModel) -> None:
    ckpt.meta[f"{prefix}.model"] = model_meta(model)
    ckpt.arrays[f"{prefix}/params"] = model.params.values


def unpack_model(ckpt: Checkpoint, prefix: str) -> DualRateModel:
    try:
        return model_from_meta(ckpt.meta[f"{prefix}.model"], ckpt.arrays[f"{prefix}/params"])
    except KeyError as exc:
        raise CheckpointError(f"checkpoint has no model under {prefix!r}") from exc


def pack_optimizer(ckpt: Checkpoint, prefix: str, opt: OptimState) -> None:
    ckpt.meta[f"{prefix}.opt"] = {name: getattr(opt, name) for name in _OPT_SCALARS}
    ckpt.arrays[f"{prefix}/opt.m"] = opt.m
    ckpt.arrays[f"{prefix}/opt.v"] = opt.v


def unpack_optimizer(ckpt: Checkpoint, prefix: str) -> OptimState:
    scalars = ckpt.meta[f"{prefix}.opt"]
    return OptimState(m=ckpt.arrays[f"{prefix}/opt.m"], v=ckpt.arrays[f"{prefix}/opt.v"], **scalars)


def pack_ema(ckpt: Checkpoint, prefix: str, ema: EmaState) -> None:
    ckpt.meta[f"{prefix}.ema_decay"] = ema.decay
    ckpt.arrays[f"{prefix}/ema"] = ema.shadow


def unpack_ema(ckpt: Checkpoint, prefix: str) -> EmaState:
    return EmaState(shadow=ckpt.arrays[f"{prefix}/ema"], decay=ckpt.meta[f"{prefix}.ema_decay"])


def pack_run(ckpt: Checkpoint, sched: LogSnrSchedule, rng: Optional[np.random.Generator], step: int) -> None:
    ckpt.meta["schedule"] = sched.model_dump(mode="json")
    ckpt.meta["step"] = step
    ckpt.meta["rng"] = rng.bit_generator.state if rng is not None else None


def unpack_run(ckpt: Checkpoint) -> Tuple[LogSnrSchedule, Optional[Dict[str, Any]], int]:
    return LogSnrSchedule(**ckpt.meta["schedule"]), ckpt.meta.get("rng"), int(ckpt.meta.get("step", 0))


def restore_rng(state: Dict[str, Any]) -> np.random.Generator:
    bit_gen = getattr(np.random, state["bit_generator"])()
    bit_gen.state = state
    return np.random.Generator(bit_gen)
