"""Versioned binary checkpoint container.

Layout: 4-byte magic, little-endian uint32 header length, UTF-8 JSON header
(format version, dimensions, schedule parameters, metadata, per-block and
whole-payload SHA-256 checksums), then raw little-endian float32 parameter
blocks in the order declared by the header. Schedule parameters live in the
header as exact JSON floats so the float64 schedule rebuilds bit-identically.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .denoiser import NoisePredictor
from .diffusion import NoiseSchedule, linear_schedule
from .errors import (
    CheckpointIntegrityError,
    MissingInputError,
    UnsupportedVersionError,
    ValidationError,
)
from .preprocess import TrafficAutoencoder

MAGIC = b"TMDF"
FORMAT_VERSION = 1


@dataclass
class ModelCheckpoint:
    """Trained embedding/recovery and noise-prediction networks plus the
    schedule, input-scaling state (inside the autoencoder buffers), training
    metadata, and optimizer/RNG state for bit-exact resumption."""

    autoencoder: TrafficAutoencoder
    denoiser: NoisePredictor
    schedule: NoiseSchedule
    meta: dict
    optimizer_state: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @property
    def input_dim(self) -> int:
        return self.autoencoder.input_dim

    @property
    def latent_dim(self) -> int:
        return self.autoencoder.latent_dim

    def params_digest(self) -> str:
        """SHA-256 over all network parameter bytes (frozen-model contract)."""
        digest = hashlib.sha256()
        for name, tensor in _param_blocks(self):
            digest.update(name.encode())
            digest.update(_tensor_bytes(tensor))
        return digest.hexdigest()


def _tensor_bytes(tensor: torch.Tensor) -> bytes:
    arr = tensor.detach().cpu().numpy()
    if arr.dtype != np.float32:
        raise ValidationError(
            f"checkpoint blocks must be float32, got {arr.dtype}; train in float32"
        )
    return np.ascontiguousarray(arr).astype("<f4", copy=False).tobytes()


def _param_blocks(ckpt: ModelCheckpoint) -> list[tuple[str, torch.Tensor]]:
    blocks = []
    for key, tensor in ckpt.autoencoder.state_dict().items():
        blocks.append((f"autoencoder/{key}", tensor))
    for key, tensor in ckpt.denoiser.state_dict().items():
        blocks.append((f"denoiser/{key}", tensor))
    return blocks


def _optimizer_blocks(ckpt: ModelCheckpoint) -> tuple[list[tuple[str, torch.Tensor]], dict]:
    blocks: list[tuple[str, torch.Tensor]] = []
    scalars: dict = {}
    for opt_name, opt in sorted(ckpt.optimizer_state.items()):
        scalars[opt_name] = {"steps": {}, "param_groups": opt["param_groups"]}
        for idx in sorted(opt["state"]):
            entry = opt["state"][idx]
            scalars[opt_name]["steps"][str(idx)] = float(entry["step"])
            blocks.append((f"optimizer/{opt_name}/{idx}/exp_avg", entry["exp_avg"]))
            blocks.append((f"optimizer/{opt_name}/{idx}/exp_avg_sq", entry["exp_avg_sq"]))
    return blocks, scalars


def save_checkpoint(ckpt: ModelCheckpoint, path: str | Path) -> None:
    """Serialize a checkpoint; load_checkpoint(save_checkpoint(c)) is bit-exact."""
    opt_blocks, opt_scalars = _optimizer_blocks(ckpt)
    named = _param_blocks(ckpt) + opt_blocks
    payload = bytearray()
    block_meta = []
    for name, tensor in named:
        raw = _tensor_bytes(tensor)
        block_meta.append(
            {
                "name": name,
                "shape": list(tensor.shape),
                "offset": len(payload),
                "nbytes": len(raw),
                "sha256": hashlib.sha256(raw).hexdigest(),
            }
        )
        payload.extend(raw)
    header = {
        "format_version": ckpt.format_version,
        "dims": {
            "input_dim": ckpt.autoencoder.input_dim,
            "latent_dim": ckpt.autoencoder.latent_dim,
            "hidden_dim": ckpt.autoencoder.hidden_dim,
            "step_dim": ckpt.denoiser.step_dim,
        },
        "schedule": {
            "steps": ckpt.schedule.num_steps,
            "beta_start": float(ckpt.schedule.betas[0]),
            "beta_end": float(ckpt.schedule.betas[-1]),
        },
        "optimizers": opt_scalars,
        "meta": ckpt.meta,
        "blocks": block_meta,
        "payload_sha256": hashlib.sha256(bytes(payload)).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header_bytes).to_bytes(4, "little"))
        fh.write(header_bytes)
        fh.write(bytes(payload))


def load_checkpoint(path: str | Path) -> ModelCheckpoint:
    """Read and verify a checkpoint container.

    Raises CheckpointIntegrityError on corruption or truncation and
    UnsupportedVersionError on an unknown format version.
    """
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise CheckpointIntegrityError(f"{path}: not a checkpoint container")
    header_len = int.from_bytes(raw[4:8], "little")
    if len(raw) < 8 + header_len:
        raise CheckpointIntegrityError(f"{path}: truncated header")
    try:
        header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointIntegrityError(f"{path}: corrupt header ({exc})") from None
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"{path}: format version {version!r} not supported (expected {FORMAT_VERSION})"
        )
    payload = raw[8 + header_len :]
    expected_len = max(
        (b["offset"] + b["nbytes"] for b in header["blocks"]), default=0
    )
    if len(payload) < expected_len:
        raise CheckpointIntegrityError(f"{path}: truncated payload")
    if hashlib.sha256(payload[:expected_len]).hexdigest() != header["payload_sha256"]:
        raise CheckpointIntegrityError(f"{path}: payload checksum mismatch")

    arrays: dict[str, torch.Tensor] = {}
    for block in header["blocks"]:
        chunk = payload[block["offset"] : block["offset"] + block["nbytes"]]
        if hashlib.sha256(chunk).hexdigest() != block["sha256"]:
            raise CheckpointIntegrityError(f"{path}: checksum mismatch in {block['name']}")
        arr = np.frombuffer(chunk, dtype="<f4").reshape(block["shape"]).copy()
        arrays[block["name"]] = torch.from_numpy(arr)

    dims = header["dims"]
    autoencoder = TrafficAutoencoder(
        dims["input_dim"], dims["latent_dim"], dims["hidden_dim"]
    )
    denoiser = NoisePredictor(dims["latent_dim"], dims["step_dim"])
    autoencoder.load_state_dict(
        {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("autoencoder/")}
    )
    denoiser.load_state_dict(
        {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("denoiser/")}
    )
    sched_info = header["schedule"]
    schedule = linear_schedule(
        sched_info["steps"], sched_info["beta_start"], sched_info["beta_end"]
    )
    optimizer_state: dict = {}
    for opt_name, scalars in header.get("optimizers", {}).items():
        state = {}
        for idx_str, step in scalars["steps"].items():
            idx = int(idx_str)
            state[idx] = {
                "step": step,
                "exp_avg": arrays[f"optimizer/{opt_name}/{idx}/exp_avg"],
                "exp_avg_sq": arrays[f"optimizer/{opt_name}/{idx}/exp_avg_sq"],
            }
        optimizer_state[opt_name] = {
            "state": state,
            "param_groups": scalars["param_groups"],
        }
    return ModelCheckpoint(
        autoencoder=autoencoder,
        denoiser=denoiser,
        schedule=schedule,
        meta=header["meta"],
        optimizer_state=optimizer_state,
        format_version=version,
    )


def encode_rng_state(generator: torch.Generator) -> str:
    return base64.b64encode(generator.get_state().numpy().tobytes()).decode("ascii")


def decode_rng_state(encoded: str) -> torch.Tensor:
    return torch.from_numpy(
        np.frombuffer(base64.b64decode(encoded), dtype=np.uint8).copy()
    )
