"""Persistencia versionada de modelos y estado de entrenamiento."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import torch
from pydantic import ValidationError

from services.errors import CheckpointError
from services.policy import ModelConfig, VapPolicy

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model_config: ModelConfig
    state_dict: dict[str, torch.Tensor]
    epoch: int = 0
    optimizer_state: Optional[dict] = None
    scheduler_state: Optional[dict] = None
    run_config: dict[str, Any] = field(default_factory=dict)
    best_val_cost: Optional[float] = None

    def build_policy(self, device=None) -> VapPolicy:
        policy = VapPolicy(self.model_config)
        try:
            policy.load_state_dict(self.state_dict)
        except RuntimeError as exc:
            raise CheckpointError(f"checkpoint weights do not match the model config: {exc}") from exc
        return policy.to(device) if device is not None else policy


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": FORMAT_VERSION,
        "model_config": ckpt.model_config.model_dump(),
        "state_dict": {name: tensor.detach().cpu() for name, tensor in ckpt.state_dict.items()},
        "epoch": ckpt.epoch,
        "optimizer_state": ckpt.optimizer_state,
        "scheduler_state": ckpt.scheduler_state,
        "run_config": ckpt.run_config,
        "best_val_cost": ckpt.best_val_cost,
    }
    # Escritura atómica: un archivo a medias nunca reemplaza al anterior
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    logger.debug(f"[CHECKPOINT] Guardado {path} (epoch {ckpt.epoch})")
    return path


def load_checkpoint(path: str | Path, map_location: str | torch.device = "cpu") -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location=map_location, weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError(f"{path} is not a checkpoint file")
    if payload["format_version"] != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format {payload['format_version']} is not supported (expected {FORMAT_VERSION})"
        )
    try:
        model_config = ModelConfig.model_validate(payload["model_config"])
    except ValidationError as exc:
        raise CheckpointError(f"invalid model config in {path}: {exc}") from exc
    return Checkpoint(
        model_config=model_config,
        state_dict=payload["state_dict"],
        epoch=int(payload.get("epoch", 0)),
        optimizer_state=payload.get("optimizer_state"),
        scheduler_state=payload.get("scheduler_state"),
        run_config=payload.get("run_config") or {},
        best_val_cost=payload.get("best_val_cost"),
    )


def load_policy(path: str | Path, device=None) -> VapPolicy:
    policy = load_checkpoint(path).build_policy(device)
    policy.eval()
    return policy
