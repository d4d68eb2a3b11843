"""
Entrenamiento REINFORCE con línea base compartida entre muestras,
regularización de entropía y bloqueo selectivo de gradiente por covarianza.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from services.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from services.errors import ConfigError, NumericFault, TrainingDivergence
from services.instance import GeneratorConfig, Instance, VariantFlags, generate_instance
from services.policy import ModelConfig, VapPolicy, build_features, rollout_batch

logger = logging.getLogger(__name__)

VALIDATION_STREAM = 2**31 - 1


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(50, ge=1)
    batches_per_epoch: int = Field(40, ge=1)
    batch_size: int = Field(32, ge=1)
    samples: int = Field(8, ge=2)
    lr_start: float = Field(3e-4, gt=0.0)
    lr_end: float = Field(2e-4, ge=0.0)
    warmup: int = Field(20, ge=0)
    weight_decay: float = Field(0.01, ge=0.0)
    sigma0: float = Field(0.03, ge=0.0)
    decay_start: float = Field(0.4, ge=0.0, le=1.0)
    cov_clamp: Optional[tuple[float, float]] = (0.1, 5.0)
    p_detach: float = Field(0.15, ge=0.0, le=1.0)
    eta: Optional[float] = None
    eta_quantile: float = Field(0.8, ge=0.0, le=1.0)
    entropy_regularization: bool = True
    covariance_control: bool = True
    grad_clip: Optional[float] = Field(1.0, gt=0.0)
    patience: Optional[int] = Field(20, ge=1)
    val_size: int = Field(64, ge=1)
    variants: list[str] = Field(default_factory=list)
    seed: int = Field(0, ge=0)
    device: str = "cpu"

    @field_validator("variants")
    @classmethod
    def _known_variants(cls, value: list[str]) -> list[str]:
        for name in value:
            VariantFlags.from_name(name)
        return value

    @model_validator(mode="after")
    def _check_ranges(self) -> "TrainConfig":
        if self.lr_end > self.lr_start:
            raise ValueError("lr_end must not exceed lr_start")
        if self.cov_clamp is not None and self.cov_clamp[0] > self.cov_clamp[1]:
            raise ValueError("cov_clamp lower bound exceeds upper bound")
        return self

    @property
    def total_steps(self) -> int:
        return self.epochs * self.batches_per_epoch


class RunConfig(BaseModel):
    """Configuración completa de una corrida: generador + modelo + entrenamiento."""

    model_config = ConfigDict(extra="forbid")

    generator: GeneratorConfig = Field(default_factory=GeneratorConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)

    @model_validator(mode="after")
    def _matching_types(self) -> "RunConfig":
        if self.model.n_vehicle_types != self.generator.n_vehicle_types:
            raise ValueError(
                f"model.n_vehicle_types={self.model.n_vehicle_types} differs from "
                f"generator.n_vehicle_types={self.generator.n_vehicle_types}"
            )
        return self


def config_error(exc: ValidationError, what: str = "config") -> ConfigError:
    """Traducir un ValidationError a ConfigError nombrando las claves culpables."""
    details = []
    for error in exc.errors():
        key = ".".join(str(part) for part in error["loc"]) or "<root>"
        details.append(f"{key} ({error['msg']})")
    return ConfigError(f"invalid {what} key: " + "; ".join(details))


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise config_error(exc) from exc


# ============ Piezas del objetivo ============


def shared_baseline(rewards) -> tuple[np.ndarray, np.ndarray]:
    """
    Línea base = media de las S recompensas de cada instancia.

    Acepta (S,) o (B, S); devuelve (baseline, ventajas) con la misma forma de entrada.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    baseline = rewards.mean(axis=-1)
    advantages = rewards - np.expand_dims(baseline, -1)
    return baseline, advantages


def covariance_mask(
    log_probs: torch.Tensor,
    advantages: torch.Tensor,
    p_detach: float,
    rng: np.random.Generator,
    eta: Optional[float] = None,
    eta_quantile: float = 0.8,
    clamp: Optional[tuple[float, float]] = (0.1, 5.0),
) -> torch.Tensor:
    """
    Tokens cuyo gradiente se bloquea.

    Puntaje por token: producto centrado de log π(a) y π(a)·A sobre toda la población
    de tokens del lote. Se acota a `clamp`, se compara con η (absoluto o cuantil) y
    cada token por encima del umbral se bloquea con probabilidad `p_detach`.
    """
    n = log_probs.numel()
    if n == 0:
        return torch.zeros(0, dtype=torch.bool, device=log_probs.device)
    lp = log_probs.detach().double().cpu().numpy().reshape(-1)
    adv = advantages.detach().double().cpu().numpy().reshape(-1)
    weighted = np.exp(lp) * adv
    raw = (lp - lp.mean()) * (weighted - weighted.mean())

    scores = raw if clamp is None else np.clip(raw, clamp[0], clamp[1])
    threshold = float(np.quantile(scores, eta_quantile)) if eta is None else eta
    above = scores >= threshold
    if clamp is not None:
        # Lo que quedó en el piso del recorte no cuenta como covarianza alta
        above &= raw > clamp[0]
    alpha = rng.random(n)
    mask = above & (alpha < p_detach)
    return torch.as_tensor(mask, device=log_probs.device).reshape(log_probs.shape)


def policy_gradient_loss(
    log_probs: torch.Tensor,
    entropy: torch.Tensor,
    valid: torch.Tensor,
    advantages: torch.Tensor,
    sigma: float,
    detach_mask: Optional[torch.Tensor] = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """
    Pérdida a minimizar: -(media_filas(A · Σ_t log π̃) + σ·H).

    log_probs, entropy, valid y detach_mask son (R, T); advantages es (R,).
    H es la media de la entropía por paso sobre los pasos válidos.
    """
    if detach_mask is not None:
        log_probs = torch.where(detach_mask, log_probs.detach(), log_probs)
    log_probs = torch.where(valid, log_probs, torch.zeros_like(log_probs))
    policy_term = (advantages * log_probs.sum(dim=1)).mean()

    n_valid = valid.sum()
    mean_entropy = torch.where(valid, entropy, torch.zeros_like(entropy)).sum() / n_valid.clamp(min=1)
    loss = -(policy_term + sigma * mean_entropy)
    if not torch.isfinite(loss):
        raise NumericFault(
            f"non-finite loss (policy term {policy_term.item()}, entropy {mean_entropy.item()})"
        )
    return loss, mean_entropy


def lr_schedule(step: int, cfg: TrainConfig, total_steps: Optional[int] = None) -> float:
    """Calentamiento lineal desde 0 y luego coseno de lr_start a lr_end."""
    total = cfg.total_steps if total_steps is None else total_steps
    if cfg.warmup > 0 and step < cfg.warmup:
        return cfg.lr_start * step / cfg.warmup
    horizon = max(1, total - cfg.warmup)
    progress = min(1.0, max(0.0, (step - cfg.warmup) / horizon))
    return cfg.lr_end + (cfg.lr_start - cfg.lr_end) * 0.5 * (1.0 + math.cos(math.pi * progress))


def entropy_coefficient(epoch: int, cfg: TrainConfig) -> float:
    """σ por época (1-based): constante hasta decay_start·epochs, luego lineal a 0."""
    if not cfg.entropy_regularization:
        return 0.0
    boundary = math.floor(cfg.decay_start * cfg.epochs + 1e-9)
    if epoch <= boundary:
        return cfg.sigma0
    remaining = cfg.epochs - boundary
    return cfg.sigma0 * max(0.0, (cfg.epochs - epoch) / remaining)


def make_optimizer(policy: VapPolicy, cfg: TrainConfig):
    optimizer = torch.optim.AdamW(policy.parameters(), lr=cfg.lr_start, weight_decay=cfg.weight_decay)
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lr_lambda=lambda step: lr_schedule(step, cfg) / cfg.lr_start
    )
    return optimizer, scheduler


# ============ Datos ============


def _derived_seed(*entropy: int) -> int:
    return int(np.random.SeedSequence(list(entropy)).generate_state(1, dtype=np.uint64)[0])


def _variant_cycle(run: RunConfig) -> list[VariantFlags]:
    if run.train.variants:
        return [VariantFlags.from_name(name) for name in run.train.variants]
    return [run.generator.variant]


def make_batch(run: RunConfig, epoch: int, batch: int) -> list[Instance]:
    """Lote online: la instancia i del lote b usa variants[(b·B + i) mod len]."""
    variants = _variant_cycle(run)
    size = run.train.batch_size
    instances = []
    for i in range(size):
        cfg = run.generator.model_copy(
            update={
                "seed": _derived_seed(run.train.seed, epoch, batch, i),
                "variant": variants[(batch * size + i) % len(variants)],
            }
        )
        instances.append(generate_instance(cfg))
    return instances


def make_validation_set(run: RunConfig) -> list[Instance]:
    variants = _variant_cycle(run)
    return [
        generate_instance(
            run.generator.model_copy(
                update={
                    "seed": _derived_seed(run.train.seed, VALIDATION_STREAM, i),
                    "variant": variants[i % len(variants)],
                }
            )
        )
        for i in range(run.train.val_size)
    ]


def evaluate_greedy(policy: VapPolicy, instances: Sequence[Instance], chunk: int = 64) -> float:
    """Costo medio de la decodificación greedy (las penalizaciones cuentan como costo)."""
    policy.eval()
    costs = []
    for start in range(0, len(instances), chunk):
        result = rollout_batch(policy, instances[start : start + chunk], mode="greedy")
        costs.extend(traj.cost for traj in result.trajectories)
    return float(np.mean(costs))


# ============ Bucle ============


@dataclass
class BatchStats:
    loss: float
    mean_reward: float
    mean_advantage: float
    mean_entropy: float
    detach_fraction: float
    infeasible_fraction: float
    grad_norm: float


@dataclass
class TrainResult:
    epochs_run: int
    initial_val_cost: float
    best_val_cost: float
    last_checkpoint: Path
    best_checkpoint: Path
    metrics_path: Path
    history: list[dict] = field(default_factory=list)


def train_step(
    policy: VapPolicy,
    optimizer: torch.optim.Optimizer,
    instances: Sequence[Instance],
    cfg: TrainConfig,
    sigma: float,
    seed: int,
) -> BatchStats:
    """Un paso de gradiente sobre un lote de instancias."""
    policy.train()
    result = rollout_batch(policy, instances, mode="sample", samples=cfg.samples, seed=seed)
    rewards = np.array([traj.total_reward for traj in result.trajectories]).reshape(len(instances), cfg.samples)
    _, advantages = shared_baseline(rewards)

    features = build_features(instances, dtype=policy.dtype, device=policy.device)
    log_probs, entropy = policy(features, result.record)
    row_advantages = torch.as_tensor(advantages.reshape(-1), dtype=policy.dtype, device=policy.device)

    valid = result.record.valid
    detach_mask = None
    detach_fraction = 0.0
    if cfg.covariance_control and cfg.p_detach > 0:
        token_advantages = row_advantages[:, None].expand_as(log_probs)
        rng = np.random.default_rng(seed)
        flat = covariance_mask(
            log_probs[valid],
            token_advantages[valid],
            cfg.p_detach,
            rng,
            eta=cfg.eta,
            eta_quantile=cfg.eta_quantile,
            clamp=cfg.cov_clamp,
        )
        detach_mask = torch.zeros_like(valid)
        detach_mask[valid] = flat
        detach_fraction = float(flat.float().mean()) if flat.numel() else 0.0

    loss, mean_entropy = policy_gradient_loss(log_probs, entropy, valid, row_advantages, sigma, detach_mask)
    optimizer.zero_grad()
    loss.backward()
    max_norm = cfg.grad_clip if cfg.grad_clip is not None else float("inf")
    grad_norm = float(torch.nn.utils.clip_grad_norm_(policy.parameters(), max_norm))
    if not math.isfinite(grad_norm):
        raise NumericFault(f"non-finite gradient norm {grad_norm}")
    optimizer.step()

    return BatchStats(
        loss=float(loss.item()),
        mean_reward=float(rewards.mean()),
        mean_advantage=float(advantages.mean()),
        mean_entropy=float(mean_entropy.item()),
        detach_fraction=detach_fraction,
        infeasible_fraction=float(np.mean([traj.infeasible for traj in result.trajectories])),
        grad_norm=grad_norm,
    )


def train(run: RunConfig, out_dir: str | Path, resume: Optional[str | Path] = None) -> TrainResult:
    """
    Entrenar y escribir checkpoint_last.pt, checkpoint_best.pt y metrics.jsonl en out_dir.

    Con `resume` continúan el contador de épocas, el optimizador y el scheduler.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = run.train
    torch.manual_seed(cfg.seed)

    ckpt = load_checkpoint(resume) if resume is not None else None
    model_cfg = ckpt.model_config if ckpt else run.model
    policy = VapPolicy(model_cfg).to(cfg.device)
    optimizer, scheduler = make_optimizer(policy, cfg)
    start_epoch = 1
    best_val = math.inf
    if ckpt is not None:
        policy.load_state_dict(ckpt.state_dict)
        if ckpt.optimizer_state is not None:
            optimizer.load_state_dict(ckpt.optimizer_state)
        if ckpt.scheduler_state is not None:
            scheduler.load_state_dict(ckpt.scheduler_state)
        start_epoch = ckpt.epoch + 1
        best_val = ckpt.best_val_cost if ckpt.best_val_cost is not None else math.inf
        logger.info(f"[TRAIN] Reanudando desde {resume} en la época {start_epoch}")

    validation = make_validation_set(run)
    initial_val = evaluate_greedy(policy, validation)
    logger.info(
        f"[TRAIN] {policy_size(policy)} parámetros, validación inicial {initial_val:.4f} "
        f"({len(validation)} instancias)"
    )

    last_path = out_dir / "checkpoint_last.pt"
    best_path = out_dir / "checkpoint_best.pt"
    metrics_path = out_dir / "metrics.jsonl"
    history: list[dict] = []
    stale = 0
    epoch = start_epoch - 1

    def snapshot(at_epoch: int) -> Checkpoint:
        return Checkpoint(
            model_config=model_cfg,
            state_dict=policy.state_dict(),
            epoch=at_epoch,
            optimizer_state=optimizer.state_dict(),
            scheduler_state=scheduler.state_dict(),
            run_config=run.model_dump(mode="json"),
            best_val_cost=None if math.isinf(best_val) else best_val,
        )

    with open(metrics_path, "a" if ckpt is not None else "w", encoding="utf-8") as metrics_file:
        for epoch in range(start_epoch, cfg.epochs + 1):
            started = time.perf_counter()
            sigma = entropy_coefficient(epoch, cfg)
            stats: list[BatchStats] = []
            try:
                for batch in range(cfg.batches_per_epoch):
                    instances = make_batch(run, epoch, batch)
                    stats.append(
                        train_step(policy, optimizer, instances, cfg, sigma, _derived_seed(cfg.seed, epoch, batch))
                    )
                    scheduler.step()
                val_cost = evaluate_greedy(policy, validation)
            except NumericFault as exc:
                abort_path = save_checkpoint(out_dir / "checkpoint_abort.pt", snapshot(epoch - 1))
                logger.error(f"[TRAIN] Divergencia en la época {epoch}: {exc}")
                raise TrainingDivergence(f"training diverged at epoch {epoch}: {exc} (saved {abort_path})") from exc

            improved = val_cost < best_val
            if improved:
                best_val = val_cost
                stale = 0
            else:
                stale += 1

            row = {
                "epoch": epoch,
                "loss": float(np.mean([s.loss for s in stats])),
                "mean_reward": float(np.mean([s.mean_reward for s in stats])),
                "entropy": float(np.mean([s.mean_entropy for s in stats])),
                "detach_fraction": float(np.mean([s.detach_fraction for s in stats])),
                "infeasible_fraction": float(np.mean([s.infeasible_fraction for s in stats])),
                "grad_norm": float(np.mean([s.grad_norm for s in stats])),
                "val_cost": val_cost,
                "best_val_cost": best_val,
                "lr": float(scheduler.get_last_lr()[0]),
                "sigma": sigma,
            }
            history.append(row)
            metrics_file.write(json.dumps(row) + "\n")
            metrics_file.flush()

            save_checkpoint(last_path, snapshot(epoch))
            if improved:
                save_checkpoint(best_path, snapshot(epoch))
            logger.info(
                f"[TRAIN] Época {epoch}/{cfg.epochs}: loss={row['loss']:.4f} val={val_cost:.4f} "
                f"best={best_val:.4f} σ={sigma:.4f} lr={row['lr']:.2e} ({time.perf_counter() - started:.1f}s)"
            )

            if cfg.patience is not None and stale >= cfg.patience:
                logger.info(f"[TRAIN] Parada temprana: {stale} épocas sin mejora")
                break

    if not best_path.exists():
        # Reanudación sin mejoras: el mejor sigue siendo el último guardado
        save_checkpoint(best_path, snapshot(epoch))

    return TrainResult(
        epochs_run=epoch,
        initial_val_cost=initial_val,
        best_val_cost=best_val,
        last_checkpoint=last_path,
        best_checkpoint=best_path,
        metrics_path=metrics_path,
        history=history,
    )


def policy_size(policy: VapPolicy) -> int:
    return sum(p.numel() for p in policy.parameters())
