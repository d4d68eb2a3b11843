"""
Red de política: embebido de instancia y prompt de restricciones, codificador
semántico cruzado y decodificador de punteros multivista.

Convenciones de forma:
    B  instancias, R = B·S filas de decodificación, T pasos,
    A = 1 + V + N acciones, d = d_h.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, model_validator

from services import env
from services.errors import ConfigError, ContractViolation, NumericFault
from services.instance import Instance

CUSTOMER_FEATURES = 7
DEPOT_FEATURES = 2
VEHICLE_FEATURES = 4
VARIANT_FEATURES = 4
VIEWS = ("g", "n", "v", "vd")


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    d_h: int = Field(128, ge=1)
    n_layers: int = Field(6, ge=1)
    n_head: int = Field(8, ge=1)
    ff_hidden: int = Field(512, ge=1)
    logit_clip: Optional[float] = Field(10.0, gt=0.0)
    n_vehicle_types: int = Field(3, ge=1)
    use_prompt: bool = True
    cross_semantic: bool = True
    multi_view: bool = True
    # Divide el puntaje del puntero por sqrt(d_h) antes del recorte
    score_scaling: bool = False

    @model_validator(mode="after")
    def _check_heads(self) -> "ModelConfig":
        if self.d_h % self.n_head != 0:
            raise ValueError(f"d_h={self.d_h} is not divisible by n_head={self.n_head}")
        return self

    @property
    def status_dim(self) -> int:
        return 3 + self.n_vehicle_types


def parameter_count(cfg: ModelConfig) -> int:
    """Número de parámetros entrenables en forma cerrada."""
    d, f, layers, types = cfg.d_h, cfg.ff_hidden, cfg.n_layers, cfg.n_vehicle_types
    # Proyecciones de entrada: depósito, clientes, vehículos, vehículo+depósito
    total = (DEPOT_FEATURES + CUSTOMER_FEATURES + VEHICLE_FEATURES + DEPOT_FEATURES + VEHICLE_FEATURES) * d
    if cfg.use_prompt:
        total += (VARIANT_FEATURES * d + d) + 2 * d + (d * d + d)
    attention_block = (4 * d * d + d) + 3 * d * f + 4 * d
    if cfg.cross_semantic:
        dual_block = (4 * d * d + d) + 3 * d * f + 2 * d
        total += layers * (3 * attention_block + dual_block)
    else:
        total += layers * attention_block
    views = len(VIEWS) if cfg.multi_view else 1
    total += views * 2 * d * d + d * (d + cfg.status_dim) + d * d
    return total


# ============ Características ============


@dataclass
class InstanceFeatures:
    depot: torch.Tensor  # (B, 1, 2)
    customers: torch.Tensor  # (B, N, 7)
    vehicles: torch.Tensor  # (B, V, 4)
    variant: torch.Tensor  # (B, 4)

    @property
    def batch_size(self) -> int:
        return self.depot.size(0)

    def to(self, device=None, dtype=None) -> "InstanceFeatures":
        return InstanceFeatures(
            depot=self.depot.to(device=device, dtype=dtype),
            customers=self.customers.to(device=device, dtype=dtype),
            vehicles=self.vehicles.to(device=device, dtype=dtype),
            variant=self.variant.to(device=device, dtype=dtype),
        )


def instance_arrays(inst: Instance) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    q_max = float(inst.capacities.max())
    depot = inst.coords[:1].copy()

    customers = np.zeros((inst.n_customers, CUSTOMER_FEATURES))
    customers[:, 0:2] = inst.coords[1:]
    customers[:, 2] = inst.linehaul[1:] / q_max
    customers[:, 3] = inst.backhaul[1:] / q_max
    if inst.variant.time_window and inst.depot_close:
        horizon = inst.depot_close
        customers[:, 4] = inst.ready[1:] / horizon
        customers[:, 5] = np.minimum(inst.due[1:], horizon) / horizon
        customers[:, 6] = inst.service[1:] / horizon

    vehicles = np.stack(
        [
            inst.capacities / q_max,
            inst.fixed_costs,
            inst.unit_costs,
            inst.counts / max(inst.fleet_size, 1),
        ],
        axis=1,
    )
    variant = np.asarray(inst.variant.as_vector())
    return depot, customers, vehicles, variant


def build_features(
    instances: Sequence[Instance], dtype: torch.dtype = torch.float32, device=None
) -> InstanceFeatures:
    shapes = {(inst.n_customers, inst.n_types) for inst in instances}
    if len(shapes) != 1:
        raise ConfigError(f"a batch needs instances of one shape (N, V), got {sorted(shapes)}")
    arrays = [instance_arrays(inst) for inst in instances]
    stacked = [torch.as_tensor(np.stack(part), dtype=dtype, device=device) for part in zip(*arrays)]
    return InstanceFeatures(*stacked)


def status_features(state: env.EnvState, inst: Instance) -> np.ndarray:
    """[capacidad libre, distancia de ruta, reloj, disponibilidad por tipo] normalizados."""
    status = np.zeros(3 + inst.n_types)
    if state.active_type is not None:
        status[0] = state.remaining_capacity / state.capacity
    limit = inst.dist_limit if inst.variant.distance_limit and inst.dist_limit else 1.0
    status[1] = state.route_distance / limit
    horizon = inst.depot_close if inst.variant.time_window and inst.depot_close else 1.0
    status[2] = state.clock / horizon
    status[3:] = state.remaining_count / np.maximum(inst.counts, 1)
    return status


# ============ Bloques ============


def reshape_by_heads(qkv: torch.Tensor, head_num: int) -> torch.Tensor:
    # (batch, n, head_num*key_dim) -> (batch, head_num, n, key_dim)
    batch_s, n = qkv.size(0), qkv.size(1)
    return qkv.reshape(batch_s, n, head_num, -1).transpose(1, 2)


def multi_head_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    # q: (batch, head_num, n, key_dim); k, v: (batch, head_num, m, key_dim)
    batch_s, head_num, n, key_dim = q.shape
    score = torch.matmul(q, k.transpose(2, 3)) / math.sqrt(key_dim)
    weights = torch.softmax(score, dim=3)
    out = torch.matmul(weights, v)
    # shape: (batch, n, head_num*key_dim)
    return out.transpose(1, 2).reshape(batch_s, n, head_num * key_dim)


class MultiHeadAttention(nn.Module):
    def __init__(self, d_h: int, n_head: int):
        super().__init__()
        self.n_head = n_head
        self.Wq = nn.Linear(d_h, d_h, bias=False)
        self.Wk = nn.Linear(d_h, d_h, bias=False)
        self.Wv = nn.Linear(d_h, d_h, bias=False)
        self.multi_head_combine = nn.Linear(d_h, d_h)

    def forward(self, query: torch.Tensor, key_value: torch.Tensor) -> torch.Tensor:
        q = reshape_by_heads(self.Wq(query), self.n_head)
        k = reshape_by_heads(self.Wk(key_value), self.n_head)
        v = reshape_by_heads(self.Wv(key_value), self.n_head)
        return self.multi_head_combine(multi_head_attention(q, k, v))


class SwiGLU(nn.Module):
    def __init__(self, d_h: int, ff_hidden: int):
        super().__init__()
        self.W_f1 = nn.Linear(d_h, ff_hidden, bias=False)
        self.W_f2 = nn.Linear(d_h, ff_hidden, bias=False)
        self.W_f3 = nn.Linear(ff_hidden, d_h, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.W_f3(F.silu(self.W_f1(x)) * self.W_f2(x))


class AttentionBlock(nn.Module):
    """Atención + residual + LayerNorm, luego SwiGLU + residual + LayerNorm."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.attention = MultiHeadAttention(cfg.d_h, cfg.n_head)
        self.norm1 = nn.LayerNorm(cfg.d_h)
        self.feed_forward = SwiGLU(cfg.d_h, cfg.ff_hidden)
        self.norm2 = nn.LayerNorm(cfg.d_h)

    def forward(self, query: torch.Tensor, key_value: Optional[torch.Tensor] = None) -> torch.Tensor:
        key_value = query if key_value is None else key_value
        out1 = self.norm1(query + self.attention(query, key_value))
        return self.norm2(out1 + self.feed_forward(out1))


class DualAttentionBlock(nn.Module):
    """
    Secuencia global y secuencia de prompts atienden ambas sobre su concatenación.
    Atención, SwiGLU y normas se comparten entre las dos ramas.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.attention = MultiHeadAttention(cfg.d_h, cfg.n_head)
        self.norm1 = nn.RMSNorm(cfg.d_h, eps=1e-6)
        self.feed_forward = SwiGLU(cfg.d_h, cfg.ff_hidden)
        self.norm2 = nn.RMSNorm(cfg.d_h, eps=1e-6)

    def forward(self, h_global: torch.Tensor, prompt: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        joint = torch.cat([h_global, prompt], dim=1)
        out1 = self.norm1(joint + self.attention(joint, joint))
        out2 = self.norm2(out1 + self.feed_forward(out1))
        split = h_global.size(1)
        return out2[:, :split], out2[:, split:]


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.node_block = AttentionBlock(cfg)
        self.vehicle_block = AttentionBlock(cfg)
        self.cross_block = AttentionBlock(cfg)
        self.dual_block = DualAttentionBlock(cfg)

    def forward(self, emb: "EmbeddingSet") -> "EmbeddingSet":
        h_nodes = self.node_block(emb.nodes)
        h_vehicles = self.vehicle_block(emb.vehicles)
        h_vehicle_depot = self.cross_block(emb.vehicle_depot, emb.nodes)
        h_global, prompt = self.dual_block(emb.global_, emb.prompt)
        return EmbeddingSet(
            global_=h_global,
            nodes=h_nodes,
            vehicles=h_vehicles,
            vehicle_depot=h_vehicle_depot,
            prompt=prompt,
        )


@dataclass
class EmbeddingSet:
    global_: torch.Tensor  # (B, 1+V+N, d)
    nodes: torch.Tensor  # (B, 1+N, d)
    vehicles: torch.Tensor  # (B, 1+V, d)
    vehicle_depot: torch.Tensor  # (B, 1+V, d)
    prompt: torch.Tensor  # (B, 1+V, d) o (B, V, d) sin prompt

    def tensors(self) -> list[torch.Tensor]:
        return [self.global_, self.nodes, self.vehicles, self.vehicle_depot, self.prompt]

    def view(self, name: str) -> torch.Tensor:
        return {"g": self.global_, "n": self.nodes, "v": self.vehicles, "vd": self.vehicle_depot}[name]


@dataclass
class ActionDistribution:
    probs: torch.Tensor
    log_probs: torch.Tensor
    entropy: torch.Tensor


def masked_entropy(log_probs: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Entropía sobre el soporte permitido; las entradas enmascaradas no aportan gradiente."""
    safe = torch.where(mask, log_probs, torch.zeros_like(log_probs))
    return -(safe.exp() * safe * mask).sum(dim=-1)


class PointerDecoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_h
        self.views = VIEWS if cfg.multi_view else ("g",)
        self.W_K = nn.ModuleDict({name: nn.Linear(d, d, bias=False) for name in self.views})
        self.W_V = nn.ModuleDict({name: nn.Linear(d, d, bias=False) for name in self.views})
        self.W_Q = nn.Linear(d + cfg.status_dim, d, bias=False)
        self.W_cmb = nn.Linear(d, d, bias=False)

    def precompute(self, emb: EmbeddingSet) -> dict[str, tuple[torch.Tensor, torch.Tensor]]:
        """Claves y valores de cada vista, una vez por instancia."""
        n_head = self.cfg.n_head
        return {
            name: (
                reshape_by_heads(self.W_K[name](emb.view(name)), n_head),
                reshape_by_heads(self.W_V[name](emb.view(name)), n_head),
            )
            for name in self.views
        }

    def log_probs(
        self,
        emb: EmbeddingSet,
        caches: dict[str, tuple[torch.Tensor, torch.Tensor]],
        instance_index: torch.Tensor,
        tokens: torch.Tensor,
        status: torch.Tensor,
        mask: torch.Tensor,
    ) -> torch.Tensor:
        """
        Log-probabilidades de acción para R filas y T pasos.

        tokens: (R, T) fila de H_g del token actual; status: (R, T, 3+V);
        mask: (R, T, A). Devuelve (R, T, A) con -inf en las entradas prohibidas.
        """
        d = self.cfg.d_h
        h_global = emb.global_[instance_index]
        # shape: (R, A, d)
        current = h_global.gather(1, tokens[:, :, None].expand(-1, -1, d))
        # shape: (R, T, d)
        q = reshape_by_heads(self.W_Q(torch.cat([current, status], dim=-1)), self.cfg.n_head)

        context = None
        for name in self.views:
            keys, values = caches[name]
            view_out = multi_head_attention(q, keys[instance_index], values[instance_index])
            context = view_out if context is None else context + view_out
        glimpse = self.W_cmb(context)
        # shape: (R, T, d)

        score = torch.matmul(glimpse, h_global.transpose(1, 2))
        if self.cfg.score_scaling:
            score = score / math.sqrt(d)
        if self.cfg.logit_clip is not None:
            score = self.cfg.logit_clip * torch.tanh(score)
        score = score.masked_fill(~mask, float("-inf"))
        return torch.log_softmax(score, dim=-1)


# ============ Modelo ============


class VapPolicy(nn.Module):
    """Política completa: embebido, codificador y decodificador."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_h
        self.W_d = nn.Linear(DEPOT_FEATURES, d, bias=False)
        self.W_c = nn.Linear(CUSTOMER_FEATURES, d, bias=False)
        self.W_v = nn.Linear(VEHICLE_FEATURES, d, bias=False)
        self.W_vd = nn.Linear(DEPOT_FEATURES + VEHICLE_FEATURES, d, bias=False)
        if cfg.use_prompt:
            self.W_a = nn.Linear(VARIANT_FEATURES, d)
            self.prompt_norm = nn.LayerNorm(d)
            self.W_b = nn.Linear(d, d)
        if cfg.cross_semantic:
            self.layers = nn.ModuleList([EncoderLayer(cfg) for _ in range(cfg.n_layers)])
        else:
            self.layers = nn.ModuleList([AttentionBlock(cfg) for _ in range(cfg.n_layers)])
        self.decoder = PointerDecoder(cfg)
        self.reset_parameters()

    def reset_parameters(self) -> None:
        bound = 1.0 / math.sqrt(self.cfg.d_h)
        for module in self.modules():
            if isinstance(module, nn.Linear):
                nn.init.uniform_(module.weight, -bound, bound)
                if module.bias is not None:
                    nn.init.uniform_(module.bias, -bound, bound)
            elif isinstance(module, (nn.LayerNorm, nn.RMSNorm)):
                module.reset_parameters()

    @property
    def dtype(self) -> torch.dtype:
        return self.W_d.weight.dtype

    @property
    def device(self) -> torch.device:
        return self.W_d.weight.device

    def embed_prompt(self, variant: torch.Tensor) -> torch.Tensor:
        # (B, 4) -> (B, d)
        return self.W_b(self.prompt_norm(self.W_a(variant)))

    def embed(self, features: InstanceFeatures) -> EmbeddingSet:
        n_types = features.vehicles.size(1)
        e_depot = self.W_d(features.depot)
        e_customers = self.W_c(features.customers)
        e_vehicles = self.W_v(features.vehicles)
        depot_broadcast = features.depot.expand(-1, n_types, -1)
        e_vehicle_depot = self.W_vd(torch.cat([depot_broadcast, features.vehicles], dim=-1))

        h_vehicle_depot = torch.cat([e_depot, e_vehicle_depot], dim=1)
        if self.cfg.use_prompt:
            prompt = torch.cat([self.embed_prompt(features.variant)[:, None, :], e_vehicles], dim=1)
        else:
            prompt = e_vehicles
        return EmbeddingSet(
            global_=torch.cat([e_depot, e_vehicle_depot, e_customers], dim=1),
            nodes=torch.cat([e_depot, e_customers], dim=1),
            vehicles=h_vehicle_depot,
            vehicle_depot=h_vehicle_depot,
            prompt=prompt,
        )

    def encode(self, features: InstanceFeatures) -> EmbeddingSet:
        if features.vehicles.size(1) != self.cfg.n_vehicle_types:
            raise ConfigError(
                f"model expects {self.cfg.n_vehicle_types} vehicle types, got {features.vehicles.size(1)}"
            )
        emb = self.embed(features)
        for index, layer in enumerate(self.layers):
            if self.cfg.cross_semantic:
                emb = layer(emb)
            else:
                emb = self._plain_layer(layer, emb, features.vehicles.size(1))
            if not all(torch.isfinite(t).all() for t in emb.tensors()):
                raise NumericFault(f"non-finite values after encoder layer {index}")
        return emb

    @staticmethod
    def _plain_layer(layer: AttentionBlock, emb: EmbeddingSet, n_types: int) -> EmbeddingSet:
        # Codificador de autoatención simple sobre [H_g, C]; las vistas se recortan de H_g
        joint = layer(torch.cat([emb.global_, emb.prompt], dim=1))
        split = emb.global_.size(1)
        h_global = joint[:, :split]
        head = h_global[:, : 1 + n_types]
        return EmbeddingSet(
            global_=h_global,
            nodes=torch.cat([h_global[:, :1], h_global[:, 1 + n_types :]], dim=1),
            vehicles=head,
            vehicle_depot=head,
            prompt=joint[:, split:],
        )

    def decode_step(
        self,
        emb: EmbeddingSet,
        caches: dict[str, tuple[torch.Tensor, torch.Tensor]],
        instance_index: torch.Tensor,
        token: torch.Tensor,
        status: torch.Tensor,
        mask: torch.Tensor,
    ) -> ActionDistribution:
        """Distribución de la siguiente acción para R filas (un paso)."""
        if not bool(mask.any(dim=-1).all()):
            raise ContractViolation("decode_step needs at least one legal action per row")
        log_probs = self.decoder.log_probs(
            emb, caches, instance_index, token[:, None], status[:, None, :], mask[:, None, :]
        )[:, 0]
        return ActionDistribution(
            probs=log_probs.exp(),
            log_probs=log_probs,
            entropy=masked_entropy(log_probs, mask),
        )

    def forward(self, features: InstanceFeatures, record: "DecodeRecord") -> tuple[torch.Tensor, torch.Tensor]:
        """
        Re-puntuar pasos registrados con gradiente.

        Devuelve (log π(a_t), H_t), ambos (R, T) y en cero donde el paso no es válido.
        """
        emb = self.encode(features)
        caches = self.decoder.precompute(emb)
        valid = record.valid
        # Los pasos de relleno reciben una máscara trivial para evitar filas sin soporte
        mask = record.masks.clone()
        mask[..., 0] |= ~valid
        log_probs = self.decoder.log_probs(
            emb, caches, record.instance_index, record.tokens, record.status, mask
        )
        chosen = log_probs.gather(-1, record.actions[..., None])[..., 0]
        entropy = masked_entropy(log_probs, mask)
        zeros = torch.zeros_like(chosen)
        return torch.where(valid, chosen, zeros), torch.where(valid, entropy, zeros)


# ============ Decodificación ============


@dataclass
class DecodeRecord:
    instance_index: torch.Tensor  # (R,)
    tokens: torch.Tensor  # (R, T)
    status: torch.Tensor  # (R, T, 3+V)
    masks: torch.Tensor  # (R, T, A)
    actions: torch.Tensor  # (R, T)
    valid: torch.Tensor  # (R, T)


@dataclass
class RolloutResult:
    trajectories: list[env.Trajectory]
    record: DecodeRecord
    samples: int = 1
    instances: list[Instance] = field(default_factory=list)

    def by_instance(self) -> list[list[env.Trajectory]]:
        s = self.samples
        return [self.trajectories[i * s : (i + 1) * s] for i in range(len(self.trajectories) // s)]


def sample_generator(seed: int, instance: int, sample: int) -> np.random.Generator:
    """Generador propio de cada fila: los conjuntos de muestras son anidados en S."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(instance, sample)))


@torch.no_grad()
def rollout_batch(
    policy: VapPolicy,
    instances: Sequence[Instance],
    mode: Literal["greedy", "sample"] = "greedy",
    samples: int = 1,
    seed: int = 0,
) -> RolloutResult:
    """Decodificar B instancias × S filas hasta terminar todos los episodios."""
    if mode not in ("greedy", "sample"):
        raise ConfigError(f"unknown decode mode '{mode}'")
    if samples < 1:
        raise ConfigError("samples must be >= 1")
    instances = list(instances)
    features = build_features(instances, dtype=policy.dtype, device=policy.device)
    emb = policy.encode(features)
    caches = policy.decoder.precompute(emb)

    rows = len(instances) * samples
    row_instance = [instances[r // samples] for r in range(rows)]
    instance_index = torch.arange(len(instances), device=policy.device).repeat_interleave(samples)
    n_actions = instances[0].n_actions
    status_dim = 3 + instances[0].n_types

    states = [env.reset(inst) for inst in row_instance]
    trajectories = [env.Trajectory() for _ in range(rows)]
    generators = (
        [sample_generator(seed, r // samples, r % samples) for r in range(rows)] if mode == "sample" else None
    )
    steps: list[tuple[np.ndarray, ...]] = []

    while True:
        tokens = np.zeros(rows, dtype=np.int64)
        status = np.zeros((rows, status_dim))
        masks = np.zeros((rows, n_actions), dtype=bool)
        valid = np.zeros(rows, dtype=bool)
        for r, (state, inst) in enumerate(zip(states, row_instance)):
            if state.done:
                continue
            mask = env.feasible_mask(state, inst)
            if not mask.any():
                states[r], outcome = env.apply_penalty(state, inst)
                trajectories[r].penalty = outcome.reward
                trajectories[r].infeasible = True
                continue
            tokens[r] = state.last_action if state.active_type is not None else 0
            status[r] = status_features(state, inst)
            masks[r] = mask
            valid[r] = True
        if not valid.any():
            break

        step_mask = masks.copy()
        step_mask[~valid, 0] = True
        dist = policy.decode_step(
            emb,
            caches,
            instance_index,
            torch.as_tensor(tokens, device=policy.device),
            torch.as_tensor(status, dtype=policy.dtype, device=policy.device),
            torch.as_tensor(step_mask, device=policy.device),
        )
        log_probs = dist.log_probs.double().cpu().numpy()
        entropy = dist.entropy.double().cpu().numpy()

        actions = np.zeros(rows, dtype=np.int64)
        for r in np.flatnonzero(valid):
            scores = log_probs[r]
            if generators is not None:
                scores = scores + generators[r].gumbel(size=n_actions)
            action = int(np.argmax(scores))
            actions[r] = action
            states[r], outcome = env.step(states[r], action, row_instance[r])
            traj = trajectories[r]
            traj.actions.append(action)
            traj.rewards.append(outcome.reward)
            traj.log_prob_sum += float(log_probs[r, action])
            traj.entropy_sum += float(entropy[r])
        steps.append((tokens, status, masks, actions, valid))

    if steps:
        tokens, status, masks, actions, valid = (np.stack(part, axis=1) for part in zip(*steps))
    else:
        tokens = np.zeros((rows, 0), dtype=np.int64)
        status = np.zeros((rows, 0, status_dim))
        masks = np.zeros((rows, 0, n_actions), dtype=bool)
        actions = np.zeros((rows, 0), dtype=np.int64)
        valid = np.zeros((rows, 0), dtype=bool)
    device = policy.device
    record = DecodeRecord(
        instance_index=instance_index,
        tokens=torch.as_tensor(tokens, device=device),
        status=torch.as_tensor(status, dtype=policy.dtype, device=device),
        masks=torch.as_tensor(masks, device=device),
        actions=torch.as_tensor(actions, device=device),
        valid=torch.as_tensor(valid, device=device),
    )
    return RolloutResult(trajectories=trajectories, record=record, samples=samples, instances=instances)


def rollout(
    policy: VapPolicy,
    inst: Instance,
    mode: Literal["greedy", "sample"] = "greedy",
    seed: int = 0,
) -> env.Trajectory:
    return rollout_batch(policy, [inst], mode=mode, samples=1, seed=seed).trajectories[0]
