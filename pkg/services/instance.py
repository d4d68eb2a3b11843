"""Modelo de datos del problema: instancias, generador, distancias y serialización."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from services.errors import ConfigError, InstanceParseError

VARIANT_LETTERS = ("o", "b", "l", "tw")

# Las cinco variantes base con las que se entrena por defecto
BASE_VARIANTS = ("cvrp", "o", "b", "l", "tw")


@dataclass(frozen=True)
class VariantFlags:
    """Banderas de variante: cada una activa una restricción de forma independiente."""

    open_route: bool = False
    backhaul: bool = False
    distance_limit: bool = False
    time_window: bool = False

    def as_vector(self) -> list[float]:
        return [float(flag) for flag in self._flags()]

    def _flags(self) -> tuple[bool, bool, bool, bool]:
        return (self.open_route, self.backhaul, self.distance_limit, self.time_window)

    @property
    def name(self) -> str:
        """Etiqueta legible, p. ej. HFCVRP, HFOVRPBTW."""
        if not any(self._flags()):
            return "HFCVRP"
        label = "HF" + ("O" if self.open_route else "") + "VRP"
        if self.backhaul:
            label += "B"
        if self.distance_limit:
            label += "L"
        if self.time_window:
            label += "TW"
        return label

    @property
    def code(self) -> str:
        letters = "".join(letter for letter, on in zip(VARIANT_LETTERS, self._flags()) if on)
        return letters or "cvrp"

    @classmethod
    def from_name(cls, name: str) -> "VariantFlags":
        """
        Interpretar un nombre de variante.

        Acepta `cvrp`, combinaciones de letras (`o`, `b`, `l`, `tw`, p. ej. `obltw`)
        y nombres completos como `HFOVRPTW`.
        """
        text = name.strip().lower()
        for sep in ("-", "_", ",", "+", " "):
            text = text.replace(sep, "")
        if text.startswith("hf"):
            text = text[2:]
        if text in ("", "cvrp", "vrp", "c"):
            return cls()
        text = text.replace("vrp", "")

        flags = {"o": False, "b": False, "l": False, "tw": False}
        while text:
            if text.startswith("tw"):
                flags["tw"] = True
                text = text[2:]
            elif text[0] in ("o", "b", "l"):
                flags[text[0]] = True
                text = text[1:]
            elif text[0] == "c":
                # "c" (capacidad) siempre está activa
                text = text[1:]
            else:
                raise ConfigError(f"unknown variant '{name}'")
        return cls(
            open_route=flags["o"],
            backhaul=flags["b"],
            distance_limit=flags["l"],
            time_window=flags["tw"],
        )


@dataclass(frozen=True)
class Node:
    id: int
    x: float
    y: float
    q_l: float = 0.0
    q_b: float = 0.0
    e: float = 0.0
    l: float = math.inf
    s: float = 0.0


@dataclass(frozen=True)
class VehicleType:
    id: int
    capacity: float
    fixed_cost: float
    unit_cost: float
    count: int


@dataclass(frozen=True)
class Instance:
    """
    Dato estático del problema: depósito + clientes + flota heterogénea + variante.

    Los nodos van en orden de id (0 = depósito). Las instancias son inmutables;
    los arreglos derivados se calculan una vez y son de solo lectura.
    """

    nodes: tuple[Node, ...]
    fleet: tuple[VehicleType, ...]
    variant: VariantFlags
    dist_limit: Optional[float] = None
    depot_close: Optional[float] = None

    @property
    def n_customers(self) -> int:
        return len(self.nodes) - 1

    @property
    def n_types(self) -> int:
        return len(self.fleet)

    @property
    def fleet_size(self) -> int:
        return sum(vehicle.count for vehicle in self.fleet)

    @property
    def n_actions(self) -> int:
        return 1 + self.n_types + self.n_customers

    def customer_action(self, customer: int) -> int:
        """Acción asociada al cliente `customer` (id de nodo >= 1)."""
        return self.n_types + customer

    def action_customer(self, action: int) -> int:
        return action - self.n_types

    @cached_property
    def coords(self) -> np.ndarray:
        return _frozen(np.array([[node.x, node.y] for node in self.nodes], dtype=np.float64))

    @cached_property
    def dist(self) -> np.ndarray:
        return _frozen(distance_matrix(self.coords))

    @cached_property
    def linehaul(self) -> np.ndarray:
        return _frozen(np.array([node.q_l for node in self.nodes], dtype=np.float64))

    @cached_property
    def backhaul(self) -> np.ndarray:
        return _frozen(np.array([node.q_b for node in self.nodes], dtype=np.float64))

    @cached_property
    def ready(self) -> np.ndarray:
        return _frozen(np.array([node.e for node in self.nodes], dtype=np.float64))

    @cached_property
    def due(self) -> np.ndarray:
        return _frozen(np.array([node.l for node in self.nodes], dtype=np.float64))

    @cached_property
    def service(self) -> np.ndarray:
        return _frozen(np.array([node.s for node in self.nodes], dtype=np.float64))

    @cached_property
    def capacities(self) -> np.ndarray:
        return _frozen(np.array([v.capacity for v in self.fleet], dtype=np.float64))

    @cached_property
    def fixed_costs(self) -> np.ndarray:
        return _frozen(np.array([v.fixed_cost for v in self.fleet], dtype=np.float64))

    @cached_property
    def unit_costs(self) -> np.ndarray:
        return _frozen(np.array([v.unit_cost for v in self.fleet], dtype=np.float64))

    @cached_property
    def counts(self) -> np.ndarray:
        return _frozen(np.array([v.count for v in self.fleet], dtype=np.int64))


def _frozen(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


def distance(a, b) -> float:
    """Distancia euclídea entre dos coordenadas 2-D."""
    dx = float(a[0]) - float(b[0])
    dy = float(a[1]) - float(b[1])
    return math.sqrt(dx * dx + dy * dy)


def distance_matrix(coords: np.ndarray) -> np.ndarray:
    # Mismas operaciones que distance(), elemento a elemento: resultados idénticos bit a bit
    dx = coords[:, None, 0] - coords[None, :, 0]
    dy = coords[:, None, 1] - coords[None, :, 1]
    return np.sqrt(dx * dx + dy * dy)


def with_variant(inst: Instance, variant: VariantFlags) -> Instance:
    """Copia de la instancia bajo otras banderas (los datos de nodos no cambian)."""
    return replace(inst, variant=variant)


# ============ Generador ============


class GeneratorConfig(BaseModel):
    """Parámetros del generador sintético. Misma config + semilla => misma instancia."""

    model_config = ConfigDict(extra="forbid")

    n_customers: int = Field(50, ge=1)
    fleet_size: int = Field(20, ge=1)
    n_vehicle_types: int = Field(3, ge=1)
    variant: VariantFlags = VariantFlags()
    seed: int = Field(0, ge=0, lt=2**64)
    fleet_mode: Literal["hf", "hc"] = "hf"
    capacity_choices: list[float] = Field(default_factory=lambda: [30.0, 40.0, 50.0], min_length=1)
    demand_low: int = Field(1, ge=0)
    demand_high: int = Field(9, ge=1)
    backhaul_ratio: float = Field(0.2, ge=0.0, le=1.0)
    base_fixed_cost: float = Field(0.2, ge=0.0)
    fixed_cost_noise: float = Field(0.02, ge=0.0)
    base_unit_cost: float = Field(1.0, gt=0.0)
    unit_cost_exponent: float = 0.7
    max_distance_limit: float = Field(3.0, gt=0.0)
    depot_close: float = Field(4.6, gt=0.0)
    service_time: tuple[float, float] = (0.15, 0.18)
    window_length: tuple[float, float] = (0.18, 0.2)

    @field_validator("variant", mode="before")
    @classmethod
    def _parse_variant(cls, value):
        if isinstance(value, str):
            return VariantFlags.from_name(value)
        return value

    @field_validator("capacity_choices")
    @classmethod
    def _positive_capacities(cls, value: list[float]) -> list[float]:
        if any(c <= 0 for c in value):
            raise ValueError("capacities must be positive")
        return value

    @model_validator(mode="after")
    def _check_fleet(self) -> "GeneratorConfig":
        if self.n_vehicle_types > self.fleet_size:
            raise ValueError("n_vehicle_types must not exceed fleet_size")
        if self.demand_low > self.demand_high:
            raise ValueError("demand_low must not exceed demand_high")
        return self


def _check_dimensions(cfg: GeneratorConfig) -> None:
    if cfg.n_customers < 1 or cfg.fleet_size < 1 or cfg.n_vehicle_types < 1:
        raise ConfigError(
            f"invalid dimensions: N={cfg.n_customers}, K={cfg.fleet_size}, V={cfg.n_vehicle_types}"
        )
    if cfg.n_vehicle_types > cfg.fleet_size:
        raise ConfigError(f"V={cfg.n_vehicle_types} exceeds fleet size K={cfg.fleet_size}")


def _generate_fleet(cfg: GeneratorConfig, rng: np.random.Generator) -> tuple[VehicleType, ...]:
    choices = np.asarray(cfg.capacity_choices, dtype=np.float64)
    n_types = cfg.n_vehicle_types
    capacities = np.sort(rng.choice(choices, size=n_types, replace=n_types > len(choices)))
    noise = rng.uniform(0.0, cfg.fixed_cost_noise, size=n_types)

    ratio = capacities / capacities.max()
    fixed = cfg.base_fixed_cost * ratio + noise
    if cfg.fleet_mode == "hc":
        fixed = np.zeros(n_types)
    unit = cfg.base_unit_cost * ratio ** cfg.unit_cost_exponent

    base, extra = divmod(cfg.fleet_size, n_types)
    return tuple(
        VehicleType(
            id=k,
            capacity=float(capacities[k]),
            fixed_cost=float(fixed[k]),
            unit_cost=float(unit[k]),
            count=base + (1 if k < extra else 0),
        )
        for k in range(n_types)
    )


def generate_instance(cfg: GeneratorConfig) -> Instance:
    """
    Generar una instancia sintética.

    Todas las magnitudes aleatorias se sortean siempre en el mismo orden, con o sin
    variantes activas: la misma semilla da las mismas coordenadas y demandas en
    todas las variantes.
    """
    _check_dimensions(cfg)
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_customers
    variant = cfg.variant

    coords = rng.random((n + 1, 2))
    demand = rng.integers(cfg.demand_low, cfg.demand_high + 1, size=n).astype(np.float64)
    order = rng.permutation(n)
    fleet = _generate_fleet(cfg, rng)
    limit_u = rng.random()
    service = rng.uniform(cfg.service_time[0], cfg.service_time[1], size=n)
    length = rng.uniform(cfg.window_length[0], cfg.window_length[1], size=n)
    slack_u = rng.random(n)

    q_l = demand.copy()
    q_b = np.zeros(n)
    if variant.backhaul:
        n_back = int(round(cfg.backhaul_ratio * n))
        back = order[:n_back]
        q_b[back] = q_l[back]
        q_l[back] = 0.0

    depot_dist = distance_matrix(coords)[0, 1:]

    dist_limit = None
    if variant.distance_limit:
        low = 2.0 * float(depot_dist.max()) * 1.05
        high = max(low, cfg.max_distance_limit)
        dist_limit = low + limit_u * (high - low)

    depot_close = None
    ready = np.zeros(n)
    due = np.full(n, math.inf)
    if variant.time_window:
        depot_close = cfg.depot_close
        upper = depot_close - depot_dist - service - length
        ready = depot_dist + slack_u * np.maximum(upper - depot_dist, 0.0)
        due = ready + length
    else:
        service = np.zeros(n)

    nodes = [
        Node(
            id=0,
            x=float(coords[0, 0]),
            y=float(coords[0, 1]),
            e=0.0,
            l=depot_close if depot_close is not None else math.inf,
        )
    ]
    for i in range(n):
        nodes.append(
            Node(
                id=i + 1,
                x=float(coords[i + 1, 0]),
                y=float(coords[i + 1, 1]),
                q_l=float(q_l[i]),
                q_b=float(q_b[i]),
                e=float(ready[i]),
                l=float(due[i]),
                s=float(service[i]),
            )
        )
    return Instance(
        nodes=tuple(nodes),
        fleet=fleet,
        variant=variant,
        dist_limit=dist_limit,
        depot_close=depot_close,
    )


# ============ Validación ============


def validate_instance(inst: Instance) -> list[str]:
    """Lista de violaciones de los invariantes de la instancia; vacía si todo es correcto."""
    violations: list[str] = []
    if not inst.nodes:
        return ["instance has no nodes"]
    if not inst.fleet:
        violations.append("fleet is empty")

    for index, node in enumerate(inst.nodes):
        label = "depot" if index == 0 else f"customer {node.id}"
        if node.id != index:
            violations.append(f"node at position {index} has id {node.id}")
        if not (0.0 <= node.x <= 1.0 and 0.0 <= node.y <= 1.0):
            violations.append(f"{label}: coordinate outside [0,1]^2")
        if node.e > node.l:
            violations.append(f"{label}: time window opens at {node.e} after it closes at {node.l}")
        if node.s < 0:
            violations.append(f"{label}: negative service duration")
        if node.q_l < 0 or node.q_b < 0:
            violations.append(f"{label}: negative demand")
    depot = inst.nodes[0]
    if depot.q_l != 0 or depot.q_b != 0 or depot.s != 0:
        violations.append("depot: demands and service duration must be zero")

    for vehicle in inst.fleet:
        if vehicle.capacity <= 0:
            violations.append(f"vehicle type {vehicle.id}: capacity must be positive")
        if vehicle.fixed_cost < 0:
            violations.append(f"vehicle type {vehicle.id}: negative fixed cost")
        if vehicle.unit_cost <= 0:
            violations.append(f"vehicle type {vehicle.id}: unit cost must be positive")
        if vehicle.count < 0:
            violations.append(f"vehicle type {vehicle.id}: negative count")
    if inst.fleet and inst.fleet_size < 1:
        violations.append("fleet has no available vehicles")
    if any(v.id != k for k, v in enumerate(inst.fleet)):
        violations.append("vehicle type ids must be 0..V-1 in order")

    max_capacity = max((v.capacity for v in inst.fleet), default=0.0)
    limit_active = inst.variant.distance_limit
    tw_active = inst.variant.time_window
    if limit_active and inst.dist_limit is None:
        violations.append("distance limit variant without dist_limit")
    if tw_active and inst.depot_close is None:
        violations.append("time window variant without depot_close")

    for node in inst.nodes[1:]:
        label = f"customer {node.id}"
        if node.q_l > max_capacity:
            violations.append(f"{label}: linehaul demand {node.q_l} exceeds largest capacity {max_capacity}")
        if node.q_b > max_capacity:
            violations.append(f"{label}: backhaul demand {node.q_b} exceeds largest capacity {max_capacity}")
        if inst.variant.backhaul and node.q_l > 0 and node.q_b > 0:
            violations.append(f"{label}: has both linehaul and backhaul demand")
        if not inst.variant.backhaul and node.q_b > 0:
            violations.append(f"{label}: backhaul demand without backhaul variant")

        d0 = distance((depot.x, depot.y), (node.x, node.y))
        if limit_active and inst.dist_limit is not None and 2.0 * d0 > inst.dist_limit:
            violations.append(f"{label}: depot round trip {2.0 * d0} exceeds distance limit {inst.dist_limit}")
        if tw_active and inst.depot_close is not None:
            start = max(d0, node.e)
            if start > node.l:
                violations.append(f"{label}: unreachable within its time window from the depot")
            elif not inst.variant.open_route and start + node.s + d0 > inst.depot_close:
                violations.append(f"{label}: cannot return to the depot before it closes")
    return violations


# ============ Serialización ============


class NodePayload(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: int
    x: float
    y: float
    q_l: float = 0.0
    q_b: float = 0.0
    e: float = 0.0
    l: Optional[float] = None
    s: float = 0.0


class VehiclePayload(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: int
    capacity: float
    fixed_cost: float
    unit_cost: float
    count: int


class VariantPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")

    open_route: bool = False
    backhaul: bool = False
    distance_limit: bool = False
    time_window: bool = False


class InstancePayload(BaseModel):
    """Esquema JSON de un archivo de instancia."""

    model_config = ConfigDict(extra="forbid")

    variant: VariantPayload
    nodes: list[NodePayload] = Field(min_length=1)
    fleet: list[VehiclePayload] = Field(min_length=1)
    dist_limit: Optional[float] = None
    depot_close: Optional[float] = None

    def to_instance(self) -> Instance:
        return Instance(
            nodes=tuple(
                Node(
                    id=n.id, x=n.x, y=n.y, q_l=n.q_l, q_b=n.q_b, e=n.e,
                    l=math.inf if n.l is None else n.l, s=n.s,
                )
                for n in self.nodes
            ),
            fleet=tuple(
                VehicleType(
                    id=v.id, capacity=v.capacity, fixed_cost=v.fixed_cost,
                    unit_cost=v.unit_cost, count=v.count,
                )
                for v in self.fleet
            ),
            variant=VariantFlags(**self.variant.model_dump()),
            dist_limit=self.dist_limit,
            depot_close=self.depot_close,
        )


def _real(value: float) -> Optional[float]:
    # JSON no tiene infinito: una ventana abierta se escribe como null
    return None if math.isinf(value) else value


def instance_to_dict(inst: Instance) -> dict:
    return {
        "variant": asdict(inst.variant),
        "nodes": [
            {
                "id": n.id, "x": n.x, "y": n.y, "q_l": n.q_l, "q_b": n.q_b,
                "e": n.e, "l": _real(n.l), "s": n.s,
            }
            for n in inst.nodes
        ],
        "fleet": [
            {
                "id": v.id, "capacity": v.capacity, "fixed_cost": v.fixed_cost,
                "unit_cost": v.unit_cost, "count": v.count,
            }
            for v in inst.fleet
        ],
        "dist_limit": inst.dist_limit,
        "depot_close": inst.depot_close,
    }


def instance_from_dict(data: dict) -> Instance:
    try:
        payload = InstancePayload.model_validate(data)
    except ValidationError as exc:
        error = exc.errors()[0]
        location = ".".join(str(part) for part in error["loc"]) or "<root>"
        raise InstanceParseError(f"invalid instance at {location}: {error['msg']}") from exc
    return payload.to_instance()


def serialize(inst: Instance) -> bytes:
    """Serializar a JSON; los reales se escriben con precisión completa (repr)."""
    return json.dumps(instance_to_dict(inst), indent=2).encode("utf-8")


def deserialize(data: bytes | str) -> Instance:
    try:
        raw = json.loads(data)
    except json.JSONDecodeError as exc:
        raise InstanceParseError(
            f"malformed instance JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    except UnicodeDecodeError as exc:
        raise InstanceParseError(f"instance file is not UTF-8 (byte {exc.start})") from exc
    if not isinstance(raw, dict):
        raise InstanceParseError("instance JSON must be an object at <root>")
    return instance_from_dict(raw)


def load_instance(path: str | Path) -> Instance:
    path = Path(path)
    if not path.is_file():
        raise InstanceParseError(f"instance file not found: {path}")
    return deserialize(path.read_bytes())


def save_instance(path: str | Path, inst: Instance) -> None:
    Path(path).write_bytes(serialize(inst))
