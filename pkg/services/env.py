"""
Entorno de decisión secuencial con vehículos como prompts.

Espacio de acciones unificado de tamaño 1 + V + N:
    0           -> token de retorno al depósito
    1..V        -> token de vehículo (tipo k = acción - 1)
    V+1..V+N    -> cliente j = acción - V
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from services.errors import ContractViolation, DecodeError, FeasibilityError
from services.instance import Instance, distance

DEPOT_ACTION = 0
FEASIBILITY_TOL = 1e-9


@dataclass
class EnvState:
    visited: np.ndarray
    remaining_count: np.ndarray
    active_type: Optional[int] = None
    current_node: int = 0
    last_action: Optional[int] = None
    used_linehaul: float = 0.0
    used_backhaul: float = 0.0
    carrying_backhaul: bool = False
    route_distance: float = 0.0
    clock: float = 0.0
    served_count: int = 0
    route_len: int = 0
    step: int = 0
    done: bool = False
    infeasible: bool = False
    capacity: float = 0.0

    @property
    def remaining_capacity(self) -> float:
        """Capacidad libre del vehículo activo (0 sin vehículo)."""
        if self.active_type is None:
            return 0.0
        used = self.used_backhaul if self.carrying_backhaul else self.used_linehaul
        return self.capacity - used

    @property
    def route_open(self) -> bool:
        return self.active_type is not None

    def copy(self) -> "EnvState":
        return replace(self, visited=self.visited.copy(), remaining_count=self.remaining_count.copy())


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    done: bool
    infeasible: bool = False


@dataclass
class Trajectory:
    """
    Secuencia de acciones con sus recompensas.

    `penalty` es la recompensa terminal de un episodio cortado por infactibilidad;
    no tiene acción asociada, por eso va aparte de `rewards`.
    """

    actions: list[int] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    penalty: float = 0.0
    infeasible: bool = False
    log_prob_sum: float = 0.0
    entropy_sum: float = 0.0

    @property
    def total_reward(self) -> float:
        return math.fsum(self.rewards) + self.penalty

    @property
    def cost(self) -> float:
        return -self.total_reward


@dataclass(frozen=True)
class Route:
    vehicle_type: int
    customers: tuple[int, ...]
    closed: bool = True


@dataclass(frozen=True)
class Solution:
    routes: tuple[Route, ...]
    objective: float
    feasible: bool = True


# ============ Estado y máscaras ============


def reset(inst: Instance) -> EnvState:
    return EnvState(
        visited=np.zeros(inst.n_customers + 1, dtype=bool),
        remaining_count=np.array(inst.counts, dtype=np.int64),
    )


def _candidates(
    inst: Instance,
    vehicle: int,
    current: int,
    used_linehaul: float,
    used_backhaul: float,
    carrying_backhaul: bool,
    route_distance: float,
    clock: float,
    unvisited: np.ndarray,
) -> np.ndarray:
    """Clientes alcanzables desde `current` por el vehículo dado (vector de largo N)."""
    variant = inst.variant
    capacity = inst.capacities[vehicle]
    leg = inst.dist[current, 1:]
    back_leg = inst.dist[1:, 0]
    closed = not variant.open_route

    ok = unvisited.copy()
    if variant.time_window:
        arrival = clock + leg
        ok &= arrival <= inst.due[1:]
        if closed:
            start = np.maximum(arrival, inst.ready[1:])
            ok &= start + inst.service[1:] + back_leg <= inst.depot_close
    if variant.distance_limit:
        travel = route_distance + leg
        if closed:
            travel = travel + back_leg
        ok &= travel <= inst.dist_limit

    is_backhaul = inst.backhaul[1:] > 0
    linehaul_ok = ok & ~is_backhaul & (used_linehaul + inst.linehaul[1:] <= capacity)
    if carrying_backhaul:
        linehaul_ok[:] = False
    if linehaul_ok.any():
        # Mientras quede una entrega posible, las recogidas esperan
        return linehaul_ok
    return ok & is_backhaul & (used_backhaul + inst.backhaul[1:] <= capacity)


def fresh_route_types(inst: Instance, state: EnvState) -> np.ndarray:
    """Tipos de vehículo que, saliendo vacíos del depósito, podrían atender a algún cliente."""
    unvisited = ~state.visited[1:]
    return np.array(
        [
            _candidates(inst, k, 0, 0.0, 0.0, False, 0.0, 0.0, unvisited).any()
            for k in range(inst.n_types)
        ],
        dtype=bool,
    )


def feasible_mask(state: EnvState, inst: Instance) -> np.ndarray:
    """Conjunción de la máscara de restricciones y la de orden de generación."""
    mask = np.zeros(inst.n_actions, dtype=bool)
    if state.done:
        return mask
    unvisited = ~state.visited[1:]

    if state.active_type is None:
        if unvisited.any():
            mask[1 : 1 + inst.n_types] = (state.remaining_count > 0) & fresh_route_types(inst, state)
        return mask

    if not unvisited.any():
        mask[DEPOT_ACTION] = True
        return mask

    mask[1 + inst.n_types :] = _candidates(
        inst,
        state.active_type,
        state.current_node,
        state.used_linehaul,
        state.used_backhaul,
        state.carrying_backhaul,
        state.route_distance,
        state.clock,
        unvisited,
    )
    mask[DEPOT_ACTION] = state.route_len > 0
    return mask


def step(state: EnvState, action: int, inst: Instance) -> tuple[EnvState, StepOutcome]:
    """Aplicar una acción legal; devuelve un estado nuevo (el anterior no cambia)."""
    action = int(action)
    if not 0 <= action < inst.n_actions:
        raise ContractViolation(f"action {action} outside [0, {inst.n_actions})")
    if not feasible_mask(state, inst)[action]:
        raise ContractViolation(f"action {action} is masked at step {state.step}")

    new = state.copy()
    new.step += 1
    new.last_action = action
    n_types = inst.n_types

    if 1 <= action <= n_types:
        vehicle = action - 1
        new.active_type = vehicle
        new.capacity = float(inst.capacities[vehicle])
        new.remaining_count[vehicle] -= 1
        new.current_node = 0
        new.used_linehaul = 0.0
        new.used_backhaul = 0.0
        new.carrying_backhaul = False
        new.route_distance = 0.0
        new.clock = 0.0
        new.route_len = 0
        return new, StepOutcome(reward=-float(inst.fixed_costs[vehicle]), done=False)

    vehicle = state.active_type
    unit_cost = float(inst.unit_costs[vehicle])

    if action == DEPOT_ACTION:
        reward = 0.0
        if not inst.variant.open_route:
            leg = float(inst.dist[state.current_node, 0])
            reward = -unit_cost * leg
            new.route_distance += leg
            new.clock += leg
        new.active_type = None
        new.current_node = 0
        new.route_len = 0
        new.capacity = 0.0
        new.done = bool(new.visited[1:].all())
        return new, StepOutcome(reward=reward, done=new.done)

    customer = action - n_types
    leg = float(inst.dist[state.current_node, customer])
    new.route_distance += leg
    if inst.variant.time_window:
        start = max(state.clock + leg, float(inst.ready[customer]))
        new.clock = start + float(inst.service[customer])
    else:
        new.clock = state.clock + leg
    if inst.backhaul[customer] > 0:
        new.used_backhaul += float(inst.backhaul[customer])
        new.carrying_backhaul = True
    else:
        new.used_linehaul += float(inst.linehaul[customer])
    new.visited[customer] = True
    new.served_count += 1
    new.route_len += 1
    new.current_node = customer
    return new, StepOutcome(reward=-unit_cost * leg, done=False)


def penalty(state: EnvState, inst: Instance) -> float:
    """Costo estimado en el peor caso de atender a los clientes pendientes con viajes directos."""
    unserved = np.flatnonzero(~state.visited[1:]) + 1
    if unserved.size == 0:
        raise ContractViolation("penalty requires unvisited customers")
    if feasible_mask(state, inst).any():
        raise ContractViolation("penalty called on a state with legal actions")
    max_unit = float(inst.unit_costs.max())
    max_fixed = float(inst.fixed_costs.max())
    return -math.fsum(
        max_unit * (float(inst.dist[0, i]) + float(inst.dist[i, 0])) + max_fixed for i in unserved
    )


def apply_penalty(state: EnvState, inst: Instance) -> tuple[EnvState, StepOutcome]:
    reward = penalty(state, inst)
    new = state.copy()
    new.done = True
    new.infeasible = True
    return new, StepOutcome(reward=reward, done=True, infeasible=True)


# ============ Trayectorias ============


def replay(inst: Instance, actions: list[int]) -> Trajectory:
    """Re-ejecutar una secuencia de acciones; termina con penalización si queda sin salida."""
    state = reset(inst)
    traj = Trajectory()
    for action in actions:
        state, outcome = step(state, action, inst)
        traj.actions.append(int(action))
        traj.rewards.append(outcome.reward)
    if not state.done and not feasible_mask(state, inst).any() and not state.visited[1:].all():
        state, outcome = apply_penalty(state, inst)
        traj.penalty = outcome.reward
        traj.infeasible = True
    return traj


def random_rollout(inst: Instance, rng: np.random.Generator) -> Trajectory:
    """Episodio con acciones uniformes entre las legales."""
    state = reset(inst)
    traj = Trajectory()
    while not state.done:
        mask = feasible_mask(state, inst)
        legal = np.flatnonzero(mask)
        if legal.size == 0:
            state, outcome = apply_penalty(state, inst)
            traj.penalty = outcome.reward
            traj.infeasible = True
            break
        action = int(rng.choice(legal))
        state, outcome = step(state, action, inst)
        traj.actions.append(action)
        traj.rewards.append(outcome.reward)
    return traj


def decode_solution(traj: Trajectory, inst: Instance) -> Solution:
    """Partir la trayectoria en rutas por los tokens de vehículo y de retorno."""
    if traj.infeasible:
        raise DecodeError("trajectory was terminated by the infeasibility penalty")
    state = reset(inst)
    try:
        for action in traj.actions:
            state, _ = step(state, action, inst)
    except ContractViolation as exc:
        raise DecodeError(f"illegal trajectory: {exc}") from exc
    if not state.done:
        raise DecodeError(
            f"incomplete trajectory: {state.served_count}/{inst.n_customers} customers served"
        )

    sol = Solution(routes=partition_routes(traj.actions, inst), objective=0.0)
    return replace(sol, objective=evaluate_cost(sol, inst))


def partition_routes(actions: list[int], inst: Instance) -> tuple[Route, ...]:
    """Rutas terminadas de una secuencia de acciones, sin validarla."""
    closed = not inst.variant.open_route
    routes: list[Route] = []
    vehicle: Optional[int] = None
    customers: list[int] = []
    for action in actions:
        if 1 <= action <= inst.n_types:
            vehicle = action - 1
            customers = []
        elif action == DEPOT_ACTION:
            if vehicle is not None:
                routes.append(Route(vehicle_type=vehicle, customers=tuple(customers), closed=closed))
            vehicle = None
        else:
            customers.append(inst.action_customer(action))
    return tuple(routes)


def trajectory_solution(traj: Trajectory, inst: Instance) -> Solution:
    """Solución de una trayectoria; si fue penalizada, rutas parciales marcadas como infactibles."""
    if not traj.infeasible:
        return decode_solution(traj, inst)
    return Solution(routes=partition_routes(traj.actions, inst), objective=traj.cost, feasible=False)


def solution_actions(sol: Solution, inst: Instance) -> list[int]:
    """Secuencia de acciones que reproduce la solución."""
    actions: list[int] = []
    for route in sol.routes:
        actions.append(route.vehicle_type + 1)
        actions.extend(inst.customer_action(c) for c in route.customers)
        actions.append(DEPOT_ACTION)
    return actions


# ============ Factibilidad y costo ============


def check_feasibility(sol: Solution, inst: Instance) -> list[str]:
    """
    Verificación independiente de la máscara: recorre cada ruta con `distance()`
    y compara contra las restricciones de la variante.
    """
    violations: list[str] = []
    variant = inst.variant
    n = inst.n_customers
    coords = [(node.x, node.y) for node in inst.nodes]
    tol = FEASIBILITY_TOL

    seen: dict[int, int] = {}
    used_per_type = [0] * inst.n_types
    for r, route in enumerate(sol.routes):
        if not 0 <= route.vehicle_type < inst.n_types:
            violations.append(f"route {r}: unknown vehicle type {route.vehicle_type}")
            continue
        used_per_type[route.vehicle_type] += 1
        if not route.customers:
            violations.append(f"route {r}: empty route")
        if route.closed == variant.open_route:
            violations.append(f"route {r}: closed={route.closed} contradicts open_route={variant.open_route}")
        for c in route.customers:
            if not 1 <= c <= n:
                violations.append(f"route {r}: unknown customer {c}")
            else:
                seen[c] = seen.get(c, 0) + 1

    for c in range(1, n + 1):
        if seen.get(c, 0) == 0:
            violations.append(f"customer {c}: not served")
        elif seen[c] > 1:
            violations.append(f"customer {c}: served {seen[c]} times")
    for k, vehicle in enumerate(inst.fleet):
        if used_per_type[k] > vehicle.count:
            violations.append(f"vehicle type {k}: {used_per_type[k]} routes exceed availability {vehicle.count}")

    for r, route in enumerate(sol.routes):
        if not 0 <= route.vehicle_type < inst.n_types:
            continue
        customers = [c for c in route.customers if 1 <= c <= n]
        vehicle = inst.fleet[route.vehicle_type]
        nodes = [inst.nodes[c] for c in customers]

        # Carga: sale con todas las entregas; entregar descarga y recoger carga
        load = sum(node.q_l for node in nodes)
        if load > vehicle.capacity + tol:
            violations.append(f"route {r}: linehaul load {load} exceeds capacity {vehicle.capacity}")
        for node in nodes:
            load += node.q_b - node.q_l
            if load > vehicle.capacity + tol:
                violations.append(f"route {r}: load {load} exceeds capacity {vehicle.capacity} at customer {node.id}")
                break

        if variant.backhaul:
            picked_up = False
            for node in nodes:
                if node.q_b > 0:
                    picked_up = True
                elif picked_up:
                    violations.append(f"route {r}: linehaul customer {node.id} visited after a backhaul")
                    break

        path = [0] + customers + ([0] if route.closed else [])
        travelled = 0.0
        for a, b in zip(path, path[1:]):
            travelled += distance(coords[a], coords[b])
        if variant.distance_limit and inst.dist_limit is not None and travelled > inst.dist_limit + tol:
            violations.append(f"route {r}: distance {travelled} exceeds limit {inst.dist_limit}")

        if variant.time_window:
            clock = 0.0
            previous = 0
            for node in nodes:
                arrival = clock + distance(coords[previous], coords[node.id])
                start = max(arrival, node.e)
                if start > node.l + tol:
                    violations.append(f"route {r}: customer {node.id} served at {start} after window closes at {node.l}")
                clock = start + node.s
                previous = node.id
            if route.closed and inst.depot_close is not None:
                back = clock + distance(coords[previous], coords[0])
                if back > inst.depot_close + tol:
                    violations.append(f"route {r}: returns at {back} after depot closes at {inst.depot_close}")
    return violations


def evaluate_cost(sol: Solution, inst: Instance) -> float:
    """Costo fijo de cada vehículo usado + costo unitario por distancia recorrida."""
    violations = check_feasibility(sol, inst)
    if violations:
        raise FeasibilityError(violations)
    coords = [(node.x, node.y) for node in inst.nodes]
    total = 0.0
    for route in sol.routes:
        vehicle = inst.fleet[route.vehicle_type]
        path = [0, *route.customers] + ([0] if route.closed else [])
        travelled = 0.0
        for a, b in zip(path, path[1:]):
            travelled += distance(coords[a], coords[b])
        total += vehicle.fixed_cost + vehicle.unit_cost * travelled
    return total


# ============ Formato de archivo ============


class RoutePayload(BaseModel):
    model_config = ConfigDict(extra="forbid")

    vehicle_type: int
    customers: list[int]
    closed: bool = True


class SolutionPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")

    objective: float
    routes: list[RoutePayload] = Field(default_factory=list)
    feasible: bool = True


def solution_to_dict(sol: Solution) -> dict:
    return {
        "objective": sol.objective,
        "routes": [
            {"vehicle_type": r.vehicle_type, "customers": list(r.customers), "closed": r.closed}
            for r in sol.routes
        ],
        "feasible": sol.feasible,
    }


def solution_from_dict(data: dict) -> Solution:
    try:
        payload = SolutionPayload.model_validate(data)
    except ValidationError as exc:
        raise DecodeError(f"invalid solution: {exc.errors()[0]['msg']}") from exc
    return Solution(
        routes=tuple(
            Route(vehicle_type=r.vehicle_type, customers=tuple(r.customers), closed=r.closed)
            for r in payload.routes
        ),
        objective=payload.objective,
        feasible=payload.feasible,
    )
