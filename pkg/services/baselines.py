"""Solvers de referencia: oráculo exhaustivo, heurística greedy y muestreo best-of-n."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from services import env
from services.errors import FeasibilityError, SizeGuardError
from services.instance import Instance
from services.policy import VapPolicy, rollout, rollout_batch

logger = logging.getLogger(__name__)

ORACLE_MAX_CUSTOMERS = 7
ORACLE_MAX_FLEET = 4
# Nodos que la búsqueda con retroceso de la greedy puede visitar antes de aceptar la penalización
GREEDY_SEARCH_BUDGET = 50_000


@dataclass(frozen=True)
class OracleResult:
    best_solution: env.Solution
    best_cost: float
    nodes_explored: int


def greedy_order(state: env.EnvState, inst: Instance, mask: np.ndarray) -> list[int]:
    """
    Acciones legales en orden de preferencia de la heurística: vehículo más barato por
    unidad de capacidad, luego el cliente más cercano y el regreso al depósito al final.
    """
    n_types = inst.n_types
    if state.active_type is None:
        vehicles = np.flatnonzero(mask[1 : 1 + n_types])
        ranked = sorted(vehicles, key=lambda k: (inst.fixed_costs[k] / inst.capacities[k], -inst.capacities[k], k))
        return [int(k) + 1 for k in ranked]
    customers = np.flatnonzero(mask[1 + n_types :]) + 1
    # orden estable: empate al id más bajo
    ranked = customers[np.argsort(inst.dist[state.current_node, customers], kind="stable")]
    actions = [inst.customer_action(int(c)) for c in ranked]
    if mask[env.DEPOT_ACTION]:
        actions.append(env.DEPOT_ACTION)
    return actions


def _greedy_pass(inst: Instance) -> env.Trajectory:
    state = env.reset(inst)
    traj = env.Trajectory()
    while not state.done:
        mask = env.feasible_mask(state, inst)
        if not mask.any():
            state, outcome = env.apply_penalty(state, inst)
            traj.penalty = outcome.reward
            traj.infeasible = True
            break
        action = greedy_order(state, inst, mask)[0]
        state, outcome = env.step(state, action, inst)
        traj.actions.append(action)
        traj.rewards.append(outcome.reward)
    return traj


class _BudgetExhausted(Exception):
    pass


def feasible_completion(inst: Instance, budget: int = GREEDY_SEARCH_BUDGET) -> Optional[list[int]]:
    """
    Búsqueda en profundidad sobre las máscaras del entorno, hijos en orden greedy.
    Devuelve la primera secuencia que atiende a todos los clientes, o None si no existe
    (o si se agota el presupuesto de nodos).
    """
    canonical = not inst.variant.backhaul
    visited_nodes = 0

    def search(state: env.EnvState, actions: list[int], last_first: int) -> bool:
        nonlocal visited_nodes
        if state.done:
            return True
        visited_nodes += 1
        if visited_nodes > budget:
            raise _BudgetExhausted
        opening = state.active_type is not None and state.route_len == 0
        for action in greedy_order(state, inst, env.feasible_mask(state, inst)):
            first = last_first
            if opening:
                first = inst.action_customer(action)
                if canonical and first < last_first:
                    continue
            child, _ = env.step(state, action, inst)
            actions.append(action)
            if search(child, actions, first):
                return True
            actions.pop()
        return False

    actions: list[int] = []
    try:
        found = search(env.reset(inst), actions, 0)
    except _BudgetExhausted:
        logger.warning(f"[GREEDY] N={inst.n_customers}: presupuesto de {budget} nodos agotado")
        return None
    return actions if found else None


def greedy_trajectory(inst: Instance, budget: int = GREEDY_SEARCH_BUDGET) -> env.Trajectory:
    """
    Heurística constructiva: abrir el vehículo disponible más barato por unidad de
    capacidad y extender con el cliente factible más cercano hasta que no quepa ninguno.

    Si esa pasada se queda sin salida, se retrocede sobre las mismas preferencias; la
    penalización solo queda cuando la flota no alcanza (o se agota `budget`).
    """
    traj = _greedy_pass(inst)
    if not traj.infeasible:
        return traj
    actions = feasible_completion(inst, budget)
    if actions is None:
        return traj
    return env.replay(inst, actions)


def greedy_construct(inst: Instance, budget: int = GREEDY_SEARCH_BUDGET) -> env.Solution:
    return env.trajectory_solution(greedy_trajectory(inst, budget), inst)


def exhaustive_solve(
    inst: Instance,
    max_customers: int = ORACLE_MAX_CUSTOMERS,
    max_fleet: int = ORACLE_MAX_FLEET,
) -> OracleResult:
    """
    Óptimo exacto por búsqueda en profundidad sobre las máscaras del entorno,
    con ramificación y acotamiento sobre el costo acumulado.

    Cota inferior: cada cliente pendiente debe recibir un arco entrante, costeado
    al menor costo unitario de la flota.
    """
    if inst.n_customers > max_customers or inst.fleet_size > max_fleet:
        raise SizeGuardError(
            f"exhaustive oracle is limited to N<={max_customers} and fleet<={max_fleet} "
            f"(got N={inst.n_customers}, fleet={inst.fleet_size})"
        )

    dist = np.array(inst.dist)
    np.fill_diagonal(dist, np.inf)
    cheapest_entry = dist[:, 1:].min(axis=0) * float(inst.unit_costs.min())
    # Sin recogidas, el orden de las rutas es libre: se fija por primer cliente creciente
    canonical = not inst.variant.backhaul

    greedy = greedy_construct(inst)
    best_cost = greedy.objective if greedy.feasible else math.inf
    best_actions = env.solution_actions(greedy, inst) if greedy.feasible else None
    explored = 0

    def search(state: env.EnvState, cost: float, actions: list[int], last_first: int) -> None:
        nonlocal best_cost, best_actions, explored
        explored += 1
        if state.done:
            if cost < best_cost:
                best_cost, best_actions = cost, list(actions)
            return
        bound = cost + float(cheapest_entry[~state.visited[1:]].sum())
        if bound >= best_cost:
            return
        opening = state.active_type is not None and state.route_len == 0
        for action in np.flatnonzero(env.feasible_mask(state, inst)):
            action = int(action)
            first = last_first
            if opening:
                first = inst.action_customer(action)
                if canonical and first < last_first:
                    continue
            child, outcome = env.step(state, action, inst)
            actions.append(action)
            search(child, cost - outcome.reward, actions, first)
            actions.pop()

    search(env.reset(inst), 0.0, [], 0)
    if best_actions is None:
        raise FeasibilityError(["instance admits no feasible solution"])

    solution = env.decode_solution(env.replay(inst, best_actions), inst)
    logger.debug(f"[ORACLE] N={inst.n_customers}: costo {solution.objective:.6f}, {explored} nodos")
    return OracleResult(best_solution=solution, best_cost=solution.objective, nodes_explored=explored)


def random_solution(inst: Instance, seed: int = 0) -> env.Solution:
    return env.trajectory_solution(env.random_rollout(inst, np.random.default_rng(seed)), inst)


def sample_best(policy: VapPolicy, inst: Instance, n: int, seed: int = 0) -> env.Solution:
    """Mejor decodificación factible de n muestras; si todas son infactibles, la greedy."""
    if n < 1:
        raise ValueError("n must be >= 1")
    result = rollout_batch(policy, [inst], mode="sample", samples=n, seed=seed)
    best = None
    for traj in result.trajectories:
        if traj.infeasible:
            continue
        solution = env.decode_solution(traj, inst)
        if best is None or solution.objective < best.objective:
            best = solution
    return best if best is not None else greedy_construct(inst)


def model_greedy(policy: VapPolicy, inst: Instance) -> env.Solution:
    return env.trajectory_solution(rollout(policy, inst, mode="greedy"), inst)
