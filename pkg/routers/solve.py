"""Router para resolver instancias y verificar soluciones."""

import time
from pathlib import Path
from typing import Literal, Optional

from fastapi import APIRouter, HTTPException
from pydantic import BaseModel

from services.baselines import exhaustive_solve
from services.benchmark import MODEL_METHODS, solve_instance
from services.checkpoint import load_policy
from services.env import check_feasibility, evaluate_cost, solution_from_dict, solution_to_dict
from services.errors import CheckpointError, SizeGuardError
from services.instance import instance_from_dict, validate_instance
from services.policy import VapPolicy
from services.settings import get_settings

router = APIRouter(prefix="/api/solve", tags=["solve"])

# Modelos cargados, por ruta y fecha de modificación del checkpoint
_policies: dict[tuple[str, float], VapPolicy] = {}


class SolveRequest(BaseModel):
    instance: dict
    method: Literal["greedy", "random", "oracle", "sample", "model-greedy"] = "greedy"
    samples: Optional[int] = None
    seed: int = 0


class CheckRequest(BaseModel):
    instance: dict
    solution: dict


def _policy(checkpoint: Optional[str]) -> VapPolicy:
    if not checkpoint:
        raise CheckpointError("no checkpoint configured (POST /api/settings)")
    path = Path(checkpoint)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    key = (str(path.resolve()), path.stat().st_mtime)
    if key not in _policies:
        _policies.clear()
        _policies[key] = load_policy(path)
    return _policies[key]


@router.post("")
def solve(request: SolveRequest):
    """Resolver una instancia con el método pedido."""
    try:
        inst = instance_from_dict(request.instance)
        violations = validate_instance(inst)
        if violations:
            raise HTTPException(status_code=400, detail={"violations": violations})

        settings = get_settings()
        policy = _policy(settings["checkpoint"]) if request.method in MODEL_METHODS else None
        samples = request.samples or settings["samples"]

        started = time.perf_counter()
        if request.method == "oracle":
            solution = exhaustive_solve(inst, max_customers=settings["oracle_max_customers"]).best_solution
        else:
            solution = solve_instance(inst, request.method, policy=policy, samples=samples, seed=request.seed)
        return {
            **solution_to_dict(solution),
            "variant": inst.variant.name,
            "method": request.method,
            "time_s": time.perf_counter() - started,
        }
    except HTTPException:
        raise
    except (ValueError, SizeGuardError, CheckpointError) as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Error al resolver: {str(e)}")


@router.post("/check")
def check(request: CheckRequest):
    """Verificar una solución contra la instancia y devolver su costo si es factible."""
    try:
        inst = instance_from_dict(request.instance)
        solution = solution_from_dict(request.solution)
        violations = check_feasibility(solution, inst)
        return {
            "feasible": not violations,
            "violations": violations,
            "objective": None if violations else evaluate_cost(solution, inst),
        }
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        raise HTTPException(status_code=500, detail=str(e))
