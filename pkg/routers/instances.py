"""Router para generación y validación de instancias."""

from typing import Literal

from fastapi import APIRouter, Body, HTTPException
from pydantic import BaseModel

from services.instance import GeneratorConfig, generate_instance, instance_from_dict, instance_to_dict, validate_instance

router = APIRouter(prefix="/api/instances", tags=["instances"])


class GenerateRequest(BaseModel):
    n_customers: int = 10
    fleet_size: int = 3
    n_vehicle_types: int = 2
    variant: str = "cvrp"
    seed: int = 0
    fleet_mode: Literal["hf", "hc"] = "hf"


@router.post("/generate")
async def generate(request: GenerateRequest):
    """Generar una instancia sintética reproducible."""
    try:
        inst = generate_instance(GeneratorConfig(**request.model_dump()))
        return {
            "variant": inst.variant.name,
            "instance": instance_to_dict(inst),
        }
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Error al generar la instancia: {str(e)}")


@router.post("/validate")
async def validate(payload: dict = Body(...)):
    """Comprobar los invariantes de una instancia."""
    try:
        inst = instance_from_dict(payload)
        violations = validate_instance(inst)
        return {
            "valid": not violations,
            "variant": inst.variant.name,
            "violations": violations,
        }
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        raise HTTPException(status_code=500, detail=str(e))
