"""Router para la configuración del servidor."""

from typing import Optional

from fastapi import APIRouter, HTTPException
from pydantic import BaseModel

from services.settings import DEFAULT_SETTINGS, get_settings, save_settings

router = APIRouter(prefix="/api/settings", tags=["settings"])


class SettingsRequest(BaseModel):
    checkpoint: Optional[str] = None
    samples: int = DEFAULT_SETTINGS["samples"]
    oracle_max_customers: int = DEFAULT_SETTINGS["oracle_max_customers"]


@router.get("")
async def read_settings():
    """Obtener configuración del servidor."""
    try:
        return get_settings()
    except Exception as e:
        raise HTTPException(status_code=500, detail=str(e))


@router.post("")
async def update_settings(request: SettingsRequest):
    """Actualizar configuración del servidor."""
    try:
        settings = save_settings(request.model_dump())
        return {
            "success": True,
            "settings": settings,
        }
    except Exception as e:
        raise HTTPException(status_code=500, detail=str(e))
