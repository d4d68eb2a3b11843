"""Configuración persistente del servidor y directorio de datos."""

import json
import logging
import os
from pathlib import Path

from services.baselines import ORACLE_MAX_CUSTOMERS

logger = logging.getLogger(__name__)

DATA_DIR_ENV = "HFVRP_DATA_DIR"
SETTINGS_FILENAME = "_server_settings.json"

# Configuración por defecto
DEFAULT_SETTINGS = {
    "checkpoint": None,
    "samples": 128,
    "oracle_max_customers": ORACLE_MAX_CUSTOMERS,
}


def data_dir() -> Path:
    """Directorio de datos: $HFVRP_DATA_DIR o ./data."""
    return Path(os.environ.get(DATA_DIR_ENV, "data"))


def settings_file() -> Path:
    return data_dir() / SETTINGS_FILENAME


def get_settings() -> dict:
    """Obtener configuración del servidor."""
    path = settings_file()
    if path.exists():
        try:
            with open(path, "r") as f:
                settings = json.load(f)
                # Asegurar que tiene todos los campos
                for key, value in DEFAULT_SETTINGS.items():
                    if key not in settings:
                        settings[key] = value
                return settings
        except Exception:
            pass
    return DEFAULT_SETTINGS.copy()


def save_settings(settings: dict) -> dict:
    """Guardar configuración del servidor."""
    data_dir().mkdir(parents=True, exist_ok=True)

    checkpoint = settings.get("checkpoint") or None
    # Validar y normalizar
    normalized = {
        "checkpoint": str(checkpoint) if checkpoint else None,
        "samples": max(1, min(4096, int(settings.get("samples", DEFAULT_SETTINGS["samples"])))),
        "oracle_max_customers": max(
            1, min(ORACLE_MAX_CUSTOMERS, int(settings.get("oracle_max_customers", ORACLE_MAX_CUSTOMERS)))
        ),
    }

    with open(settings_file(), "w") as f:
        json.dump(normalized, f, indent=2)
    logger.info(f"[SETTINGS] checkpoint={normalized['checkpoint']} samples={normalized['samples']}")

    return normalized
