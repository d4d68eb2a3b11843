import logging
from contextlib import asynccontextmanager

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from routers import instances, settings, solve
from services.settings import data_dir, get_settings
from version import __version__, __app_name__

logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Gestión del ciclo de vida de la aplicación."""
    data_dir().mkdir(parents=True, exist_ok=True)
    current = get_settings()
    logger.info(f"[STARTUP] Directorio de datos: {data_dir().resolve()}")
    if current["checkpoint"]:
        logger.info(f"[STARTUP] Checkpoint por defecto: {current['checkpoint']}")
    else:
        logger.info("[STARTUP] Sin checkpoint: solo métodos greedy, random y oracle")
    yield
    # Al cerrar: nada por ahora


app = FastAPI(
    title=__app_name__,
    description="API para generar y resolver problemas de ruteo con flota heterogénea",
    version=__version__,
    lifespan=lifespan,
)

# Configurar CORS - permitir todos los orígenes
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=False,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Incluir routers
app.include_router(instances.router)
app.include_router(solve.router)
app.include_router(settings.router)


@app.get("/")
async def root():
    return {
        "message": __app_name__,
        "version": __version__,
        "docs": "/docs",
        "endpoints": {
            "generate": "/api/instances/generate",
            "validate": "/api/instances/validate",
            "solve": "/api/solve",
            "check": "/api/solve/check",
            "settings": "/api/settings",
        },
    }
