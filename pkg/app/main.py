import logging

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import ValidationError

from app.core.config import get_settings
from app.core.errors import CraError, CraUsageError
from app.core.logging import configure_logging, log_structured
from app.routers import predict

settings = get_settings()
configure_logging(settings)
logger = logging.getLogger(__name__)

app = FastAPI(
    title=settings.PROJECT_NAME,
    openapi_url=f"{settings.API_V1_STR}/openapi.json",
    docs_url="/docs",
    redoc_url="/redoc",
)

# CORS Configuration
app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.ALLOWED_ORIGINS,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


# Errores de dominio -> 422, de uso/E/S -> 400
@app.exception_handler(CraError)
async def cra_error_handler(request: Request, exc: CraError):
    status = 400 if isinstance(exc, CraUsageError) else 422
    log_structured(logger, "warning", "http.error", path=request.url.path, error=type(exc).__name__, status=status)
    return JSONResponse(status_code=status, content={"detail": exc.message, "error": type(exc).__name__})


@app.exception_handler(ValidationError)
async def validation_error_handler(request: Request, exc: ValidationError):
    return JSONResponse(
        status_code=422,
        content={"detail": exc.errors(include_url=False, include_context=False, include_input=False)},
    )


# Routers
app.include_router(predict.router, tags=["predict"])


@app.get("/")
async def root():
    return {"message": "CRA few-shot scoring API", "status": "running"}
