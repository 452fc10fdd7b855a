import os
from pydantic_settings import BaseSettings
from typing import List, Optional
from functools import lru_cache


class Settings(BaseSettings):
    PROJECT_NAME: str = "CRA Few-Shot"
    API_V1_STR: str = "/api/v1"

    # Semilla global de respaldo (flag --seed y config tienen prioridad)
    SEED: Optional[int] = None

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_JSON: bool = True

    # Evaluación paralela por tarea
    WORKERS: Optional[int] = None

    # Superficie HTTP
    CHECKPOINT: Optional[str] = None
    REFERENCE_POOL: Optional[str] = None
    NORM_STATS: Optional[str] = None  # por defecto norm_stats.json junto al checkpoint
    ALLOWED_ORIGINS: List[str] = ["http://localhost:3000"]

    class Config:
        env_file = ".env"
        env_prefix = "CRA_"
        case_sensitive = True
        extra = "ignore"

    def resolve_workers(self) -> int:
        return self.WORKERS or os.cpu_count() or 1


@lru_cache()
def get_settings():
    return Settings()
