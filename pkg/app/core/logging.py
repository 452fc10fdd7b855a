import json
import logging
import sys

from app.core.config import Settings, get_settings

_configured = False


def configure_logging(settings: Settings | None = None) -> None:
    """Instala un único handler en stderr. Llamadas repetidas no duplican handlers."""
    global _configured
    settings = settings or get_settings()
    root = logging.getLogger("app")
    root.setLevel(settings.LOG_LEVEL.upper())
    if _configured:
        return
    handler = logging.StreamHandler(sys.stderr)
    fmt = "%(message)s" if settings.LOG_JSON else "%(levelname)s %(name)s: %(message)s"
    handler.setFormatter(logging.Formatter(fmt))
    root.addHandler(handler)
    root.propagate = False
    _configured = True


def log_structured(logger: logging.Logger, level: str, event: str, **kwargs):
    """Helper para logging estructurado con contexto completo"""
    log_data = {
        "event": event,
        "service": logger.name.rsplit(".", 1)[-1],
        **kwargs,
    }
    getattr(logger, level)(json.dumps(log_data, default=str, sort_keys=True))
