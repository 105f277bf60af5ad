"""Settings, logging, metrics and the error taxonomy, exposed lazily."""

from importlib import import_module

_EXPORTS = {
    "AppContext": "src.core.app_context",
    "app_context": "src.core.app_context",
    "setup_structured_logging": "src.core.logging_config",
    "get_logger": "src.core.logging_config",
    "set_run_id": "src.core.logging_config",
    "set_scene_id": "src.core.logging_config",
    "RefDinoError": "src.core.exceptions",
    "render_metrics": "src.core.metrics",
}

__all__ = sorted(_EXPORTS)


def __getattr__(name):
    if name not in _EXPORTS:
        raise AttributeError(name)
    attr = getattr(import_module(_EXPORTS[name]), name)
    globals()[name] = attr
    return attr
