"""Network components with lazy imports to avoid circular dependencies."""

from importlib import import_module

__all__ = [
    "Module",
    "Linear",
    "MultiHeadAttention",
    "Frontend",
    "QueryDecoder",
    "MaskDecoder",
    "TemporalEnhancer",
    "ReferDino",
]

_MODULE_MAP = {
    "Module": "layers",
    "Linear": "layers",
    "MultiHeadAttention": "attention",
    "Frontend": "frontend",
    "QueryDecoder": "query_decoder",
    "MaskDecoder": "mask_decoder",
    "TemporalEnhancer": "temporal_enhancer",
    "ReferDino": "referdino",
}


def __getattr__(name):
    if name in _MODULE_MAP:
        module = import_module(f"src.models.{_MODULE_MAP[name]}")
        return getattr(module, name)
    raise AttributeError(name)


def __dir__():
    return sorted(__all__)
