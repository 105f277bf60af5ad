"""Services package: matching, losses, training, evaluation and export."""

from importlib import import_module

__all__ = ["hungarian", "Trainer", "evaluate", "bench_pruning", "run_checks"]

_MODULE_MAP = {
    "hungarian": "matcher",
    "Trainer": "trainer",
    "evaluate": "evaluator",
    "bench_pruning": "pruning_bench",
    "run_checks": "self_checks",
}


def __getattr__(name):
    if name in _MODULE_MAP:
        module = import_module(f"src.services.{_MODULE_MAP[name]}")
        return getattr(module, name)
    raise AttributeError(name)
