import logging
from functools import wraps
from typing import Any, Callable, Optional

logger = logging.getLogger("more_offline_rl")


def handle_errors(func: Optional[Callable] = None, *, default: Any = None):
    """Log and swallow any exception raised by the wrapped telemetry helper.

    Usable bare (``@handle_errors``) or with a fallback value
    (``@handle_errors(default={})``). A failed event must never abort training.
    """

    def decorate(inner):
        @wraps(inner)
        def wrapper(*args, **kwargs):
            try:
                return inner(*args, **kwargs)
            except Exception as err:
                logger.error(f"An error occurred in {inner.__name__}: {err}")
                return default

        return wrapper

    if func is not None:
        return decorate(func)
    return decorate


def report_run_errors(phase: str):
    """Record a run-error event for any exception escaping ``phase``, then re-raise."""

    def decorate(inner):
        @wraps(inner)
        def wrapper(*args, **kwargs):
            try:
                return inner(*args, **kwargs)
            except Exception as err:
                # imported lazily: the monitor imports this module
                from more_offline_rl.build_events import build_run_error_event
                from more_offline_rl.training_monitoring import record_event
                import more_offline_rl.consts as consts

                logger.error(f"{phase} failed: {err}")
                record_event(build_run_error_event(phase, err), consts.RunErrorEventName)
                raise

        return wrapper

    return decorate
