import logging
from typing import Any, Callable, Dict, Optional

from more_offline_rl.training_monitoring import monitor

logger = logging.getLogger("more_offline_rl")


def initialization(
    application_name: str,
    license_key: Optional[str] = None,
    metadata: Optional[Dict[str, Any]] = None,
    event_client_host: Optional[str] = None,
    metadata_callback: Optional[Callable] = None,
    remote: bool = True,
):
    """Start the training monitor; ``remote=False`` keeps events in-process only."""
    monitor.start(
        application_name,
        license_key,
        metadata,
        event_client_host,
        metadata_callback,
        remote,
    )
    return monitor
