import atexit
import logging
import os
import uuid
from typing import Any, Callable, Dict, List, Optional

from newrelic_telemetry_sdk import Event, EventBatch, EventClient, Harvester

import more_offline_rl.consts as consts
from more_offline_rl.error_handling_decorator import handle_errors

logger = logging.getLogger("more_offline_rl")

LICENSE_KEY_VARIABLES = ("NEW_RELIC_LICENSE_KEY", "NEW_RELIC_INSERT_KEY")


class TrainingMonitoring:
    # keeps every event of the run in memory; with remote=True it also ships them to New Relic
    # through the telemetry SDK (https://github.com/newrelic/newrelic-telemetry-sdk-python)
    def __init__(self):
        self.initialized = False
        self.remote = False
        self.application_name = "more-offline-rl"
        self.metadata: Dict[str, Any] = {}
        self.metadata_callback: Optional[Callable] = None
        self.run_id = str(uuid.uuid4())
        self.events: List[Event] = []

    @staticmethod
    def _resolve_license_key(license_key: Optional[str]) -> str:
        key = license_key
        for variable in LICENSE_KEY_VARIABLES:
            key = key or os.getenv(variable)
        if not isinstance(key, str):
            raise TypeError(f"a str license key is required for remote telemetry; set one of {LICENSE_KEY_VARIABLES}")
        return key

    @staticmethod
    def _resolve_host(event_client_host: Optional[str]) -> str:
        if event_client_host is not None and not isinstance(event_client_host, str):
            raise TypeError("event_client_host must be a str or None")
        return event_client_host or os.getenv("EVENT_CLIENT_HOST", EventClient.HOST)

    def start(
        self,
        application_name: str,
        license_key: Optional[str] = None,
        metadata: Optional[Dict[str, Any]] = None,
        event_client_host: Optional[str] = None,
        metadata_callback: Optional[Callable] = None,
        remote: bool = True,
    ):
        if self.initialized:
            return
        if metadata is not None and not isinstance(metadata, dict):
            raise TypeError("metadata must be a Dict[str, Any]")
        if remote:
            self._connect(self._resolve_license_key(license_key), self._resolve_host(event_client_host))
        self.application_name = application_name
        self.metadata = dict(metadata or {})
        self.metadata_callback = metadata_callback
        self.remote = remote
        self.initialized = True
        logger.info(f"Training monitor started for '{application_name}' (run {self.run_id}, remote={remote})")

    def _connect(self, license_key: str, host: str):
        self.event_client = EventClient(license_key, host=host)
        self.event_batch = EventBatch()
        # background thread flushing the batch; stopped at exit so queued events still go out
        self.event_harvester = Harvester(self.event_client, self.event_batch)
        self.event_harvester.start()
        atexit.register(self.event_harvester.stop)

    def record_event(
        self,
        event_dict: dict,
        table: str = consts.TrainingStepEventName,
    ):
        event_dict["applicationName"] = self.application_name
        event_dict["run_id"] = self.run_id
        event_dict.update(self.metadata)
        event = Event(table, event_dict)
        if self.metadata_callback:
            try:
                metadata = self.metadata_callback(event)
                if metadata:
                    event.update(metadata)
            except Exception as ex:
                logger.warning(f"Failed to run metadata callback: {ex}")
        self.events.append(event)
        if self.remote:
            self.event_batch.record(event)

    def events_named(self, table: str) -> List[Event]:
        return [event for event in self.events if event.get("eventType") == table]

    def reset(self):
        if self.remote:
            self.event_harvester.stop()
        self.__init__()


monitor = TrainingMonitoring()


@handle_errors
def record_event(event_dict: Optional[dict], table: str = consts.TrainingStepEventName):
    """Record through the singleton, only once it has been initialized."""
    if event_dict is None or not monitor.initialized:
        return
    monitor.record_event(event_dict, table)
