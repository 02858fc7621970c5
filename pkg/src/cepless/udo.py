"""Host-pipeline interface to user-defined operators.

A CEP engine embeds this to swap a built-in operator for a managed one:
request an operator by registry name, send events to the address that comes
back, and register listeners for its results.  Transport details (batching
clients, queue wiring, the manager control protocol) stay behind this
module.

Event flow per operator: one send client buffering toward the input queue
and one receive client polling the output queue.  Listener callbacks run on
that operator's receive thread, in registration order, with each batch in
FIFO order; a callback exception leaves the batch unacknowledged, so it is
delivered again (at-least-once locally, duplicates possible after a
failure).
"""
from __future__ import annotations

import itertools
import logging
import queue
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional, Union

from . import contract
from .client import BatchingConfig, QueueClient, QueueConnection
from .events import Event, QueuePair, decode_event, encode_event
from .manager import ControlClient, NodeManager

__all__ = [
    "OperatorAddress",
    "RequestHandle",
    "Listener",
    "UdoInterface",
    "StaleAddress",
    "DeploymentError",
]

log = logging.getLogger(__name__)


class StaleAddress(Exception):
    """The address does not name a live operator of this interface."""


class DeploymentError(Exception):
    pass


@dataclass(frozen=True)
class OperatorAddress:
    """Where a deployed operator eats and emits."""

    instance_id: str
    queues: QueuePair
    queue_server: str

    @classmethod
    def from_doc(cls, doc: dict, queue_server: str) -> "OperatorAddress":
        return cls(
            instance_id=doc["instance_id"],
            queues=QueuePair(input=doc["queues"]["in"], output=doc["queues"]["out"]),
            queue_server=queue_server,
        )


class RequestHandle:
    """Future for an asynchronous operator request."""

    def __init__(self) -> None:
        self._done = threading.Event()
        self._address: Optional[OperatorAddress] = None
        self._error: Optional[Exception] = None

    def _resolve(self, address: Optional[OperatorAddress], error: Optional[Exception]) -> None:
        self._address = address
        self._error = error
        self._done.set()

    def done(self) -> bool:
        return self._done.is_set()

    def result(self, timeout: Optional[float] = None) -> OperatorAddress:
        if not self._done.wait(timeout):
            raise TimeoutError("operator request still pending")
        if self._error is not None:
            raise DeploymentError(str(self._error)) from self._error
        assert self._address is not None
        return self._address


@dataclass(frozen=True)
class Listener:
    id: int
    address: OperatorAddress


class _OperatorRuntime:
    """Clients and listeners for one live operator."""

    def __init__(self, address: OperatorAddress, config: BatchingConfig):
        self.address = address
        queue_addr = contract.parse_address(address.queue_server, contract.DEFAULT_QUEUE_PORT)
        self.send_client = QueueClient(
            queue_addr,
            send_queue=address.queues.input,
            config=config,
            name=f"{address.instance_id}-send",
        ).start()
        self.recv_client = QueueClient(
            queue_addr,
            recv_queue=address.queues.output,
            on_batch=self._dispatch,
            config=config,
            name=f"{address.instance_id}-recv",
        ).start()
        self._listeners: list[tuple[int, str, Callable]] = []
        self._listeners_lock = threading.Lock()
        self.stale = False

    def add(self, listener_id: int, kind: str, callback: Callable) -> None:
        with self._listeners_lock:
            self._listeners.append((listener_id, kind, callback))

    def remove(self, listener_id: int) -> bool:
        with self._listeners_lock:
            before = len(self._listeners)
            self._listeners = [item for item in self._listeners if item[0] != listener_id]
            return len(self._listeners) != before

    def _dispatch(self, payloads: list[bytes]) -> None:
        with self._listeners_lock:
            listeners = list(self._listeners)
        if not listeners:
            return
        events: Optional[list[Event]] = None
        for _, kind, callback in listeners:
            if kind == "batch":
                callback(payloads)
            else:
                if events is None:
                    events = [decode_event(payload) for payload in payloads]
                for event in events:
                    callback(event)

    def shutdown(self, timeout: float = 10.0) -> None:
        self.stale = True
        for client in (self.send_client, self.recv_client):
            try:
                client.stop(timeout=timeout)
            except Exception as exc:  # noqa: BLE001 - teardown keeps going
                log.warning("client stop for %s: %s", self.address.instance_id, exc)


class UdoInterface:
    """Requests operators from a manager and streams events to them.

    ``control`` is either a ControlClient (TCP control endpoint), a
    NodeManager used in-process, or a ``(host, port)`` tuple to connect to.
    ``close()`` detaches local clients without removing deployed operators;
    ``remove_operator`` is the explicit teardown.
    """

    def __init__(
        self,
        control: Union[ControlClient, NodeManager, tuple],
        *,
        batching: BatchingConfig = BatchingConfig(),
        request_timeout: float = 60.0,
    ):
        if isinstance(control, tuple):
            control = ControlClient(control)
            self._owns_control = True
        else:
            self._owns_control = False
        self._control = _as_control(control)
        self.batching = batching
        self.request_timeout = request_timeout
        self.queue_server: str = self._control.status()["queue_server"]

        self._runtimes: dict[str, _OperatorRuntime] = {}
        self._listener_ids = itertools.count(1)
        self._listener_homes: dict[int, str] = {}
        self._lock = threading.RLock()
        self._requests: "queue.Queue[Optional[tuple]]" = queue.Queue()
        self._dispatcher: Optional[threading.Thread] = None
        self._closed = False

    # -- operator lifecycle -------------------------------------------------

    def request_operator(
        self,
        name: str,
        version: Optional[str] = None,
        on_ready: Optional[Callable[[OperatorAddress], None]] = None,
    ) -> RequestHandle:
        """Deploy asynchronously; the handle resolves to the address.

        ``on_ready`` (if given) runs on the interface's dispatch thread.
        """
        self._ensure_open()
        handle = RequestHandle()
        with self._lock:
            if self._dispatcher is None:
                self._dispatcher = threading.Thread(
                    target=self._dispatch_requests, name="udo-requests", daemon=True
                )
                self._dispatcher.start()
        self._requests.put((name, version, on_ready, handle))
        return handle

    def deploy_operator(self, name: str, version: Optional[str] = None) -> OperatorAddress:
        """Synchronous convenience around request_operator."""
        return self.request_operator(name, version).result(self.request_timeout)

    def _dispatch_requests(self) -> None:
        while True:
            item = self._requests.get()
            if item is None:
                return
            name, version, on_ready, handle = item
            address = None
            try:
                doc = self._control.deploy(name, version)
                address = OperatorAddress.from_doc(doc, self.queue_server)
                with self._lock:
                    self._runtimes[address.instance_id] = _OperatorRuntime(
                        address, self.batching
                    )
            except Exception as exc:  # noqa: BLE001 - surfaced via the handle
                if address is not None:
                    try:
                        self._control.remove(address.instance_id)
                    except Exception:
                        log.warning("orphan cleanup of %s failed", address.instance_id)
                handle._resolve(None, exc)
                continue
            handle._resolve(address, None)
            if on_ready is not None:
                try:
                    on_ready(address)
                except Exception:
                    log.exception("on_ready callback failed for %s", address.instance_id)

    def update_operator(self, address: OperatorAddress, version: str) -> dict:
        self._runtime(address)  # validates liveness
        return self._control.update(address.instance_id, version)

    def remove_operator(self, address: OperatorAddress, timeout: float = 30.0) -> None:
        """Stop sending, let in-flight events drain end to end, then remove.

        The sequence guarantees no buffered or queued event is dropped: the
        send client flushes on stop, then both operator queues must empty
        (the output queue only empties after every delivered batch was
        acknowledged, i.e. after listeners ran), and only then is the
        instance torn down.
        """
        runtime = self._runtime(address)
        runtime.stale = True
        runtime.send_client.stop(timeout=timeout)
        conn = QueueConnection(
            contract.parse_address(address.queue_server, contract.DEFAULT_QUEUE_PORT)
        )
        try:
            deadline = time.monotonic() + timeout
            for queue_name in (address.queues.input, address.queues.output):
                while conn.length(queue_name) > 0:
                    if time.monotonic() > deadline:
                        raise TimeoutError(
                            f"{queue_name} still has {conn.length(queue_name)} events"
                        )
                    time.sleep(0.01)
        finally:
            conn.close()
        runtime.recv_client.stop(timeout=timeout)
        self._control.remove(address.instance_id)
        with self._lock:
            self._runtimes.pop(address.instance_id, None)

    # -- event flow -----------------------------------------------------------

    def send_event(self, address: OperatorAddress, event: Event) -> None:
        self.send_payload(address, encode_event(event))

    def send_payload(self, address: OperatorAddress, payload: bytes) -> None:
        self._runtime(address).send_client.send(payload)

    def add_listener(
        self, address: OperatorAddress, on_event: Callable[[Event], None]
    ) -> Listener:
        return self._add(address, "event", on_event)

    def add_batch_listener(
        self, address: OperatorAddress, on_payloads: Callable[[list], None]
    ) -> Listener:
        """Raw-payload variant for consumers that do their own decoding."""
        return self._add(address, "batch", on_payloads)

    def _add(self, address: OperatorAddress, kind: str, callback: Callable) -> Listener:
        runtime = self._runtime(address)
        listener_id = next(self._listener_ids)
        runtime.add(listener_id, kind, callback)
        with self._lock:
            self._listener_homes[listener_id] = address.instance_id
        return Listener(id=listener_id, address=address)

    def remove_listener(self, listener: Listener) -> None:
        with self._lock:
            home = self._listener_homes.pop(listener.id, None)
            runtime = self._runtimes.get(home) if home else None
        if runtime is None or not runtime.remove(listener.id):
            raise ValueError(f"unknown listener {listener.id}")

    # -- misc -----------------------------------------------------------------

    def addresses(self) -> list[OperatorAddress]:
        with self._lock:
            return [rt.address for rt in self._runtimes.values()]

    def _runtime(self, address: OperatorAddress) -> _OperatorRuntime:
        with self._lock:
            runtime = self._runtimes.get(address.instance_id)
        if runtime is None or runtime.stale:
            raise StaleAddress(
                f"{address.instance_id} is not a live operator of this interface"
            )
        return runtime

    def _ensure_open(self) -> None:
        if self._closed:
            raise RuntimeError("interface closed")

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        if self._dispatcher is not None:
            self._requests.put(None)
            self._dispatcher.join(timeout=5)
        with self._lock:
            runtimes = list(self._runtimes.values())
            self._runtimes.clear()
        for runtime in runtimes:
            runtime.shutdown()
        if self._owns_control:
            self._control.close()


class _LocalControl:
    """Adapter giving an in-process NodeManager the control-client surface."""

    def __init__(self, manager: NodeManager):
        self._manager = manager

    def deploy(self, name: str, version: Optional[str] = None) -> dict:
        return self._manager.deploy(name, version).to_doc()

    def update(self, instance_id: str, version: str) -> dict:
        return self._manager.update(instance_id, version).to_doc()

    def remove(self, instance_id: str) -> None:
        self._manager.remove(instance_id)

    def status(self, instance_id: Optional[str] = None) -> dict:
        if instance_id is not None:
            return self._manager.handle(instance_id).to_doc()
        return self._manager.status()

    def close(self) -> None:
        pass


def _as_control(obj) -> object:
    if isinstance(obj, NodeManager):
        return _LocalControl(obj)
    if isinstance(obj, ControlClient):
        return obj
    raise TypeError(f"unsupported control object {type(obj).__name__}")
