"""Node manager: deploys operator workers and keeps them alive.

Each deployed operator instance gets three queues (in/out/ctl), a worker
process spawned from its registry package, and a supervisor watching it.
The control queue carries a four-message handshake (ready, activate, drain,
drained) that makes deployment explicit and hot updates lossless:

  deploy   spawn -> worker posts ready -> manager posts activate
  update   spawn new generation (own ctl queue) -> wait ready ->
           drain old worker -> old finishes its batch, posts drained,
           exits 0 -> activate new worker on the same queues
  crash    supervisor respawns on the same queues; repeated crashes
           (limit within a window) mark the instance failed

Because exactly one worker generation is consuming between drained and
activate, and workers trim only what they processed, an update drops or
duplicates nothing.  If the new worker never reports ready the update rolls
back: the old worker was not told to drain yet, so it keeps running
untouched.

A small TCP control server exposes deploy/update/remove/status with the same
wire framing as the queue server; documents travel as canonical JSON.
"""
from __future__ import annotations

import argparse
import enum
import logging
import os
import secrets
import signal
import socket
import subprocess
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import contract
from .canonical import canonical_bytes, parse_canonical
from .client import ControlLog, QueueConnection, ServerError
from .events import QueuePair
from .registry import NotFound, OperatorDescriptor, Registry, RegistryError
from .wire import OK_REPLY, ProtocolError, RequestParser, encode_array, encode_error

__all__ = [
    "NodeManager",
    "ControlServer",
    "ControlClient",
    "OperatorState",
    "OperatorHandle",
    "UpdateReport",
    "ManagerError",
    "UnknownInstance",
    "DeployError",
    "UpdateError",
    "ProcessBackend",
    "main",
]

log = logging.getLogger(__name__)


class ManagerError(Exception):
    pass


class UnknownInstance(ManagerError):
    pass


class DeployError(ManagerError):
    pass


class UpdateError(ManagerError):
    pass


class OperatorState(enum.Enum):
    STARTING = "starting"
    RUNNING = "running"
    UPDATING = "updating"
    STOPPED = "stopped"
    FAILED = "failed"


class WorkerProcess:
    """Handle to one spawned worker."""

    def __init__(self, popen: subprocess.Popen, log_path: Path):
        self._popen = popen
        self.log_path = log_path

    @property
    def pid(self) -> int:
        return self._popen.pid

    def poll(self) -> Optional[int]:
        return self._popen.poll()

    def wait(self, timeout: Optional[float] = None) -> Optional[int]:
        try:
            return self._popen.wait(timeout)
        except subprocess.TimeoutExpired:
            return None

    def terminate(self) -> None:
        if self._popen.poll() is None:
            self._popen.terminate()

    def kill(self) -> None:
        if self._popen.poll() is None:
            self._popen.kill()

    def log_tail(self, limit: int = 2000) -> str:
        try:
            data = self.log_path.read_bytes()
        except OSError:
            return ""
        return data[-limit:].decode("utf-8", "replace")


class ProcessBackend:
    """Spawns worker processes with stdout/stderr captured to files."""

    def __init__(self, log_dir: Optional[Path] = None):
        import tempfile

        self.log_dir = Path(log_dir) if log_dir else Path(tempfile.mkdtemp(prefix="cepless-logs-"))
        self.log_dir.mkdir(parents=True, exist_ok=True)

    def start(self, command: tuple[str, ...], cwd: Path, env: dict, tag: str) -> WorkerProcess:
        log_path = self.log_dir / f"{tag}.log"
        with open(log_path, "ab") as sink:
            popen = subprocess.Popen(
                list(command),
                cwd=str(cwd),
                env=env,
                stdin=subprocess.DEVNULL,
                stdout=sink,
                stderr=subprocess.STDOUT,
                start_new_session=True,
            )
        return WorkerProcess(popen, log_path)


@dataclass
class OperatorHandle:
    """Mutable record of one operator instance."""

    instance_id: str
    descriptor: OperatorDescriptor
    queues: QueuePair
    ctl_queue: str
    package_dir: Path
    state: OperatorState
    process: Optional[WorkerProcess] = None
    generation: int = 1
    ctl_offset: int = 0
    restarts: int = 0
    crash_times: list = field(default_factory=list)
    started_at: float = field(default_factory=time.time)

    def to_doc(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "name": self.descriptor.name,
            "version": self.descriptor.version,
            "state": self.state.value,
            "pid": self.process.pid if self.process else None,
            "generation": self.generation,
            "restarts": self.restarts,
            "queues": {
                "in": self.queues.input,
                "out": self.queues.output,
                "ctl": self.ctl_queue,
            },
            "started_at": self.started_at,
        }


@dataclass(frozen=True)
class UpdateReport:
    instance_id: str
    old_version: str
    new_version: str
    update_duration_ms: float
    events_in_flight: int
    old_worker_exit: Optional[int]
    forced_kill: bool

    def to_doc(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "old_version": self.old_version,
            "new_version": self.new_version,
            "update_duration_ms": self.update_duration_ms,
            "events_in_flight": self.events_in_flight,
            "old_worker_exit": self.old_worker_exit,
            "forced_kill": self.forced_kill,
        }


class NodeManager:
    def __init__(
        self,
        registry: Registry,
        queue_addr: tuple[str, int],
        *,
        backend: Optional[ProcessBackend] = None,
        worker_env: Optional[dict] = None,
        batch_size: int = 1024,
        backoff_ns: int = 100_000,
        ready_timeout: float = 10.0,
        drain_timeout: float = 5.0,
        restart_limit: int = 3,
        restart_window: float = 10.0,
        supervise_interval: float = 0.1,
    ):
        self.registry = registry
        self.queue_addr = queue_addr
        self.backend = backend or ProcessBackend()
        self.worker_env = dict(worker_env) if worker_env else {}
        self.batch_size = batch_size
        self.backoff_ns = backoff_ns
        self.ready_timeout = ready_timeout
        self.drain_timeout = drain_timeout
        self.restart_limit = restart_limit
        self.restart_window = restart_window
        self.supervise_interval = supervise_interval

        self._handles: dict[str, OperatorHandle] = {}
        self._instance_locks: dict[str, threading.Lock] = {}
        self._map_lock = threading.Lock()
        self._stop = threading.Event()
        self._supervisor: Optional[threading.Thread] = None

    # -- plumbing ----------------------------------------------------------

    def _connect(self) -> QueueConnection:
        conn = QueueConnection(self.queue_addr, timeout=5.0)
        conn.connect()
        return conn

    def _make_env(self, queues: QueuePair, ctl_queue: str) -> dict:
        env = dict(os.environ)
        env.update(self.worker_env)
        env[contract.ENV_QUEUE_ADDR] = contract.format_address(self.queue_addr)
        env[contract.ENV_IN_QUEUE] = queues.input
        env[contract.ENV_OUT_QUEUE] = queues.output
        env[contract.ENV_CTL_QUEUE] = ctl_queue
        env[contract.ENV_BATCH_SIZE] = str(self.batch_size)
        env[contract.ENV_BACKOFF_NS] = str(self.backoff_ns)
        return env

    def _wait_ctl(
        self,
        conn: QueueConnection,
        log_cursor: ControlLog,
        wanted: bytes,
        timeout: float,
        process: Optional[WorkerProcess],
    ) -> None:
        """Poll a control queue until ``wanted`` appears.

        Raises DeployError if the watched process exits first or the timeout
        passes; the cursor is left just past everything read.
        """
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            for message in log_cursor.poll():
                if message == wanted:
                    return
            if process is not None:
                code = process.poll()
                if code is not None:
                    raise DeployError(
                        f"worker exited with code {code} before "
                        f"{wanted.decode()}: {process.log_tail()}"
                    )
            # Tight poll: this wait sits on the hand-over critical path during
            # updates, where every interval is visible as output silence.
            time.sleep(0.0005)
        raise DeployError(f"timed out after {timeout}s waiting for {wanted.decode()}")

    def _lock_for(self, instance_id: str) -> threading.Lock:
        with self._map_lock:
            if instance_id not in self._instance_locks:
                self._instance_locks[instance_id] = threading.Lock()
            return self._instance_locks[instance_id]

    def _new_instance_id(self, name: str) -> str:
        with self._map_lock:
            while True:
                candidate = f"{name}-{secrets.token_hex(3)}"
                if candidate not in self._handles:
                    return candidate

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> "NodeManager":
        if self._supervisor is not None:
            raise RuntimeError("manager already started")
        self._supervisor = threading.Thread(
            target=self._supervise_loop, name="nm-supervisor", daemon=True
        )
        self._supervisor.start()
        return self

    def close(self) -> None:
        self._stop.set()
        if self._supervisor is not None:
            self._supervisor.join(timeout=5)
        for handle in self.handles():
            if handle.state in (OperatorState.RUNNING, OperatorState.UPDATING,
                                OperatorState.STARTING):
                try:
                    self.remove(handle.instance_id)
                except ManagerError:
                    if handle.process is not None:
                        handle.process.kill()

    def handles(self) -> list[OperatorHandle]:
        with self._map_lock:
            return sorted(self._handles.values(), key=lambda h: h.instance_id)

    def handle(self, instance_id: str) -> OperatorHandle:
        with self._map_lock:
            try:
                return self._handles[instance_id]
            except KeyError:
                raise UnknownInstance(f"unknown instance {instance_id!r}") from None

    # -- operations --------------------------------------------------------

    def deploy(self, name: str, version: Optional[str] = None) -> OperatorHandle:
        try:
            descriptor, package_dir = self.registry.fetch(name, version)
        except RegistryError as exc:
            raise DeployError(str(exc)) from exc
        instance_id = self._new_instance_id(name)
        queues = QueuePair.for_instance(instance_id)
        ctl_queue = instance_id + contract.CTL_SUFFIX

        conn = self._connect()
        try:
            conn.qcreate(queues.input)
            conn.qcreate(queues.output)
            conn.qcreate(ctl_queue)
            handle = OperatorHandle(
                instance_id=instance_id,
                descriptor=descriptor,
                queues=queues,
                ctl_queue=ctl_queue,
                package_dir=package_dir,
                state=OperatorState.STARTING,
            )
            env = self._make_env(queues, ctl_queue)
            handle.process = self.backend.start(
                descriptor.command, package_dir, env, f"{instance_id}-g1"
            )
            cursor = ControlLog(conn, ctl_queue)
            try:
                self._wait_ctl(conn, cursor, contract.CTL_READY,
                               self.ready_timeout, handle.process)
            except DeployError:
                handle.process.kill()
                for queue in (queues.input, queues.output, ctl_queue):
                    try:
                        conn.qdelete(queue)
                    except ServerError:
                        pass
                raise
            cursor.post(contract.CTL_ACTIVATE)
            handle.ctl_offset = cursor.offset
            handle.state = OperatorState.RUNNING
            with self._map_lock:
                self._handles[instance_id] = handle
            log.info("deployed %s@%s as %s (pid %s)",
                     name, descriptor.version, instance_id, handle.process.pid)
            return handle
        finally:
            conn.close()

    def update(self, instance_id: str, new_version: str) -> UpdateReport:
        t0 = time.perf_counter()
        handle = self.handle(instance_id)
        with self._lock_for(instance_id):
            if handle.state is not OperatorState.RUNNING:
                raise UpdateError(
                    f"{instance_id} is {handle.state.value}, can only update a running instance"
                )
            try:
                new_desc, new_pkg = self.registry.fetch(handle.descriptor.name, new_version)
            except RegistryError as exc:
                raise UpdateError(str(exc)) from exc

            old_desc = handle.descriptor
            old_process = handle.process
            old_ctl = handle.ctl_queue
            generation = handle.generation + 1
            new_ctl = f"{instance_id}{contract.CTL_SUFFIX}-{generation}"
            handle.state = OperatorState.UPDATING

            conn = self._connect()
            try:
                # Phase 1, reversible: boot the replacement while the old
                # worker keeps consuming.  Any failure here rolls back to
                # the running instance.
                new_process = None
                try:
                    conn.qcreate(new_ctl)
                    env = self._make_env(handle.queues, new_ctl)
                    new_process = self.backend.start(
                        new_desc.command, new_pkg, env, f"{instance_id}-g{generation}"
                    )
                    new_cursor = ControlLog(conn, new_ctl)
                    self._wait_ctl(conn, new_cursor, contract.CTL_READY,
                                   self.ready_timeout, new_process)
                except Exception as exc:
                    if new_process is not None:
                        new_process.kill()
                    try:
                        conn.qdelete(new_ctl)
                    except (ServerError, OSError):
                        pass
                    handle.state = OperatorState.RUNNING
                    raise UpdateError(f"new worker failed to start, rolled back: {exc}") from exc

                # Phase 2, committed: drain the old generation and hand the
                # queues to the new one.
                old_cursor = ControlLog(conn, old_ctl, offset=handle.ctl_offset)
                old_cursor.post(contract.CTL_DRAIN)
                forced = False
                try:
                    self._wait_ctl(conn, old_cursor, contract.CTL_DRAINED,
                                   self.drain_timeout, None)
                except DeployError:
                    # A worker that will not drain is barred from further
                    # consumption the hard way.
                    forced = True
                    if old_process is not None:
                        old_process.kill()
                old_exit = None
                if forced and old_process is not None:
                    # A killed worker may still have request bytes in flight;
                    # let it die before handing the queues over.
                    old_exit = old_process.wait(timeout=5.0)
                events_in_flight = conn.length(handle.queues.input)
                new_cursor.post(contract.CTL_ACTIVATE)
                swap_done = time.perf_counter()

                handle.descriptor = new_desc
                handle.package_dir = new_pkg
                handle.process = new_process
                handle.ctl_queue = new_ctl
                handle.ctl_offset = new_cursor.offset
                handle.generation = generation
                handle.state = OperatorState.RUNNING
                try:
                    conn.qdelete(old_ctl)
                except ServerError:
                    pass
                if not forced and old_process is not None:
                    # Exit collection is off the hand-over path: once DRAINED
                    # is posted the old generation never touches the data
                    # queues again, so the new one need not wait for it.
                    old_exit = old_process.wait(timeout=5.0)
                    if old_exit is None:
                        old_process.kill()
                        old_exit = old_process.wait(timeout=1.0)
            except UpdateError:
                raise
            except Exception as exc:
                # Past the point of no return with both generations in
                # doubt: fail loudly rather than guess.
                handle.state = OperatorState.FAILED
                raise UpdateError(f"update failed mid-swap: {exc}") from exc
            finally:
                conn.close()

        duration_ms = (swap_done - t0) * 1000.0
        log.info("updated %s %s -> %s in %.1f ms (forced=%s)",
                 instance_id, old_desc.version, new_desc.version, duration_ms, forced)
        return UpdateReport(
            instance_id=instance_id,
            old_version=old_desc.version,
            new_version=new_desc.version,
            update_duration_ms=duration_ms,
            events_in_flight=events_in_flight,
            old_worker_exit=old_exit,
            forced_kill=forced,
        )

    def remove(self, instance_id: str) -> None:
        handle = self.handle(instance_id)
        with self._lock_for(instance_id):
            if handle.state is OperatorState.STOPPED:
                raise ManagerError(f"{instance_id} already removed")
            conn = self._connect()
            try:
                drained = False
                if handle.state in (OperatorState.RUNNING, OperatorState.UPDATING):
                    cursor = ControlLog(conn, handle.ctl_queue, offset=handle.ctl_offset)
                    cursor.post(contract.CTL_DRAIN)
                    try:
                        self._wait_ctl(conn, cursor, contract.CTL_DRAINED,
                                       self.drain_timeout, handle.process)
                        drained = True
                    except DeployError:
                        if handle.process is not None:
                            handle.process.kill()
                if handle.process is not None:
                    # a drained worker exits 0 by itself; only push if it won't
                    if not drained or handle.process.wait(timeout=5.0) is None:
                        handle.process.terminate()
                        handle.process.wait(timeout=5.0)
                for queue in (handle.queues.input, handle.queues.output,
                              handle.ctl_queue, handle.queues.stem + contract.DLQ_SUFFIX):
                    try:
                        conn.qdelete(queue)
                    except ServerError:
                        pass
                handle.state = OperatorState.STOPPED
                log.info("removed %s", instance_id)
            finally:
                conn.close()

    def status(self) -> dict:
        return {
            "queue_server": contract.format_address(self.queue_addr),
            "instances": [handle.to_doc() for handle in self.handles()],
        }

    # -- supervision -------------------------------------------------------

    def _supervise_loop(self) -> None:
        while not self._stop.wait(self.supervise_interval):
            for handle in self.handles():
                if handle.state is not OperatorState.RUNNING:
                    continue
                process = handle.process
                if process is None or process.poll() is None:
                    continue
                try:
                    self._restart(handle, process)
                except Exception:
                    log.exception("restart of %s failed", handle.instance_id)
                    handle.state = OperatorState.FAILED

    def _restart(self, handle: OperatorHandle, dead: WorkerProcess) -> None:
        with self._lock_for(handle.instance_id):
            if handle.state is not OperatorState.RUNNING or handle.process is not dead:
                return  # somebody else already dealt with it
            now = time.monotonic()
            handle.crash_times = [
                t for t in handle.crash_times if now - t < self.restart_window
            ] + [now]
            if len(handle.crash_times) >= self.restart_limit:
                handle.state = OperatorState.FAILED
                log.error(
                    "%s crashed %d times within %.0fs, giving up: %s",
                    handle.instance_id, len(handle.crash_times),
                    self.restart_window, dead.log_tail(500),
                )
                return
            log.warning("%s (pid %s) exited with %s, restarting",
                        handle.instance_id, dead.pid, dead.poll())
            handle.state = OperatorState.STARTING
            generation = handle.generation + 1
            new_ctl = f"{handle.instance_id}{contract.CTL_SUFFIX}-{generation}"
            conn = self._connect()
            try:
                conn.qcreate(new_ctl)
                env = self._make_env(handle.queues, new_ctl)
                process = self.backend.start(
                    handle.descriptor.command, handle.package_dir, env,
                    f"{handle.instance_id}-g{generation}",
                )
                cursor = ControlLog(conn, new_ctl)
                self._wait_ctl(conn, cursor, contract.CTL_READY, self.ready_timeout, process)
                cursor.post(contract.CTL_ACTIVATE)
                try:
                    conn.qdelete(handle.ctl_queue)
                except ServerError:
                    pass
                handle.process = process
                handle.ctl_queue = new_ctl
                handle.ctl_offset = cursor.offset
                handle.generation = generation
                handle.restarts += 1
                handle.state = OperatorState.RUNNING
            finally:
                conn.close()


# -- control plane ----------------------------------------------------------


class ControlServer:
    """TCP endpoint exposing the manager: DEPLOY, UPDATE, REMOVE, STATUS, PING."""

    def __init__(
        self,
        manager: NodeManager,
        host: str = "127.0.0.1",
        port: int = contract.DEFAULT_CONTROL_PORT,
    ):
        self.manager = manager
        self._host = host
        self._port = port
        self._sock: Optional[socket.socket] = None
        self._accept_thread: Optional[threading.Thread] = None
        self._stopped = threading.Event()
        self._conns: set[socket.socket] = set()
        self._conns_lock = threading.Lock()

    @property
    def address(self) -> tuple[str, int]:
        if self._sock is None:
            raise RuntimeError("control server not started")
        return self._sock.getsockname()[:2]

    @property
    def endpoint(self) -> str:
        return contract.format_address(self.address)

    def start(self) -> "ControlServer":
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind((self._host, self._port))
        sock.listen(16)
        sock.settimeout(0.25)
        self._sock = sock
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name="control-accept", daemon=True
        )
        self._accept_thread.start()
        log.info("control server listening on %s", self.endpoint)
        return self

    def stop(self) -> None:
        self._stopped.set()
        if self._sock is not None:
            self._sock.close()
        with self._conns_lock:
            for conn in list(self._conns):
                try:
                    conn.close()
                except OSError:
                    pass
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=5)

    def serve_forever(self) -> None:
        self._stopped.wait()

    def _accept_loop(self) -> None:
        assert self._sock is not None
        while not self._stopped.is_set():
            try:
                conn, peer = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.settimeout(None)
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._conns_lock:
                self._conns.add(conn)
            threading.Thread(
                target=self._serve_connection, args=(conn,),
                name=f"control-conn-{peer[1]}", daemon=True,
            ).start()

    def _serve_connection(self, conn: socket.socket) -> None:
        parser = RequestParser()
        try:
            while True:
                try:
                    data = conn.recv(65536)
                except OSError:
                    return
                if not data:
                    return
                parser.feed(data)
                while True:
                    try:
                        request = parser.next_request()
                    except ProtocolError as exc:
                        try:
                            conn.sendall(encode_error(f"protocol: {exc}"))
                        except OSError:
                            pass
                        return
                    if request is None:
                        break
                    try:
                        conn.sendall(self._dispatch(request))
                    except OSError:
                        return
        finally:
            with self._conns_lock:
                self._conns.discard(conn)
            try:
                conn.close()
            except OSError:
                pass

    def _dispatch(self, request: list[bytes]) -> bytes:
        if not request:
            return encode_error("empty request")
        verb = request[0].upper()
        args = [arg.decode("utf-8", "replace") for arg in request[1:]]
        try:
            if verb == b"PING":
                return b"+PONG\r\n"
            if verb == b"DEPLOY":
                if len(args) not in (1, 2):
                    return encode_error("usage: DEPLOY <name> [version]")
                handle = self.manager.deploy(args[0], args[1] if len(args) == 2 else None)
                return encode_array([canonical_bytes(handle.to_doc())])
            if verb == b"UPDATE":
                if len(args) != 2:
                    return encode_error("usage: UPDATE <instance_id> <version>")
                report = self.manager.update(args[0], args[1])
                return encode_array([canonical_bytes(report.to_doc())])
            if verb == b"REMOVE":
                if len(args) != 1:
                    return encode_error("usage: REMOVE <instance_id>")
                self.manager.remove(args[0])
                return OK_REPLY
            if verb == b"STATUS":
                if args:
                    doc = self.manager.handle(args[0]).to_doc()
                else:
                    doc = self.manager.status()
                return encode_array([canonical_bytes(doc)])
            return encode_error(f"unknown command {verb.decode('ascii', 'replace')!r}")
        except (ManagerError, RegistryError) as exc:
            return encode_error(str(exc))
        except Exception as exc:  # noqa: BLE001 - keep the control plane up
            log.exception("control command %s failed", verb)
            return encode_error(f"internal: {exc}")


class ControlClient:
    """Client for the control server."""

    def __init__(self, address: tuple[str, int], timeout: float = 60.0):
        self._conn = QueueConnection(address, timeout=timeout)

    def close(self) -> None:
        self._conn.close()

    def _doc(self, *command: bytes) -> dict:
        reply = self._conn.one(*command)
        if reply[0] != "array" or not reply[1]:
            raise ManagerError(f"unexpected reply {reply!r}")
        doc = parse_canonical(reply[1][0])
        if not isinstance(doc, dict):
            raise ManagerError("reply is not a document")
        return doc

    def ping(self) -> None:
        self._conn.one(b"PING")

    def deploy(self, name: str, version: Optional[str] = None) -> dict:
        command = [b"DEPLOY", name.encode()]
        if version is not None:
            command.append(version.encode())
        try:
            return self._doc(*command)
        except ServerError as exc:
            raise DeployError(str(exc)) from exc

    def update(self, instance_id: str, version: str) -> dict:
        try:
            return self._doc(b"UPDATE", instance_id.encode(), version.encode())
        except ServerError as exc:
            raise UpdateError(str(exc)) from exc

    def remove(self, instance_id: str) -> None:
        try:
            self._conn.one(b"REMOVE", instance_id.encode())
        except ServerError as exc:
            raise ManagerError(str(exc)) from exc

    def status(self, instance_id: Optional[str] = None) -> dict:
        command = [b"STATUS"]
        if instance_id is not None:
            command.append(instance_id.encode())
        try:
            return self._doc(*command)
        except ServerError as exc:
            raise ManagerError(str(exc)) from exc


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="cepless-node-manager",
        description="Deploys and supervises operator workers.",
    )
    parser.add_argument(
        "--bind",
        default=f"127.0.0.1:{contract.DEFAULT_CONTROL_PORT}",
        help="control endpoint host:port (default %(default)s)",
    )
    parser.add_argument(
        "--queue-addr",
        default=os.environ.get(
            contract.ENV_QUEUE_ADDR, f"127.0.0.1:{contract.DEFAULT_QUEUE_PORT}"
        ),
        help="queue server to wire workers to (default %(default)s)",
    )
    parser.add_argument("--registry-root", default=os.environ.get(contract.ENV_REGISTRY))
    parser.add_argument("--batch-size", type=int, default=1024)
    parser.add_argument("--backoff-ns", type=int, default=100_000)
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if not args.registry_root:
        parser.error(f"--registry-root required (or set {contract.ENV_REGISTRY})")

    queue_addr = contract.parse_address(args.queue_addr, contract.DEFAULT_QUEUE_PORT)
    probe = QueueConnection(queue_addr, timeout=5.0)
    probe.ping()
    probe.close()

    manager = NodeManager(
        Registry(args.registry_root),
        queue_addr,
        batch_size=args.batch_size,
        backoff_ns=args.backoff_ns,
    ).start()
    host, port = contract.parse_address(args.bind, contract.DEFAULT_CONTROL_PORT)
    control = ControlServer(manager, host, port).start()
    print(f"node manager on {control.endpoint} (queues at {args.queue_addr})", flush=True)

    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    try:
        stop.wait()
    finally:
        control.stop()
        manager.close()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
