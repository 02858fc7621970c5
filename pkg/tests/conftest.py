from types import SimpleNamespace

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def queue_server():
    from cepless.server import QueueServer

    server = QueueServer("127.0.0.1", 0).start()
    yield server
    server.stop()


@pytest.fixture
def stack(tmp_path):
    """Queue server + registry with reference operators + node manager."""
    from cepless.manager import NodeManager, ProcessBackend
    from cepless.operators import publish_reference_operators
    from cepless.registry import Registry
    from cepless.server import QueueServer

    server = QueueServer("127.0.0.1", 0).start()
    registry = Registry(tmp_path / "registry")
    publish_reference_operators(registry, tmp_path / "scratch")
    manager = NodeManager(
        registry,
        server.address,
        backend=ProcessBackend(tmp_path / "logs"),
        supervise_interval=0.05,
        batch_size=256,
    ).start()
    yield SimpleNamespace(
        server=server, registry=registry, manager=manager, tmp=tmp_path
    )
    manager.close()
    server.stop()
