"""Shared fixtures: one live service per session, plus a matching local world."""

import threading

import pytest
from scenebridge import BridgeClient, ToyProvider, create_server
from sceneloom import build_toy_world


@pytest.fixture(scope="session")
def provider():
    return ToyProvider()


@pytest.fixture(scope="session")
def bridge_server(provider):
    server = create_server(provider)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server
    server.shutdown()
    server.server_close()


@pytest.fixture(scope="session")
def base_url(bridge_server):
    return f"http://127.0.0.1:{bridge_server.server_port}"


@pytest.fixture(scope="session")
def client(base_url):
    return BridgeClient(base_url)


@pytest.fixture(scope="session")
def local_world():
    # same seed as the session provider, so served numbers have an
    # in-process reference implementation to compare against
    return build_toy_world()
