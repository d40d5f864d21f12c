"""End-to-end round trip: the pipeline's HTTP client against a live shim."""

import math
import socket
import threading
import time

import pytest
import uvicorn

from logitsep.backend import HttpBackend, LogitQuery
from logitsep.errors import PromptTooLongError


@pytest.fixture(scope="module")
def live_server(app, server_config):
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
    config = uvicorn.Config(app, host="127.0.0.1", port=port, log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 15
    while not server.started:
        if time.monotonic() > deadline:
            raise RuntimeError("shim did not start in time")
        time.sleep(0.05)
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=5)


def test_client_reads_info(live_server, server_config):
    backend = HttpBackend(endpoint=live_server)
    assert backend.max_prompt_chars == server_config.max_prompt_chars
    assert backend.name == f"http:{server_config.model}"


def test_client_round_trip_returns_finite_logits(live_server):
    backend = HttpBackend(endpoint=live_server)
    query = LogitQuery(
        "Review: they 're easy to use\nSentiment:", (" negative", " positive", " good")
    )
    table = backend.query(query)
    assert list(table) == list(query.candidates)
    assert all(math.isfinite(v) for v in table.values())
    assert backend.query(query) == table


def test_client_honors_413_budget(live_server, server_config):
    backend = HttpBackend(endpoint=live_server)
    oversized = "x" * (server_config.max_prompt_chars + 50)
    with pytest.raises(PromptTooLongError) as err:
        backend.query(LogitQuery(oversized, (" negative",)))
    assert err.value.budget == server_config.max_prompt_chars


def test_client_batch_against_shim(live_server):
    from logitsep.backend import batch_query

    backend = HttpBackend(endpoint=live_server)
    queries = [
        LogitQuery(f"Review: sample {i} of text\nSentiment:", (" negative", " positive"))
        for i in range(10)
    ]
    serial = batch_query(backend, queries, 1)
    concurrent = batch_query(backend, queries, 4)
    assert serial == concurrent
