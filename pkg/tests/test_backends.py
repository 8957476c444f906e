import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from ragchain.backends import (
    BackendRefusal,
    CompletionTimeout,
    HttpBackend,
    ScriptEntry,
    ScriptedBackend,
    ScriptExhausted,
    TransportError,
    backend_from_env,
    complete,
    env_backend_configured,
    scripted_backend_from_file,
)
from ragchain.errors import ConfigError

CONVO = [
    {"role": "system", "content": "instructions"},
    {"role": "user", "content": "What is the first hop?"},
]


class _StubHandler(BaseHTTPRequestHandler):
    script = []  # list of (status, body-dict-or-text) consumed per request
    requests_seen = []

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        payload = json.loads(self.rfile.read(length) or b"{}")
        type(self).requests_seen.append((self.path, payload))
        status, body = self.script.pop(0) if self.script else (200, {
            "choices": [{"message": {"content": "fallback"}}]
        })
        raw = json.dumps(body).encode() if isinstance(body, dict) else str(body).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    _StubHandler.script = []
    _StubHandler.requests_seen = []
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server
    server.shutdown()


def _backend(server, **kwargs):
    defaults = dict(
        base_url=f"http://127.0.0.1:{server.server_port}",
        model="test-model",
        backoff=0.01,
        timeout=5.0,
    )
    defaults.update(kwargs)
    return HttpBackend(**defaults)


def test_http_backend_success_and_wire_shape(stub_server):
    _StubHandler.script = [(200, {"choices": [{"message": {"content": "a completion"}}]})]
    backend = _backend(stub_server, temperature=0.0, max_output_tokens=77)
    assert complete(backend, CONVO) == "a completion"
    path, payload = _StubHandler.requests_seen[0]
    assert path == "/chat/completions"
    assert payload["model"] == "test-model"
    assert payload["temperature"] == 0.0
    assert payload["max_tokens"] == 77
    assert payload["messages"] == CONVO


def test_http_backend_retries_transient_5xx(stub_server):
    _StubHandler.script = [
        (500, "server exploded"),
        (200, {"choices": [{"message": {"content": "recovered"}}]}),
    ]
    backend = _backend(stub_server, max_attempts=3)
    assert complete(backend, CONVO) == "recovered"
    assert len(_StubHandler.requests_seen) == 2


def test_http_backend_refusal_after_retries(stub_server):
    _StubHandler.script = [(503, "down"), (503, "down"), (503, "still down")]
    backend = _backend(stub_server, max_attempts=3)
    with pytest.raises(BackendRefusal) as excinfo:
        complete(backend, CONVO)
    assert excinfo.value.status == 503
    assert "still down" in excinfo.value.body


def test_http_backend_hard_4xx_is_not_retried(stub_server):
    _StubHandler.script = [(400, "bad request body")]
    backend = _backend(stub_server, max_attempts=3)
    with pytest.raises(BackendRefusal) as excinfo:
        complete(backend, CONVO)
    assert excinfo.value.status == 400
    assert len(_StubHandler.requests_seen) == 1


def test_http_backend_connection_failure():
    # Nothing listens on this port; connection errors surface as TransportError.
    backend = HttpBackend(
        base_url="http://127.0.0.1:9", model="m", max_attempts=2, backoff=0.01, timeout=0.2
    )
    with pytest.raises(TransportError):
        complete(backend, CONVO)


def test_http_backend_read_timeout():
    class SlowHandler(BaseHTTPRequestHandler):
        def do_POST(self):
            import time

            time.sleep(0.6)
            self.send_response(200)
            self.end_headers()

        def log_message(self, *args):
            pass

    server = HTTPServer(("127.0.0.1", 0), SlowHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        backend = HttpBackend(
            base_url=f"http://127.0.0.1:{server.server_port}",
            model="m",
            max_attempts=1,
            timeout=0.15,
        )
        with pytest.raises(CompletionTimeout):
            complete(backend, CONVO)
    finally:
        server.shutdown()


def test_complete_rejects_bad_conversations(stub_server):
    backend = _backend(stub_server)
    with pytest.raises(ValueError):
        complete(backend, [])
    with pytest.raises(ValueError):
        complete(backend, [{"role": "user", "content": "no system first"}])


def test_scripted_backend_sequential_consumption():
    backend = ScriptedBackend([("*", "turn one"), ("*", "turn two")])
    assert complete(backend, CONVO) == "turn one"
    assert complete(backend, CONVO) == "turn two"
    with pytest.raises(ScriptExhausted):
        complete(backend, CONVO)


def test_scripted_backend_regex_matching():
    backend = ScriptedBackend(
        [
            ScriptEntry(match=r"Observation 1", completion="second turn"),
            ScriptEntry(match=r"first hop", completion="first turn"),
        ]
    )
    assert complete(backend, CONVO) == "first turn"
    followup = CONVO + [
        {"role": "assistant", "content": "Thought 1: ..."},
        {"role": "user", "content": "Observation 1: a fact"},
    ]
    assert complete(backend, followup) == "second turn"


def test_scripted_backend_repeat_last():
    backend = ScriptedBackend([("*", "only line")], exhaustion="repeat-last")
    assert complete(backend, CONVO) == "only line"
    assert complete(backend, CONVO) == "only line"
    assert complete(backend, CONVO) == "only line"


def test_scripted_backend_reset_replays_identically():
    backend = ScriptedBackend([("*", "one"), ("*", "two")])
    first = [complete(backend, CONVO), complete(backend, CONVO)]
    backend.reset()
    second = [complete(backend, CONVO), complete(backend, CONVO)]
    assert first == second


def test_scripted_backend_from_file(tmp_path):
    script = tmp_path / "script.jsonl"
    script.write_text(
        '{"match": "*", "completion": "from file"}\n'
        '{"match": "hop", "completion": "matched"}\n',
        encoding="utf-8",
    )
    backend = scripted_backend_from_file(script)
    assert complete(backend, CONVO) == "from file"
    assert complete(backend, CONVO) == "matched"


def test_backend_from_env(monkeypatch):
    monkeypatch.setenv("REARAG_ANS_BASE_URL", "http://example.invalid/v1")
    monkeypatch.setenv("REARAG_ANS_MODEL", "answerer")
    monkeypatch.setenv("REARAG_ANS_API_KEY", "sekrit")
    backend = backend_from_env("ans")
    assert backend.model == "answerer"
    assert backend.api_key == "sekrit"
    assert backend.endpoint == "http://example.invalid/v1/chat/completions"
    assert env_backend_configured("ans")


def test_backend_from_env_missing(monkeypatch):
    monkeypatch.delenv("REARAG_JUDGE_BASE_URL", raising=False)
    monkeypatch.delenv("REARAG_JUDGE_MODEL", raising=False)
    assert not env_backend_configured("judge")
    with pytest.raises(ConfigError):
        backend_from_env("judge")
    with pytest.raises(ConfigError):
        backend_from_env("not-a-role")
