"""Deterministic in-process mock of an OpenAI-compatible chat endpoint.

Three response sources, highest priority first:

1. ``responder`` - a callable receiving the parsed request body, for
   tests that need content-keyed answers under concurrency;
2. ``script``   - a FIFO of ScriptedResponse items consumed one per call;
3. echo        - default rule returning the last user message content.

The server records every request body and tracks peak concurrent
in-flight requests so tests can assert batching limits.
"""

from __future__ import annotations

import json
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class PortUnavailableError(OSError):
    pass


@dataclass(frozen=True)
class ScriptedResponse:
    """One canned completion.  ``token_logprobs`` entries are
    (token, logprob, top_alternatives) triples mirroring the wire shape;
    ``delay`` holds the handler open to create measurable overlap;
    ``raw_body`` (bytes) overrides the JSON envelope entirely for
    malformed-payload tests."""

    text: str = "ok"
    status: int = 200
    token_logprobs: tuple | None = None
    delay: float = 0.0
    raw_body: bytes | None = None


def token_entry(token: str, logprob: float, top: list[tuple[str, float]] | None = None) -> tuple:
    """Convenience constructor for ScriptedResponse.token_logprobs items."""
    return (token, logprob, tuple(top or ()))


def _logprob_block(entries: tuple) -> dict:
    content = []
    for token, logprob, top in entries:
        content.append(
            {
                "token": token,
                "logprob": logprob,
                "top_logprobs": [{"token": t, "logprob": lp} for t, lp in top],
            }
        )
    return {"content": content}


class MockLLMServer:
    def __init__(
        self,
        script: list[ScriptedResponse | str] | None = None,
        responder=None,
        host: str = "127.0.0.1",
        port: int = 0,
    ):
        self._script = deque(script or [])
        self._responder = responder
        self._host = host
        self._port = port
        self._lock = threading.Lock()
        self.requests: list[dict] = []
        self._active = 0
        self.peak_concurrency = 0
        self._httpd: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> MockLLMServer:
        handler = self._make_handler()
        try:
            self._httpd = ThreadingHTTPServer((self._host, self._port), handler)
        except OSError as exc:
            raise PortUnavailableError(f"cannot bind {self._host}:{self._port}: {exc}") from exc
        self._httpd.daemon_threads = True
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
            self._httpd = None

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    @property
    def url(self) -> str:
        assert self._httpd is not None, "server not started"
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    # -- scripting ---------------------------------------------------------

    def extend_script(self, items: list[ScriptedResponse]):
        with self._lock:
            self._script.extend(items)

    def _next_response(self, body: dict) -> ScriptedResponse:
        if self._responder is not None:
            out = self._responder(body)
            if isinstance(out, str):
                return ScriptedResponse(text=out)
            return out
        with self._lock:
            if self._script:
                queued = self._script.popleft()
                return ScriptedResponse(text=queued) if isinstance(queued, str) else queued
        # Default rule: echo the last user message.
        user_texts = [m["content"] for m in body.get("messages", []) if m.get("role") == "user"]
        return ScriptedResponse(text=user_texts[-1] if user_texts else "")

    def _enter_request(self):
        with self._lock:
            self._active += 1
            self.peak_concurrency = max(self.peak_concurrency, self._active)

    def _leave_request(self):
        with self._lock:
            self._active -= 1

    def _make_handler(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                if self.path.rstrip("/") != "/v1/chat/completions":
                    self.send_error(404)
                    return
                length = int(self.headers.get("Content-Length", 0))
                try:
                    body = json.loads(self.rfile.read(length) or b"{}")
                except json.JSONDecodeError:
                    self.send_error(400, "invalid JSON")
                    return
                server._enter_request()
                try:
                    with server._lock:
                        server.requests.append(body)
                    scripted = server._next_response(body)
                    if scripted.delay:
                        time.sleep(scripted.delay)
                    payload = server._render(scripted, body)
                    self.send_response(scripted.status)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(payload)))
                    self.end_headers()
                    self.wfile.write(payload)
                finally:
                    server._leave_request()

        return Handler

    def _render(self, scripted: ScriptedResponse, body: dict) -> bytes:
        if scripted.raw_body is not None:
            return scripted.raw_body
        if scripted.status != 200:
            return json.dumps({"error": {"message": f"scripted failure {scripted.status}"}}).encode()
        choice = {
            "index": 0,
            "message": {"role": "assistant", "content": scripted.text},
            "finish_reason": "stop",
            "logprobs": _logprob_block(scripted.token_logprobs) if scripted.token_logprobs else None,
        }
        prompt_tokens = sum(len(m.get("content", "").split()) for m in body.get("messages", []))
        envelope = {
            "id": "chatcmpl-mock",
            "object": "chat.completion",
            "created": int(time.time()),
            "model": body.get("model", "mock"),
            "choices": [choice],
            "usage": {
                "prompt_tokens": prompt_tokens,
                "completion_tokens": len(scripted.text.split()),
                "total_tokens": prompt_tokens + len(scripted.text.split()),
            },
        }
        return json.dumps(envelope).encode()
