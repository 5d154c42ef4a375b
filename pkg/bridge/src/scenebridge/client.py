"""Typed client for the bridge service, plus record/replay test doubles.

``BridgeClient`` wraps the HTTP endpoints with numpy in/out. Attach a
``Tape`` to record every exchange; ``ReplayServer`` then serves those
recorded responses back, keyed by method, path, and canonical request body,
so contract tests can rerun a client workload against a stub of the service
with no models behind it.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
import requests

from .encoding import encode_image, encode_mask, decode_image


class BridgeError(RuntimeError):
    """Non-success response from the service."""

    def __init__(self, status: int, payload: dict):
        err = payload.get("error", {})
        super().__init__(f"{status}: {err.get('type', 'Error')}: "
                         f"{err.get('message', payload)}")
        self.status = status
        self.payload = payload


def _canonical(method: str, path: str, payload: dict | None) -> str:
    body = "" if payload is None else json.dumps(
        payload, sort_keys=True, separators=(",", ":"))
    return f"{method} {path} {body}"


class Tape:
    """Ordered record of request/response exchanges with the service."""

    def __init__(self, entries: list[dict] | None = None):
        self.entries = list(entries or [])

    def record(self, method: str, path: str, payload: dict | None,
               status: int, response: dict) -> None:
        self.entries.append({"method": method, "path": path,
                             "request": payload, "status": status,
                             "response": response})

    def as_lookup(self) -> dict[str, tuple[int, dict]]:
        return {_canonical(e["method"], e["path"], e["request"]):
                (e["status"], e["response"]) for e in self.entries}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.entries), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Tape":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))


class BridgeClient:
    """HTTP access to one bridge service."""

    def __init__(self, base_url: str, *, session=None, timeout: float = 60.0,
                 tape: Tape | None = None):
        self.base_url = base_url.rstrip("/")
        self.session = session or requests.Session()
        self.timeout = timeout
        self.tape = tape

    def _request(self, method: str, path: str,
                 payload: dict | None) -> dict:
        url = self.base_url + path
        if method == "GET":
            r = self.session.get(url, timeout=self.timeout)
        else:
            r = self.session.post(url, json=payload, timeout=self.timeout)
        body = r.json()
        if self.tape is not None:
            self.tape.record(method, path, payload, r.status_code, body)
        if r.status_code != 200:
            raise BridgeError(r.status_code, body)
        return body

    def healthz(self) -> dict:
        return self._request("GET", "/healthz", None)

    def embed_text(self, texts: list[str]) -> np.ndarray:
        body = self._request("POST", "/v1/embed_text",
                             {"texts": list(texts)})
        return np.asarray(body["embeddings"], dtype=float)

    def embed_image(self, image: np.ndarray, mask=None) -> np.ndarray:
        payload = {"image": encode_image(image, exact=True)}
        if mask is not None:
            payload["mask"] = encode_mask(mask)
        body = self._request("POST", "/v1/embed_image", payload)
        return np.asarray(body["embedding"], dtype=float)

    def guidance_grad(self, image: np.ndarray, mask, text: str,
                      ref_image: np.ndarray | None,
                      lam: float) -> tuple[float, np.ndarray]:
        payload = {
            "image": encode_image(image, exact=True),
            "mask": encode_mask(mask),
            "text": text,
            "ref_image": None if ref_image is None
            else encode_image(ref_image, exact=True),
            "lambda": float(lam),
        }
        body = self._request("POST", "/v1/guidance_grad", payload)
        return float(body["loss"]), np.asarray(body["grad"], dtype=float)

    def txt2img(self, prompt: str, steps: int = 50,
                seed: int = 0) -> np.ndarray:
        body = self._request("POST", "/v1/txt2img",
                             {"prompt": prompt, "steps": int(steps),
                              "seed": int(seed)})
        return decode_image(body["image"])

    def compose(self, source: np.ndarray, mask, ref: np.ndarray,
                steps: int = 50, seed: int = 0) -> np.ndarray:
        body = self._request("POST", "/v1/compose", {
            "source": encode_image(source), "mask": encode_mask(mask),
            "ref": encode_image(ref), "steps": int(steps),
            "seed": int(seed)})
        return decode_image(body["image"])

    def detect(self, image: np.ndarray, labels: list[str]) -> list[dict]:
        body = self._request("POST", "/v1/detect",
                             {"image": encode_image(image),
                              "labels": list(labels)})
        return body["detections"]


class ReplayServer(ThreadingHTTPServer):
    """Stub service answering from a tape of recorded responses."""

    daemon_threads = True

    def __init__(self, tape: Tape, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _ReplayHandler)
        self.lookup = tape.as_lookup()
        self.misses: list[str] = []
        self.lock = threading.Lock()

    @property
    def base_url(self) -> str:
        return f"http://{self.server_address[0]}:{self.server_port}"


class _ReplayHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        pass

    def _reply(self, key: str) -> None:
        hit = self.server.lookup.get(key)
        if hit is None:
            with self.server.lock:
                self.server.misses.append(key)
            status, payload = 500, {"error": {
                "type": "NoRecording",
                "message": "request not present on the tape"},
                "model_id": None, "latency_ms": 0.0}
        else:
            status, payload = hit
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):  # noqa: N802 (http.server API)
        self._reply(_canonical("GET", self.path, None))

    def do_POST(self):  # noqa: N802 (http.server API)
        length = int(self.headers.get("Content-Length") or 0)
        payload = json.loads(self.rfile.read(length)) if length else None
        self._reply(_canonical("POST", self.path, payload))
