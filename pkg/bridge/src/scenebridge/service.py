"""Request-serial HTTP service exposing a model provider.

The server accepts connections concurrently but executes provider calls
under one lock (model execution is serialized; scale out with replicas).
Requests and responses are validated against the published schemas; every
JSON response, including errors and health checks, carries ``model_id``
(null while no provider is loaded) and ``latency_ms``.

Routes: POST /v1/embed_text /v1/embed_image /v1/guidance_grad /v1/txt2img
/v1/compose /v1/detect, GET /healthz.
"""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .encoding import EncodingError, decode_image, decode_mask, encode_image
from .schemas import ENDPOINT_SCHEMAS, SchemaViolation, validate

MAX_BODY_BYTES = 64 * 1024 * 1024


def _embed_text(provider, req: dict) -> dict:
    rows = provider.embed_text(req["texts"])
    return {"embeddings": np.asarray(rows, dtype=float).tolist(),
            "dim": int(np.asarray(rows).shape[1])}


def _embed_image(provider, req: dict) -> dict:
    image = decode_image(req["image"], provider.image_shape)
    mask = decode_mask(req["mask"]) if "mask" in req else None
    e = provider.embed_image(image, mask)
    return {"embedding": np.asarray(e, dtype=float).tolist(),
            "dim": int(np.asarray(e).shape[0])}


def _guidance_grad(provider, req: dict) -> dict:
    image = decode_image(req["image"], provider.image_shape)
    mask = decode_mask(req["mask"])
    ref = req.get("ref_image")
    ref_image = None if ref is None else decode_image(ref,
                                                      provider.image_shape)
    loss, grad = provider.guidance_grad(image, mask, req["text"], ref_image,
                                        float(req["lambda"]))
    return {"loss": float(loss),
            "grad": np.asarray(grad, dtype=float).tolist()}


def _txt2img(provider, req: dict) -> dict:
    image = provider.txt2img(req["prompt"], int(req.get("steps", 50)),
                             int(req.get("seed", 0)))
    return {"image": encode_image(image)}


def _compose(provider, req: dict) -> dict:
    source = decode_image(req["source"], provider.image_shape)
    ref = decode_image(req["ref"], provider.image_shape)
    mask = decode_mask(req["mask"])
    image = provider.compose(source, mask, ref, int(req.get("steps", 50)),
                             int(req.get("seed", 0)))
    return {"image": encode_image(image)}


def _detect(provider, req: dict) -> dict:
    image = decode_image(req["image"], provider.image_shape)
    return {"detections": provider.detect(image, req["labels"])}


_HANDLERS = {
    "/v1/embed_text": _embed_text,
    "/v1/embed_image": _embed_image,
    "/v1/guidance_grad": _guidance_grad,
    "/v1/txt2img": _txt2img,
    "/v1/compose": _compose,
    "/v1/detect": _detect,
}


class BridgeServer(ThreadingHTTPServer):
    """HTTP server carrying the provider and its execution lock."""

    daemon_threads = True

    def __init__(self, address, provider, *, verbose: bool = False):
        super().__init__(address, _BridgeHandler)
        self.provider = provider
        self.model_lock = threading.Lock()
        self.verbose = verbose


class _BridgeHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "scenebridge/0.1"

    def log_message(self, fmt, *args):
        if self.server.verbose:
            super().log_message(fmt, *args)

    def _send_json(self, status: int, payload: dict, started: float) -> None:
        provider = self.server.provider
        payload = dict(payload)
        payload["model_id"] = provider.model_id if provider else None
        payload["latency_ms"] = (time.perf_counter() - started) * 1000.0
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_error_json(self, status: int, err_type: str, message: str,
                         started: float) -> None:
        self._send_json(status, {"error": {"type": err_type,
                                           "message": message}}, started)

    def do_GET(self):  # noqa: N802 (http.server API)
        started = time.perf_counter()
        if self.path != "/healthz":
            self._send_error_json(404, "NotFound",
                                  f"no route {self.path}", started)
            return
        provider = self.server.provider
        if provider is None:
            self._send_json(503, {"status": "unavailable",
                                  "image_shape": None,
                                  "embed_dim": None}, started)
            return
        self._send_json(200, {"status": "ok",
                              "image_shape": list(provider.image_shape),
                              "embed_dim": int(provider.embed_dim)}, started)

    def do_POST(self):  # noqa: N802 (http.server API)
        started = time.perf_counter()
        if self.path not in _HANDLERS:
            code = 405 if self.path == "/healthz" else 404
            self._send_error_json(code, "NotFound" if code == 404
                                  else "MethodNotAllowed",
                                  f"no POST route {self.path}", started)
            return
        length = int(self.headers.get("Content-Length") or 0)
        if length <= 0 or length > MAX_BODY_BYTES:
            self._send_error_json(400, "BadRequest",
                                  "missing or oversized body", started)
            return
        try:
            request = json.loads(self.rfile.read(length))
        except (ValueError, UnicodeDecodeError) as exc:
            self._send_error_json(400, "BadRequest",
                                  f"body is not JSON: {exc}", started)
            return

        req_schema, resp_schema = ENDPOINT_SCHEMAS[self.path]
        try:
            validate(request, req_schema)
        except SchemaViolation as exc:
            self._send_error_json(400, "SchemaViolation", str(exc), started)
            return

        provider = self.server.provider
        if provider is None:
            self._send_error_json(503, "ProviderUnavailable",
                                  "no model provider is loaded", started)
            return
        try:
            with self.server.model_lock:
                payload = _HANDLERS[self.path](provider, request)
        except (EncodingError, ValueError) as exc:
            self._send_error_json(400, type(exc).__name__, str(exc), started)
            return
        except Exception as exc:
            self._send_error_json(500, type(exc).__name__, str(exc), started)
            return

        # self-check: never serve a payload the published schema rejects
        check = dict(payload)
        check["model_id"] = provider.model_id
        check["latency_ms"] = 0.0
        try:
            validate(check, resp_schema)
        except SchemaViolation as exc:
            self._send_error_json(500, "ResponseSchemaViolation", str(exc),
                                  started)
            return
        self._send_json(200, payload, started)


def create_server(provider, host: str = "127.0.0.1",
                  port: int = 0, *, verbose: bool = False) -> BridgeServer:
    """Bind a server (port 0 picks a free port); caller starts/stops it."""
    return BridgeServer((host, port), provider, verbose=verbose)


def serve(provider, host: str, port: int, *, verbose: bool = True) -> None:
    """Blocking serve loop for the command line."""
    server = create_server(provider, host, port, verbose=verbose)
    model = provider.model_id if provider else "unavailable"
    print(f"scenebridge serving {model} on http://{host}:{server.server_port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
