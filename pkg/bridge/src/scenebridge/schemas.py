"""Loader and validators for the published endpoint schemas.

Each endpoint has a request and a response schema checked in as JSON under
``schemas/``; the service validates incoming requests and its own responses
against them, and the contract tests validate the golden fixtures against
the same files.
"""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

import jsonschema

ENDPOINT_SCHEMAS = {
    "/v1/embed_text": ("embed_text_request", "embed_text_response"),
    "/v1/embed_image": ("embed_image_request", "embed_image_response"),
    "/v1/guidance_grad": ("guidance_grad_request", "guidance_grad_response"),
    "/v1/txt2img": ("txt2img_request", "txt2img_response"),
    "/v1/compose": ("compose_request", "compose_response"),
    "/v1/detect": ("detect_request", "detect_response"),
}


class SchemaViolation(ValueError):
    """Payload fails its published schema."""


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    path = resources.files(__package__) / "schemas" / f"{name}.json"
    return json.loads(path.read_text(encoding="utf-8"))


@lru_cache(maxsize=None)
def _validator(name: str) -> jsonschema.Validator:
    schema = load_schema(name)
    cls = jsonschema.validators.validator_for(schema)
    cls.check_schema(schema)
    return cls(schema)


def validate(payload, schema_name: str) -> None:
    """Raise SchemaViolation with a readable path if payload fails."""
    error = jsonschema.exceptions.best_match(
        _validator(schema_name).iter_errors(payload))
    if error is not None:
        where = "/".join(str(p) for p in error.absolute_path) or "(root)"
        raise SchemaViolation(f"{schema_name}: {where}: {error.message}")


def schema_names() -> list[str]:
    names = set()
    for req, resp in ENDPOINT_SCHEMAS.values():
        names.update((req, resp))
    names.update(("healthz_response", "error_response"))
    return sorted(names)
