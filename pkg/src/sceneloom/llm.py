"""Chat-completion client for layout and description extraction.

Two instruct prompts drive the blueprint stage: a bounding-box generator
prompt (k completions at a diversity temperature) and a description-extractor
prompt (one completion at temperature 0). Replies are parse-validated here
and retried at this boundary so raw-reply fuzz never reaches the callers.
A scripted mock stands in for the endpoint in offline runs and tests.

The API key is read from the environment variable named in the config at
request time only; it is never stored, logged, or serialized.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass, field

import requests

from .blueprint import BlueprintError, parse_description_response, parse_layout_response


class TransportError(RuntimeError):
    """Network failure or malformed completion payload, retries exhausted."""


class QuotaOrAuthError(RuntimeError):
    """HTTP 401/429 from the endpoint; not retried."""


class UnparsableAfterRetries(RuntimeError):
    """Every retry produced a reply the parser rejected."""


@dataclass
class LlmConfig:
    endpoint_url: str = "http://localhost:8080/v1/chat/completions"
    api_key_env: str = "LLM_API_KEY"
    model_name: str = "gpt-3.5-turbo"
    temperature: float = 0.7
    timeout: float = 30.0
    max_retries: int = 3

    def validate(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")


@dataclass(frozen=True)
class PromptTemplate:
    kind: str  # "layout" | "description"
    text: str

    def fill(self, **slots: str) -> str:
        return self.text.format(**slots)


LAYOUT_PROMPT = PromptTemplate(kind="layout", text="""\
You are an intelligent bounding box generator. I will provide you with a \
caption for a photo, image, a detailed scene, or a painting. Your task is to \
generate the bounding boxes for the objects mentioned in the caption, along \
with a background prompt describing the scene. The images are of size \
512x512. The top-left corner has coordinates [0, 0]. The bottom-right corner \
has coordinates [512, 512]. The bounding boxes should not overlap or go \
beyond the image boundaries. Each bounding box should be in the format of \
(object name, [top-left x coordinate, top-left y coordinate, box width, box \
height]) and include exactly one object (i.e., start the object name with "a" \
or "an" if possible). Do not put objects that are already provided in the \
bounding boxes into the background prompt. Do not include non-existing or \
excluded objects in the background prompt. If needed, you can make reasonable \
guesses. Please refer to the example below for the desired format.

Caption: In the quiet countryside, a red farmhouse stands with an \
old-fashioned charm. Nearby, a weathered picket fence surrounds a garden of \
wildflowers. An antique tractor, though worn, rests as a reminder of hard \
work. A scarecrow watches over fields of swaying crops. The air carries the \
scent of earth and hay. Set against rolling hills, this farmhouse tells a \
story of connection to the land and its traditions
Objects: [('a red farmhouse', [105, 228, 302, 245]), ('a weathered picket \
fence', [4, 385, 504, 112]), ('an antique tractor', [28, 382, 157, 72]), \
('a scarecrow', [368, 271, 66, 156])]
Background prompt: A realistic image of a quiet countryside with rolling hills

Caption: A realistic image of landscape scene depicting a green car parking \
on the left of a blue truck, with a red air balloon and a bird in the sky
Objects: [('a green car', [21, 181, 211, 159]), ('a blue truck', [269, 181, \
209, 160]), ('a red air balloon', [66, 8, 145, 135]), ('a bird', [296, 42, \
143, 100])]
Background prompt: A realistic image of a landscape scene

Caption: {caption}
""")

DESCRIPTION_PROMPT = PromptTemplate(kind="description", text="""\
You are an intelligent description extractor. I will give you a list of the \
objects and a corresponding text prompt. For each object, extract its \
respective description or details mentioned in the text prompt. The \
description should strictly contain fine details about the object and must \
not contain information regarding location or abstract details about the \
object. The description must also contain the name of the object being \
described. For objects that do not have concrete descriptions mentioned, \
return the object itself in that case. The output should be a Python \
dictionary with the key as object and the value as description. The \
description should start with 'A realistic photo of object' followed by its \
characteristics. Sort the entries as per objects that are spatially behind \
(background) followed by objects that are spatially ahead (foreground). For \
instance object "a garden view" should precede the "table". Make an \
intelligent guess if possible.

list of objects: [{objects}]
text prompt: {caption}
""")


class MockLlm:
    """Scripted completion backend: replies in order, then repeats the last."""

    def __init__(self, script: list[str]):
        if not script:
            raise ValueError("mock script must be non-empty")
        self._script = list(script)
        self._lock = threading.Lock()
        self.call_count = 0

    def complete(self, prompt: str, temperature: float | None = None) -> str:
        del prompt, temperature
        with self._lock:
            idx = min(self.call_count, len(self._script) - 1)
            self.call_count += 1
            return self._script[idx]


def mock_llm(script: list[str]) -> MockLlm:
    return MockLlm(script)


class HttpLlm:
    """Thin chat-completion POST client.

    Body: {"model", "temperature", "messages": [{"role": "user", "content"}]};
    reply text at choices[0].message.content. Bearer auth from the env var
    named by the config, looked up per call.
    """

    def __init__(self, config: LlmConfig, session: requests.Session | None = None):
        self.config = config
        self._session = session or requests.Session()

    def complete(self, prompt: str, temperature: float | None = None) -> str:
        cfg = self.config
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(cfg.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        body = {
            "model": cfg.model_name,
            "temperature": cfg.temperature if temperature is None else temperature,
            "messages": [{"role": "user", "content": prompt}],
        }
        try:
            resp = self._session.post(cfg.endpoint_url, json=body,
                                      headers=headers, timeout=cfg.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"request failed: {exc.__class__.__name__}") from exc
        if resp.status_code in (401, 429):
            raise QuotaOrAuthError(f"endpoint returned HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise TransportError(f"endpoint returned HTTP {resp.status_code}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError("malformed completion payload") from exc


def _request_validated(backend, prompt: str, temperature: float,
                       validator, max_retries: int) -> str:
    """One completion, retried on transport failure or parser rejection."""
    attempts = max_retries + 1
    last: Exception | None = None
    for _ in range(attempts):
        try:
            reply = backend.complete(prompt, temperature=temperature)
        except QuotaOrAuthError:
            raise
        except TransportError as exc:
            last = exc
            continue
        try:
            validator(reply)
        except BlueprintError as exc:
            last = exc
            continue
        return reply
    if isinstance(last, TransportError):
        raise TransportError(f"retries exhausted: {last}") from last
    raise UnparsableAfterRetries(f"retries exhausted: {last}") from last


def request_layouts(caption: str, k: int, config: LlmConfig,
                    backend=None) -> list[str]:
    """k independent layout completions, each parse-validated with retries."""
    if not caption.strip():
        raise ValueError("caption must be non-empty")
    if k < 1:
        raise ValueError("k must be >= 1")
    config.validate()
    backend = backend if backend is not None else HttpLlm(config)
    prompt = LAYOUT_PROMPT.fill(caption=caption)
    return [
        _request_validated(backend, prompt, config.temperature,
                           parse_layout_response, config.max_retries)
        for _ in range(k)
    ]


def request_descriptions(caption: str, names: list[str], config: LlmConfig,
                         backend=None) -> str:
    """One description completion at temperature 0, parse-validated."""
    if not caption.strip():
        raise ValueError("caption must be non-empty")
    if not names:
        raise ValueError("names must be non-empty")
    config.validate()
    backend = backend if backend is not None else HttpLlm(config)
    prompt = DESCRIPTION_PROMPT.fill(objects=",".join(names), caption=caption)
    return _request_validated(
        backend, prompt, 0.0,
        lambda reply: parse_description_response(reply, names),
        config.max_retries)
