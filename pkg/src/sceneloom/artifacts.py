"""Deterministic run artifacts: 8-bit PNG images, JSON, and layout drawings.

Every writer here is byte-deterministic for identical inputs: fixed key
order and formatting for JSON, plain string building for SVG, and PNG
encoding without time-dependent metadata.
"""

from __future__ import annotations

import json
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np
from PIL import Image

from .blueprint import SceneBlueprint


def quantize(image: np.ndarray) -> np.ndarray:
    """Float image, clipped to [0, 1], to 8-bit (round half up)."""
    x = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)
    return np.floor(x * 255.0 + 0.5).astype(np.uint8)


def dequantize(q: np.ndarray) -> np.ndarray:
    return np.asarray(q, dtype=np.uint8).astype(float) / 255.0


def save_png(path, image_u8: np.ndarray) -> None:
    """Write a channels-first uint8 image as RGB PNG."""
    q = np.asarray(image_u8, dtype=np.uint8)
    if q.ndim != 3 or q.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) uint8 image, got {q.shape}")
    Image.fromarray(np.transpose(q, (1, 2, 0)), mode="RGB").save(
        str(path), format="PNG")


def load_png(path) -> np.ndarray:
    """Read an RGB PNG back as a channels-first uint8 array."""
    with Image.open(str(path)) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return np.transpose(arr, (2, 0, 1))


def save_json(path, obj) -> None:
    Path(path).write_text(
        json.dumps(obj, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")


def load_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


_PALETTE = ("#e6194b", "#3cb44b", "#4363d8", "#f58231",
            "#911eb4", "#0082c8", "#f032e6", "#808000")


def _num(v: float) -> str:
    return format(v, "g")


def render_layout_svg(blueprint: SceneBlueprint) -> str:
    """Draw one labeled rectangle per object; element order fixed."""
    w, h = blueprint.canvas.width, blueprint.canvas.height
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
        f'  <title>{escape(blueprint.background_prompt)}</title>',
        f'  <rect x="0" y="0" width="{w}" height="{h}" fill="#f8f8f4"/>',
    ]
    for i, obj in enumerate(blueprint.objects):
        color = _PALETTE[i % len(_PALETTE)]
        b = obj.box
        lines.append(
            f'  <rect x="{_num(b.x)}" y="{_num(b.y)}" width="{_num(b.w)}" '
            f'height="{_num(b.h)}" fill="{color}" fill-opacity="0.18" '
            f'stroke="{color}" stroke-width="2"/>')
        lines.append(
            f'  <text x="{_num(b.x + 6)}" y="{_num(b.y + 18)}" '
            f'font-family="sans-serif" font-size="14" fill="{color}">'
            f'{escape(obj.name)}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
