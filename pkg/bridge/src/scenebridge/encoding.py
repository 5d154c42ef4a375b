"""Wire encodings for images, masks, and vectors.

Image payloads travel either as base64 PNG ({"png_b64": ...}, 8-bit, the
canonical form for real images) or as nested float arrays ({"array": ...},
lossless, for points like clean-image estimates that are evaluated off the
8-bit grid). Masks are nested 0/1 integer rows; vectors are plain float
lists. Arrays use the (channels, height, width) layout throughout.
"""

from __future__ import annotations

import base64
import io

import numpy as np
from PIL import Image


class EncodingError(ValueError):
    """Payload does not decode to the expected array."""


def png_b64_from_array(image: np.ndarray) -> str:
    """Float image in [0, 1], shape (C, H, W) -> base64 PNG string."""
    x = np.asarray(image, dtype=float)
    if x.ndim != 3 or x.shape[0] not in (1, 3):
        raise EncodingError(f"expected (C, H, W) with 1 or 3 channels, "
                            f"got {x.shape}")
    u8 = np.floor(np.clip(x, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    mode = "RGB" if u8.shape[0] == 3 else "L"
    pil = Image.fromarray(np.moveaxis(u8, 0, -1).squeeze(), mode=mode)
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def array_from_png_b64(data: str) -> np.ndarray:
    """Base64 PNG -> float image in [0, 1], shape (C, H, W)."""
    try:
        raw = base64.b64decode(data, validate=True)
        pil = Image.open(io.BytesIO(raw))
        pil.load()
    except Exception as exc:
        raise EncodingError(f"invalid PNG payload: {exc}") from exc
    arr = np.asarray(pil.convert("RGB"), dtype=np.uint8)
    return np.moveaxis(arr, -1, 0).astype(float) / 255.0


def encode_image(image: np.ndarray, *, exact: bool = False) -> dict:
    """Image -> wire object; exact=True keeps full float precision."""
    if exact:
        return {"array": np.asarray(image, dtype=float).tolist()}
    return {"png_b64": png_b64_from_array(image)}


def decode_image(obj, expect_shape: tuple[int, ...] | None = None) -> np.ndarray:
    """Wire object -> float (C, H, W) image array."""
    if not isinstance(obj, dict):
        raise EncodingError("image payload must be an object")
    if "png_b64" in obj:
        out = array_from_png_b64(obj["png_b64"])
    elif "array" in obj:
        out = np.asarray(obj["array"], dtype=float)
        if out.ndim != 3:
            raise EncodingError(f"image array has rank {out.ndim}, expected 3")
    else:
        raise EncodingError("image payload needs 'png_b64' or 'array'")
    if expect_shape is not None and out.shape != tuple(expect_shape):
        raise EncodingError(f"image shape {out.shape}, "
                            f"expected {tuple(expect_shape)}")
    return out


def encode_mask(mask) -> list:
    """Mask dataclass or (H, W) array -> nested 0/1 integer rows."""
    data = getattr(mask, "data", mask)
    return np.asarray(data).astype(int).tolist()


def decode_mask(obj) -> np.ndarray:
    """Nested 0/1 rows -> (H, W) uint8 array."""
    arr = np.asarray(obj)
    if arr.ndim != 2:
        raise EncodingError(f"mask has rank {arr.ndim}, expected 2")
    if not np.isin(arr, (0, 1)).all():
        raise EncodingError("mask entries must be 0 or 1")
    return arr.astype(np.uint8)
