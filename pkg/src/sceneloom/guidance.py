"""Guidance losses and their exact gradients over a pluggable embedding oracle.

The composition sampler steers the clean-image estimate with the gradient of
loss = cosine(region embedding, text embedding)
     + lambda * cosine(region embedding, reference embedding)
     + gamma * background term,
computed analytically: the oracle exposes a vector-Jacobian product of its
image embedding, so no autodiff framework is involved.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import numpy as np

from .blueprint import Mask


class ShapeMismatch(ValueError):
    """Array arguments disagree on shape."""


class ZeroVector(ValueError):
    """Cosine loss of a zero-length embedding is undefined."""


class NonFiniteGradient(RuntimeError):
    """Assembled gradient contains NaN or Inf."""


def as_mask_channels(mask, shape: tuple[int, ...]) -> np.ndarray:
    """Mask (dataclass or (H,W)/(C,H,W) array) -> float array of ``shape``."""
    data = mask.data if isinstance(mask, Mask) else np.asarray(mask)
    data = data.astype(float)
    if data.shape == shape:
        return data
    if data.shape == shape[-2:]:
        return np.broadcast_to(data, shape).copy()
    raise ShapeMismatch(f"mask shape {data.shape} does not fit image {shape}")


@dataclass
class GuidanceSpec:
    """One refinement's guidance bundle.

    ``reference`` may be None (text-only guidance, reference term dropped).
    ``x_init`` is only consulted when gamma > 0.
    """

    description: str
    mask: object  # Mask or array
    reference: np.ndarray | None = None
    lam: float = 1.0
    gamma: float = 100.0
    x_init: np.ndarray | None = None


class ToyLinearOracle:
    """Deterministic linear stand-in for a CLIP-style encoder.

    Images embed through a fixed seeded projection of centered, mask-selected
    pixels; the Jacobian is exactly the transpose map. Text embeds through a
    registered lookup table keyed by normalized text, with a hash-seeded
    Gaussian direction for unknown strings.
    """

    def __init__(self, image_shape: tuple[int, int, int] = (3, 32, 32),
                 dim: int = 64, seed: int = 0, center: float = 0.5,
                 projection: np.ndarray | None = None):
        self.image_shape = tuple(image_shape)
        self.dim = dim
        self.center = center
        n = int(np.prod(image_shape))
        if projection is None:
            rng = np.random.default_rng(seed)
            projection = rng.normal(size=(dim, n)) / np.sqrt(n)
        else:
            projection = np.asarray(projection, dtype=float)
            if projection.shape != (dim, n):
                raise ShapeMismatch(
                    f"projection shape {projection.shape}, expected {(dim, n)}")
        self.projection = projection
        self._table: dict[str, np.ndarray] = {}

    @staticmethod
    def _norm_text(text: str) -> str:
        return re.sub(r"\s+", " ", text.strip().lower())

    def register_text(self, text: str, vector: np.ndarray) -> None:
        v = np.asarray(vector, dtype=float)
        if v.shape != (self.dim,):
            raise ShapeMismatch(f"text vector must have dim {self.dim}")
        self._table[self._norm_text(text)] = v.copy()

    def embed_text(self, text: str) -> np.ndarray:
        key = self._norm_text(text)
        if key in self._table:
            return self._table[key].copy()
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        v = rng.normal(size=self.dim)
        return v / np.linalg.norm(v)

    def _select(self, image: np.ndarray, mask) -> np.ndarray:
        x = np.asarray(image, dtype=float)
        if x.shape != self.image_shape:
            raise ShapeMismatch(
                f"image shape {x.shape}, oracle expects {self.image_shape}")
        v = x - self.center
        if mask is not None:
            v = v * as_mask_channels(mask, self.image_shape)
        return v

    def embed_image(self, image: np.ndarray, mask=None) -> np.ndarray:
        return self.projection @ self._select(image, mask).ravel()

    def image_jacobian_vprod(self, image: np.ndarray, mask,
                             cotangent: np.ndarray) -> np.ndarray:
        """Exact VJP of embed_image at ``image`` (linear, image-independent)."""
        del image  # linear map: the Jacobian does not depend on the point
        g = (self.projection.T @ np.asarray(cotangent, dtype=float))
        g = g.reshape(self.image_shape)
        if mask is not None:
            g = g * as_mask_channels(mask, self.image_shape)
        return g


def cosine_loss(a: np.ndarray, b: np.ndarray) -> float:
    """1 - cos(a, b), in [0, 2]. Scale-invariant in both arguments."""
    loss, _ = cosine_loss_and_grad(a, b)
    return loss


def cosine_loss_and_grad(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    """Cosine loss plus its gradient with respect to ``a``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        raise ZeroVector("cosine loss needs two non-zero vectors")
    ah, bh = a / na, b / nb
    cs = float(ah @ bh)
    grad = -(bh - cs * ah) / na
    return 1.0 - cs, grad


class RandomFeaturePerceptual:
    """Seeded random-filter perceptual distance (pretrained-net stand-in).

    Features are a fixed 3x3 valid correlation of the image with seeded
    filters (a linear map), compared by cosine distance. The gradient is the
    exact transposed correlation pushed through the cosine term. Degenerate
    inputs whose features have (near-)zero norm contribute zero loss and
    zero gradient.
    """

    def __init__(self, image_shape: tuple[int, int, int] = (3, 32, 32),
                 n_filters: int = 8, seed: int = 7):
        self.image_shape = tuple(image_shape)
        rng = np.random.default_rng(seed)
        c = image_shape[0]
        self.filters = rng.normal(size=(n_filters, c, 3, 3)) / 3.0

    def _features(self, image: np.ndarray) -> np.ndarray:
        x = np.asarray(image, dtype=float)
        if x.shape != self.image_shape:
            raise ShapeMismatch(
                f"image shape {x.shape}, perceptual expects {self.image_shape}")
        c, h, w = x.shape
        ho, wo = h - 2, w - 2
        out = np.empty((self.filters.shape[0], ho, wo))
        for k in range(self.filters.shape[0]):
            acc = np.zeros((ho, wo))
            for di in range(3):
                for dj in range(3):
                    acc += np.tensordot(self.filters[k, :, di, dj],
                                        x[:, di:di + ho, dj:dj + wo], axes=1)
            out[k] = acc
        return out

    def _features_vjp(self, cotangent: np.ndarray) -> np.ndarray:
        c, h, w = self.image_shape
        ho, wo = h - 2, w - 2
        g = np.zeros(self.image_shape)
        for di in range(3):
            for dj in range(3):
                # filters: (K, C); cotangent: (K, ho, wo) -> (C, ho, wo)
                g[:, di:di + ho, dj:dj + wo] += np.tensordot(
                    self.filters[:, :, di, dj], cotangent, axes=(0, 0))
        return g

    def __call__(self, a: np.ndarray, b: np.ndarray) -> float:
        return self.loss_and_grad(a, b)[0]

    def loss_and_grad(self, a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
        """Distance plus gradient with respect to the first image."""
        fa = self._features(a)
        fb = self._features(b)
        if np.linalg.norm(fa) < 1e-12 or np.linalg.norm(fb) < 1e-12:
            return 0.0, np.zeros(self.image_shape)
        loss, g_feat = cosine_loss_and_grad(fa.ravel(), fb.ravel())
        grad = self._features_vjp(g_feat.reshape(fa.shape))
        return loss, grad


def clip_loss(x0_hat: np.ndarray, spec: GuidanceSpec, oracle) -> float:
    """Text term plus lambda-weighted reference term (reference optional)."""
    e_m = oracle.embed_image(x0_hat, spec.mask)
    loss = cosine_loss(e_m, oracle.embed_text(spec.description))
    if spec.reference is not None:
        loss += spec.lam * cosine_loss(e_m, oracle.embed_image(spec.reference))
    return loss


def bg_loss(x0_hat: np.ndarray, x_init: np.ndarray, mask,
            perceptual=None) -> float:
    """Background preservation: L2 outside the mask plus a perceptual term."""
    loss, _ = bg_loss_and_grad(x0_hat, x_init, mask, perceptual)
    return loss


def bg_loss_and_grad(x0_hat: np.ndarray, x_init: np.ndarray, mask,
                     perceptual=None) -> tuple[float, np.ndarray]:
    x = np.asarray(x0_hat, dtype=float)
    xi = np.asarray(x_init, dtype=float)
    if x.shape != xi.shape:
        raise ShapeMismatch(f"x0_hat {x.shape} vs x_init {xi.shape}")
    comp = 1.0 - as_mask_channels(mask, x.shape)
    d = (x - xi) * comp
    nrm = float(np.linalg.norm(d))
    # unsquared L2; subgradient 0 at the (non-differentiable) zero point
    grad = d / nrm if nrm > 1e-12 else np.zeros_like(d)
    loss = nrm
    if perceptual is not None:
        p_loss, p_grad = perceptual.loss_and_grad(x * comp, xi * comp)
        loss += p_loss
        grad = grad + p_grad * comp
    return loss, grad


def guidance_loss_and_grad(x0_hat: np.ndarray, spec: GuidanceSpec, oracle,
                           perceptual=None) -> tuple[float, np.ndarray]:
    """Total guidance loss and its analytic gradient w.r.t. x0_hat.

    loss = clip_loss + gamma * bg_loss. With gamma = 0 the background branch
    is skipped entirely and spec.x_init is never read.

    An oracle may expose clip_loss_and_grad(image, mask, description,
    reference, lam) returning the text-plus-reference term and its pixel
    gradient in one call; remote encoders use this to compute the gradient
    where the model lives and ship it back as an array. Oracles without it
    get the term assembled here from their embeddings and VJP.
    """
    x = np.asarray(x0_hat, dtype=float)
    if hasattr(oracle, "clip_loss_and_grad"):
        loss, grad = oracle.clip_loss_and_grad(x, spec.mask, spec.description,
                                               spec.reference, spec.lam)
        loss = float(loss)
        grad = np.asarray(grad, dtype=float)
        if grad.shape != x.shape:
            raise ShapeMismatch(
                f"oracle gradient shape {grad.shape}, image is {x.shape}")
    else:
        e_m = oracle.embed_image(x, spec.mask)
        l_text, g_text = cosine_loss_and_grad(e_m,
                                              oracle.embed_text(spec.description))
        loss = l_text
        g_embed = g_text
        if spec.reference is not None:
            l_ref, g_ref = cosine_loss_and_grad(e_m,
                                                oracle.embed_image(spec.reference))
            loss += spec.lam * l_ref
            g_embed = g_embed + spec.lam * g_ref
        grad = oracle.image_jacobian_vprod(x, spec.mask, g_embed)

    if spec.gamma > 0.0:
        if spec.x_init is None:
            raise ValueError("gamma > 0 requires spec.x_init")
        l_bg, g_bg = bg_loss_and_grad(x, spec.x_init, spec.mask, perceptual)
        loss += spec.gamma * l_bg
        grad = grad + spec.gamma * g_bg

    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("guidance loss or gradient is not finite")
    return float(loss), grad
