"""Model providers behind the service endpoints.

A provider owns the actual models: text/image encoders with a guidance
gradient, a text-to-image generator, an exemplar-guided compositor, and an
open-vocabulary detector. The default provider is a deterministic offline
stand-in built on the engine's analytic world, so the full HTTP contract is
testable without model weights; real model stacks plug in through
``load_provider`` with a ``module:factory`` path.
"""

from __future__ import annotations

from importlib import import_module

import numpy as np
from sceneloom import GuidanceSpec, build_toy_world, guidance_loss_and_grad, guided_compose


class ProviderLoadError(RuntimeError):
    """The configured provider could not be constructed."""


class _ExemplarOracle:
    """Oracle proxy whose text embedding is a fixed exemplar direction.

    Lets the text-guided sampler run exemplar-only composition: the region
    is pulled toward the reference image's embedding, no text table needed.
    """

    def __init__(self, oracle, direction: np.ndarray):
        self._oracle = oracle
        self._direction = np.asarray(direction, dtype=float)

    def embed_text(self, text: str) -> np.ndarray:
        return self._direction.copy()

    def embed_image(self, image, mask=None) -> np.ndarray:
        return self._oracle.embed_image(image, mask)

    def image_jacobian_vprod(self, image, mask, cotangent) -> np.ndarray:
        return self._oracle.image_jacobian_vprod(image, mask, cotangent)


class ToyProvider:
    """Deterministic offline provider over the engine's analytic world.

    Every operation is a pure function of its arguments plus the provider
    seed; served results are reproducible run to run.
    """

    def __init__(self, seed: int = 0):
        self.world = build_toy_world(seed)
        self.model_id = f"toy-linear/seed{seed}"
        self.image_shape = tuple(self.world.image_shape)
        self.embed_dim = self.world.oracle.dim

    def embed_text(self, texts: list[str]) -> np.ndarray:
        return np.stack([self.world.oracle.embed_text(t) for t in texts])

    def embed_image(self, image: np.ndarray, mask=None) -> np.ndarray:
        return self.world.oracle.embed_image(image, mask)

    def guidance_grad(self, image: np.ndarray, mask, text: str,
                      ref_image: np.ndarray | None,
                      lam: float) -> tuple[float, np.ndarray]:
        spec = GuidanceSpec(description=text, mask=mask, reference=ref_image,
                            lam=lam, gamma=0.0, x_init=None)
        return guidance_loss_and_grad(image, spec, self.world.oracle)

    def txt2img(self, prompt: str, steps: int, seed: int) -> np.ndarray:
        # the analytic generator needs no iterative sampler; steps is a
        # real-model knob and is accepted but unused here
        del steps
        return np.clip(self.world.library.generate(prompt, seed=seed),
                       0.0, 1.0)

    def compose(self, source: np.ndarray, mask, ref: np.ndarray,
                steps: int, seed: int) -> np.ndarray:
        direction = self.world.oracle.embed_image(ref)
        oracle = _ExemplarOracle(self.world.oracle, direction)
        spec = GuidanceSpec(description="(exemplar)", mask=mask,
                            reference=None, lam=0.0, gamma=0.0, x_init=None)
        out = guided_compose(source, mask, spec, self.world.scene,
                             self.world.schedule, steps=steps, seed=seed,
                             oracle=oracle)
        return np.clip(out, 0.0, 1.0)

    def detect(self, image: np.ndarray, labels: list[str]) -> list[dict]:
        out = []
        for label in labels:
            d = self.world.detector.detect(image, label)
            out.append({"label": label, "present": bool(d.present),
                        "confidence": float(d.confidence)})
        return out


def load_provider(spec: str | None):
    """Build a provider from a spec string.

    None or "toy" -> ToyProvider(); "toy:SEED" -> seeded variant;
    "package.module:factory" -> imported zero-argument factory. Failures
    raise ProviderLoadError, which the service surfaces as 503.
    """
    spec = (spec or "toy").strip()
    if spec == "toy":
        return ToyProvider()
    if spec.startswith("toy:"):
        try:
            return ToyProvider(seed=int(spec.split(":", 1)[1]))
        except ValueError as exc:
            raise ProviderLoadError(f"bad toy seed in {spec!r}") from exc
    if ":" not in spec:
        raise ProviderLoadError(
            f"provider spec {spec!r} is not 'toy', 'toy:SEED', "
            f"or 'module:factory'")
    mod_name, attr = spec.split(":", 1)
    try:
        factory = getattr(import_module(mod_name), attr)
        return factory()
    except Exception as exc:
        raise ProviderLoadError(f"loading provider {spec!r} failed: {exc}") \
            from exc
