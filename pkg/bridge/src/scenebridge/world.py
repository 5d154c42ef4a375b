"""Engine adapters: run the pipeline with its model calls served over HTTP.

``remote_world`` assembles a world the engine accepts, where text/image
embeddings, the combined text-plus-reference guidance gradient, reference
generation, and detection all come from a bridge service. The sampling
machinery itself (noise schedule, scene prior, perceptual background term)
stays local and analytic: the service ships gradients as arrays, so the
engine never hosts a model.
"""

from __future__ import annotations

import numpy as np
from sceneloom import (
    Detection,
    GaussianMixtureBackend,
    NoiseSchedule,
    RandomFeaturePerceptual,
    SceneBackends,
    ToyWorld,
)

from .client import BridgeClient

REMOTE_PRIOR_SIGMA = 0.8


class RemoteOracle:
    """Embedding oracle over HTTP; ships the clip gradient server-side."""

    def __init__(self, client: BridgeClient):
        self.client = client

    def embed_text(self, text: str) -> np.ndarray:
        return self.client.embed_text([text])[0]

    def embed_image(self, image: np.ndarray, mask=None) -> np.ndarray:
        return self.client.embed_image(image, mask)

    def clip_loss_and_grad(self, image: np.ndarray, mask, description: str,
                           reference: np.ndarray | None,
                           lam: float) -> tuple[float, np.ndarray]:
        return self.client.guidance_grad(image, mask, description,
                                         reference, lam)


class RemoteLibrary:
    """Reference/background generator over HTTP."""

    def __init__(self, client: BridgeClient, image_shape: tuple[int, ...]):
        self.client = client
        self.image_shape = tuple(image_shape)

    def generate(self, description: str, seed: int = 0) -> np.ndarray:
        return self.client.txt2img(description, seed=seed)


class RemoteDetector:
    """Single-label detection over HTTP."""

    def __init__(self, client: BridgeClient):
        self.client = client

    def detect(self, image: np.ndarray, label: str) -> Detection:
        d = self.client.detect(image, [label])[0]
        return Detection(present=bool(d["present"]),
                         confidence=float(d["confidence"]))


def remote_world(client_or_url, *,
                 prior_sigma: float = REMOTE_PRIOR_SIGMA) -> ToyWorld:
    """World for run_pipeline(...) whose model calls go to a bridge service.

    The local scene prior is a neutral flat-gray Gaussian; served gradients
    do the steering. Raises BridgeError if the service reports no provider.
    """
    client = client_or_url if isinstance(client_or_url, BridgeClient) \
        else BridgeClient(client_or_url)
    health = client.healthz()
    shape = tuple(health["image_shape"])
    schedule = NoiseSchedule.linear()
    scene = GaussianMixtureBackend([(1.0, np.full(shape, 0.5), prior_sigma)],
                                   schedule)
    oracle = RemoteOracle(client)
    library = RemoteLibrary(client, shape)
    detector = RemoteDetector(client)
    backends = SceneBackends(scene=scene, schedule=schedule, library=library,
                             perceptual=RandomFeaturePerceptual(shape),
                             oracle=oracle)
    return ToyWorld(schedule=schedule, oracle=oracle, scene=scene,
                    library=library, detector=detector, backends=backends,
                    labels=(), descriptions={}, background_prompt="",
                    background=np.full(shape, 0.5), prototypes=[],
                    image_shape=shape)
