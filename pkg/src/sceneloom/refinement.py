"""Per-object score-and-recompose refinement of a composed image.

Objects are visited background-to-foreground. Each object's box region is
scored against its description; regions below the threshold are recomposed
under guidance toward a freshly generated reference prototype, up to a round
limit, keeping the best-scoring candidate. Pixels outside the visited boxes
are untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blueprint import BBox, Canvas, SceneBlueprint, box_to_mask, sort_for_refinement
from .diffusion import NoiseSchedule, NonFiniteState, guided_compose
from .guidance import GuidanceSpec


class BackendError(RuntimeError):
    """Reference generation failed or returned an unusable image."""


@dataclass
class RefinementPolicy:
    """Acceptance threshold and retry budget for one refinement pass."""

    score_threshold: float = 0.5
    max_rounds: int = 3
    keep_best: bool = True
    n_inner: int = 1
    steps: int = 50

    def validate(self) -> None:
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.n_inner < 1:
            raise ValueError("n_inner must be >= 1")


@dataclass
class ObjectReport:
    name: str
    initial_score: float
    final_score: float
    rounds: int
    accepted: bool


@dataclass
class RefinementReport:
    """Per-object scores in the order the objects were visited."""

    objects: list[ObjectReport]

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "objects": [
                {"name": o.name, "initial_score": o.initial_score,
                 "final_score": o.final_score, "rounds": o.rounds,
                 "accepted": o.accepted}
                for o in self.objects
            ],
        }


@dataclass
class SceneBackends:
    """Bundle of engines one composition pass needs.

    ``scene`` predicts noise for the scene prior, ``library`` generates
    reference images from descriptions, ``perceptual`` (optional) scores
    background drift inside the guidance loss, ``oracle`` (optional)
    supplies embeddings for stages whose call signature carries no oracle.
    """

    scene: object
    schedule: NoiseSchedule
    library: object
    perceptual: object | None = None
    oracle: object | None = None


def box_on_image(box: BBox, canvas: Canvas, image_shape: tuple[int, ...]) -> BBox:
    """Map a canvas-space box onto an image's own pixel grid."""
    return box.scaled(image_shape[-1] / canvas.width,
                      image_shape[-2] / canvas.height)


def score_box(image: np.ndarray, box: BBox, description: str, oracle) -> float:
    """Cosine similarity between the box region's embedding and the text.

    ``box`` is in the image's pixel grid. Returns 0.0 when either embedding
    is numerically zero (a featureless region carries no signal). A box that
    covers no pixels on this grid raises DegenerateBox.
    """
    x = np.asarray(image, dtype=float)
    mask = box_to_mask(box, Canvas(width=x.shape[-1], height=x.shape[-2]))
    a = oracle.embed_image(x, mask)
    b = oracle.embed_text(description)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    return float(a @ b / (na * nb))


def make_reference(description: str, generator_backend, seed: int) -> np.ndarray:
    """Generate a reference prototype image for a description.

    Deterministic per (description, seed). Backend failures and non-finite
    or misshapen outputs surface as BackendError.
    """
    if not description.strip():
        raise ValueError("description must be non-empty")
    try:
        image = generator_backend.generate(description, seed=seed)
    except BackendError:
        raise
    except Exception as exc:
        raise BackendError(f"reference generation failed: {exc}") from exc
    image = np.asarray(image, dtype=float)
    if image.ndim != 3:
        raise BackendError(f"reference has rank {image.ndim}, expected 3")
    if not np.all(np.isfinite(image)):
        raise BackendError("reference image is not finite")
    return image


def refine_image(x_initial: np.ndarray, blueprint: SceneBlueprint,
                 policy: RefinementPolicy, oracle, backends: SceneBackends,
                 seed: int, *, lam: float = 1.0,
                 gamma: float = 100.0) -> tuple[np.ndarray, RefinementReport]:
    """Refine each below-threshold box region; return image plus report.

    Objects are processed in sort_for_refinement order, sequentially, so
    later (foreground) boxes see earlier edits. Each round regenerates the
    reference with a fresh derived seed and recomposes from the best image
    so far; candidates are clipped to the pixel range before scoring. With
    keep_best a round can never lower an object's score. A non-finite
    sampler state voids only that round. Pixels outside an object's box are
    preserved exactly by the composition blend.
    """
    policy.validate()
    x = np.asarray(x_initial, dtype=float).copy()
    reports: list[ObjectReport] = []
    for j, obj in enumerate(sort_for_refinement(blueprint)):
        ibox = box_on_image(obj.box, blueprint.canvas, x.shape)
        mask = box_to_mask(ibox, Canvas(width=x.shape[-1], height=x.shape[-2]))
        s0 = score_box(x, ibox, obj.description, oracle)
        best_x, best_s = x, s0
        rounds = 0
        if not s0 >= policy.score_threshold:
            for r in range(policy.max_rounds):
                rounds += 1
                child = np.random.SeedSequence(seed, spawn_key=(j, r))
                ref_seed, compose_seed = (int(v) for v in child.generate_state(2))
                reference = make_reference(obj.description, backends.library,
                                           ref_seed)
                spec = GuidanceSpec(description=obj.description, mask=mask,
                                    reference=reference, lam=lam, gamma=gamma,
                                    x_init=best_x)
                try:
                    cand = guided_compose(
                        best_x, mask, spec, backends.scene, backends.schedule,
                        steps=policy.steps, n_inner=policy.n_inner,
                        seed=compose_seed, oracle=oracle,
                        perceptual=backends.perceptual)
                except NonFiniteState:
                    continue
                cand = np.clip(cand, 0.0, 1.0)
                s = score_box(cand, ibox, obj.description, oracle)
                if s > best_s or not policy.keep_best:
                    best_x, best_s = cand, s
                if best_s >= policy.score_threshold:
                    break
        x = best_x
        reports.append(ObjectReport(name=obj.name, initial_score=s0,
                                    final_score=best_s, rounds=rounds,
                                    accepted=bool(best_s >= policy.score_threshold)))
    return x, RefinementReport(objects=reports)
