"""Self-contained synthetic world the pipeline can run against offline.

The world bundles a textured scene prior (the noise predictor's only
component), a library of prototype images keyed by text, a linear embedding
oracle whose text table maps each label and description to its prototype's
embedding direction, and a sliding-window detector over the same embedding
space. Scores and detections therefore measure the same geometry, so
refinement that raises a box score also raises detection recall.

The benchmark suite uses 16x16 object boxes only. At that size the score
distributions of freshly composed content (max about 0.69) and refined
content (min about 0.72) separate cleanly; the suite threshold and detector
floor below sit inside that gap. Smaller and larger boxes straddle any
single operating point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .blueprint import BBox, Canvas, render_layout_text
from .diffusion import GaussianMixtureBackend, NoiseSchedule
from .evaluation import ToyWindowDetector
from .guidance import RandomFeaturePerceptual, ToyLinearOracle
from .refinement import SceneBackends

IMAGE_SHAPE = (3, 32, 32)
EMBED_DIM = 64
PRIOR_SIGMA = 0.8
# operating point of the 16x16-box suite, measured over the four
# quadrant cells (corner boxes converge slower than centered ones)
SUITE_TAU = 0.70
SUITE_FLOOR = 0.66
SUITE_MAX_ROUNDS = 4

OBJECT_LABELS = (
    "a crimson orb", "a teal ribbon", "an amber cube", "a violet plume",
    "a silver coil", "an emerald shard", "a coral fan", "an indigo bloom",
)
_TRAITS = (
    "glowing with a deep red sheen", "curling in smooth satin folds",
    "with softly beveled translucent faces", "of fine feathery filaments",
    "wound in tight metallic loops", "with glassy fractured edges",
    "spreading in branching fronds", "with layered midnight petals",
)
BACKGROUND_LABEL = "a softly textured backdrop"
BACKGROUND_PROMPT = "A realistic image of a softly textured backdrop"


def smooth_field(rng: np.random.Generator, shape: tuple[int, int, int] = IMAGE_SHAPE,
                 lo: float = 0.15, hi: float = 0.85,
                 smoothness: float = 4.0) -> np.ndarray:
    """Blurred-noise image with values spanning [lo, hi]."""
    c, h, w = shape
    f = np.stack([gaussian_filter(rng.normal(size=(h, w)), smoothness)
                  for _ in range(c)])
    f = (f - f.min()) / (f.max() - f.min() + 1e-12)
    return lo + (hi - lo) * f


@dataclass
class LibraryEntry:
    label: str
    mean: np.ndarray
    sigma: float
    direction: np.ndarray  # unit embedding the entry answers to


class ComponentLibrary:
    """Text-keyed prototype images; the toy text-to-image generator.

    generate() embeds the description and returns a draw from the entry
    whose direction is most aligned; sigma 0 entries return their mean
    exactly. Deterministic per (description, seed).
    """

    def __init__(self, entries: list[LibraryEntry], oracle):
        if not entries:
            raise ValueError("library needs at least one entry")
        self.entries = list(entries)
        self.oracle = oracle
        self.image_shape = self.entries[0].mean.shape

    def generate(self, description: str, seed: int = 0) -> np.ndarray:
        e = self.oracle.embed_text(description)
        n = np.linalg.norm(e)
        if n < 1e-12:
            raise ValueError("description embeds to the zero vector")
        e = e / n
        best = max(self.entries, key=lambda ent: float(e @ ent.direction))
        if best.sigma == 0.0:
            return best.mean.copy()
        rng = np.random.default_rng(seed)
        return best.mean + best.sigma * rng.normal(size=self.image_shape)


@dataclass
class ToyWorld:
    schedule: NoiseSchedule
    oracle: ToyLinearOracle
    scene: GaussianMixtureBackend
    library: ComponentLibrary
    detector: ToyWindowDetector
    backends: SceneBackends
    labels: tuple[str, ...]
    descriptions: dict[str, str]
    background_prompt: str
    background: np.ndarray
    prototypes: list[np.ndarray]
    image_shape: tuple[int, int, int] = IMAGE_SHAPE


def build_toy_world(seed: int = 0, prior_sigma: float = PRIOR_SIGMA,
                    n_components: int = 8,
                    schedule: NoiseSchedule | None = None) -> ToyWorld:
    """Assemble the synthetic world; one seed fixes every piece of it."""
    if not 1 <= n_components <= len(OBJECT_LABELS):
        raise ValueError(f"n_components must be in [1, {len(OBJECT_LABELS)}]")
    if schedule is None:
        schedule = NoiseSchedule.linear()
    rng = np.random.default_rng(seed)
    background = smooth_field(rng)
    prototypes = [smooth_field(rng, smoothness=3.0) for _ in range(n_components)]
    n = int(np.prod(IMAGE_SHAPE))
    projection = rng.normal(size=(EMBED_DIM, n)) / np.sqrt(n)
    oracle = ToyLinearOracle(image_shape=IMAGE_SHAPE, dim=EMBED_DIM,
                             projection=projection)

    def unit(v: np.ndarray) -> np.ndarray:
        return v / np.linalg.norm(v)

    labels = OBJECT_LABELS[:n_components]
    descriptions: dict[str, str] = {}
    entries = []
    bg_dir = unit(oracle.embed_image(background))
    oracle.register_text(BACKGROUND_LABEL, bg_dir)
    oracle.register_text(BACKGROUND_PROMPT, bg_dir)
    entries.append(LibraryEntry(label=BACKGROUND_LABEL, mean=background,
                                sigma=0.0, direction=bg_dir))
    for label, trait, proto in zip(labels, _TRAITS, prototypes):
        direction = unit(oracle.embed_image(proto))
        description = f"A realistic photo of {label} {trait}."
        descriptions[label] = description
        oracle.register_text(label, direction)
        oracle.register_text(description, direction)
        entries.append(LibraryEntry(label=label, mean=proto, sigma=0.0,
                                    direction=direction))

    scene = GaussianMixtureBackend([(1.0, background, prior_sigma)], schedule)
    library = ComponentLibrary(entries, oracle)
    detector = ToyWindowDetector(oracle, SUITE_FLOOR)
    backends = SceneBackends(scene=scene, schedule=schedule, library=library,
                             perceptual=RandomFeaturePerceptual(IMAGE_SHAPE),
                             oracle=oracle)
    return ToyWorld(schedule=schedule, oracle=oracle, scene=scene,
                    library=library, detector=detector, backends=backends,
                    labels=labels, descriptions=descriptions,
                    background_prompt=BACKGROUND_PROMPT, background=background,
                    prototypes=prototypes)


@dataclass
class SuitePrompt:
    """One benchmark prompt plus the scripted replies that realize it."""

    caption: str
    script: list[str]
    names: list[str]
    boxes: dict[str, BBox]


def toy_suite(world: ToyWorld, n_prompts: int = 50, k: int = 3,
              seed: int = 0, canvas: Canvas = Canvas()) -> list[SuitePrompt]:
    """Deterministic benchmark prompts with disjoint grid-aligned boxes.

    Each prompt places 2 or 3 distinct objects on 16x16 image cells (scaled
    to the blueprint canvas), and scripts k identical layout replies plus
    one description reply for the scripted-completion backend.
    """
    rng = np.random.default_rng(seed)
    c, h, w = world.image_shape
    sx, sy = canvas.width / w, canvas.height / h
    # the four disjoint 16x16 cells of the 32x32 grid
    cells = [(0, 0), (0, 16), (16, 0), (16, 16)]
    prompts: list[SuitePrompt] = []
    for _ in range(n_prompts):
        n_obj = int(rng.integers(2, 4))
        picked = rng.permutation(len(world.labels))[:n_obj]
        names = [world.labels[int(i)] for i in picked]
        slots = rng.permutation(len(cells))[:n_obj]
        boxes: dict[str, BBox] = {}
        for name, si in zip(names, slots):
            y, x = cells[int(si)]
            boxes[name] = BBox(x * sx, y * sy, 16.0 * sx, 16.0 * sy)
        caption = "A scene with " + ", ".join(names[:-1]) + f" and {names[-1]}" \
            if n_obj > 1 else f"A scene with {names[0]}"
        layout_reply = render_layout_text(boxes, world.background_prompt)
        desc_reply = "{" + ", ".join(
            f"{name}: {world.descriptions[name]}" for name in names) + "}"
        prompts.append(SuitePrompt(caption=caption,
                                   script=[layout_reply] * k + [desc_reply],
                                   names=names, boxes=boxes))
    return prompts
