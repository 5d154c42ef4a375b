"""Object-presence recall over generated images, and a toy detector.

The recall metric is the fraction of blueprint objects a detector finds
anywhere in the corresponding image, pooled over all prompts with equal
weight per object.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from scipy.stats import binomtest

from .blueprint import Mask


class EmptyBatch(ValueError):
    """Recall is undefined over zero prompts or zero objects."""


@dataclass
class Detection:
    present: bool
    confidence: float


@dataclass
class PromptRecall:
    id: str
    names: list[str]
    present: list[bool]

    @property
    def recall(self) -> float:
        return sum(self.present) / len(self.present)


@dataclass
class ParResult:
    """Per-prompt recalls plus the pooled per-object recall."""

    per_prompt: list[PromptRecall]
    overall_par: float
    n_objects: int
    n_present: int

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "overall_par": self.overall_par,
            "per_prompt": [
                {"id": p.id, "recall": p.recall,
                 "objects": [{"name": n, "present": bool(f)}
                             for n, f in zip(p.names, p.present)]}
                for p in self.per_prompt
            ],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("id,object,present\n")
        for p in self.per_prompt:
            for name, flag in zip(p.names, p.present):
                field = f'"{name}"' if "," in name else name
                buf.write(f"{p.id},{field},{int(flag)}\n")
        return buf.getvalue()


def par_score(images_with_blueprints: list, detector, ids=None) -> ParResult:
    """Pooled object-presence recall: (objects found) / (objects requested).

    ``images_with_blueprints`` pairs each image with its blueprint; presence
    is judged image-globally, not at the object's box. Prompts with no
    objects are rejected rather than counted as vacuously satisfied.
    """
    if not images_with_blueprints:
        raise EmptyBatch("no images to evaluate")
    if ids is None:
        ids = [f"prompt-{i:03d}" for i in range(len(images_with_blueprints))]
    if len(ids) != len(images_with_blueprints):
        raise ValueError("ids length does not match batch length")
    per_prompt: list[PromptRecall] = []
    n_objects = 0
    n_present = 0
    for run_id, (image, bp) in zip(ids, images_with_blueprints):
        if not bp.objects:
            raise EmptyBatch(f"blueprint for {run_id} has no objects")
        names = [o.name for o in bp.objects]
        flags = [detector.detect(image, name).present for name in names]
        n_objects += len(flags)
        n_present += sum(flags)
        per_prompt.append(PromptRecall(id=run_id, names=names, present=flags))
    return ParResult(per_prompt=per_prompt,
                     overall_par=n_present / n_objects,
                     n_objects=n_objects, n_present=n_present)


class ToyWindowDetector:
    """Presence scan over a fixed family of square windows.

    An object counts as present when some window's region embedding has
    cosine similarity to the label's text embedding at or above the floor.
    Featureless windows (zero embedding) never fire.
    """

    def __init__(self, oracle, similarity_floor: float,
                 window_sizes: tuple[int, ...] = (8, 16, 24), stride: int = 8,
                 include_full: bool = True):
        if not -1.0 < similarity_floor < 1.0:
            raise ValueError("similarity_floor must be in (-1, 1)")
        self.oracle = oracle
        self.floor = float(similarity_floor)
        _, height, width = oracle.image_shape
        masks: list[Mask] = []
        spans = [(y, x, s, s) for s in window_sizes
                 for y in range(0, height - s + 1, stride)
                 for x in range(0, width - s + 1, stride)]
        if include_full:
            spans.append((0, 0, height, width))
        for y, x, h, w in spans:
            data = np.zeros((height, width), dtype=np.uint8)
            data[y:y + h, x:x + w] = 1
            masks.append(Mask(width=width, height=height, data=data))
        self._masks = masks

    def best_similarity(self, image: np.ndarray, label: str) -> float:
        """Max window cosine to the label embedding; -1.0 if all are empty."""
        target = self.oracle.embed_text(label)
        nt = np.linalg.norm(target)
        if nt < 1e-12:
            return -1.0
        best = -1.0
        for mask in self._masks:
            e = self.oracle.embed_image(image, mask)
            n = np.linalg.norm(e)
            if n < 1e-9:
                continue
            best = max(best, float(e @ target / (n * nt)))
        return best

    def detect(self, image: np.ndarray, label: str) -> Detection:
        best = self.best_similarity(image, label)
        return Detection(present=best >= self.floor,
                         confidence=(best + 1.0) / 2.0)


def toy_detector(oracle, similarity_floor: float, **kwargs) -> ToyWindowDetector:
    return ToyWindowDetector(oracle, similarity_floor, **kwargs)


def one_sided_sign_test(differences) -> float:
    """p-value for "paired differences lean positive"; ties are dropped."""
    pos = sum(1 for d in differences if d > 0)
    neg = sum(1 for d in differences if d < 0)
    if pos + neg == 0:
        return 1.0
    return float(binomtest(pos, pos + neg, 0.5, alternative="greater").pvalue)
