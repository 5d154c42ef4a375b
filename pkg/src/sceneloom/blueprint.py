"""Scene blueprint types, LLM reply parsing, layout geometry, and masks.

A scene blueprint decomposes a long prompt into per-object bounding boxes,
per-object descriptions, and a background prompt. Boxes live on a real-valued
512x512 canvas and are only rasterized to integer pixels at mask extraction.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

DEFAULT_CANVAS = 512


class BlueprintError(ValueError):
    """Base class for blueprint parsing and validation failures."""


class MissingSection(BlueprintError):
    """Reply lacks the Objects list or the Background prompt line."""


class MalformedTuple(BlueprintError):
    """An object tuple has the wrong arity or non-numeric coordinates."""


class EmptyLayout(BlueprintError):
    """The Objects list parsed to zero entries."""


class NoDictionaryFound(BlueprintError):
    """Description reply contains no dictionary-like block."""


class InconsistentNames(BlueprintError):
    """Layouts in one set disagree on the object name set."""


class DegenerateBox(BlueprintError):
    """Box rounds to zero area at rasterization."""


class ValidationError(BlueprintError):
    """Assembled blueprint violates an invariant."""


@dataclass(frozen=True)
class Canvas:
    width: int = DEFAULT_CANVAS
    height: int = DEFAULT_CANVAS


@dataclass(frozen=True)
class BBox:
    """Axis-aligned rectangle: top-left corner plus width and height.

    Coordinates are real-valued; ``box_to_mask`` is the only place they are
    rounded to pixels.
    """

    x: float
    y: float
    w: float
    h: float

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]

    def scaled(self, sx: float, sy: float) -> "BBox":
        return BBox(self.x * sx, self.y * sy, self.w * sx, self.h * sy)

    def moved_to(self, x: float, y: float) -> "BBox":
        return BBox(x, y, self.w, self.h)

    def clamped(self, canvas: Canvas) -> "BBox":
        """Clamp into the canvas, shrinking only boxes wider than the canvas."""
        w = min(self.w, float(canvas.width))
        h = min(self.h, float(canvas.height))
        x = min(max(self.x, 0.0), canvas.width - w)
        y = min(max(self.y, 0.0), canvas.height - h)
        return BBox(x, y, w, h)


@dataclass
class ObjectSpec:
    name: str
    box: BBox
    description: str = ""


@dataclass
class SceneBlueprint:
    """Objects with boxes and descriptions, plus a background prompt."""

    objects: list[ObjectSpec]
    background_prompt: str
    canvas: Canvas = field(default_factory=Canvas)

    def validate(self) -> None:
        if not self.objects:
            raise ValidationError("blueprint has no objects")
        if not self.background_prompt.strip():
            raise ValidationError("background prompt is empty")
        seen: set[str] = set()
        for obj in self.objects:
            if not obj.name.strip():
                raise ValidationError("object with empty name")
            if not obj.description.strip():
                raise ValidationError(f"object {obj.name!r} has no description")
            key = normalize_name(obj.name)
            if key in seen:
                raise ValidationError(f"duplicate object name {obj.name!r}")
            seen.add(key)
            b = obj.box
            if b.w <= 0 or b.h <= 0:
                raise ValidationError(f"non-positive box for {obj.name!r}")
            if b.x < -1e-9 or b.y < -1e-9 or b.x + b.w > self.canvas.width + 1e-9 \
                    or b.y + b.h > self.canvas.height + 1e-9:
                raise ValidationError(f"box outside canvas for {obj.name!r}")


@dataclass
class LayoutSet:
    """k candidate layouts over an identical object name set."""

    layouts: list[dict[str, BBox]]

    @property
    def k(self) -> int:
        return len(self.layouts)


@dataclass
class Mask:
    """Binary pixel grid, 1 inside the region."""

    width: int
    height: int
    data: np.ndarray  # (height, width) uint8 in {0,1}

    @property
    def popcount(self) -> int:
        return int(self.data.sum())


_ARTICLE_RE = re.compile(r"^(?:a|an|the)\s+", re.IGNORECASE)


def normalize_name(name: str) -> str:
    """Lowercase, strip one leading article, collapse whitespace."""
    out = _ARTICLE_RE.sub("", name.strip().lower())
    return re.sub(r"\s+", " ", out)


# --- reply parsing ---------------------------------------------------------

_OBJECTS_HEAD_RE = re.compile(r"objects\s*:", re.IGNORECASE)
_BACKGROUND_RE = re.compile(r"background\s+prompt\s*:\s*(.*)", re.IGNORECASE)
_TUPLE_RE = re.compile(
    r"\(\s*['\"](.*?)['\"]\s*,\s*\[(.*?)\]\s*\)", re.DOTALL)


def _balanced_span(text: str, start: int, open_ch: str, close_ch: str) -> tuple[int, int] | None:
    """Span of the first balanced open..close group at or after ``start``."""
    lo = text.find(open_ch, start)
    if lo < 0:
        return None
    depth = 0
    for i in range(lo, len(text)):
        if text[i] == open_ch:
            depth += 1
        elif text[i] == close_ch:
            depth -= 1
            if depth == 0:
                return lo, i + 1
    return None


def parse_layout_response(text: str) -> tuple[dict[str, BBox], str]:
    """Parse one layout reply into (name -> box, background prompt).

    Tolerates surrounding prose; the Objects list is the first bracketed
    list after an "Objects:" marker, holding ('name', [x, y, w, h]) tuples
    with real coordinates.
    """
    head = _OBJECTS_HEAD_RE.search(text)
    if head is None:
        raise MissingSection("no 'Objects:' section in reply")
    span = _balanced_span(text, head.end(), "[", "]")
    if span is None:
        raise MissingSection("'Objects:' present but no bracketed list follows")
    body = text[span[0] + 1:span[1] - 1]

    layout: dict[str, BBox] = {}
    for m in _TUPLE_RE.finditer(body):
        name = re.sub(r"\s+", " ", m.group(1).strip())
        coords = [c for c in (p.strip() for p in m.group(2).split(",")) if c]
        if len(coords) != 4:
            raise MalformedTuple(
                f"box for {name!r} has {len(coords)} coordinates, expected 4")
        try:
            vals = [float(c) for c in coords]
        except ValueError as exc:
            raise MalformedTuple(f"non-numeric coordinate for {name!r}") from exc
        layout[name] = BBox(*vals)
    if not layout:
        raise EmptyLayout("Objects list holds no object tuples")

    bg = _BACKGROUND_RE.search(text)
    if bg is None:
        raise MissingSection("no 'Background prompt:' line in reply")
    return layout, bg.group(1).strip()


def _key_pattern(name: str) -> re.Pattern[str]:
    """Colon-anchored, article-tolerant pattern locating ``name`` as a key."""
    tokens = [re.escape(t) for t in normalize_name(name).split()]
    inner = r"\s+".join(tokens)
    return re.compile(
        r"(?:\b(?:a|an|the)\s+)?" + inner + r"\s*['\"]?\s*:", re.IGNORECASE)


def _clean_description(raw: str) -> str:
    """Collapse line wraps and strip stray quotes/commas from a value."""
    out = re.sub(r"\s+", " ", raw).strip()
    out = out.strip(",").strip()
    out = out.strip("'\"").strip()
    return out


def parse_description_response(text: str, names: list[str]) -> dict[str, str]:
    """Parse the description reply into name -> description.

    The reply holds one {...} block whose keys are object phrases (quoting
    and articles vary) and whose values may wrap over several lines. Names
    absent from the block fall back to "A realistic photo of {name}".
    """
    span = _balanced_span(text, 0, "{", "}")
    if span is None:
        raise NoDictionaryFound("no {...} block in description reply")
    block = text[span[0] + 1:span[1] - 1]

    hits: list[tuple[int, int, str]] = []
    for name in names:
        m = _key_pattern(name).search(block)
        if m is not None:
            hits.append((m.start(), m.end(), name))
    hits.sort()

    out: dict[str, str] = {}
    for idx, (_, val_start, name) in enumerate(hits):
        val_end = hits[idx + 1][0] if idx + 1 < len(hits) else len(block)
        out[name] = _clean_description(block[val_start:val_end])
    for name in names:
        if not out.get(name):
            out[name] = f"A realistic photo of {name}"
    return out


def render_layout_text(layout: dict[str, BBox], background_prompt: str) -> str:
    """Render a layout in the reply grammar; inverse of parse_layout_response."""
    parts = []
    for name, box in layout.items():
        coords = ", ".join(repr(v) for v in box.as_list())
        parts.append(f"('{name}', [{coords}])")
    return f"Objects: [{', '.join(parts)}]\nBackground prompt: {background_prompt}"


# --- layout geometry -------------------------------------------------------

def interpolate_layouts(layout_set: LayoutSet, eta: float) -> dict[str, BBox]:
    """Fold k layouts into one by recursive convex combination.

    Per coordinate: z_hat(1) = z(1); z_hat(l) = (1-eta)*z_hat(l-1) + eta*z(l).
    eta=0 returns the first layout, eta=1 the last.
    """
    if not layout_set.layouts:
        raise InconsistentNames("empty layout set")
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must be in [0,1], got {eta}")
    names = list(layout_set.layouts[0].keys())
    name_set = set(names)
    for i, layout in enumerate(layout_set.layouts[1:], start=2):
        if set(layout.keys()) != name_set:
            raise InconsistentNames(f"layout {i} disagrees on object names")

    out: dict[str, BBox] = {}
    for name in names:
        acc = np.array(layout_set.layouts[0][name].as_list(), dtype=float)
        for layout in layout_set.layouts[1:]:
            nxt = np.array(layout[name].as_list(), dtype=float)
            acc = (1.0 - eta) * acc + eta * nxt
        out[name] = BBox(*acc)
    return out


def box_iou(a: BBox, b: BBox) -> float:
    ox = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    oy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ox <= 0.0 or oy <= 0.0:
        return 0.0
    inter = ox * oy
    return inter / (a.area + b.area - inter)


def _shrunk(box: BBox, s: float) -> BBox:
    """Scale a box about its center, keeping at least one pixel of extent."""
    w = max(box.w * s, 1.0)
    h = max(box.h * s, 1.0)
    return BBox(box.cx - w / 2.0, box.cy - h / 2.0, w, h)


def _push_apart(a: BBox, b: BBox, canvas: Canvas) -> tuple[BBox, BBox]:
    """Translate an overlapping pair apart along the shallower axis.

    Falls back to shrinking when the canvas clamp swallows the whole move.
    """
    ox = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    oy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    slack = 0.5
    if ox <= oy:
        d = ox / 2.0 + slack
        if a.cx <= b.cx:
            a2, b2 = a.moved_to(a.x - d, a.y), b.moved_to(b.x + d, b.y)
        else:
            a2, b2 = a.moved_to(a.x + d, a.y), b.moved_to(b.x - d, b.y)
    else:
        d = oy / 2.0 + slack
        if a.cy <= b.cy:
            a2, b2 = a.moved_to(a.x, a.y - d), b.moved_to(b.x, b.y + d)
        else:
            a2, b2 = a.moved_to(a.x, a.y + d), b.moved_to(b.x, b.y - d)
    a2, b2 = a2.clamped(canvas), b2.clamped(canvas)
    if box_iou(a2, b2) >= box_iou(a, b) - 1e-9:
        a2, b2 = _shrunk(a, 0.95), _shrunk(b, 0.95)
    return a2, b2


@dataclass
class ResolveResult:
    """resolve_overlaps output: adjusted layout plus residual metadata."""

    boxes: dict[str, BBox]
    residual_iou: float
    iterations: int


def resolve_overlaps(layout: dict[str, BBox], canvas: Canvas = Canvas(),
                     max_iters: int = 100, iou_eps: float = 0.05) -> ResolveResult:
    """Push overlapping boxes apart until pairwise IoU <= iou_eps.

    Relaxation: each iteration sweeps every overlapping pair once and
    translates both boxes apart along the axis of least penetration, half
    the overlap each (plus a small slack so the pair lands strictly below
    the threshold), clamped to the canvas. A pushed pair's center ordering
    is preserved. Translation alone can stall: the clamp pins boxes at
    canvas edges, and crowded layouts cycle (separating one pair re-overlaps
    another). Whenever the global worst IoU stops improving, the worst pair
    shrinks slightly about its centers, which always makes progress.
    Best-effort: if max_iters runs out the result returns with
    residual_iou > iou_eps rather than failing.
    """
    boxes = {name: box.clamped(canvas) for name, box in layout.items()}
    names = sorted(boxes)
    iterations = 0
    best_worst = np.inf
    stalled = 0
    for _ in range(max_iters):
        worst, worst_iou = None, iou_eps
        for i in range(len(names)):
            for j in range(i + 1, len(names)):
                v = box_iou(boxes[names[i]], boxes[names[j]])
                if v > worst_iou:
                    worst, worst_iou = (names[i], names[j]), v
        if worst is None:
            break
        iterations += 1
        if worst_iou < best_worst - 1e-9:
            best_worst, stalled = worst_iou, 0
        else:
            stalled += 1
            if stalled >= 3:
                boxes[worst[0]] = _shrunk(boxes[worst[0]], 0.9)
                boxes[worst[1]] = _shrunk(boxes[worst[1]], 0.9)
                stalled = 0
                continue
        for i in range(len(names)):
            for j in range(i + 1, len(names)):
                a, b = boxes[names[i]], boxes[names[j]]
                if box_iou(a, b) > iou_eps:
                    boxes[names[i]], boxes[names[j]] = \
                        _push_apart(a, b, canvas)

    residual = 0.0
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            residual = max(residual, box_iou(boxes[names[i]], boxes[names[j]]))
    # preserve the input's insertion order
    ordered = {name: boxes[name] for name in layout}
    return ResolveResult(boxes=ordered, residual_iou=residual, iterations=iterations)


def _round_half_up(v: float) -> int:
    return int(np.floor(v + 0.5))


def box_to_mask(box: BBox, canvas: Canvas) -> Mask:
    """Rasterize a clamped box to a binary mask.

    Rounds half-up; if the rounded extent would overflow the canvas the
    origin shifts back so popcount stays round(w) * round(h).
    """
    rw = _round_half_up(box.w)
    rh = _round_half_up(box.h)
    if rw <= 0 or rh <= 0:
        raise DegenerateBox(f"box {box} rounds to zero area")
    rx = min(max(_round_half_up(box.x), 0), canvas.width - rw)
    ry = min(max(_round_half_up(box.y), 0), canvas.height - rh)
    if rx < 0 or ry < 0:
        raise DegenerateBox(f"box {box} exceeds the canvas after rounding")
    data = np.zeros((canvas.height, canvas.width), dtype=np.uint8)
    data[ry:ry + rh, rx:rx + rw] = 1
    return Mask(width=canvas.width, height=canvas.height, data=data)


def sort_for_refinement(blueprint: SceneBlueprint) -> list[ObjectSpec]:
    """Background-to-foreground order: descending area, ties by y then x."""
    return sorted(blueprint.objects,
                  key=lambda o: (-o.box.area, o.box.y, o.box.x))


# --- JSON serialization ----------------------------------------------------

def blueprint_to_json_dict(bp: SceneBlueprint) -> dict:
    return {
        "schema_version": 1,
        "canvas": {"width": bp.canvas.width, "height": bp.canvas.height},
        "background_prompt": bp.background_prompt,
        "objects": [
            {"name": o.name, "box": o.box.as_list(), "description": o.description}
            for o in bp.objects
        ],
    }


def blueprint_from_json_dict(d: dict) -> SceneBlueprint:
    canvas = Canvas(int(d["canvas"]["width"]), int(d["canvas"]["height"]))
    objects = [
        ObjectSpec(name=o["name"], box=BBox(*(float(v) for v in o["box"])),
                   description=o.get("description", ""))
        for o in d["objects"]
    ]
    return SceneBlueprint(objects=objects,
                          background_prompt=d["background_prompt"],
                          canvas=canvas)


def blueprint_to_json(bp: SceneBlueprint) -> str:
    return json.dumps(blueprint_to_json_dict(bp), ensure_ascii=False, indent=2) + "\n"


def blueprint_from_json(text: str) -> SceneBlueprint:
    return blueprint_from_json_dict(json.loads(text))
