"""Blend several candidate layouts into one and resolve the overlaps.

Parses three plausible layout replies for the same caption, folds them into
a single layout with the blend weight eta, clamps to the canvas, pushes
overlapping boxes apart, and renders the result as an SVG.
"""

from pathlib import Path

from sceneloom import (
    Canvas,
    LayoutSet,
    ObjectSpec,
    SceneBlueprint,
    box_iou,
    interpolate_layouts,
    parse_layout_response,
    render_layout_svg,
    resolve_overlaps,
)

REPLIES = [
    "Objects: [('a red farmhouse', [105, 228, 302, 245]), "
    "('an antique tractor', [28, 382, 157, 72]), "
    "('a scarecrow', [368, 271, 66, 156])]\n"
    "Background prompt: A realistic image of a quiet countryside",

    "Objects: [('a red farmhouse', [90, 210, 310, 250]), "
    "('an antique tractor', [60, 360, 150, 80]), "
    "('a scarecrow', [340, 250, 70, 150])]\n"
    "Background prompt: A realistic image of a quiet countryside",

    "Objects: [('a red farmhouse', [120, 240, 290, 240]), "
    "('an antique tractor', [20, 400, 160, 70]), "
    "('a scarecrow', [380, 290, 60, 160])]\n"
    "Background prompt: A realistic image of a quiet countryside",
]

OUT_PATH = Path(__file__).parent / "out" / "layout.svg"


def worst_iou(boxes: dict) -> float:
    names = list(boxes)
    pairs = [(a, b) for i, a in enumerate(names) for b in names[i + 1:]]
    return max((box_iou(boxes[a], boxes[b]) for a, b in pairs), default=0.0)


def main() -> None:
    canvas = Canvas()
    parsed = [parse_layout_response(r) for r in REPLIES]
    background = parsed[0][1]
    layouts = LayoutSet([p[0] for p in parsed])

    print("farmhouse x across candidates:",
          [p[0]["a red farmhouse"].x for p in parsed])
    for eta in (0.0, 0.5, 1.0):
        merged = interpolate_layouts(layouts, eta)
        print(f"eta={eta}: farmhouse x = {merged['a red farmhouse'].x:.1f}")

    merged = interpolate_layouts(layouts, 0.5)
    clamped = {n: b.clamped(canvas) for n, b in merged.items()}
    print(f"\nworst pairwise overlap before resolution: "
          f"{worst_iou(clamped):.4f}")
    resolved = resolve_overlaps(clamped, canvas, max_iters=400)
    print(f"worst pairwise overlap after resolution:  "
          f"{worst_iou(resolved.boxes):.4f}")

    blueprint = SceneBlueprint(
        objects=[ObjectSpec(name=n, box=b, description=n)
                 for n, b in resolved.boxes.items()],
        background_prompt=background, canvas=canvas)
    blueprint.validate()
    OUT_PATH.parent.mkdir(parents=True, exist_ok=True)
    OUT_PATH.write_text(render_layout_svg(blueprint), encoding="utf-8")
    print(f"\nlayout rendered to {OUT_PATH}")


if __name__ == "__main__":
    main()
