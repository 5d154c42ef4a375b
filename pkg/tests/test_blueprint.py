"""Layout grammar, geometry, and serialization tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sceneloom import (
    BBox,
    Canvas,
    DegenerateBox,
    EmptyLayout,
    InconsistentNames,
    LayoutSet,
    MalformedTuple,
    MissingSection,
    NoDictionaryFound,
    ObjectSpec,
    SceneBlueprint,
    ValidationError,
    blueprint_from_json,
    blueprint_to_json,
    box_iou,
    box_to_mask,
    interpolate_layouts,
    normalize_name,
    parse_description_response,
    parse_layout_response,
    render_layout_text,
    resolve_overlaps,
    sort_for_refinement,
)

FARMHOUSE_REPLY = (
    "Objects: [('a red farmhouse', [105, 228, 302, 245]), "
    "('a weathered picket fence', [4, 385, 504, 112]), "
    "('an antique tractor', [28, 382, 157, 72]), "
    "('a scarecrow', [368, 271, 66, 156]) ]\n"
    "Background prompt: A realistic image of a quiet countryside with "
    "rolling hills"
)

LANDSCAPE_REPLY = (
    "Objects: [('a green car', [21, 181, 211, 159]), "
    "('a blue truck', [269, 181, 209, 160]), "
    "('a red air balloon', [66, 8, 145, 135]), "
    "('a bird', [296, 42, 143, 100])]\n"
    "Background prompt: A realistic image of a landscape scene"
)

FARMHOUSE_BOXES = {
    "a red farmhouse": [105, 228, 302, 245],
    "a weathered picket fence": [4, 385, 504, 112],
    "an antique tractor": [28, 382, 157, 72],
    "a scarecrow": [368, 271, 66, 156],
}


class TestLayoutParsing:
    def test_farmhouse_reply_parses_to_exact_coordinates(self):
        layout, background = parse_layout_response(FARMHOUSE_REPLY)
        assert {n: b.as_list() for n, b in layout.items()} == FARMHOUSE_BOXES
        assert background == ("A realistic image of a quiet countryside "
                              "with rolling hills")

    def test_landscape_reply_parses_to_exact_coordinates(self):
        layout, background = parse_layout_response(LANDSCAPE_REPLY)
        assert layout["a green car"].as_list() == [21, 181, 211, 159]
        assert layout["a blue truck"].as_list() == [269, 181, 209, 160]
        assert layout["a red air balloon"].as_list() == [66, 8, 145, 135]
        assert layout["a bird"].as_list() == [296, 42, 143, 100]
        assert background == "A realistic image of a landscape scene"

    def test_scarecrow_box(self):
        layout, _ = parse_layout_response(FARMHOUSE_REPLY)
        assert layout["a scarecrow"].as_list() == [368, 271, 66, 156]

    def test_tolerates_surrounding_prose_and_float_coords(self):
        text = ("Sure! Here is the layout you asked for.\n"
                "Objects: [('a lone pine', [10.5, 20.25, 30, 40])]\n"
                "Background prompt: A realistic image of a foggy valley\n"
                "Let me know if you need anything else.")
        layout, background = parse_layout_response(text)
        assert layout["a lone pine"].as_list() == [10.5, 20.25, 30, 40]
        assert background == "A realistic image of a foggy valley"

    def test_missing_objects_section(self):
        with pytest.raises(MissingSection):
            parse_layout_response("Background prompt: A realistic image of x")

    def test_missing_background_line(self):
        with pytest.raises(MissingSection):
            parse_layout_response("Objects: [('a cat', [0, 0, 10, 10])]")

    def test_malformed_tuple_wrong_arity(self):
        with pytest.raises(MalformedTuple):
            parse_layout_response(
                "Objects: [('a cat', [0, 0, 10])]\n"
                "Background prompt: A realistic image of a room")

    def test_empty_objects_list(self):
        with pytest.raises(EmptyLayout):
            parse_layout_response(
                "Objects: []\nBackground prompt: A realistic image of a room")

    def test_render_is_parse_inverse_on_goldens(self):
        for reply in (FARMHOUSE_REPLY, LANDSCAPE_REPLY):
            layout, background = parse_layout_response(reply)
            again, bg_again = parse_layout_response(
                render_layout_text(layout, background))
            assert {n: b.as_list() for n, b in again.items()} == \
                {n: b.as_list() for n, b in layout.items()}
            assert bg_again == background


@st.composite
def layouts(draw, max_objects=5):
    n = draw(st.integers(min_value=1, max_value=max_objects))
    out = {}
    for i in range(n):
        x = draw(st.integers(min_value=0, max_value=400))
        y = draw(st.integers(min_value=0, max_value=400))
        w = draw(st.integers(min_value=1, max_value=512 - x))
        h = draw(st.integers(min_value=1, max_value=512 - y))
        out[f"an object {i}"] = BBox(x, y, w, h)
    return out


class TestLayoutRoundTrip:
    @given(layouts(), st.text(alphabet=st.characters(
        whitelist_categories=("L", "N"), whitelist_characters=" "),
        min_size=1, max_size=40))
    @settings(max_examples=50, deadline=None)
    def test_render_then_parse_recovers_layout(self, layout, background):
        background = "scene " + background.strip()
        text = render_layout_text(layout, background)
        parsed, bg = parse_layout_response(text)
        assert {n: b.as_list() for n, b in parsed.items()} == \
            {n: b.as_list() for n, b in layout.items()}
        assert bg == background.strip()


class TestDescriptionParsing:
    def test_golden_style_dictionary(self):
        names = ["a red farmhouse", "a scarecrow"]
        reply = ("{a red farmhouse: A realistic photo of a red farmhouse "
                 "with an old-fashioned charm, a scarecrow: A realistic "
                 "photo of a scarecrow watching over fields}")
        out = parse_description_response(reply, names)
        assert out["a red farmhouse"] == ("A realistic photo of a red "
                                          "farmhouse with an old-fashioned "
                                          "charm")
        assert out["a scarecrow"] == ("A realistic photo of a scarecrow "
                                      "watching over fields")

    def test_quoted_keys_and_values(self):
        names = ["a green car"]
        reply = "{'a green car': 'A realistic photo of a green car'}"
        out = parse_description_response(reply, names)
        assert out["a green car"] == "A realistic photo of a green car"

    def test_missing_name_falls_back(self):
        names = ["a green car", "a blue truck"]
        reply = "{a green car: A realistic photo of a green car}"
        out = parse_description_response(reply, names)
        assert out["a blue truck"] == "A realistic photo of a blue truck"

    def test_no_dictionary_raises(self):
        with pytest.raises(NoDictionaryFound):
            parse_description_response("no braces here", ["a cat"])

    def test_multiline_values_collapse(self):
        names = ["a bird"]
        reply = "{a bird: A realistic photo of a bird\n  in mid flight}"
        out = parse_description_response(reply, names)
        assert out["a bird"] == "A realistic photo of a bird in mid flight"


class TestInterpolation:
    def test_identical_layouts_are_a_fixed_point(self):
        layout = {"a tree": BBox(10, 20, 30, 40)}
        out = interpolate_layouts(LayoutSet([layout] * 4), eta=0.37)
        assert out["a tree"].as_list() == [10, 20, 30, 40]

    def test_eta_zero_keeps_first(self):
        a = {"a tree": BBox(0, 0, 10, 10)}
        b = {"a tree": BBox(100, 100, 50, 50)}
        out = interpolate_layouts(LayoutSet([a, b]), eta=0.0)
        assert out["a tree"].as_list() == [0, 0, 10, 10]

    def test_eta_one_keeps_last(self):
        a = {"a tree": BBox(0, 0, 10, 10)}
        b = {"a tree": BBox(100, 100, 50, 50)}
        out = interpolate_layouts(LayoutSet([a, b]), eta=1.0)
        assert out["a tree"].as_list() == [100, 100, 50, 50]

    def test_recursive_fold_value(self):
        # fold of x-coordinates 10, 110, 210 at eta=0.1:
        # 10 -> 0.9*10 + 0.1*110 = 20 -> 0.9*20 + 0.1*210 = 39
        packs = [{"a post": BBox(v, 0, 10, 10)} for v in (10, 110, 210)]
        out = interpolate_layouts(LayoutSet(packs), eta=0.1)
        assert out["a post"].x == pytest.approx(39.0, abs=0)

    def test_convex_bound(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            vals = rng.uniform(0, 400, size=(3, 4))
            packs = [{"a box": BBox(*v)} for v in vals]
            eta = float(rng.uniform(0, 1))
            out = interpolate_layouts(LayoutSet(packs), eta)["a box"]
            got = np.array(out.as_list())
            assert np.all(got >= vals.min(axis=0) - 1e-9)
            assert np.all(got <= vals.max(axis=0) + 1e-9)

    def test_name_mismatch_raises(self):
        a = {"a tree": BBox(0, 0, 10, 10)}
        b = {"a rock": BBox(0, 0, 10, 10)}
        with pytest.raises(InconsistentNames):
            interpolate_layouts(LayoutSet([a, b]), eta=0.5)

    def test_eta_out_of_range_raises(self):
        a = {"a tree": BBox(0, 0, 10, 10)}
        with pytest.raises(ValueError):
            interpolate_layouts(LayoutSet([a, a]), eta=1.5)


def _iou_oracle(a: BBox, b: BBox) -> float:
    """Independent IoU via pixel rasterization on a coarse grid."""
    xs = np.arange(0, 512, 1.0) + 0.5
    in_a = ((xs[None, :] >= a.x) & (xs[None, :] < a.x + a.w)
            & (xs[:, None] >= a.y) & (xs[:, None] < a.y + a.h))
    in_b = ((xs[None, :] >= b.x) & (xs[None, :] < b.x + b.w)
            & (xs[:, None] >= b.y) & (xs[:, None] < b.y + b.h))
    union = np.logical_or(in_a, in_b).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(in_a, in_b).sum() / union)


def _random_layout(rng, n_boxes, canvas=Canvas(), max_fill=0.6):
    """Random layout rejection-sampled to a total-area budget."""
    while True:
        boxes = {}
        for i in range(n_boxes):
            w = float(rng.uniform(30, 220))
            h = float(rng.uniform(30, 220))
            x = float(rng.uniform(0, canvas.width - w))
            y = float(rng.uniform(0, canvas.height - h))
            boxes[f"an object {i}"] = BBox(x, y, w, h)
        total = sum(b.area for b in boxes.values())
        if total <= max_fill * canvas.width * canvas.height:
            return boxes


class TestOverlapResolution:
    def test_iou_matches_independent_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a = BBox(*rng.uniform(0, 300, size=2), *rng.uniform(10, 200, size=2))
            b = BBox(*rng.uniform(0, 300, size=2), *rng.uniform(10, 200, size=2))
            assert box_iou(a, b) == pytest.approx(_iou_oracle(a, b), abs=0.02)

    def test_iou_basic_identities(self):
        a = BBox(0, 0, 10, 10)
        assert box_iou(a, a) == 1.0
        assert box_iou(a, BBox(20, 20, 10, 10)) == 0.0
        assert box_iou(a, BBox(5, 0, 10, 10)) == pytest.approx(1 / 3)

    def test_disjoint_layout_unchanged(self):
        layout = {"a": BBox(0, 0, 100, 100), "b": BBox(200, 200, 100, 100)}
        res = resolve_overlaps(layout)
        assert res.iterations == 0
        assert {n: b.as_list() for n, b in res.boxes.items()} == \
            {n: b.as_list() for n, b in layout.items()}

    def test_two_hundred_random_layouts_resolve(self):
        rng = np.random.default_rng(42)
        for trial in range(200):
            layout = _random_layout(rng, int(rng.integers(3, 11)))
            res = resolve_overlaps(layout, max_iters=400)
            names = list(res.boxes)
            for i in range(len(names)):
                for j in range(i + 1, len(names)):
                    pair_iou = box_iou(res.boxes[names[i]], res.boxes[names[j]])
                    assert pair_iou <= 0.05 + 1e-12, (trial, names[i], names[j])
            for box in res.boxes.values():
                clamped = box.clamped(Canvas())
                assert box.as_list() == pytest.approx(clamped.as_list())

    def test_idempotent_on_own_output(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            layout = _random_layout(rng, int(rng.integers(3, 8)))
            once = resolve_overlaps(layout, max_iters=400)
            twice = resolve_overlaps(once.boxes, max_iters=400)
            assert twice.iterations == 0
            assert {n: b.as_list() for n, b in twice.boxes.items()} == \
                {n: b.as_list() for n, b in once.boxes.items()}

    def test_preserves_name_order(self):
        layout = {"z": BBox(0, 0, 100, 100), "a": BBox(50, 0, 100, 100)}
        res = resolve_overlaps(layout)
        assert list(res.boxes) == ["z", "a"]


class TestMaskRasterization:
    def test_popcount_matches_independent_rasterization(self):
        rng = np.random.default_rng(11)
        canvas = Canvas(width=32, height=32)
        for _ in range(100):
            w = float(rng.uniform(1, 20))
            h = float(rng.uniform(1, 20))
            x = float(rng.uniform(0, 32 - w))
            y = float(rng.uniform(0, 32 - h))
            mask = box_to_mask(BBox(x, y, w, h), canvas)
            rw, rh = int(np.floor(w + 0.5)), int(np.floor(h + 0.5))
            assert mask.popcount == rw * rh

    def test_grid_aligned_box(self):
        mask = box_to_mask(BBox(8, 8, 16, 16), Canvas(width=32, height=32))
        expected = np.zeros((32, 32), dtype=np.uint8)
        expected[8:24, 8:24] = 1
        assert np.array_equal(mask.data, expected)

    def test_half_up_rounding(self):
        mask = box_to_mask(BBox(0.5, 0.5, 2.5, 2.5), Canvas(width=8, height=8))
        # 0.5 rounds to 1, 2.5 rounds to 3
        assert mask.popcount == 9
        assert mask.data[1, 1] == 1 and mask.data[3, 3] == 1
        assert mask.data[0, 0] == 0 and mask.data[4, 4] == 0

    def test_zero_area_box_raises(self):
        with pytest.raises(DegenerateBox):
            box_to_mask(BBox(4, 4, 0.2, 5), Canvas(width=8, height=8))


class TestBlueprintModel:
    def _farmhouse_blueprint(self):
        layout, background = parse_layout_response(FARMHOUSE_REPLY)
        objects = [ObjectSpec(name=n, box=b,
                              description=f"A realistic photo of {n}")
                   for n, b in layout.items()]
        return SceneBlueprint(objects=objects, background_prompt=background)

    def test_sort_order_is_area_descending(self):
        bp = self._farmhouse_blueprint()
        ordered = sort_for_refinement(bp)
        areas = [o.box.area for o in ordered]
        assert areas == [73990, 56448, 11304, 10296]
        assert [o.name for o in ordered] == [
            "a red farmhouse", "a weathered picket fence",
            "an antique tractor", "a scarecrow"]

    def test_validate_accepts_golden(self):
        self._farmhouse_blueprint().validate()

    def test_validate_rejects_duplicate_names(self):
        bp = self._farmhouse_blueprint()
        bp.objects.append(bp.objects[0])
        with pytest.raises(ValidationError):
            bp.validate()

    def test_validate_rejects_out_of_canvas(self):
        bp = self._farmhouse_blueprint()
        bp.objects[0] = ObjectSpec(name="a red farmhouse",
                                   box=BBox(500, 500, 100, 100),
                                   description="A realistic photo of x")
        with pytest.raises(ValidationError):
            bp.validate()

    def test_json_round_trip_identity(self):
        bp = self._farmhouse_blueprint()
        text = blueprint_to_json(bp)
        again = blueprint_from_json(text)
        assert blueprint_to_json(again) == text
        assert [o.name for o in again.objects] == [o.name for o in bp.objects]
        assert [o.box.as_list() for o in again.objects] == \
            [o.box.as_list() for o in bp.objects]

    def test_normalize_name(self):
        assert normalize_name("A Red  Farmhouse") == "red farmhouse"
        assert normalize_name("the scarecrow") == "scarecrow"
        assert normalize_name("an antique tractor") == "antique tractor"


class TestBBoxHelpers:
    def test_scaled(self):
        assert BBox(16, 32, 64, 128).scaled(0.5, 0.25).as_list() == \
            [8, 8, 32, 32]

    def test_clamped_moves_inside(self):
        c = Canvas(width=100, height=100)
        assert BBox(-10, 95, 50, 50).clamped(c).as_list() == [0, 50, 50, 50]

    def test_clamped_shrinks_oversized(self):
        c = Canvas(width=100, height=100)
        out = BBox(0, 0, 300, 40).clamped(c)
        assert out.w <= 100 and out.h <= 100

    @given(st.floats(0, 400), st.floats(0, 400),
           st.floats(1, 112), st.floats(1, 112))
    @settings(max_examples=60, deadline=None)
    def test_iou_properties(self, x, y, w, h):
        a = BBox(x, y, w, h)
        b = BBox(x + 3, y + 3, w, h)
        assert 0.0 <= box_iou(a, b) <= 1.0
        assert box_iou(a, b) == pytest.approx(box_iou(b, a))
        assert box_iou(a, a) == pytest.approx(1.0)
