"""Design data model: parsing, serialization round trips, interpolation, diffs."""
from __future__ import annotations

import json
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sceneloop.layout import (
    BoundingBox,
    BoxOutOfCanvas,
    Canvas,
    DuplicateId,
    FrameOutOfRange,
    KeyframeLayout,
    LayoutError,
    MalformedFrameLine,
    ObjectSpec,
    StructuredDesign,
    design_from_json,
    diff_designs,
    interpolate_layout,
    parse_design_text,
    serialize_design,
)

CAR_DESIGN_TEXT = """\
Frame 1: [{'id': 0, 'name': 'car', 'box': [400, 350, 100, 50]}]
Frame 2: [{'id': 0, 'name': 'car', 'box': [320, 350, 100, 50]}]
Frame 3: [{'id': 0, 'name': 'car', 'box': [240, 350, 100, 50]}]
Frame 4: [{'id': 0, 'name': 'car', 'box': [160, 350, 100, 50]}]
Frame 5: [{'id': 0, 'name': 'car', 'box': [80, 350, 100, 50]}]
Frame 6: [{'id': 0, 'name': 'car', 'box': [0, 350, 100, 50]}]
Background keyword: moon
"""


def test_parse_car_design():
    design = parse_design_text(CAR_DESIGN_TEXT)
    assert len(design.keyframes) == 6
    assert [kf.objects[0].box.x for kf in design.keyframes] == [400, 320, 240, 160, 80, 0]
    assert all(kf.objects[0].box.as_list()[1:] == [350, 100, 50] for kf in design.keyframes)
    assert design.background_keyword == "moon"
    assert design.guidance_scales == {0: 1.0}
    assert design.canvas == Canvas(512, 512)
    assert design.total_frames == 65


def test_parse_tolerates_prose_and_markdown():
    text = (
        "Here is the layout plan.\n"
        "**Frame 1:** [{'id': 0, 'name': 'dog', 'box': [10, 10, 50, 50]}]\n"
        "- Frame 2: [{'id': 0, 'name': 'dog', 'box': [60, 10, 50, 50]}]\n"
        "The dog moves right; Frame 2 shows the result.\n"
        "Background Keyword: beach.\n"
        "Generation Suggestion : emphasize id 0.\n"
        "New Prompt: A dog running on the beach.\n"
    )
    design = parse_design_text(text)
    assert [kf.frame_index for kf in design.keyframes] == [1, 2]
    assert design.background_keyword == "beach"
    assert design.emphasis == (0,)
    assert design.prompt == "A dog running on the beach."


def test_parse_double_quoted_json_objects():
    text = 'Frame 1: [{"id": 1, "name": "cat", "box": [0, 0, 10, 10]}]\n'
    design = parse_design_text(text)
    assert design.keyframes[0].objects[0].name == "cat"


def test_parse_emphasis_none_and_multiple():
    base = "Frame 1: [{'id': 0, 'name': 'a', 'box': [0, 0, 5, 5]}, {'id': 1, 'name': 'b', 'box': [9, 9, 5, 5]}]\n"
    assert parse_design_text(base + "Generation suggestion: None\n").emphasis == ()
    both = parse_design_text(base + "Generation suggestion: emphasize id 0 and emphasize id 1\n")
    assert both.emphasis == (0, 1)


@pytest.mark.parametrize(
    "bad",
    [
        "no frames here at all\n",
        "Frame 1: [{'id': 0, 'name': 'a', 'box': [0, 0, 5]}]\n",
        "Frame 1: [{'id': 0, 'name': 'a'}]\n",
        "Frame 1: [{'id': 0, 'name': 'a', 'box': [0, 0, 5, 5]\n",
        "Frame 1: [{'id': 0, 'name': 'a', 'box': [0, 0, 5, 5]}]\nFrame 1: [{'id': 0, 'name': 'a', 'box': [0, 0, 5, 5]}]\n",
    ],
)
def test_parse_malformed_frame_lines(bad):
    with pytest.raises(MalformedFrameLine):
        parse_design_text(bad)


def test_parse_duplicate_id_in_frame():
    text = "Frame 1: [{'id': 0, 'name': 'a', 'box': [0, 0, 5, 5]}, {'id': 0, 'name': 'a', 'box': [20, 20, 5, 5]}]\n"
    with pytest.raises(DuplicateId):
        parse_design_text(text)


def test_parse_box_out_of_canvas_reports_frame_and_id():
    text = "Frame 1: [{'id': 3, 'name': 'a', 'box': [500, 0, 50, 50]}]\n"
    with pytest.raises(BoxOutOfCanvas) as exc:
        parse_design_text(text)
    assert "frame 1" in str(exc.value) and "id 3" in str(exc.value)


def test_design_requires_scale_floor_and_consistent_names():
    kf = KeyframeLayout(1, (ObjectSpec(0, "a", BoundingBox(0, 0, 5, 5)),))
    with pytest.raises(LayoutError):
        StructuredDesign(keyframes=(kf,), guidance_scales={0: 0.9})
    kf2 = KeyframeLayout(2, (ObjectSpec(0, "b", BoundingBox(0, 0, 5, 5)),))
    with pytest.raises(LayoutError):
        StructuredDesign(keyframes=(kf, kf2), guidance_scales={0: 1.0})


def test_serialized_json_matches_published_schema():
    design = parse_design_text(CAR_DESIGN_TEXT)
    payload = json.loads(serialize_design(design).json)
    assert set(payload) == {
        "canvas",
        "total_frames",
        "keyframes",
        "background_keyword",
        "prompt",
        "emphasis",
        "guidance_scales",
    }
    assert payload["canvas"] == {"width": 512, "height": 512}
    assert payload["keyframes"][0] == {
        "frame": 1,
        "objects": [{"id": 0, "name": "car", "box": [400, 350, 100, 50]}],
    }
    assert payload["guidance_scales"] == {"0": 1.0}


def test_serialization_round_trips_car_design():
    design = parse_design_text(CAR_DESIGN_TEXT)
    ser = serialize_design(design)
    assert parse_design_text(ser.text) == design
    assert design_from_json(ser.json) == design
    # byte-level determinism
    assert serialize_design(design) == ser


def test_interpolation_hits_anchors_and_midpoints():
    design = parse_design_text(CAR_DESIGN_TEXT)
    assert interpolate_layout(design, 1)[0].box.x == 400
    assert interpolate_layout(design, 65)[0].box.x == 0
    # frame 33 sits halfway between the anchors of keyframes 3 and 4
    assert interpolate_layout(design, 33)[0].box.x == 200
    assert interpolate_layout(design, 33)[0].box.as_list()[1:] == [350, 100, 50]


def test_interpolation_monotone_and_in_range():
    design = parse_design_text(CAR_DESIGN_TEXT)
    xs = [interpolate_layout(design, f)[0].box.x for f in range(1, 66)]
    assert all(b <= a for a, b in zip(xs, xs[1:]))
    assert min(xs) == 0 and max(xs) == 400


def test_interpolation_out_of_range():
    design = parse_design_text(CAR_DESIGN_TEXT)
    for frame in (0, 66, -3):
        with pytest.raises(FrameOutOfRange):
            interpolate_layout(design, frame)


def test_interpolation_single_keyframe_holds():
    design = parse_design_text("Frame 1: [{'id': 0, 'name': 'a', 'box': [10, 10, 5, 5]}]\n")
    for frame in (1, 30, 65):
        assert [o.box.as_list() for o in interpolate_layout(design, frame)] == [[10, 10, 5, 5]]


def test_interpolation_object_entering_midway():
    text = (
        "Frame 1: [{'id': 0, 'name': 'a', 'box': [0, 0, 10, 10]}]\n"
        "Frame 2: [{'id': 0, 'name': 'a', 'box': [100, 0, 10, 10]}, {'id': 1, 'name': 'b', 'box': [200, 200, 10, 10]}]\n"
    )
    design = parse_design_text(text)
    mid = interpolate_layout(design, 33)
    assert [o.id for o in mid] == [0, 1]
    assert mid[1].box.as_list() == [200, 200, 10, 10]


def test_diff_designs_flag_semantics():
    design = parse_design_text(CAR_DESIGN_TEXT)
    same = diff_designs(design, design)
    assert not same.any_changed and same.detail == ()

    moved = replace(
        design,
        keyframes=(
            replace(
                design.keyframes[0],
                objects=(ObjectSpec(0, "car", BoundingBox(390, 350, 100, 50)),),
            ),
        )
        + design.keyframes[1:],
    )
    d = diff_designs(design, moved)
    assert d.flags() == {"layout"}
    assert {"id": 0, "change": "box"} in d.detail

    scaled = replace(design, guidance_scales={0: 1.05})
    d = diff_designs(design, scaled)
    assert d.flags() == {"guidance_scale"}

    reworded = replace(design, prompt="A car driving slowly.")
    d = diff_designs(design, reworded)
    assert d.flags() == {"prompt"}

    respaced = replace(design, prompt="A  car driving slowly. ")
    assert not diff_designs(reworded, respaced).any_changed


def test_diff_reports_added_and_removed_objects():
    base = parse_design_text("Frame 1: [{'id': 0, 'name': 'a', 'box': [0, 0, 5, 5]}]\n")
    extended = parse_design_text(
        "Frame 1: [{'id': 0, 'name': 'a', 'box': [0, 0, 5, 5]}, {'id': 1, 'name': 'b', 'box': [50, 50, 5, 5]}]\n"
    )
    d = diff_designs(base, extended)
    assert d.layout_changed
    assert {"id": 1, "change": "added", "name": "b"} in d.detail
    assert {"id": 1, "change": "removed", "name": "b"} in diff_designs(extended, base).detail


# --- property tests ----------------------------------------------------------

_names = st.from_regex(r"[a-z]{1,8}", fullmatch=True)
_words = st.from_regex(r"[a-z]{1,8}( [a-z]{1,8}){0,5}", fullmatch=True)


@st.composite
def designs(draw):
    canvas = Canvas(draw(st.integers(64, 512)), draw(st.integers(64, 512)))
    n_objects = draw(st.integers(1, 3))
    n_frames = draw(st.integers(1, 4))
    total = draw(st.integers(max(n_frames, 2), 80))
    names = [draw(_names) for _ in range(n_objects)]

    def box():
        w = draw(st.integers(1, canvas.width))
        h = draw(st.integers(1, canvas.height))
        x = draw(st.integers(0, canvas.width - w))
        y = draw(st.integers(0, canvas.height - h))
        return BoundingBox(x, y, w, h)

    keyframes = []
    for i in range(n_frames):
        present = [oid for oid in range(n_objects) if draw(st.booleans())] or [0]
        objs = tuple(ObjectSpec(oid, names[oid], box()) for oid in present)
        keyframes.append(KeyframeLayout(i + 1, objs))
    ids = {o.id for kf in keyframes for o in kf.objects}
    scales = {oid: round(1.0 + 0.05 * draw(st.integers(0, 8)), 9) for oid in ids}
    emphasis = tuple(oid for oid in sorted(ids) if draw(st.booleans()))
    return StructuredDesign(
        keyframes=tuple(keyframes),
        canvas=canvas,
        total_frames=total,
        background_keyword=draw(_names),
        prompt=draw(_words),
        emphasis=emphasis,
        guidance_scales=scales,
    )


@given(designs())
@settings(max_examples=60, deadline=None)
def test_round_trip_is_lossless(design):
    ser = serialize_design(design)
    assert parse_design_text(ser.text) == design
    assert design_from_json(ser.json) == design


@given(designs())
@settings(max_examples=60, deadline=None)
def test_diff_of_identical_designs_is_empty(design):
    assert not diff_designs(design, design).any_changed


@given(designs(), st.data())
@settings(max_examples=60, deadline=None)
def test_interpolated_boxes_stay_on_canvas(design, data):
    frame = data.draw(st.integers(1, design.total_frames))
    for obj in interpolate_layout(design, frame):
        assert obj.box.within(design.canvas)
        assert obj.box.x >= 0 and obj.box.y >= 0
