from __future__ import annotations

import pytest

from placid_forge.captions import (
    CaptionDirectives,
    CaptionTemplate,
    TemplateLibrary,
    render_caption,
    validate_caption,
    validate_template,
)
from placid_forge.errors import SpecError


def template(body: str, tid: str = "t") -> CaptionTemplate:
    return CaptionTemplate(id=tid, style="test", body=body)


def test_two_objects_one_background():
    caption = render_caption(
        template("A photo of {obj_1} and {obj_2} on {bg}."),
        CaptionDirectives(wrapped=["a red mug", "a blue vase"], background="a wooden table"),
    )
    assert caption.count("<OBJ>") == 2
    assert caption.count("</OBJ>") == 2
    assert caption.count("<BG>") == 1
    assert caption.count("</BG>") == 1
    assert "<OBJ>a red mug</OBJ>" in caption
    assert "<BG>a wooden table</BG>" in caption
    assert validate_caption(caption, 2, True) == []


def test_zero_objects_no_obj_tokens():
    caption = render_caption(
        template("A scene of {bg}. {extra}"),
        CaptionDirectives(wrapped=[], background="a beach at dusk"),
    )
    assert "<OBJ>" not in caption
    assert validate_caption(caption, 0, True) == []


def test_design_element_text_outside_blocks():
    caption = render_caption(
        template("{obj_1} on {bg}. {extra}"),
        CaptionDirectives(
            wrapped=["a brass lamp"], background="a desk", extra=["a small potted fern"]
        ),
    )
    assert "a small potted fern" in caption
    inside = caption[caption.index("<OBJ>") : caption.index("</OBJ>")]
    assert "fern" not in inside
    bg_inside = caption[caption.index("<BG>") : caption.index("</BG>")]
    assert "fern" not in bg_inside
    assert validate_caption(caption, 1, True) == []


def test_wrapped_count_mismatch_raises():
    with pytest.raises(SpecError, match="2 object slots"):
        render_caption(
            template("{obj_1} and {obj_2} on {bg}."),
            CaptionDirectives(wrapped=["just one"], background="x"),
        )


def test_template_indices_must_be_contiguous_in_order():
    with pytest.raises(SpecError, match="contiguous"):
        validate_template(template("{obj_2} before {obj_1}"))
    with pytest.raises(SpecError, match="contiguous"):
        validate_template(template("{obj_1} then {obj_3}"))
    with pytest.raises(SpecError, match="at most once"):
        validate_template(template("{bg} and {bg}"))


def test_single_spaces_around_blocks():
    caption = render_caption(
        template("Photo   of {obj_1}   on {bg}.  {extra}  done."),
        CaptionDirectives(wrapped=["a pen"], background="paper"),
    )
    assert "  " not in caption
    assert not caption.startswith(" ") and not caption.endswith(" ")


def test_validate_catches_nesting():
    violations = validate_caption("<OBJ><OBJ>x</OBJ></OBJ>", 1, False)
    assert any("nested" in v for v in violations)


def test_validate_catches_count_mismatch():
    caption = "<OBJ>a</OBJ> <OBJ>b</OBJ>"
    violations = validate_caption(caption, 3, False)
    assert any("count 2 != expected 3" in v for v in violations)


def test_validate_catches_unbalanced_and_empty():
    assert any("unbalanced" in v for v in validate_caption("<OBJ>x", 1, False))
    assert any("unbalanced" in v for v in validate_caption("x</OBJ>", 0, False))
    assert any("empty" in v for v in validate_caption("<OBJ></OBJ>", 1, False))
    assert any("mismatched" in v for v in validate_caption("<OBJ>x</BG>", 0, False))


def test_render_validate_round_trip_fuzz():
    import random

    rng = random.Random(42)
    words = ["lamp", "mug", "vase", "book", "plant", "watch", "scarf"]
    for _ in range(200):
        n = rng.randint(0, 5)
        body_objs = " and ".join(f"{{obj_{i}}}" for i in range(1, n + 1))
        body = f"A display of {body_objs} on {{bg}}. {{extra}}"
        directives = CaptionDirectives(
            wrapped=[f"a {rng.choice(words)}" for _ in range(n)],
            background=f"a {rng.choice(words)} surface",
            extra=[f"a {rng.choice(words)}"] if rng.random() < 0.3 else [],
        )
        caption = render_caption(template(body), directives)
        assert validate_caption(caption, n, True) == []


def test_builtin_library_resolution():
    lib = TemplateLibrary.builtin()
    t = lib.resolve("studio_display", 3)
    assert t.object_slots() == 3
    with pytest.raises(SpecError, match="no caption template"):
        lib.resolve("nonexistent_family", 2)


def test_library_save_load_round_trip(tmp_path):
    lib = TemplateLibrary.builtin()
    lib.save(tmp_path / "templates.json")
    loaded = TemplateLibrary.load(tmp_path / "templates.json")
    assert loaded.resolve("flat_lay", 2).body == lib.resolve("flat_lay", 2).body
