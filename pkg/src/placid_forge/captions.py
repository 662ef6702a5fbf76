"""Caption templates and the grounding-token grammar.

Captions wrap each conditioning object's description in literal
``<OBJ>...</OBJ>`` tokens and the background description in ``<BG>...</BG>``,
in the same order as the conditioning images. Design-element text is injected
through the ``{extra}`` placeholder without any wrapping.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import SpecError
from .manifest import SCHEMA, canonical_json, check_schema

OBJ_OPEN, OBJ_CLOSE = "<OBJ>", "</OBJ>"
BG_OPEN, BG_CLOSE = "<BG>", "</BG>"

_PLACEHOLDER_RE = re.compile(r"\{(obj_(\d+)|bg|extra)\}")


@dataclass(frozen=True)
class CaptionTemplate:
    id: str
    style: str
    body: str

    def object_slots(self) -> int:
        return sum(1 for m in _PLACEHOLDER_RE.finditer(self.body) if m.group(2))

    def has_bg(self) -> bool:
        return any(m.group(1) == "bg" for m in _PLACEHOLDER_RE.finditer(self.body))


@dataclass
class CaptionDirectives:
    """Resolved description texts for one sample, in conditioning order."""

    wrapped: list[str] = field(default_factory=list)
    background: str | None = None
    extra: list[str] = field(default_factory=list)
    replacement_note: str | None = None

    def to_json(self) -> dict:
        return {
            "wrapped": list(self.wrapped),
            "background": self.background,
            "extra": list(self.extra),
            "replacement_note": self.replacement_note,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "CaptionDirectives":
        return cls(
            wrapped=list(payload.get("wrapped", [])),
            background=payload.get("background"),
            extra=list(payload.get("extra", [])),
            replacement_note=payload.get("replacement_note"),
        )


def validate_template(template: CaptionTemplate) -> None:
    """Check placeholder grammar: obj indices contiguous from 1, in textual
    order, each used once; {bg} at most once."""
    indices = [int(m.group(2)) for m in _PLACEHOLDER_RE.finditer(template.body) if m.group(2)]
    if indices != list(range(1, len(indices) + 1)):
        raise SpecError(
            f"template {template.id!r}: object placeholders must be {{obj_1}}..{{obj_n}} "
            f"contiguous and in order, got {indices}"
        )
    bg_count = sum(1 for m in _PLACEHOLDER_RE.finditer(template.body) if m.group(1) == "bg")
    if bg_count > 1:
        raise SpecError(f"template {template.id!r}: {{bg}} may appear at most once")


def render_caption(template: CaptionTemplate, directives: CaptionDirectives) -> str:
    """Render a caption; raises SpecError on slot/description count mismatch."""
    validate_template(template)
    n_slots = template.object_slots()
    if n_slots != len(directives.wrapped):
        raise SpecError(
            f"template {template.id!r} has {n_slots} object slots but "
            f"{len(directives.wrapped)} wrapped descriptions were provided"
        )
    if template.has_bg() and directives.background is None:
        raise SpecError(f"template {template.id!r} needs a background description")

    extra_parts = [t for t in directives.extra if t]
    if directives.replacement_note:
        extra_parts.append(directives.replacement_note)
    extra_text = " ".join(extra_parts)

    def substitute(match: re.Match) -> str:
        name = match.group(1)
        if match.group(2):
            text = directives.wrapped[int(match.group(2)) - 1]
            return f"{OBJ_OPEN}{text}{OBJ_CLOSE}"
        if name == "bg":
            return f"{BG_OPEN}{directives.background}{BG_CLOSE}"
        return extra_text

    rendered = _PLACEHOLDER_RE.sub(substitute, template.body)
    return re.sub(r"\s+", " ", rendered).strip()


def validate_caption(caption: str, n_wrapped: int, has_bg: bool) -> list[str]:
    """Check token grammar; returns a list of violations (empty == ok)."""
    violations: list[str] = []
    token_re = re.compile(r"</?OBJ>|</?BG>")
    stack: list[str] = []
    obj_blocks = 0
    bg_blocks = 0
    pos_after_open = 0
    for m in token_re.finditer(caption):
        tok = m.group(0)
        if tok in (OBJ_OPEN, BG_OPEN):
            if stack:
                violations.append(f"nested {tok[1:-1]} inside {stack[-1]}")
            stack.append(tok[1:-1])
            pos_after_open = m.end()
        else:
            name = tok[2:-1]
            if not stack:
                violations.append(f"unbalanced {tok} without opener")
                continue
            opened = stack.pop()
            if opened != name:
                violations.append(f"mismatched </{name}> closing <{opened}>")
                continue
            if not caption[pos_after_open : m.start()].strip():
                violations.append(f"empty {name} block")
            if name == "OBJ":
                obj_blocks += 1
            else:
                bg_blocks += 1
    for opened in stack:
        violations.append(f"unbalanced <{opened}> without closer")
    if obj_blocks != n_wrapped:
        violations.append(f"OBJ block count {obj_blocks} != expected {n_wrapped}")
    expected_bg = 1 if has_bg else 0
    if bg_blocks != expected_bg:
        violations.append(f"BG block count {bg_blocks} != expected {expected_bg}")
    return violations


# ---------------------------------------------------------------------------
# Template library

_FAMILY_PATTERNS = {
    # (lead-in, connector to background, trailing)
    "studio_display": ("A studio-style photo of", "arranged on", "Soft light casts gentle shadows."),
    "flat_lay": ("A flat lay display of", "laid out on", ""),
    "showcase": ("A clean product showcase presenting", "in front of", "Everything is in sharp focus."),
}


def _join_slots(n: int) -> str:
    slots = [f"{{obj_{i}}}" for i in range(1, n + 1)]
    if not slots:
        return "the described scene"
    if len(slots) == 1:
        return slots[0]
    return ", ".join(slots[:-1]) + " and " + slots[-1]


def builtin_templates(max_objects: int = 8) -> list[CaptionTemplate]:
    """Generate the default template library, one variant per object count."""
    templates = []
    for family, (lead, conn, tail) in _FAMILY_PATTERNS.items():
        for n in range(0, max_objects + 1):
            body = f"{lead} {_join_slots(n)} {conn} {{bg}}. {{extra}} {tail}".strip()
            templates.append(CaptionTemplate(id=f"{family}_{n}", style=family, body=body))
    return templates


class TemplateLibrary:
    """Lookup of caption templates by family and object count."""

    def __init__(self, templates: list[CaptionTemplate]):
        self._by_id = {t.id: t for t in templates}
        for t in templates:
            validate_template(t)

    def resolve(self, template_id: str, n_wrapped: int) -> CaptionTemplate:
        """Find `template_id` directly, or the family variant for n_wrapped."""
        direct = self._by_id.get(template_id)
        if direct is not None and direct.object_slots() == n_wrapped:
            return direct
        variant = self._by_id.get(f"{template_id}_{n_wrapped}")
        if variant is not None:
            return variant
        raise SpecError(
            f"no caption template for id {template_id!r} with {n_wrapped} objects"
        )

    @classmethod
    def builtin(cls) -> "TemplateLibrary":
        return cls(builtin_templates())

    @classmethod
    def load(cls, path: Path | str) -> "TemplateLibrary":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        check_schema(payload.get("schema"), "templates")
        templates = [
            CaptionTemplate(id=t["id"], style=t.get("style", ""), body=t["body"])
            for t in payload["templates"]
        ]
        return cls(templates)

    def save(self, path: Path | str) -> None:
        payload = {
            "schema": SCHEMA,
            "templates": [{"id": t.id, "style": t.style, "body": t.body} for t in self._by_id.values()],
        }
        Path(path).write_text(canonical_json(payload) + "\n", encoding="utf-8")
