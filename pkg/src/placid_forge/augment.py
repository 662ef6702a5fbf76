"""Seeded training-sample augmentations.

A sampled plan covers per-object jitter, the background pool choice, and the
three caption-changing augmentations: scene completion (selected objects are
baked into the background), design elements (conditioned only via text,
flying in from off-canvas), and object replacement (one object is swapped
for a substitute). Replacement is gated off whenever scene completion or a
design element was selected.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .captions import CaptionDirectives
from .errors import SpecError
from .manifest import ObjectAsset, Placement, SampleSpec
from .rng import derive_seed, make_rng

BG_POOLS = ("photo", "plain", "procedural")


@dataclass(frozen=True)
class AugmentProbs:
    scene: float = 0.20
    design: float = 0.10
    replace: float = 0.07


@dataclass(frozen=True)
class JitterRanges:
    scale: tuple[float, float] = (0.7, 1.3)
    rotation_deg: tuple[float, float] = (-15.0, 15.0)
    perspective_frac: float = 0.05


@dataclass(frozen=True)
class ObjectJitter:
    scale_mul: float
    rotation_deg: float
    # corner offsets as fractions of the raster's width/height; multiply by
    # the box size at render time
    perspective_fracs: tuple[tuple[float, float], ...]

    def perspective_px(self, box_size: tuple[int, int]) -> tuple[tuple[float, float], ...]:
        w, h = box_size
        return tuple((fx * w, fy * h) for fx, fy in self.perspective_fracs)


@dataclass(frozen=True)
class Replacement:
    victim_id: str
    substitute_asset_id: str


@dataclass
class AugmentationPlan:
    jitter: dict[str, ObjectJitter] = field(default_factory=dict)
    bg_pool_choice: str = "procedural"
    scene_completion: tuple[str, ...] = ()
    design_elements: tuple[str, ...] = ()
    replacement: Replacement | None = None

    def validate(self, spec: SampleSpec) -> None:
        ids = {a.id for a in spec.objects}
        for oid in (*self.scene_completion, *self.design_elements):
            if oid not in ids:
                raise SpecError(f"augmentation plan references unknown object {oid!r}")
        scene = set(self.scene_completion)
        design = set(self.design_elements)
        victim = {self.replacement.victim_id} if self.replacement else set()
        if scene & design or scene & victim or design & victim:
            raise SpecError("scene completion, design elements, and the replacement victim must be disjoint")
        if self.replacement and (scene or design):
            raise SpecError("replacement is only allowed when no scene/design augmentation fired")
        if self.replacement and self.replacement.victim_id not in ids:
            raise SpecError(f"replacement victim {self.replacement.victim_id!r} is not in the spec")

    def to_json(self) -> dict:
        return {
            "jitter": {
                oid: {
                    "scale_mul": j.scale_mul,
                    "rotation_deg": j.rotation_deg,
                    "perspective_fracs": [[fx, fy] for fx, fy in j.perspective_fracs],
                }
                for oid, j in self.jitter.items()
            },
            "bg_pool_choice": self.bg_pool_choice,
            "scene_completion": list(self.scene_completion),
            "design_elements": list(self.design_elements),
            "replacement": (
                {
                    "victim_id": self.replacement.victim_id,
                    "substitute_asset_id": self.replacement.substitute_asset_id,
                }
                if self.replacement
                else None
            ),
        }

    @classmethod
    def from_json(cls, payload: dict) -> "AugmentationPlan":
        repl = payload.get("replacement")
        return cls(
            jitter={
                oid: ObjectJitter(
                    scale_mul=j["scale_mul"],
                    rotation_deg=j["rotation_deg"],
                    perspective_fracs=tuple((fx, fy) for fx, fy in j["perspective_fracs"]),
                )
                for oid, j in payload.get("jitter", {}).items()
            },
            bg_pool_choice=payload.get("bg_pool_choice", "procedural"),
            scene_completion=tuple(payload.get("scene_completion", ())),
            design_elements=tuple(payload.get("design_elements", ())),
            replacement=Replacement(repl["victim_id"], repl["substitute_asset_id"]) if repl else None,
        )


def apply_object_jitter(seed: int, ranges: JitterRanges) -> ObjectJitter:
    """Independent uniform draws for scale, rotation, and perspective."""
    if ranges.scale[0] > ranges.scale[1] or ranges.rotation_deg[0] > ranges.rotation_deg[1]:
        raise ValueError("jitter ranges must be well-ordered")
    if ranges.perspective_frac < 0:
        raise ValueError("perspective_frac must be >= 0")
    rng = make_rng(derive_seed(seed, "jitter"))
    scale = float(rng.uniform(*ranges.scale))
    rotation = float(rng.uniform(*ranges.rotation_deg))
    f = ranges.perspective_frac
    fracs = tuple(
        (float(rng.uniform(-f, f)), float(rng.uniform(-f, f))) for _ in range(4)
    )
    return ObjectJitter(scale_mul=scale, rotation_deg=rotation, perspective_fracs=fracs)


def sample_augmentations(
    spec: SampleSpec,
    probs: AugmentProbs,
    jitter_ranges: JitterRanges,
    seed: int,
    substitute_pool: list[ObjectAsset] | None = None,
    bg_pool_weights: dict[str, float] | None = None,
) -> AugmentationPlan:
    """Draw a full augmentation plan; a pure function of its arguments.

    Draw order is fixed: per-object jitter, background pool, scene
    completion, per-object design elements, then replacement (only when
    nothing else fired).
    """
    for p in (probs.scene, probs.design, probs.replace):
        if not (0.0 <= p <= 1.0):
            raise ValueError(f"probabilities must be in [0,1], got {p}")
    rng = make_rng(derive_seed(seed, "augment"))
    object_ids = [a.id for a in spec.objects]
    n = len(object_ids)

    jitter = {
        oid: apply_object_jitter(derive_seed(seed, "jitter", oid), jitter_ranges)
        for oid in object_ids
    }

    weights = dict(bg_pool_weights or {pool: 1.0 for pool in BG_POOLS})
    pools = [p for p in BG_POOLS if weights.get(p, 0.0) > 0.0]
    w = [weights[p] for p in pools]
    total = sum(w)
    bg_pool = pools[int(rng.choice(len(pools), p=[x / total for x in w]))]

    scene: tuple[str, ...] = ()
    if rng.random() < probs.scene and n >= 2:
        mask = int(rng.integers(1, 2**n - 1))  # nonempty proper subsets, uniform
        scene = tuple(oid for i, oid in enumerate(object_ids) if mask & (1 << i))

    design = tuple(
        oid for oid in object_ids if oid not in scene and rng.random() < probs.design
    )

    replacement = None
    if not scene and not design and rng.random() < probs.replace:
        victim = object_ids[int(rng.integers(n))]
        pool = [a for a in (substitute_pool or []) if a.id not in object_ids]
        if not pool:
            raise SpecError("replacement augmentation fired but the substitute pool is empty")
        substitute = pool[int(rng.integers(len(pool)))]
        replacement = Replacement(victim_id=victim, substitute_asset_id=substitute.id)

    return AugmentationPlan(
        jitter=jitter,
        bg_pool_choice=bg_pool,
        scene_completion=scene,
        design_elements=design,
        replacement=replacement,
    )


def _position_phrase(placement: Placement, canvas: tuple[int, int]) -> str:
    """Fold a target position into words for the background description."""
    x = placement.center_xy[0] / canvas[0]
    y = placement.center_xy[1] / canvas[1]
    col = "left" if x < 1 / 3 else ("right" if x > 2 / 3 else "center")
    row = "top" if y < 1 / 3 else ("bottom" if y > 2 / 3 else "middle")
    if row == "middle" and col == "center":
        return "in the middle"
    if col == "center":
        return f"at the {row}"
    if row == "middle":
        return f"on the {col}"
    return f"at the {row} {col}"


def apply_plan(
    spec: SampleSpec,
    plan: AugmentationPlan,
    substitute_pool: list[ObjectAsset] | None = None,
) -> tuple[SampleSpec, CaptionDirectives]:
    """Fold a plan into the spec and derive the caption directives.

    Scene-completed and design objects stay in the spec (the renderer bakes
    or flies them per the plan) but leave the wrapped conditioning set; a
    replacement swaps the victim asset for the substitute and hands the
    victim's target placement to it.
    """
    plan.validate(spec)
    mutated = spec
    directives = CaptionDirectives(background=spec.background.description or "the background")

    if plan.replacement is not None:
        pool = {a.id: a for a in (substitute_pool or [])}
        substitute = pool.get(plan.replacement.substitute_asset_id)
        if substitute is None:
            raise SpecError(
                f"substitute asset {plan.replacement.substitute_asset_id!r} not found in the pool"
            )
        victim = next(a for a in spec.objects if a.id == plan.replacement.victim_id)
        objects = tuple(substitute if a.id == victim.id else a for a in spec.objects)
        placements = tuple(
            replace(p, object_id=substitute.id) if p.object_id == victim.id else p
            for p in spec.target.placements
        )
        mutated = replace(mutated, objects=objects, target=replace(spec.target, placements=placements))
        directives.replacement_note = f"The {victim.label} is replaced by the {substitute.label}."

    scene = set(plan.scene_completion)
    design = set(plan.design_elements)
    target_by_id = mutated.target.by_id()
    baked_phrases = []
    for asset in mutated.objects:
        if asset.id in scene:
            phrase = _position_phrase(target_by_id[asset.id], mutated.canvas.size)
            baked_phrases.append(f"{asset.description} {phrase}")
        elif asset.id in design:
            directives.extra.append(asset.description)
        else:
            directives.wrapped.append(asset.description)
    if baked_phrases:
        directives.background = f"{directives.background}, with " + " and ".join(baked_phrases)
    return mutated, directives
