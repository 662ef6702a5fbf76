"""Cleanup of externally produced grounded detections.

Takes (label, confidence, box, mask) records from an open-vocabulary
detector + segmenter and turns them into a disjoint set of usable object
masks: same-label merge, cross-label dedup, overlap separation, and a
coverage gate. Also produces the dilated union mask handed to an external
inpainter, and RGBA cutout extraction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import SpecError
from .raster import load_mask, save_mask


@dataclass(frozen=True)
class DetectionRecord:
    label: str
    confidence: float
    box: tuple[int, int, int, int]  # x, y, w, h
    mask: np.ndarray  # bool HxW


@dataclass(frozen=True)
class CleanParams:
    min_cov: float = 0.005
    max_cov: float = 0.80
    dup_iou: float = 0.85
    containment_frac: float = 0.5


@dataclass
class CleanedObject:
    label: str
    mask: np.ndarray
    confidence: float
    source_indices: tuple[int, ...]


@dataclass
class RejectedDetection:
    reason: str
    indices: tuple[int, ...]


@dataclass
class CleanedObjectSet:
    objects: list[CleanedObject] = field(default_factory=list)
    rejected: list[RejectedDetection] = field(default_factory=list)
    image_size: tuple[int, int] = (0, 0)  # (w, h)


def mask_bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    """Tight (x, y, w, h) bounding box of a nonempty boolean mask."""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise ValueError("mask is empty")
    y0, y1 = int(rows[0]), int(rows[-1])
    x0, x1 = int(cols[0]), int(cols[-1])
    return (x0, y0, x1 - x0 + 1, y1 - y0 + 1)


def validate_record(record: DetectionRecord) -> None:
    if not record.mask.any():
        raise SpecError(f"detection {record.label!r}: mask is empty")
    if tuple(record.box) != mask_bbox(record.mask):
        raise SpecError(
            f"detection {record.label!r}: box {record.box} is not the tight "
            f"bounding box of the mask {mask_bbox(record.mask)}"
        )


def _iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.logical_and(a, b).sum()
    if inter == 0:
        return 0.0
    union = np.logical_or(a, b).sum()
    return float(inter) / float(union)


def clean_detections(
    records: list[DetectionRecord],
    image_size: tuple[int, int],
    params: CleanParams = CleanParams(),
) -> CleanedObjectSet:
    """Run the four cleanup steps in their fixed order.

    (1) union-merge records sharing a (case-insensitive) label, confidence
    is the max; (2) among cross-label pairs with mask IoU >= dup_iou keep
    the higher-confidence one; (3) when a smaller mask's intersection with a
    larger one reaches containment_frac of the smaller area, the smaller
    object keeps the contested pixels, otherwise the larger does, so the
    surviving masks are pairwise disjoint; (4) gate on mask coverage
    (boundaries inclusive). All inputs end up in objects or rejected.
    """
    w, h = image_size
    total_px = w * h
    for p in (params.min_cov, params.max_cov, params.dup_iou, params.containment_frac):
        if not (0.0 < p < 1.0):
            raise ValueError(f"clean params must lie strictly inside (0,1), got {p}")
    for i, rec in enumerate(records):
        if rec.mask.shape != (h, w):
            raise ValueError(
                f"detection[{i}] mask shape {rec.mask.shape[::-1]} does not match image size {image_size}"
            )

    result = CleanedObjectSet(image_size=image_size)
    if not records:
        return result

    # (1) same-label merge
    groups: dict[str, list[int]] = {}
    for i, rec in enumerate(records):
        groups.setdefault(rec.label.casefold(), []).append(i)
    objects: list[CleanedObject] = []
    for key in sorted(groups):
        idxs = groups[key]
        mask = np.zeros((h, w), dtype=bool)
        for i in idxs:
            mask |= records[i].mask
        best = max(idxs, key=lambda i: records[i].confidence)
        objects.append(
            CleanedObject(
                label=records[best].label,
                mask=mask,
                confidence=max(records[i].confidence for i in idxs),
                source_indices=tuple(idxs),
            )
        )

    # (2) cross-label dedup: confidence-descending greedy keep
    order = sorted(
        range(len(objects)),
        key=lambda i: (-objects[i].confidence, objects[i].source_indices),
    )
    kept: list[CleanedObject] = []
    for i in order:
        cand = objects[i]
        dup_of = next((k for k in kept if _iou(cand.mask, k.mask) >= params.dup_iou), None)
        if dup_of is not None:
            result.rejected.append(
                RejectedDetection(
                    reason=f"duplicate of {dup_of.label!r}", indices=cand.source_indices
                )
            )
        else:
            kept.append(cand)
    kept.sort(key=lambda o: o.source_indices)

    # (3) overlap separation on the post-dedup snapshot
    snapshot = [o.mask.copy() for o in kept]
    areas = [int(m.sum()) for m in snapshot]
    for i in range(len(kept)):
        for j in range(i + 1, len(kept)):
            inter = np.logical_and(snapshot[i], snapshot[j])
            n_inter = int(inter.sum())
            if n_inter == 0:
                continue
            # smaller mask by snapshot area; area ties go to the later index
            small, large = (i, j) if areas[i] < areas[j] else (j, i)
            if n_inter >= params.containment_frac * areas[small]:
                kept[large].mask = kept[large].mask & ~snapshot[small]
            else:
                kept[small].mask = kept[small].mask & ~snapshot[large]

    # (4) coverage gate, boundaries inclusive
    for obj in kept:
        cov = float(obj.mask.sum()) / float(total_px)
        if cov < params.min_cov:
            result.rejected.append(
                RejectedDetection(
                    reason=f"coverage<{params.min_cov * 100:g}%", indices=obj.source_indices
                )
            )
        elif cov > params.max_cov:
            result.rejected.append(
                RejectedDetection(
                    reason=f"coverage>{params.max_cov * 100:g}%", indices=obj.source_indices
                )
            )
        else:
            result.objects.append(obj)
    return result


def inpaint_mask(cleaned: CleanedObjectSet, dilation_px: int = 50) -> np.ndarray:
    """Union of all object masks dilated by a square element of the given radius."""
    if not cleaned.objects:
        raise ValueError("cannot build an inpaint mask from an empty object set")
    if dilation_px < 0:
        raise ValueError("dilation_px must be >= 0")
    union = np.zeros_like(cleaned.objects[0].mask)
    for obj in cleaned.objects:
        union |= obj.mask
    if dilation_px == 0:
        return union
    size = 2 * dilation_px + 1
    return ndimage.maximum_filter(union, size=size, mode="constant", cval=False)


def extract_cutout(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Tight-crop an RGBA cutout: RGB copied inside the mask, alpha 255/0."""
    if not mask.any():
        raise ValueError("cannot extract a cutout from an empty mask")
    if image.shape[:2] != mask.shape:
        raise ValueError(f"image {image.shape[:2]} and mask {mask.shape} dimensions differ")
    x, y, w, h = mask_bbox(mask)
    crop = image[y : y + h, x : x + w]
    local = mask[y : y + h, x : x + w]
    out = np.zeros((h, w, 4), dtype=np.uint8)
    out[:, :, :3] = np.where(local[:, :, None], crop, 0)
    out[:, :, 3] = np.where(local, 255, 0)
    return out


# ---------------------------------------------------------------------------
# External interchange


def read_detections(path: Path | str, validate: bool = True) -> list[DetectionRecord]:
    """Read detections.json: [{label, confidence, box:[x,y,w,h], mask_path}]."""
    path = Path(path)
    payload = json.loads(path.read_text(encoding="utf-8"))
    records = []
    for i, entry in enumerate(payload):
        mask = load_mask(path.parent / entry["mask_path"])
        rec = DetectionRecord(
            label=str(entry["label"]),
            confidence=float(entry["confidence"]),
            box=tuple(int(v) for v in entry["box"]),
            mask=mask,
        )
        if validate:
            if not (0.0 <= rec.confidence <= 1.0):
                raise SpecError(f"detections[{i}]: confidence outside [0,1]")
            validate_record(rec)
        records.append(rec)
    return records


def write_inpaint_mask(mask: np.ndarray, path: Path | str) -> None:
    save_mask(mask, path)
