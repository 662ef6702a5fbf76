"""Model-free evaluation metrics for composite images.

Pixel metrics (missing rate, background MSE, chamfer-to-color) are computed
directly. Embedding metrics (CLIP-I, DINO, CLIP-T) are cosine aggregations
over vectors produced by external encoders: this module prepares the crops
and work orders, then consumes the embedding files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .detect_clean import DetectionRecord
from .manifest import SCHEMA, canonical_json, check_schema
from .raster import save_png


@dataclass(frozen=True)
class ExpectedObject:
    label: str
    ref_image_path: Path | None = None


@dataclass(frozen=True)
class EvalBackground:
    kind: str  # "plain_color" | "photo"
    color: tuple[int, int, int] | None = None
    photo_path: Path | None = None


@dataclass
class EvalCase:
    case_id: str
    expected_objects: list[ExpectedObject]
    caption: str
    background: EvalBackground
    generated_image_path: Path
    bg_mask_path: Path | None = None
    detections_path: Path | None = None
    embeddings: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.background.kind == "plain_color" and self.background.color is None:
            raise ValueError(f"case {self.case_id}: plain_color background needs a color")
        if self.background.kind == "photo" and self.background.photo_path is None:
            raise ValueError(f"case {self.case_id}: photo background needs a reference image")


@dataclass
class CaseMetrics:
    case_id: str
    expected_count: int
    missing_count: int
    missing: float
    clip_i: float | None = None
    dino: float | None = None
    clip_t: float | None = None
    mse_bg: float | None = None
    chamfer: float | None = None

    def to_json(self) -> dict:
        return {
            "case_id": self.case_id,
            "expected_count": self.expected_count,
            "missing_count": self.missing_count,
            "missing": self.missing,
            "clip_i": self.clip_i,
            "dino": self.dino,
            "clip_t": self.clip_t,
            "mse_bg": self.mse_bg,
            "chamfer": self.chamfer,
        }


def match_expected(
    expected: Sequence[ExpectedObject],
    detections: Sequence[DetectionRecord],
    conf_threshold: float,
) -> list[tuple[int, int]]:
    """Greedy one-to-one label matching, highest confidence first.

    Returns (expected_index, detection_index) pairs for found objects.
    """
    order = sorted(
        (i for i, d in enumerate(detections) if d.confidence >= conf_threshold),
        key=lambda i: (-detections[i].confidence, i),
    )
    matched: list[tuple[int, int]] = []
    taken: set[int] = set()
    for det_idx in order:
        label = detections[det_idx].label.casefold()
        for exp_idx, exp in enumerate(expected):
            if exp_idx in taken or exp.label.casefold() != label:
                continue
            matched.append((exp_idx, det_idx))
            taken.add(exp_idx)
            break
    return matched


def missing_rate(
    expected: Sequence[ExpectedObject],
    detections: Sequence[DetectionRecord],
    conf_threshold: float,
) -> float:
    """Fraction of expected objects with no matching detection."""
    if not expected:
        raise ValueError("expected object list is empty")
    found = len(match_expected(expected, detections, conf_threshold))
    return (len(expected) - found) / len(expected)


def prepare_crops(
    generated_image: np.ndarray,
    matched: Sequence[tuple[DetectionRecord, Path]],
    out_dir: Path | str,
) -> dict:
    """Write one crop per found object and a work order for the encoder.

    `matched` pairs each detection with its reference image path. The work
    order JSON maps crop files to reference files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    h, w = generated_image.shape[:2]
    pairs = []
    for i, (det, ref_path) in enumerate(matched):
        x, y, bw, bh = det.box
        x0, y0 = max(0, x), max(0, y)
        x1, y1 = min(w, x + bw), min(h, y + bh)
        if x1 <= x0 or y1 <= y0:
            raise ValueError(f"detection {det.label!r}: box {det.box} is degenerate after clamping")
        crop = generated_image[y0:y1, x0:x1]
        crop_path = out_dir / f"crop_{i:02d}.png"
        save_png(crop, crop_path)
        pairs.append({"crop": crop_path.name, "reference": str(ref_path), "label": det.label})
    order = {"schema": SCHEMA, "pairs": pairs}
    (out_dir / "work_order.json").write_text(canonical_json(order) + "\n", encoding="utf-8")
    return order


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"vector lengths differ: {a.shape[0]} vs {b.shape[0]}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine is undefined for zero vectors")
    return float(np.dot(a, b) / (na * nb))


def identity_scores(pairs: Sequence[tuple[np.ndarray, np.ndarray]]) -> float | None:
    """Mean cosine over found objects; None when no objects were found."""
    if not pairs:
        return None
    return float(np.mean([cosine(crop, ref) for crop, ref in pairs]))


def _unit_channels(image: np.ndarray) -> np.ndarray:
    """Channels in [0,1]: uint8 rasters are scaled, float rasters pass through."""
    arr = np.asarray(image)
    if np.issubdtype(arr.dtype, np.integer):
        return arr.astype(np.float64) / 255.0
    return arr.astype(np.float64)


def mse_bg(generated: np.ndarray, reference: np.ndarray, bg_mask: np.ndarray) -> float:
    """Mean squared error over background pixels, channels scaled to [0,1]."""
    if generated.shape != reference.shape:
        raise ValueError(f"image shapes differ: {generated.shape} vs {reference.shape}")
    mask = np.asarray(bg_mask, dtype=bool)
    if generated.shape[:2] != mask.shape:
        raise ValueError(f"mask shape {mask.shape} does not match image {generated.shape[:2]}")
    if not mask.any():
        raise ValueError("background mask is empty")
    diff = _unit_channels(generated)[mask] - _unit_channels(reference)[mask]
    return float(np.mean(diff**2))


def chamfer_color(
    generated: np.ndarray,
    bg_mask: np.ndarray,
    target_colors: Sequence[tuple[int, int, int]],
) -> float:
    """Mean Euclidean RGB distance (0-255 scale) from each background pixel
    to its nearest target color."""
    mask = np.asarray(bg_mask, dtype=bool)
    if not mask.any():
        raise ValueError("background mask is empty")
    if not (1 <= len(target_colors) <= 4):
        raise ValueError("need 1 to 4 target colors")
    pixels = np.asarray(generated, dtype=np.float64)[mask]
    targets = np.asarray(target_colors, dtype=np.float64)
    dists = np.linalg.norm(pixels[:, None, :] - targets[None, :, :], axis=2)
    return float(np.mean(dists.min(axis=1)))


@dataclass
class MetricReport:
    rows: list[CaseMetrics]
    aggregate: dict

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA,
            "aggregate": self.aggregate,
            "cases": [row.to_json() for row in self.rows],
        }


_MACRO_FIELDS = ("clip_i", "dino", "clip_t", "mse_bg", "chamfer")


def aggregate(rows: Sequence[CaseMetrics]) -> MetricReport:
    """Combine per-case rows: missing is micro-averaged over objects, the
    embedding and background scores are macro-averaged over non-null cases."""
    if not rows:
        raise ValueError("no rows to aggregate")
    total_expected = sum(r.expected_count for r in rows)
    total_missing = sum(r.missing_count for r in rows)
    agg: dict = {"missing": total_missing / total_expected if total_expected else 0.0}
    skipped: dict[str, int] = {}
    for name in _MACRO_FIELDS:
        values = [getattr(r, name) for r in rows]
        present = [v for v in values if v is not None]
        skipped[name] = len(values) - len(present)
        agg[name] = float(np.mean(present)) if present else None
    agg["skipped"] = skipped
    agg["case_count"] = len(rows)
    return MetricReport(rows=list(rows), aggregate=agg)


def format_report(report: MetricReport) -> str:
    """Aligned plain-text table of the per-case rows plus the aggregate."""
    headers = ["case", "missing", "clip_i", "dino", "clip_t", "mse_bg", "chamfer"]

    def fmt(value: float | None, digits: int = 4) -> str:
        return "-" if value is None else f"{value:.{digits}f}"

    lines = []
    for row in report.rows:
        lines.append(
            [row.case_id, fmt(row.missing), fmt(row.clip_i), fmt(row.dino),
             fmt(row.clip_t), fmt(row.mse_bg), fmt(row.chamfer)]
        )
    agg = report.aggregate
    lines.append(
        ["AGGREGATE", fmt(agg["missing"]), fmt(agg["clip_i"]), fmt(agg["dino"]),
         fmt(agg["clip_t"]), fmt(agg["mse_bg"]), fmt(agg["chamfer"])]
    )
    widths = [max(len(headers[c]), max(len(line[c]) for line in lines)) for c in range(len(headers))]
    out = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers))]
    for line in lines:
        out.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(line)))
    return "\n".join(out)


# ---------------------------------------------------------------------------
# Embedding files: flat little-endian float32 with a JSON sidecar


def write_embeddings(path: Path | str, vectors: np.ndarray, source_tag: str) -> None:
    path = Path(path)
    arr = np.ascontiguousarray(np.atleast_2d(vectors), dtype="<f4")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(arr.tobytes())
    sidecar = {"dim": int(arr.shape[1]), "count": int(arr.shape[0]), "source_tag": source_tag}
    Path(str(path) + ".json").write_text(canonical_json(sidecar) + "\n", encoding="utf-8")


def read_embeddings(path: Path | str) -> np.ndarray:
    path = Path(path)
    sidecar = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    arr = data.reshape(int(sidecar["count"]), int(sidecar["dim"]))
    return arr.astype(np.float64)


# ---------------------------------------------------------------------------
# Case files


def load_cases(path: Path | str) -> list[EvalCase]:
    path = Path(path)
    payload = json.loads(path.read_text(encoding="utf-8"))
    check_schema(payload.get("schema"), "cases")
    base = path.parent
    cases = []
    for entry in payload["cases"]:
        bg_raw = entry["background"]
        background = EvalBackground(
            kind=bg_raw["kind"],
            color=tuple(bg_raw["color"]) if bg_raw.get("color") is not None else None,
            photo_path=base / bg_raw["photo_path"] if bg_raw.get("photo_path") else None,
        )
        cases.append(
            EvalCase(
                case_id=str(entry["case_id"]),
                expected_objects=[
                    ExpectedObject(
                        label=o["label"],
                        ref_image_path=base / o["ref_image"] if o.get("ref_image") else None,
                    )
                    for o in entry["expected_objects"]
                ],
                caption=entry.get("caption", ""),
                background=background,
                generated_image_path=base / entry["generated_image"],
                bg_mask_path=base / entry["bg_mask"] if entry.get("bg_mask") else None,
                detections_path=base / entry["detections"] if entry.get("detections") else None,
                embeddings=entry.get("embeddings", {}),
            )
        )
    return cases
