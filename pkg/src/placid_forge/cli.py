"""Command-line entry points.

Subcommands: ``gen`` (batch sample synthesis), ``clean`` (detection cleanup),
``bg`` (background synthesis), ``metrics prepare|score``, and ``validate``.
Exit codes: 0 full success, 1 partial failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import background, detect_clean, metrics
from .build import GenerationConfig, run_batch
from .errors import PlacidForgeError, SpecError
from .manifest import canonical_json, read_provenance, spec_from_json, validate_output
from .raster import load_mask, load_rgb, save_png

CONFIG_ENV_VAR = "PLACID_FORGE_CONFIG"


def _load_config(path_arg: str | None) -> GenerationConfig:
    path = path_arg or os.environ.get(CONFIG_ENV_VAR)
    if path is None:
        return GenerationConfig()
    try:
        return GenerationConfig.load(path)
    except (OSError, json.JSONDecodeError, SpecError, TypeError, ValueError) as exc:
        raise SpecError(f"could not load config {path}: {exc}") from exc


def _cmd_gen(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    if args.seed is not None:
        config.global_seed = args.seed
    if args.workers is not None:
        config.workers = args.workers
    summary = run_batch(args.manifests, args.out, config)
    print(
        f"built {summary['built']} samples, {summary['failed']} failed "
        f"({summary['elapsed']:.1f}s)"
    )
    for failure in summary["failures"]:
        print(f"  FAILED {failure['sample_id']}: {failure['reason']}", file=sys.stderr)
    return 0 if summary["failed"] == 0 else 1


def _cmd_clean(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    records = detect_clean.read_detections(args.detections)
    image = load_rgb(args.image)
    h, w = image.shape[:2]
    cleaned = detect_clean.clean_detections(records, (w, h), config.clean)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {
        "image_size": [w, h],
        "objects": [],
        "rejected": [
            {"reason": r.reason, "indices": list(r.indices)} for r in cleaned.rejected
        ],
    }
    for i, obj in enumerate(cleaned.objects):
        cutout = detect_clean.extract_cutout(image, obj.mask)
        save_png(cutout, out / f"cutout_{i:02d}.png")
        summary["objects"].append(
            {
                "label": obj.label,
                "confidence": obj.confidence,
                "cutout": f"cutout_{i:02d}.png",
                "indices": list(obj.source_indices),
            }
        )
    if cleaned.objects:
        mask = detect_clean.inpaint_mask(cleaned, args.dilation)
        detect_clean.write_inpaint_mask(mask, out / "inpaint_mask.png")
        summary["inpaint_mask"] = "inpaint_mask.png"
    (out / "cleaned.json").write_text(canonical_json(summary) + "\n", encoding="utf-8")
    if not cleaned.objects:
        print("no valid detections survive cleanup; image should be dropped")
    else:
        print(f"kept {len(cleaned.objects)} objects, rejected {len(cleaned.rejected)}")
    return 0


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return (int(w), int(h))
    except ValueError as exc:
        raise SpecError(f"size must look like 640x480, got {text!r}") from exc


def _cmd_bg(args: argparse.Namespace) -> int:
    size = _parse_size(args.size)
    if args.kind == "plain_color":
        if not args.color:
            raise SpecError("plain_color needs --color R,G,B")
        color = tuple(int(c) for c in args.color.split(","))
        raster = np.broadcast_to(np.asarray(color, dtype=np.uint8), (size[1], size[0], 3)).copy()
    elif args.kind == "procedural":
        plan = background.sample_plan(args.seed, size)
        raster = background.synth_background(plan, size, args.seed)
    elif args.kind == "photo":
        if not args.photo_dir:
            raise SpecError("photo needs --photo-dir")
        pool = background.list_photo_pool(args.photo_dir)
        if not pool:
            raise SpecError(f"photo pool {args.photo_dir} is empty")
        from .rng import derive_seed, make_rng

        rng = make_rng(derive_seed(args.seed, "photo-pick"))
        raster = background.center_crop_resize(load_rgb(pool[int(rng.integers(len(pool)))]), size)
    else:
        raise SpecError(f"unknown background kind {args.kind!r}")
    save_png(raster, args.out)
    print(f"wrote {args.out}")
    return 0


def _score_case(case: metrics.EvalCase, conf_threshold: float) -> metrics.CaseMetrics:
    detections = (
        detect_clean.read_detections(case.detections_path, validate=False)
        if case.detections_path
        else []
    )
    matched = metrics.match_expected(case.expected_objects, detections, conf_threshold)
    row = metrics.CaseMetrics(
        case_id=case.case_id,
        expected_count=len(case.expected_objects),
        missing_count=len(case.expected_objects) - len(matched),
        missing=(len(case.expected_objects) - len(matched)) / len(case.expected_objects),
    )

    emb = case.embeddings
    base = case.generated_image_path.parent
    for field_name, key in (("clip_i", "clip_i_pairs"), ("dino", "dino_pairs")):
        pairs = []
        for pair in emb.get(key, []):
            crop = metrics.read_embeddings(base / pair["crop_embed"])
            ref = metrics.read_embeddings(base / pair["ref_embed"])
            pairs.append((crop[0], ref[0]))
        setattr(row, field_name, metrics.identity_scores(pairs))
    if "clip_t" in emb:
        image_vec = metrics.read_embeddings(base / emb["clip_t"]["image_embed"])[0]
        text_vec = metrics.read_embeddings(base / emb["clip_t"]["caption_embed"])[0]
        row.clip_t = metrics.cosine(image_vec, text_vec)

    generated = load_rgb(case.generated_image_path)
    if case.bg_mask_path is not None:
        mask = load_mask(case.bg_mask_path)
        if case.background.kind == "plain_color":
            row.chamfer = metrics.chamfer_color(generated, mask, [case.background.color])
        elif case.background.kind == "photo":
            reference = load_rgb(case.background.photo_path)
            if reference.shape == generated.shape:
                row.mse_bg = metrics.mse_bg(generated, reference, mask)
    return row


def _cmd_metrics(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    cases = metrics.load_cases(args.cases)
    if args.action == "prepare":
        out = Path(args.out)
        for case in cases:
            detections = (
                detect_clean.read_detections(case.detections_path, validate=False)
                if case.detections_path
                else []
            )
            matched = metrics.match_expected(
                case.expected_objects, detections, config.conf_threshold
            )
            pairs = [
                (detections[det_idx], case.expected_objects[exp_idx].ref_image_path)
                for exp_idx, det_idx in matched
                if case.expected_objects[exp_idx].ref_image_path is not None
            ]
            generated = load_rgb(case.generated_image_path)
            metrics.prepare_crops(generated, pairs, out / case.case_id)
        print(f"prepared crops for {len(cases)} cases under {args.out}")
        return 0

    rows = [_score_case(case, config.conf_threshold) for case in cases]
    report = metrics.aggregate(rows)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(canonical_json(report.to_json()) + "\n", encoding="utf-8")
    table = metrics.format_report(report)
    out.with_suffix(".txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    sample_dir = Path(args.dir)
    provenance = read_provenance(sample_dir)
    spec = spec_from_json(provenance["spec"], sample_dir)
    violations = validate_output(sample_dir, spec)
    if violations:
        for v in violations:
            print(f"VIOLATION: {v}", file=sys.stderr)
        return 1
    print(f"{sample_dir} is valid")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="placid-forge",
        description="Deterministic motion-compositing sample synthesis and metrics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="build samples from a directory of spec manifests")
    gen.add_argument("--manifests", required=True)
    gen.add_argument("--out", required=True)
    gen.add_argument("--config", default=None)
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--workers", type=int, default=None)
    gen.set_defaults(func=_cmd_gen)

    clean = sub.add_parser("clean", help="clean grounded detections into cutouts")
    clean.add_argument("--detections", required=True)
    clean.add_argument("--image", required=True)
    clean.add_argument("--out", required=True)
    clean.add_argument("--dilation", type=int, default=50)
    clean.add_argument("--config", default=None)
    clean.set_defaults(func=_cmd_clean)

    bg = sub.add_parser("bg", help="synthesize a background")
    bg.add_argument("--kind", required=True, choices=["plain_color", "procedural", "photo"])
    bg.add_argument("--size", required=True, help="WxH, e.g. 640x480")
    bg.add_argument("--seed", type=int, default=0)
    bg.add_argument("--out", required=True)
    bg.add_argument("--color", default=None, help="R,G,B for plain_color")
    bg.add_argument("--photo-dir", default=None)
    bg.set_defaults(func=_cmd_bg)

    met = sub.add_parser("metrics", help="prepare crops or score generated composites")
    met.add_argument("action", choices=["prepare", "score"])
    met.add_argument("--cases", required=True)
    met.add_argument("--out", required=True)
    met.add_argument("--config", default=None)
    met.set_defaults(func=_cmd_metrics)

    val = sub.add_parser("validate", help="validate a written sample directory")
    val.add_argument("--dir", required=True)
    val.set_defaults(func=_cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpecError as exc:
        print(f"config/spec error: {exc}", file=sys.stderr)
        return 2
    except (PlacidForgeError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
