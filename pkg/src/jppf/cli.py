"""Command-line interface: ``jppf {fuse,panoptic,merge,eval,synth,render,validate}``.

Exit codes: 0 success, 2 bad input, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from jppf import io, metrics
from jppf.errors import InputError, InvariantViolation
from jppf.fusion import FusionConfig, jppf_pipeline, panoptic_fuse
from jppf.synth import SceneSpec, conflict_suite, generate, random_scene_spec
from jppf.taxonomy import ClassTaxonomy, load_taxonomy, map_violations, validate_taxonomy
from jppf.topdown import merge_top_down

log = logging.getLogger("jppf")

EXIT_OK, EXIT_BAD_INPUT, EXIT_INTERNAL = 0, 2, 3


def _fusion_config(args) -> FusionConfig:
    data = {}
    if getattr(args, "config", None):
        data.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
    for key in ("min_stuff_area", "conf_threshold", "iou_threshold", "threads"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    if getattr(args, "per_class_nms", False):
        data["per_class_nms"] = True
    return FusionConfig.from_dict(data)


def _taxonomy(args, scene_dir: Path | None = None) -> ClassTaxonomy:
    if args.taxonomy:
        return load_taxonomy(args.taxonomy)
    if scene_dir is not None and (scene_dir / io.TAXONOMY_FILE).exists():
        return load_taxonomy(scene_dir / io.TAXONOMY_FILE)
    raise InputError("--taxonomy is required")


def _inputs(args, need_parts: bool = True):
    """(S, P, instances, taxonomy) from explicit paths or a scene directory."""
    scene = Path(args.scene) if args.scene else None
    t = _taxonomy(args, scene)
    meta = io.read_channel_meta(scene, t) if scene else {
        "semantic": list(t.semantic_classes),
        "parts": list(t.part_groups),
    }
    if args.channels:
        meta = json.loads(Path(args.channels).read_text(encoding="utf-8"))

    def pick(explicit, default_name):
        if explicit:
            return Path(explicit)
        if scene is None:
            raise InputError(f"missing input: pass --scene or the {default_name} path")
        return scene / default_name

    S = io.read_logits(pick(args.semantic, io.SEMANTIC_FILE), meta["semantic"])
    P = io.read_logits(pick(args.parts, io.PARTS_FILE), meta["parts"]) if need_parts else None
    preds = io.read_instances(pick(args.instances, io.INSTANCES_FILE))
    return S, P, preds, t


def _check_output(m, t: ClassTaxonomy) -> None:
    bad = int(map_violations(m, t).sum())
    if bad:
        raise InvariantViolation(f"{bad} output pixels carry inconsistent labels")


def cmd_fuse(args) -> int:
    S, P, preds, t = _inputs(args)
    cfg = _fusion_config(args)
    out, stack = jppf_pipeline(S, P, preds, cfg, t, return_stack=True)
    _check_output(out, t)
    io.write_labelmap_png(out, args.output)
    if args.dump_candidates:
        io.write_tensor(stack.to_array().astype(np.float32), args.dump_candidates)
        ids = [list(c) for c in stack.identities]
        sidecar = Path(args.dump_candidates).with_suffix(".json")
        sidecar.write_text(json.dumps({"identities": ids, "n_pp": stack.n_pp}), encoding="utf-8")
    log.info("wrote %s (%d candidates)", args.output, stack.n_pp)
    return EXIT_OK


def cmd_panoptic(args) -> int:
    S, _, preds, t = _inputs(args, need_parts=False)
    out = panoptic_fuse(S, preds, _fusion_config(args), t)
    _check_output(out, t)
    io.write_labelmap_png(out, args.output)
    return EXIT_OK


def cmd_merge(args) -> int:
    t = load_taxonomy(args.taxonomy)
    pan = io.read_labelmap_png(args.panoptic).without_parts()
    groups = io.read_part_group_png(args.parts)
    out = merge_top_down(pan, groups, t)
    io.write_labelmap_png(out, args.output)
    return EXIT_OK


def _eval_pair(pair, t):
    pred_path, gt_path = pair
    return metrics.evaluate(io.read_labelmap_png(pred_path), io.read_labelmap_png(gt_path), t)


def cmd_eval(args) -> int:
    t = load_taxonomy(args.taxonomy)
    if len(args.pred) != len(args.gt):
        raise InputError("--pred and --gt need the same number of files")
    pairs = list(zip(args.pred, args.gt))
    if args.threads > 1:
        with ThreadPoolExecutor(args.threads) as pool:
            results = list(pool.map(lambda p: _eval_pair(p, t), pairs))
    else:
        results = [_eval_pair(p, t) for p in pairs]

    if len(results) == 1:
        report = {k: v for k, v in results[0].items() if k != "per_class"}
    else:
        report = {"scenes": [{k: v for k, v in r.items() if k != "per_class"} for r in results]}
        report["mean"] = _mean_report(report["scenes"])
    text = json.dumps(report, indent=2)
    if args.output:
        Path(args.output).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["scene", "class_id", "name", "partitionable", "PartPQ"])
            for k, r in enumerate(results):
                for c, row in r["per_class"].items():
                    writer.writerow([k, c, t.name(c), row["partitionable"], row["PartPQ"]])
    return EXIT_OK


def _mean_report(scenes: list[dict]) -> dict:
    def avg(values):
        vals = [v for v in values if v is not None]
        return float(np.mean(vals)) if vals else None

    return {
        "PartPQ": {k: avg(s["PartPQ"][k] for s in scenes) for k in ("All", "P", "NP")},
        **{k: avg(s[k] for s in scenes) for k in ("PQ", "mIoU_semantic", "mIoU_part", "density")},
    }


def cmd_synth(args) -> int:
    t = load_taxonomy(args.taxonomy or "cpp")
    out = Path(args.output)
    if args.conflict_suite:
        specs = conflict_suite(args.conflict_suite, args.seed, t, args.height, args.width, args.min_stuff_area)
        for k, spec in enumerate(specs):
            io.write_scene(out / f"scene_{k:04d}", generate(spec, t), t)
        return EXIT_OK
    if args.spec:
        spec = SceneSpec.from_dict(json.loads(Path(args.spec).read_text(encoding="utf-8")))
    else:
        spec = random_scene_spec(
            t, args.seed, args.height, args.width, args.max_things, min_stuff_area=args.min_stuff_area
        )
    io.write_scene(out, generate(spec, t), t)
    return EXIT_OK


def cmd_render(args) -> int:
    t = load_taxonomy(args.taxonomy) if args.taxonomy else None
    io.write_png_rgb8(io.render(io.read_labelmap_png(args.input), t), args.output)
    return EXIT_OK


def cmd_validate(args) -> int:
    problems = []
    t = None
    if args.taxonomy:
        source = args.taxonomy
        t = load_taxonomy(source, validate=False)
        problems += [f"taxonomy: {p}" for p in validate_taxonomy(t)]
    if args.scene:
        scene = Path(args.scene)
        if t is None:
            t = load_taxonomy(scene / io.TAXONOMY_FILE, validate=False)
            problems += [f"taxonomy: {p}" for p in validate_taxonomy(t)]
        try:
            S, P, preds, _ = _inputs(argparse.Namespace(
                scene=scene, taxonomy=None, channels=None, semantic=None, parts=None, instances=None,
            ))
            if P.spatial_shape != S.spatial_shape:
                problems.append("scene: part and semantic logits differ in size")
            h, w = S.spatial_shape
            for k, p in enumerate(preds):
                x0, y0, x1, y1 = p.box
                if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
                    problems.append(f"scene: instance {k} box {p.box} leaves the canvas")
                if not t.is_thing(p.class_id):
                    problems.append(f"scene: instance {k} has non-thing class {p.class_id}")
            gt_path = scene / io.GT_FILE
            if gt_path.exists():
                gt = io.read_labelmap_png(gt_path)
                bad = int(map_violations(gt, t).sum())
                if bad:
                    problems.append(f"scene: {bad} ground-truth pixels carry inconsistent labels")
        except InputError as e:
            problems.append(f"scene: {e}")
    for p in problems:
        print(p)
    if not problems:
        print("ok")
    return EXIT_BAD_INPUT if problems else EXIT_OK


def _add_fusion_flags(p: argparse.ArgumentParser, parts: bool = True) -> None:
    p.add_argument("--scene", help="scene directory (fills any input not given explicitly)")
    p.add_argument("--semantic", help="semantic logits tensor (C_st+C_th x H x W)")
    if parts:
        p.add_argument("--parts", help="part logits tensor (C_p+1 x H x W)")
    p.add_argument("--instances", help="instance prediction JSON")
    p.add_argument("--channels", help="JSON {semantic: [...], parts: [...]} channel order")
    p.add_argument("--taxonomy", help="taxonomy JSON or a built-in name (cpp, ppp)")
    p.add_argument("--config", help="FusionConfig JSON overlay")
    p.add_argument("--min-stuff-area", dest="min_stuff_area", type=int)
    p.add_argument("--conf-threshold", dest="conf_threshold", type=float)
    p.add_argument("--iou-threshold", dest="iou_threshold", type=float)
    p.add_argument("--per-class-nms", dest="per_class_nms", action="store_true")
    p.add_argument("--threads", type=int)
    p.add_argument("--output", "-o", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jppf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fuse", help="joint panoptic-part fusion")
    _add_fusion_flags(p)
    p.add_argument("--dump-candidates", help="write the N_pp x H x W fused candidate tensor here")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("panoptic", help="panoptic-only fusion (semantic + instances)")
    _add_fusion_flags(p, parts=False)
    p.set_defaults(func=cmd_panoptic)

    p = sub.add_parser("merge", help="top-down merge of a panoptic map and a part map")
    p.add_argument("--panoptic", required=True, help="16-bit label-map PNG")
    p.add_argument("--parts", required=True, help="16-bit greyscale PNG of grouped part ids")
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("eval", help="PartPQ / PQ / mIoU / density of predictions")
    p.add_argument("--pred", nargs="+", required=True)
    p.add_argument("--gt", nargs="+", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--output", "-o", help="metrics JSON (stdout if omitted)")
    p.add_argument("--csv", help="per-class CSV")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a synthetic scene directory")
    p.add_argument("--spec", help="SceneSpec JSON; random scene when omitted")
    p.add_argument("--taxonomy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--width", type=int, default=192)
    p.add_argument("--max-things", dest="max_things", type=int, default=4)
    p.add_argument("--min-stuff-area", dest="min_stuff_area", type=int, default=2048)
    p.add_argument("--conflict-suite", dest="conflict_suite", type=int, default=0,
                   help="write this many conflict-suite scenes as scene_NNNN subdirectories")
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("render", help="colour visualisation of a label map")
    p.add_argument("--input", "-i", required=True)
    p.add_argument("--taxonomy")
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("validate", help="lint a taxonomy and/or a scene directory")
    p.add_argument("--taxonomy")
    p.add_argument("--scene")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except InvariantViolation as e:
        log.error("internal invariant violated: %s", e)
        return EXIT_INTERNAL
    except (InputError, OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        log.error("%s", e)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
