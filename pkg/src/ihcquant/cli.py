"""Command-line orchestration.

Every command reads its inputs, writes a JSON report embedding a run
manifest (config snapshot, tool version, input digests, timestamp), and
emits plot-ready CSVs plus matplotlib figures where a curve or matrix is
involved.  `rerun` re-executes a recorded manifest and reproduces the
original outputs byte for byte (the embedded manifest, including its
timestamp, is carried over verbatim).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .annotations import rasterize, read_annotations, write_annotations, write_labelmap
from .config import RunConfig, config_from_dict, config_to_dict, load_config
from .detect import detect_slide, extract_detections, read_detections, write_detections
from .embed import (
    cohort_similarity,
    mosaic,
    pixel_features,
    project_2d,
    read_features,
    write_features,
    write_projection,
)
from .inference import (
    baseline_backend,
    baseline_infer,
    pmap_directory_backend,
    read_pmap,
    write_pmap,
)
from .metrics import ReplicateScores, compare_models, f1_from_counts, greedy_match
from .quantify import (
    RaterPanel,
    TpsCategory,
    accuracy,
    auroc,
    bin_tps,
    cohens_kappa,
    compute_tps,
    confusion,
    consensus_category,
    cutoff_sweep,
    format_group_stats,
    group_summary,
)
from .slide_io import ResolutionSpec, iter_tiles, load_manifest, load_patch, resample_to_reference
from .synth import generate_slide
from . import plots

# Which per-command parameters are inputs that get digested into the run
# manifest: file = one file, pmap = header plus sibling .bin, dir = every
# file directly inside, slide = manifest plus every referenced file.
INPUT_SPECS: dict[str, dict[str, str]] = {
    "rasterize": {"annotations": "file"},
    "infer": {"patch": "file", "slide": "slide"},
    "detect": {"pmap": "pmap", "slide": "slide", "pmap_dir": "dir"},
    "match": {"pred": "file", "gt": "file"},
    "tps": {"detections": "file"},
    "consensus": {"panel": "file"},
    "evaluate": {"scores": "file"},
    "roc": {"scores": "file"},
    "sweep": {"scores": "file"},
    "groupstats": {"values": "file"},
    "synth": {},
    "embed": {"features": "file", "patches_dir": "dir", "meta": "file", "projection": "file"},
    "compare": {"scores_a": "file", "scores_b": "file"},
}


def _digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _collect_inputs(command: str, params: dict) -> list[dict]:
    entries = []
    for name, kind in INPUT_SPECS.get(command, {}).items():
        value = params.get(name)
        if value is None:
            continue
        path = Path(value)
        if kind == "file":
            entries.append({"name": name, "path": str(value), "sha256": _digest(path)})
        elif kind == "pmap":
            entries.append({"name": name, "path": str(value), "sha256": _digest(path)})
            bin_path = path.with_suffix(".bin")
            entries.append({"name": name + ".bin", "path": str(bin_path), "sha256": _digest(bin_path)})
        elif kind == "dir":
            for f in sorted(p for p in path.iterdir() if p.is_file()):
                entries.append({"name": f"{name}/{f.name}", "path": str(f), "sha256": _digest(f)})
        elif kind == "slide":
            entries.append({"name": name, "path": str(value), "sha256": _digest(path)})
            manifest = load_manifest(path)
            for t in sorted(manifest.tiles, key=lambda t: (t.gy, t.gx)):
                entries.append(
                    {"name": f"{name}/tile_{t.gx}_{t.gy}", "path": str(t.path), "sha256": _digest(t.path)}
                )
            if manifest.exclusion_mask is not None:
                em = manifest.exclusion_mask
                entries.append(
                    {"name": f"{name}/exclusion", "path": str(em.path), "sha256": _digest(em.path)}
                )
    return entries


def _build_manifest(command: str, params: dict, cfg: RunConfig) -> dict:
    return {
        "tool": "ihcquant",
        "version": __version__,
        "command": command,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "config": config_to_dict(cfg),
        "args": params,
        "inputs": _collect_inputs(command, params),
    }


def _write_json(path: Path, obj: dict) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _write_report(out_dir: Path, name: str, manifest: dict, result: dict) -> Path:
    path = out_dir / f"{name}.json"
    _write_json(path, {"manifest": manifest, "result": result})
    return path


def _read_table(path: str | Path, required: list[str]) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        missing = [c for c in required if c not in fields]
        if missing:
            raise ValueError(f"{path}: missing column(s) {', '.join(missing)}")
        return [row for row in reader if any((v or "").strip() for v in row.values())]


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# command runners (shared by the argparse front end and `rerun`)


def run_rasterize(params: dict, cfg: RunConfig, out_dir: Path, manifest: dict) -> None:
    anns = read_annotations(params["annotations"])
    label_map = rasterize(anns, params["width"], params["height"], cfg.disk_radius)
    write_labelmap(label_map, out_dir / "labels.png")
    result = {
        "annotations": len(anns),
        "width": params["width"],
        "height": params["height"],
        "disk_radius": cfg.disk_radius,
        "labeled_pixels": int((label_map.values > 0).sum()),
        "labels_png": "labels.png",
    }
    _write_report(out_dir, "rasterize", manifest, result)


def _require_deconv(name: str) -> None:
    if name != "deconv":
        raise ValueError(f"unknown inference backend {name!r} (built-in: 'deconv')")


def run_infer(params: dict, cfg: RunConfig, out_dir: Path, manifest: dict) -> None:
    backend_name = params.get("backend") or cfg.backend
    _require_deconv(backend_name)
    target = ResolutionSpec(cfg.reference_mpp)
    written = []
    if params.get("patch"):
        img = load_patch(params["patch"], ResolutionSpec(params.get("mpp") or cfg.reference_mpp))
        if img.mpp.mpp != target.mpp:
            img = resample_to_reference(img, target)
        pmap = baseline_infer(img, cfg.stain)
        name = Path(params["patch"]).stem + ".json"
        write_pmap(pmap, out_dir / name)
        written.append(name)
    elif params.get("slide"):
        slide = load_manifest(params["slide"])
        for tile in iter_tiles(slide, target, cfg.min_tissue_fraction, cfg.white_threshold):
            pmap = baseline_infer(tile.image, cfg.stain)
            name = f"tile_{tile.gx}_{tile.gy}.json"
            write_pmap(pmap, out_dir / name)
            written.append(name)
    else:
        raise ValueError("infer requires --patch or --slide")
    _write_report(out_dir, "infer", manifest, {"backend": backend_name, "pmaps": written})


def run_detect(params: dict, cfg: RunConfig, out_dir: Path, manifest: dict) -> None:
    target = ResolutionSpec(cfg.reference_mpp)
    if params.get("pmap"):
        detections = extract_detections(read_pmap(params["pmap"]), cfg.peaks)
    elif params.get("slide"):
        slide = load_manifest(params["slide"])
        if params.get("pmap_dir"):
            backend = pmap_directory_backend(params["pmap_dir"])
        else:
            _require_deconv(params.get("backend") or cfg.backend)
            backend = baseline_backend(cfg.stain)
        detections = detect_slide(
            slide,
            backend,
            cfg.peaks,
            target,
            cfg.min_tissue_fraction,
            cfg.white_threshold,
            workers=cfg.workers,
        )
    else:
        raise ValueError("detect requires --pmap or --slide")
    write_detections(detections, out_dir / "detections.csv")
    by_class: dict[str, int] = {}
    for d in detections:
        by_class[d.cls.name] = by_class.get(d.cls.name, 0) + 1
    result = {
        "n_detections": len(detections),
        "by_class": dict(sorted(by_class.items())),
        "detections_csv": "detections.csv",
    }
    _write_report(out_dir, "detect", manifest, result)


def run_match(params: dict, cfg: RunConfig, out_dir: Path, manifest: dict) -> None:
    preds = read_detections(params["pred"])
    gts = read_annotations(params["gt"])
    counts = greedy_match(preds, gts, cfg.match_max_dist)
    report = f1_from_counts(counts)
    result = {
        "max_dist": cfg.match_max_dist,
        "per_class": {
            cls.name: {
                "tp": counts.per_class[cls].tp,
                "fp": counts.per_class[cls].fp,
                "fn": counts.per_class[cls].fn,
                "precision": report.per_class[cls].precision,
                "recall": report.per_class[cls].recall,
                "f1": report.per_class[cls].f1,
                "empty": report.per_class[cls].empty,
            }
            for cls in counts.per_class
        },
        "mf1": report.mf1,
    }
    _write_report(out_dir, "match", manifest, result)


def run_tps(params: dict, cfg: RunConfig, out_dir: Path, manifest: dict) -> None:
    detections = read_detections(params["detections"])
    res = compute_tps(detections, params.get("slide_id") or "")
    c1, c2 = cfg.cutoffs
    result = {
        "slide_id": res.slide_id,
        "n_pos": res.n_pos,
        "n_neg": res.n_neg,
        "tps": res.tps,
        "cutoffs": [c1, c2],
        "category": bin_tps(res.tps, c1, c2).name,
    }
    _write_report(out_dir, "tps", manifest, result)


def run_consensus(params: dict, cfg: RunConfig, out_dir: Path, manifest: dict) -> None:
    rows = _read_table(params["panel"], ["slide_id", "rater1", "rater2", "rater3"])
    c1, c2 = cfg.cutoffs
    out_rows = []
    histogram = {c.name: 0 for c in TpsCategory}
    no_majority = 0
    for row in rows:
        panel = RaterPanel(
            row["slide_id"],
            (float(row["rater1"]), float(row["rater2"]), float(row["rater3"])),
        )
        res = consensus_category(panel, c1, c2)
        histogram[res.category.name] += 1
        no_majority += int(res.no_majority)
        out_rows.append([panel.slide_id, res.category.name, int(res.no_majority)])
    _write_csv(out_dir / "consensus.csv", ["slide_id", "category", "no_majority"], out_rows)
    result = {
        "n": len(out_rows),
        "cutoffs": [c1, c2],
        "histogram": histogram,
        "no_majority": no_majority,
        "consensus_csv": "consensus.csv",
    }
    _write_report(out_dir, "consensus", manifest, result)


def _load_scores(path: str | Path, c1: float, c2: float, need_gt_tps: bool = False):
    """Slide table with pred_tps and either gt_tps or gt_category columns.

    Returns (gt_categories, pred_categories, gt_tps or None, pred_tps).
    """
    rows = _read_table(path, ["slide_id", "pred_tps"])
    if not rows:
        raise ValueError(f"{path}: no slides")
    has_gt_tps = "gt_tps" in rows[0] and all((r.get("gt_tps") or "").strip() for r in rows)
    has_gt_cat = "gt_category" in rows[0] and all((r.get("gt_category") or "").strip() for r in rows)
    if need_gt_tps and not has_gt_tps:
        raise ValueError(f"{path}: this command needs a complete gt_tps column")
    if not has_gt_tps and not has_gt_cat:
        raise ValueError(f"{path}: need gt_tps or gt_category column")
    pred_tps = [float(r["pred_tps"]) for r in rows]
    pred_cat = [bin_tps(t, c1, c2) for t in pred_tps]
    gt_tps = [float(r["gt_tps"]) for r in rows] if has_gt_tps else None
    if has_gt_tps:
        gt_cat = [bin_tps(t, c1, c2) for t in gt_tps]
    else:
        try:
            gt_cat = [TpsCategory[r["gt_category"].strip()] for r in rows]
        except KeyError as exc:
            raise ValueError(f"{path}: unknown gt_category {exc}") from exc
    return gt_cat, pred_cat, gt_tps, pred_tps


def run_evaluate(params: dict, cfg: RunConfig, out_dir: Path, manifest: dict) -> None:
    c1, c2 = cfg.cutoffs
    gt_cat, pred_cat, gt_tps, pred_tps = _load_scores(params["scores"], c1, c2)
    matrix = confusion(gt_cat, pred_cat)
    result = {
        "dataset": params.get("dataset") or Path(params["scores"]).stem,
        "n": len(gt_cat),
        "cutoffs": [c1, c2],
        "kappa": cohens_kappa(gt_cat, pred_cat),
        "accuracy": accuracy(gt_cat, pred_cat),
        "confusion": matrix.tolist(),
    }
    plots.save_confusion_figure(matrix, out_dir / "confusion.png")
    gt_positive = [c != TpsCategory.LT1 for c in gt_cat]
    if any(gt_positive) and not all(gt_positive):
        points, auc = auroc(gt_positive, pred_tps)
        result["roc_points"] = [[fpr, tpr] for fpr, tpr in points]
        result["auc"] = auc
        _write_csv(out_dir / "roc_points.csv", ["fpr", "tpr"], [[f"{a:.9g}", f"{b:.9g}"] for a, b in points])
        plots.save_roc_figure(points, auc, out_dir / "roc.png")
    else:
        result["roc_points"] = None
        result["auc"] = None
        result["roc_note"] = "skipped: single-class ground truth"
    if gt_tps is not None:
        curve = cutoff_sweep(gt_tps, pred_tps, c1, (cfg.sweep_min, cfg.sweep_max), cfg.sweep_step)
        result["cutoff_curve"] = [[x, y] for x, y in curve]
        _write_csv(out_dir / "sweep.csv", ["c2", "accuracy"], [[f"{x:.9g}", f"{y:.9g}"] for x, y in curve])
        plots.save_sweep_figure(curve, out_dir / "sweep.png")
    else:
        result["cutoff_curve"] = None
        result["sweep_note"] = "skipped: gt_tps column required for the cutoff sweep"
    _write_report(out_dir, "evaluate", manifest, result)


def run_roc(params: dict, cfg: RunConfig, out_dir: Path, manifest: dict) -> None:
    c1, c2 = cfg.cutoffs
    gt_cat, _, _, pred_tps = _load_scores(params["scores"], c1, c2)
    gt_positive = [c != TpsCategory.LT1 for c in gt_cat]
    points, auc = auroc(gt_positive, pred_tps)
    _write_csv(out_dir / "roc_points.csv", ["fpr", "tpr"], [[f"{a:.9g}", f"{b:.9g}"] for a, b in points])
    plots.save_roc_figure(points, auc, out_dir / "roc.png")
    result = {
        "n": len(gt_positive),
        "gt_cutoff": c1,
        "auc": auc,
        "roc_points": [[fpr, tpr] for fpr, tpr in points],
        "roc_points_csv": "roc_points.csv",
    }
    _write_report(out_dir, "roc", manifest, result)


def run_sweep(params: dict, cfg: RunConfig, out_dir: Path, manifest: dict) -> None:
    c1, _ = cfg.cutoffs
    _, _, gt_tps, pred_tps = _load_scores(params["scores"], c1, cfg.cutoffs[1], need_gt_tps=True)
    curve = cutoff_sweep(gt_tps, pred_tps, c1, (cfg.sweep_min, cfg.sweep_max), cfg.sweep_step)
    _write_csv(out_dir / "sweep.csv", ["c2", "accuracy"], [[f"{x:.9g}", f"{y:.9g}"] for x, y in curve])
    plots.save_sweep_figure(curve, out_dir / "sweep.png")
    result = {
        "n": len(gt_tps),
        "c1": c1,
        "c2_range": [cfg.sweep_min, cfg.sweep_max],
        "step": cfg.sweep_step,
        "curve": [[x, y] for x, y in curve],
        "sweep_csv": "sweep.csv",
    }
    _write_report(out_dir, "sweep", manifest, result)


def run_groupstats(params: dict, cfg: RunConfig, out_dir: Path, manifest: dict) -> None:
    rows = _read_table(params["values"], ["group", "tps"])
    groups: dict[str, list[float]] = {}
    for row in rows:
        groups.setdefault(row["group"], []).append(float(row["tps"]))
    stats = group_summary(groups)
    plots.save_group_figure(stats, out_dir / "groupstats.png")
    result = {
        "groups": {
            label: {
                "n": s.n,
                "mean": s.mean,
                "sd": s.sd,
                "formatted": format_group_stats(s),
            }
            for label, s in stats.items()
        }
    }
    _write_report(out_dir, "groupstats", manifest, result)


def run_synth(params: dict, cfg: RunConfig, out_dir: Path, manifest: dict) -> None:
    grid_w, grid_h = params["grid_width"], params["grid_height"]
    slide_dir = out_dir / "slide"
    slide, truth = generate_slide(
        cfg.synth,
        grid_w,
        grid_h,
        slide_dir,
        slide_id=params.get("slide_id") or "synthetic",
        empty_fraction=params.get("empty_fraction") or 0.0,
    )
    write_annotations(truth.annotations, out_dir / "truth.csv")
    result = {
        "slide_id": slide.slide_id,
        "manifest": "slide/manifest.json",
        "grid": [grid_w, grid_h],
        "tile_size": slide.tile_size,
        "n_cells": len(truth.annotations),
        "true_tps": truth.true_tps,
        "truth_csv": "truth.csv",
    }
    _write_report(out_dir, "synth", manifest, result)


def run_embed(params: dict, cfg: RunConfig, out_dir: Path, manifest: dict) -> None:
    meta: dict[str, dict] = {}
    if params.get("meta"):
        for row in _read_table(params["meta"], ["patch_id"]):
            meta[row["patch_id"]] = row
    patches: dict[str, object] = {}
    if params.get("features"):
        features = read_features(params["features"])
    elif params.get("patches_dir"):
        features = []
        for png in sorted(Path(params["patches_dir"]).glob("*.png")):
            pid = png.stem
            img = load_patch(png, ResolutionSpec(cfg.reference_mpp))
            cohort = (meta.get(pid, {}).get("cohort_id") or "all") if meta else "all"
            features.append(pixel_features(img, pid, cohort))
            patches[pid] = img.pixels
        if not features:
            raise ValueError(f"no .png patches found in {params['patches_dir']}")
        write_features(features, out_dir / "features.csv")
    else:
        raise ValueError("embed requires --features or --patches-dir")
    proj = project_2d(features, params.get("method") or "pca", params.get("projection"))
    write_projection(proj, out_dir / "projection.csv")
    tps_values: list[float | None] = []
    for pid in proj.patch_ids:
        raw = (meta.get(pid, {}).get("tps") or "").strip() if meta else ""
        tps_values.append(float(raw) if raw else None)
    scatter_rows = [
        [pid, f"{u:.9g}", f"{v:.9g}", "" if t is None else f"{t:.9g}", f.cohort_id]
        for pid, (u, v), t, f in zip(proj.patch_ids, proj.coords, tps_values, features)
    ]
    _write_csv(out_dir / "scatter.csv", ["patch_id", "u", "v", "tps", "cohort_id"], scatter_rows)
    plots.save_scatter_figure(proj.coords, tps_values, out_dir / "scatter.png")
    result = {
        "n_patches": len(features),
        "dimension": len(features[0].values),
        "method": proj.method,
        "scatter_csv": "scatter.csv",
        "projection_csv": "projection.csv",
    }
    if patches:
        grid_n = params.get("grid_n") or 8
        layout = mosaic(proj, patches, grid_n)
        from PIL import Image

        Image.fromarray(layout.composite, mode="RGB").save(out_dir / "mosaic.png")
        _write_json(
            out_dir / "mosaic_layout.json",
            {
                "grid_n": layout.grid_n,
                "cells": [
                    {"cell": [cx, cy], "patch_id": pid}
                    for (cx, cy), pid in sorted(layout.cells.items())
                ],
            },
        )
        result["mosaic_png"] = "mosaic.png"
        result["mosaic_layout"] = "mosaic_layout.json"
    cohorts = {f.cohort_id for f in features}
    if len(cohorts) >= 2 and all(
        sum(1 for f in features if f.cohort_id == c) >= 2 for c in cohorts
    ):
        sim = cohort_similarity(features)
        plots.save_similarity_figure(sim.cohorts, sim.p_values, out_dir / "similarity.png")
        result["cohorts"] = sim.cohorts
        result["similarity_p_values"] = sim.p_values.tolist()
        result["similarity_summary"] = sim.summary
    else:
        result["similarity_note"] = "skipped: needs >= 2 cohorts with >= 2 patches each"
    _write_report(out_dir, "embed", manifest, result)


def _read_score_column(path: str | Path) -> list[float]:
    rows = _read_table(path, ["score"])
    return [float(r["score"]) for r in rows]


def run_compare(params: dict, cfg: RunConfig, out_dir: Path, manifest: dict) -> None:
    name_a = params.get("name_a") or Path(params["scores_a"]).stem
    name_b = params.get("name_b") or Path(params["scores_b"]).stem
    a = ReplicateScores(name_a, _read_score_column(params["scores_a"]))
    b = ReplicateScores(name_b, _read_score_column(params["scores_b"]))
    res = compare_models(a, b)
    plots.save_compare_figure(name_a, a.scores, name_b, b.scores, res.p_value, out_dir / "compare.png")
    result = {
        "model_a": res.model_a,
        "model_b": res.model_b,
        "summary_a": {"median": res.summary_a[0], "min": res.summary_a[1], "max": res.summary_a[2]},
        "summary_b": {"median": res.summary_b[0], "min": res.summary_b[1], "max": res.summary_b[2]},
        "W": res.statistic,
        "p": res.p_value,
        "significant": res.significant,
    }
    _write_report(out_dir, "compare", manifest, result)


RUNNERS = {
    "rasterize": run_rasterize,
    "infer": run_infer,
    "detect": run_detect,
    "match": run_match,
    "tps": run_tps,
    "consensus": run_consensus,
    "evaluate": run_evaluate,
    "roc": run_roc,
    "sweep": run_sweep,
    "groupstats": run_groupstats,
    "synth": run_synth,
    "embed": run_embed,
    "compare": run_compare,
}


def run_rerun(params: dict, cfg_unused: RunConfig, out_dir: Path, manifest_unused: dict) -> None:
    with open(params["manifest"]) as fh:
        data = json.load(fh)
    manifest = data.get("manifest", data)
    for key in ("command", "config", "args", "inputs"):
        if key not in manifest:
            raise ValueError(f"{params['manifest']}: not a run manifest (missing {key!r})")
    command = manifest["command"]
    if command not in RUNNERS:
        raise ValueError(f"{params['manifest']}: unknown command {command!r}")
    mismatched = []
    for entry in manifest["inputs"]:
        path = Path(entry["path"])
        if not path.is_file() or _digest(path) != entry["sha256"]:
            mismatched.append(entry["path"])
    if mismatched:
        raise ValueError("input digests changed since the recorded run: " + ", ".join(mismatched))
    cfg = config_from_dict(manifest["config"])
    RUNNERS[command](manifest["args"], cfg, out_dir, manifest)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ihcquant",
        description="Whole-slide IHC quantification: detection, TPS, agreement metrics.",
    )
    parser.add_argument("--config", metavar="PATH", help="JSON config file")
    parser.add_argument("--seed", type=int, metavar="N", help="override RNG seed")
    parser.add_argument("--workers", type=int, metavar="N", help="override worker count")
    parser.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rasterize", help="render annotation disks into a label map PNG")
    p.add_argument("--annotations", required=True, help="x,y,class CSV")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)

    p = sub.add_parser("infer", help="run the built-in backend, writing PMAP files")
    p.add_argument("--patch", help="single RGB PNG patch")
    p.add_argument("--mpp", type=float, help="patch MPP when not at the reference resolution")
    p.add_argument("--slide", help="slide manifest JSON")
    p.add_argument("--backend", choices=["deconv"], help="override the configured backend")

    p = sub.add_parser("detect", help="extract cell detections from probability maps")
    p.add_argument("--pmap", help="single PMAP header file")
    p.add_argument("--slide", help="slide manifest JSON")
    p.add_argument("--pmap-dir", dest="pmap_dir", help="per-tile PMAPs from an external model")
    p.add_argument("--backend", choices=["deconv"], help="override the configured backend")

    p = sub.add_parser("match", help="score detections against annotations")
    p.add_argument("--pred", required=True, help="detections CSV")
    p.add_argument("--gt", required=True, help="annotations CSV")

    p = sub.add_parser("tps", help="tumor proportion score from a detections CSV")
    p.add_argument("--detections", required=True)
    p.add_argument("--slide-id", dest="slide_id")

    p = sub.add_parser("consensus", help="majority TPS category of three-rater panels")
    p.add_argument("--panel", required=True, help="slide_id,rater1,rater2,rater3 CSV")

    p = sub.add_parser("evaluate", help="kappa/accuracy/confusion plus ROC and cutoff sweep")
    p.add_argument("--scores", required=True, help="slide_id,gt_tps|gt_category,pred_tps CSV")
    p.add_argument("--dataset", help="dataset label for the report")

    p = sub.add_parser("roc", help="ROC/AUC at the fixed ground-truth cutoff")
    p.add_argument("--scores", required=True)

    p = sub.add_parser("sweep", help="3-way accuracy across upper-cutoff values")
    p.add_argument("--scores", required=True)

    p = sub.add_parser("groupstats", help="per-group TPS mean and sample SD")
    p.add_argument("--values", required=True, help="group,tps CSV")

    p = sub.add_parser("synth", help="generate a synthetic slide with known truth")
    p.add_argument("--grid", default="2x2", help="tiles as WxH (default 2x2)")
    p.add_argument("--slide-id", dest="slide_id")
    p.add_argument("--empty-fraction", dest="empty_fraction", type=float, default=0.0)

    p = sub.add_parser("embed", help="features, 2D projection, mosaic, cohort similarity")
    p.add_argument("--features", help="precomputed features CSV")
    p.add_argument("--patches-dir", dest="patches_dir", help="directory of patch PNGs")
    p.add_argument("--meta", help="patch_id,cohort_id[,tps] CSV")
    p.add_argument("--method", choices=["pca", "external"], default="pca")
    p.add_argument("--projection", help="patch_id,u,v CSV for --method external")
    p.add_argument("--grid-n", dest="grid_n", type=int, default=8)

    p = sub.add_parser("compare", help="paired replicate comparison of two models")
    p.add_argument("--a", dest="scores_a", required=True, help="replicate scores CSV (column: score)")
    p.add_argument("--b", dest="scores_b", required=True)
    p.add_argument("--a-name", dest="name_a")
    p.add_argument("--b-name", dest="name_b")

    p = sub.add_parser("rerun", help="re-execute a recorded run manifest byte-identically")
    p.add_argument("--manifest", required=True, help="report JSON or bare manifest")

    return parser


_GLOBAL_KEYS = {"config", "seed", "workers", "out", "command"}


def _extract_params(args: argparse.Namespace) -> dict:
    params = {k: v for k, v in vars(args).items() if k not in _GLOBAL_KEYS}
    if "grid" in params:
        raw = params.pop("grid")
        try:
            w, h = raw.lower().split("x")
            params["grid_width"], params["grid_height"] = int(w), int(h)
        except ValueError as exc:
            raise ValueError(f"--grid must look like 10x10, got {raw!r}") from exc
    return params


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        overrides: dict = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
            overrides["synth.seed"] = args.seed
        if args.workers is not None:
            overrides["workers"] = args.workers
        cfg = load_config(args.config, overrides)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        params = _extract_params(args)
        if args.command == "rerun":
            run_rerun(params, cfg, out_dir, {})
        else:
            manifest = _build_manifest(args.command, params, cfg)
            RUNNERS[args.command](params, cfg, out_dir, manifest)
    except Exception as exc:  # all failures become machine-readable records
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
