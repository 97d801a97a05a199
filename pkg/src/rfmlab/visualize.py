"""Figure emission: average attention maps, correlation matrices, average CAM.

Every rendered PNG is backed by a raw float array file next to it; the raw
arrays are the numeric artifacts, the PNGs are for eyeballs.
"""

from __future__ import annotations

import logging
import re
from pathlib import Path

import numpy as np

from .data import Label, SampleRecord
from .detector import Detector, FAKE_INDEX, REAL_INDEX, compute_cam, load_checkpoint
from .erasing import EraseConfig, sfe
from .harness import ExperimentConfig, RunManifest, build_datasets, derive_rng
from .imaging import Image, image_from_array, preprocess_eval, save_png
from .saliency import (
    average_fam,
    compute_fam,
    fam_correlation_matrix,
    save_correlation_csv,
    save_fam,
    save_heatmap_png,
)

log = logging.getLogger("rfmlab")


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "-", name)


def group_by_technique(records: list[SampleRecord]) -> dict[str, list[SampleRecord]]:
    groups: dict[str, list[SampleRecord]] = {}
    for rec in records:
        groups.setdefault(rec.technique, []).append(rec)
    return groups


def emit_correlation(avg_maps: dict[str, np.ndarray], path) -> np.ndarray:
    """Write the technique-pair cosine matrix as delimited text; returns the matrix."""
    techniques = sorted(avg_maps)
    matrix = fam_correlation_matrix([avg_maps[t] for t in techniques])
    save_correlation_csv(matrix, techniques, path)
    return matrix


def run_visualization(config: ExperimentConfig, checkpoint_path, out_dir,
                      data_dir=None,
                      records: list[SampleRecord] | None = None) -> RunManifest:
    """Emit per-technique average FAMs, their correlation matrix, frame-count
    averages for one designated fake sequence, and per-class average CAMs."""
    detector = load_checkpoint(checkpoint_path)
    if records is None:
        _, records = build_datasets(config, data_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(out, config)
    cap = config.visualize_max_per_group

    def preprocessed(recs: list[SampleRecord]) -> list[Image]:
        return [preprocess_eval(r.image, config.preprocess) for r in recs[:cap]]

    groups = group_by_technique(records)
    avg_maps: dict[str, np.ndarray] = {}
    for technique in sorted(groups):
        group = groups[technique]
        if not group:
            log.warning("technique group %r has no images; skipped", technique)
            continue
        avg = average_fam(detector, preprocessed(group))
        avg_maps[technique] = avg
        raw, png = save_fam(avg, out / f"fam_avg_{_slug(technique)}")
        manifest.add_file(raw, numeric=True)
        manifest.add_file(png, numeric=False)

    fake_techniques = sorted(t for t in avg_maps
                             if any(r.label == Label.FAKE for r in groups[t]))
    if fake_techniques:
        matrix_path = out / "fam_correlation.csv"
        emit_correlation({t: avg_maps[t] for t in fake_techniques}, matrix_path)
        manifest.add_file(matrix_path, numeric=True)

    # Frame-count study on one designated sequence: the first fake technique,
    # frames ordered by source id.
    if fake_techniques:
        seq = sorted((r for r in groups[fake_techniques[0]] if r.label == Label.FAKE),
                     key=lambda r: r.source_id)
        for count in config.frame_counts:
            n = min(count, len(seq))
            if n < count:
                log.warning("frame count %d clipped to %d available frames", count, n)
            if n == 0:
                continue
            avg = average_fam(detector, preprocessed(seq[:n]))
            raw, png = save_fam(avg, out / f"fam_frames_{count:04d}")
            manifest.add_file(raw, numeric=True)
            manifest.add_file(png, numeric=False)

    for label, tag in ((Label.REAL, "real"), (Label.FAKE, "fake")):
        subset = [r for r in records if r.label == label][:cap]
        if not subset:
            log.warning("no %s images for average CAM; skipped", tag)
            continue
        cam_class = FAKE_INDEX if label == Label.FAKE else REAL_INDEX
        cams = [compute_cam(detector, img, cam_class, upsample=True)
                for img in preprocessed(subset)]
        avg_cam = np.mean(np.stack(cams), axis=0)
        raw = out / f"cam_avg_{tag}.npy"
        np.save(raw, avg_cam)
        save_heatmap_png(avg_cam, out / f"cam_avg_{tag}.png")
        manifest.add_file(raw, numeric=True)
        manifest.add_file(out / f"cam_avg_{tag}.png", numeric=False)

    manifest.write("visualize_manifest.json")
    return manifest


def erase_preview(config: ExperimentConfig, detector: Detector,
                  records: list[SampleRecord], out_dir, count: int = 4) -> RunManifest:
    """Side-by-side original/erased PNGs plus the erase trace, for inspection."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(out, config)
    rng = derive_rng(config.seed, "augment")
    erase = config.augment.erase
    if config.augment.mode not in ("rfm", "psfe"):
        erase = EraseConfig(blocks=erase.blocks, p=1.0, h_max=erase.h_max,
                            w_max=erase.w_max, guidance=erase.guidance)
    for rec in records[:count]:
        img = preprocess_eval(rec.image, config.preprocess)
        fam = compute_fam(detector, img)
        erased, trace = sfe(img, fam, erase, rng)
        side = np.concatenate([img.pixels, erased.pixels], axis=2)
        png = out / f"preview_{_slug(rec.source_id)}.png"
        save_png(image_from_array(side), png)
        trace_path = out / f"preview_{_slug(rec.source_id)}_trace.txt"
        trace_path.write_text(trace.format(), encoding="utf-8")
        fam_raw, fam_png = save_fam(fam, out / f"preview_{_slug(rec.source_id)}_fam")
        manifest.add_file(png, numeric=False)
        manifest.add_file(trace_path, numeric=False)
        manifest.add_file(fam_raw, numeric=True)
        manifest.add_file(fam_png, numeric=False)
    manifest.write("preview_manifest.json")
    return manifest
