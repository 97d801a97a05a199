"""Experiment orchestration: config, seeded streams, training, evaluation, ablation.

Randomness is split into named streams derived from one master seed
(init / datagen / order / preprocess / augment / eval), so changing the
augmentation mode never perturbs weight initialization, dataset content or
batch order.  That is what makes paired mode comparisons (and the
erase-probability-zero equivalence with unaugmented training) exact.
"""

from __future__ import annotations

import copy
import hashlib
import itertools
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
import yaml

from .data import (
    Label,
    RegionSpec,
    SampleRecord,
    SyntheticSpec,
    batch_sampler,
    generate_synthetic_dataset,
    load_dataset,
    neutralized_test_set,
)
from .detector import (
    FAKE_INDEX,
    REAL_INDEX,
    Detector,
    TrainConfig,
    TrainState,
    load_checkpoint,
    make_train_state,
    save_checkpoint,
    train_step,
)
from .erasing import (
    AdversarialEraseConfig,
    EraseConfig,
    Guidance,
    RandomEraseConfig,
    adversarial_erasing,
    random_erasing,
    sfe,
    psfe,
    variant_erase_config,
    VARIANT_LABELS,
)
from .errors import ConfigError, EmptyDatasetError, TrainingDivergedError
from .imaging import Image, PreprocessConfig, preprocess_eval, preprocess_train
from .metrics import EvalReport, evaluate_scores, ScoredSample
from .saliency import compute_fam_batch

log = logging.getLogger("rfmlab")

STREAM_IDS = {"init": 1, "datagen": 2, "order": 3, "preprocess": 4,
              "augment": 5, "eval": 6}

AUGMENT_MODES = ("none", "rfm", "psfe", "re", "ae")


def derive_rng(master_seed: int, stream: str) -> np.random.Generator:
    """Independent named stream from the master seed."""
    if stream not in STREAM_IDS:
        raise ConfigError(f"unknown stream {stream!r}")
    return np.random.default_rng(np.random.SeedSequence((master_seed, STREAM_IDS[stream])))


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentConfig:
    mode: str = "none"
    erase: EraseConfig = field(default_factory=lambda: EraseConfig(
        blocks=3, p=1.0, h_max=12, w_max=12, guidance=Guidance.FAM_GUIDED))
    apply_to: str = "both"      # erase both classes, only fakes, or only reals
    random_erase: RandomEraseConfig = field(default_factory=RandomEraseConfig)
    ae_quantile: float = 0.15
    ae_class: str = "label"     # per-sample label, or fixed "real"/"fake"

    def __post_init__(self):
        if self.mode not in AUGMENT_MODES:
            raise ConfigError(f"augment mode must be one of {AUGMENT_MODES}")
        if self.apply_to not in ("both", "fake", "real"):
            raise ConfigError("apply_to must be 'both', 'fake' or 'real'")
        if self.ae_class not in ("label", "real", "fake"):
            raise ConfigError("ae_class must be 'label', 'real' or 'fake'")


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "synthetic"     # "synthetic" | "disk"
    synthetic: SyntheticSpec = field(default_factory=lambda: SyntheticSpec(
        count_per_class=2000))
    test_count_per_class: int = 500
    path: str | None = None     # disk: directory holding train/ and test/

    def __post_init__(self):
        if self.kind not in ("synthetic", "disk"):
            raise ConfigError("dataset kind must be 'synthetic' or 'disk'")
        if self.kind == "disk" and not self.path:
            raise ConfigError("disk dataset needs a path")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    out_dir: str = "runs/exp"
    arch: str = "ref_cnn"
    train: TrainConfig = field(default_factory=lambda: TrainConfig(iterations=2000))
    preprocess: PreprocessConfig = field(default_factory=lambda: PreprocessConfig(
        resize=32, crop=32, flip=True))
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    fdr_levels: tuple[float, ...] = (0.001, 0.0001)
    eval_regions: tuple[str, ...] = ()
    torch_threads: int = 1
    log_every: int = 100
    checkpoint_every: int = 0   # 0 = final checkpoint only
    visualize_max_per_group: int = 512
    frame_counts: tuple[int, ...] = (4, 16, 64, 256)

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError("a master seed is mandatory; unseeded runs are not allowed")
        if self.preprocess.crop > self.preprocess.resize:
            raise ConfigError("crop size cannot exceed resize size")
        if self.torch_threads < 1:
            raise ConfigError("torch_threads must be >= 1")


def _region_from_dict(d: dict) -> RegionSpec:
    return RegionSpec(top=int(d["top"]), left=int(d["left"]), height=int(d["height"]),
                      width=int(d["width"]), prob=float(d.get("prob", 1.0)))


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from a plain (YAML-shaped) dictionary."""
    raw = copy.deepcopy(raw or {})
    if "seed" not in raw or raw["seed"] is None:
        raise ConfigError("config must set a seed")

    ds = raw.get("dataset", {})
    synth = ds.get("synthetic", {})
    spec_kwargs = dict(
        count_per_class=int(synth.get("count_per_class", 2000)),
        image_size=int(synth.get("image_size", 32)),
        channels=int(synth.get("channels", 3)),
        family=str(synth.get("family", "global")),
        strength=int(synth.get("strength", 48)),
        band_width=synth.get("band_width"),
    )
    if "dominant" in synth:
        spec_kwargs["dominant"] = _region_from_dict(synth["dominant"])
    if "secondary" in synth:
        spec_kwargs["secondary"] = _region_from_dict(synth["secondary"])
    dataset = DatasetConfig(
        kind=str(ds.get("kind", "synthetic")),
        synthetic=SyntheticSpec(**spec_kwargs),
        test_count_per_class=int(ds.get("test_count_per_class", 500)),
        path=ds.get("path"),
    )

    tr = raw.get("train", {})
    train = TrainConfig(
        learning_rate=float(tr.get("learning_rate", 2e-4)),
        batch_size=int(tr.get("batch_size", 16)),
        flood_level=float(tr.get("flood_level", 0.04)),
        iterations=int(tr.get("iterations", 2000)),
    )

    pp = raw.get("preprocess", {})
    preprocess = PreprocessConfig(
        resize=int(pp.get("resize", 32)),
        crop=int(pp.get("crop", 32)),
        flip=bool(pp.get("flip", True)),
    )

    au = raw.get("augment", {})
    guidance = Guidance(au.get("guidance", "fam"))
    erase = EraseConfig(
        blocks=int(au.get("blocks", 3)),
        p=float(au.get("p", 1.0)),
        h_max=int(au.get("h_max", 12)),
        w_max=int(au.get("w_max", 12)),
        guidance=guidance,
        anchor_budget=au.get("anchor_budget"),
    )
    re_raw = au.get("random_erase", {})
    random_erase = RandomEraseConfig(
        probability=float(re_raw.get("probability", 0.5)),
        area_range=tuple(re_raw.get("area_range", (0.02, 0.4))),
        aspect_range=tuple(re_raw.get("aspect_range", (0.3, 1.0 / 0.3))),
        max_attempts=int(re_raw.get("max_attempts", 100)),
    )
    augment = AugmentConfig(
        mode=str(au.get("mode", "none")),
        erase=erase,
        apply_to=str(au.get("apply_to", "both")),
        random_erase=random_erase,
        ae_quantile=float(au.get("ae_quantile", 0.15)),
        ae_class=str(au.get("ae_class", "label")),
    )

    ev = raw.get("eval", {})
    return ExperimentConfig(
        seed=int(raw["seed"]),
        out_dir=str(raw.get("out", "runs/exp")),
        arch=str(raw.get("detector", {}).get("arch", "ref_cnn")),
        train=train,
        preprocess=preprocess,
        augment=augment,
        dataset=dataset,
        fdr_levels=tuple(float(x) for x in ev.get("fdr_levels", (0.001, 0.0001))),
        eval_regions=tuple(ev.get("regions", ())),
        torch_threads=int(raw.get("torch_threads", 1)),
        log_every=int(raw.get("log_every", 100)),
        checkpoint_every=int(raw.get("checkpoint_every", 0)),
        visualize_max_per_group=int(raw.get("visualize", {}).get("max_per_group", 512)),
        frame_counts=tuple(int(n) for n in raw.get("visualize", {}).get(
            "frame_counts", (4, 16, 64, 256))),
    )


def config_to_dict(config: ExperimentConfig) -> dict:
    """Plain-dict snapshot of the effective config (inverse of config_from_dict)."""
    spec = config.dataset.synthetic
    dom, sec = spec.regions()
    return {
        "seed": config.seed,
        "out": config.out_dir,
        "detector": {"arch": config.arch},
        "train": {
            "learning_rate": config.train.learning_rate,
            "batch_size": config.train.batch_size,
            "flood_level": config.train.flood_level,
            "iterations": config.train.iterations,
        },
        "preprocess": {"resize": config.preprocess.resize,
                       "crop": config.preprocess.crop,
                       "flip": config.preprocess.flip},
        "augment": {
            "mode": config.augment.mode,
            "blocks": config.augment.erase.blocks,
            "p": config.augment.erase.p,
            "h_max": config.augment.erase.h_max,
            "w_max": config.augment.erase.w_max,
            "guidance": config.augment.erase.guidance.value,
            "anchor_budget": config.augment.erase.anchor_budget,
            "apply_to": config.augment.apply_to,
            "random_erase": {
                "probability": config.augment.random_erase.probability,
                "area_range": list(config.augment.random_erase.area_range),
                "aspect_range": list(config.augment.random_erase.aspect_range),
                "max_attempts": config.augment.random_erase.max_attempts,
            },
            "ae_quantile": config.augment.ae_quantile,
            "ae_class": config.augment.ae_class,
        },
        "dataset": {
            "kind": config.dataset.kind,
            "path": config.dataset.path,
            "test_count_per_class": config.dataset.test_count_per_class,
            "synthetic": {
                "count_per_class": spec.count_per_class,
                "image_size": spec.image_size,
                "channels": spec.channels,
                "family": spec.family,
                "strength": spec.strength,
                "band_width": spec.band_width,
                "dominant": {"top": dom.top, "left": dom.left, "height": dom.height,
                             "width": dom.width, "prob": dom.prob},
                "secondary": {"top": sec.top, "left": sec.left, "height": sec.height,
                              "width": sec.width, "prob": sec.prob},
            },
        },
        "eval": {"fdr_levels": list(config.fdr_levels),
                 "regions": list(config.eval_regions)},
        "torch_threads": config.torch_threads,
        "log_every": config.log_every,
        "checkpoint_every": config.checkpoint_every,
        "visualize": {"max_per_group": config.visualize_max_per_group,
                      "frame_counts": list(config.frame_counts)},
    }


def load_config_file(path, overrides: dict | None = None) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if overrides:
        raw = _merge_dicts(raw, overrides)
    return config_from_dict(raw)


def _merge_dicts(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge_dicts(out[key], value)
        else:
            out[key] = value
    return out


# ---------------------------------------------------------------------------
# Run manifest
# ---------------------------------------------------------------------------

def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class RunManifest:
    """Inventory of a run's output files with checksums taken at write time."""

    def __init__(self, out_dir, config: ExperimentConfig | None = None):
        self.out_dir = Path(out_dir)
        self.config_snapshot = config_to_dict(config) if config else None
        self.checkpoints: list[str] = []
        self.reports: list[str] = []
        self.files: list[dict] = []
        self.status = "ok"

    def add_file(self, path, numeric: bool = True, kind: str = "artifact") -> None:
        path = Path(path)
        rel = str(path.relative_to(self.out_dir))
        self.files.append({"path": rel, "bytes": path.stat().st_size,
                           "sha256": sha256_file(path), "numeric": numeric})
        if kind == "checkpoint":
            self.checkpoints.append(rel)
        elif kind == "report":
            self.reports.append(rel)

    def to_dict(self) -> dict:
        return {"status": self.status, "config": self.config_snapshot,
                "checkpoints": self.checkpoints, "reports": self.reports,
                "files": self.files}

    def write(self, name: str = "manifest.json") -> Path:
        path = self.out_dir / name
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path

    @staticmethod
    def load(path) -> dict:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)

    @staticmethod
    def verify(path) -> list[str]:
        """Re-hash every listed file; returns human-readable mismatches."""
        manifest = RunManifest.load(path)
        root = Path(path).parent
        problems = []
        for entry in manifest["files"]:
            target = root / entry["path"]
            if not target.is_file():
                problems.append(f"missing: {entry['path']}")
            elif sha256_file(target) != entry["sha256"]:
                problems.append(f"checksum mismatch: {entry['path']}")
        return problems


# ---------------------------------------------------------------------------
# Dataset assembly
# ---------------------------------------------------------------------------

def build_datasets(config: ExperimentConfig,
                   data_dir=None) -> tuple[list[SampleRecord], list[SampleRecord]]:
    """Train/test record lists, either generated in memory or loaded from disk."""
    if data_dir is None and config.dataset.kind == "disk":
        data_dir = config.dataset.path
    if data_dir is not None:
        train_records, _ = load_dataset(Path(data_dir) / "train")
        test_records, _ = load_dataset(Path(data_dir) / "test")
        return train_records, test_records
    datagen = derive_rng(config.seed, "datagen")
    train_seed = int(datagen.integers(0, 2 ** 63))
    test_seed = int(datagen.integers(0, 2 ** 63))
    spec = config.dataset.synthetic
    train_records = generate_synthetic_dataset(spec, train_seed)
    test_records = generate_synthetic_dataset(
        replace(spec, count_per_class=config.dataset.test_count_per_class), test_seed)
    return train_records, test_records


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def _augment_applies(apply_to: str, label: Label) -> bool:
    return apply_to == "both" or \
        (apply_to == "fake" and label == Label.FAKE) or \
        (apply_to == "real" and label == Label.REAL)


def augment_batch(detector: Detector, images: list[Image], labels: list[Label],
                  augment: AugmentConfig, rng: np.random.Generator) -> list[Image]:
    """Apply the configured eraser to one batch, image order = batch order.

    Attention-guided modes compute the per-image maps in a single batched
    forward/backward pass; parameters are never updated here.
    """
    if augment.mode == "none":
        return images
    out: list[Image] = []
    if augment.mode == "rfm":
        fams = None
        if augment.erase.guidance is Guidance.FAM_GUIDED:
            fams = compute_fam_batch(detector, images)
        for idx, (img, label) in enumerate(zip(images, labels)):
            if not _augment_applies(augment.apply_to, label):
                out.append(img)
                continue
            fam = fams[idx] if fams is not None else None
            erased, _ = sfe(img, fam, augment.erase, rng)
            out.append(erased)
        return out
    if augment.mode == "psfe":
        for img, label in zip(images, labels):
            if not _augment_applies(augment.apply_to, label):
                out.append(img)
                continue
            erased, _ = psfe(detector, img, augment.erase, rng)
            out.append(erased)
        return out
    if augment.mode == "re":
        for img, label in zip(images, labels):
            if not _augment_applies(augment.apply_to, label):
                out.append(img)
                continue
            erased, _ = random_erasing(img, augment.random_erase, rng)
            out.append(erased)
        return out
    # ae
    for img, label in zip(images, labels):
        if not _augment_applies(augment.apply_to, label):
            out.append(img)
            continue
        if augment.ae_class == "label":
            cam_class = FAKE_INDEX if label == Label.FAKE else REAL_INDEX
        else:
            cam_class = FAKE_INDEX if augment.ae_class == "fake" else REAL_INDEX
        cfg = AdversarialEraseConfig(quantile=augment.ae_quantile, cam_class=cam_class)
        erased, _ = adversarial_erasing(detector, img, cfg, rng)
        out.append(erased)
    return out


def train_detector(config: ExperimentConfig, train_records: list[SampleRecord],
                   loss_sink=None) -> tuple[Detector, list[float]]:
    """Run the training loop in memory; returns the detector and loss trajectory.

    Per iteration under the guided-erasing mode: one batched saliency pass
    (no parameter update), per-image erasing, then one flooded train step,
    i.e. two forward and two backward propagations total.
    """
    torch.set_num_threads(config.torch_threads)
    if not train_records:
        raise EmptyDatasetError("no training records")
    detector = Detector(arch=config.arch,
                        in_channels=train_records[0].image.channels,
                        init_rng=derive_rng(config.seed, "init"))
    state = make_train_state(detector, config.train)
    order_rng = derive_rng(config.seed, "order")
    pre_rng = derive_rng(config.seed, "preprocess")
    aug_rng = derive_rng(config.seed, "augment")
    sampler = batch_sampler(train_records, config.train.batch_size, order_rng)
    losses: list[float] = []
    for iteration in range(config.train.iterations):
        idxs = next(sampler)
        recs = [train_records[i] for i in idxs]
        images = [preprocess_train(r.image, pre_rng, config.preprocess) for r in recs]
        labels = [r.label for r in recs]
        images = augment_batch(detector, images, labels, config.augment, aug_rng)
        loss = train_step(detector, images, np.array([int(lb) for lb in labels]),
                          config.train, state)
        losses.append(loss)
        if loss_sink is not None:
            loss_sink(iteration, loss, detector)
        if config.log_every and (iteration + 1) % config.log_every == 0:
            log.info("iter %d loss %.4f", iteration + 1, loss)
    return detector, losses


def run_training(config: ExperimentConfig, data_dir=None) -> RunManifest:
    """Train per config, persisting checkpoints, the loss log and a manifest."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(out, config)
    config_path = out / "config.yaml"
    with open(config_path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config_to_dict(config), fh, sort_keys=True)
    manifest.add_file(config_path, numeric=False)

    train_records, _ = build_datasets(config, data_dir)
    loss_path = out / "loss_log.csv"
    loss_file = open(loss_path, "w", encoding="utf-8")
    loss_file.write("iteration,loss\n")

    def sink(iteration: int, loss: float, detector: Detector) -> None:
        loss_file.write(f"{iteration},{loss!r}\n")
        if config.checkpoint_every and (iteration + 1) % config.checkpoint_every == 0 \
                and iteration + 1 < config.train.iterations:
            ck = out / f"checkpoint_{iteration + 1:06d}.ckpt"
            save_checkpoint(detector, ck)
            manifest.add_file(ck, numeric=True, kind="checkpoint")

    try:
        detector, _ = train_detector(config, train_records, loss_sink=sink)
    except TrainingDivergedError:
        loss_file.close()
        manifest.add_file(loss_path, numeric=True)
        manifest.status = "diverged"
        manifest.write()
        raise
    loss_file.close()
    manifest.add_file(loss_path, numeric=True)
    final = out / "checkpoint_final.ckpt"
    save_checkpoint(detector, final)
    manifest.add_file(final, numeric=True, kind="checkpoint")
    manifest.write()
    return manifest


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def score_records(detector: Detector, records: list[SampleRecord],
                  preprocess: PreprocessConfig) -> list[ScoredSample]:
    images = [preprocess_eval(r.image, preprocess) for r in records]
    scores = detector.fake_scores(images)
    return [ScoredSample(fake_score=float(s), label=int(r.label))
            for s, r in zip(scores, records)]


def evaluate_detector(config: ExperimentConfig, detector: Detector,
                      test_records: list[SampleRecord]) -> dict[str, EvalReport]:
    """Standard report plus one per configured neutralized region."""
    torch.set_num_threads(config.torch_threads)
    reports: dict[str, EvalReport] = {}
    samples = score_records(detector, test_records, config.preprocess)
    reports["standard"] = evaluate_scores(samples, list(config.fdr_levels),
                                          name="standard")
    for region in config.eval_regions:
        region_rng = derive_rng(config.seed, "eval")
        variant = neutralized_test_set(test_records, region, region_rng)
        samples = score_records(detector, variant, config.preprocess)
        name = f"{region}Real"
        reports[name] = evaluate_scores(samples, list(config.fdr_levels), name=name)
    return reports


def run_evaluation(config: ExperimentConfig, checkpoint_path, out_dir=None,
                   data_dir=None) -> dict[str, EvalReport]:
    """Score the test set through a checkpoint; writes reports and a manifest."""
    checkpoint_path = Path(checkpoint_path)
    if not checkpoint_path.is_file():
        raise ConfigError(f"checkpoint not found: {checkpoint_path}")
    detector = load_checkpoint(checkpoint_path)
    _, test_records = build_datasets(config, data_dir)
    if not test_records:
        raise EmptyDatasetError("empty test set")
    reports = evaluate_detector(config, detector, test_records)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(out, config)
        for name, report in reports.items():
            text_path = out / f"report_{name}.txt"
            text_path.write_text(report.to_text(), encoding="utf-8")
            header, row = report.to_row()
            row_path = out / f"report_{name}_row.csv"
            row_path.write_text(header + "\n" + row + "\n", encoding="utf-8")
            manifest.add_file(text_path, numeric=True, kind="report")
            manifest.add_file(row_path, numeric=True, kind="report")
        manifest.write("eval_manifest.json")
    return reports


# ---------------------------------------------------------------------------
# Ablation grids
# ---------------------------------------------------------------------------

ABLATION_AXES = ("variant", "size", "p", "seed")


def apply_cell(base: ExperimentConfig, cell: dict, out_dir) -> ExperimentConfig:
    config = base
    augment = config.augment
    if "variant" in cell:
        variant = cell["variant"]
        if variant == "none":
            augment = replace(augment, mode="none")
        else:
            augment = replace(augment, mode="rfm",
                              erase=variant_erase_config(variant, augment.erase))
    if "size" in cell:
        augment = replace(augment, erase=replace(
            augment.erase, h_max=int(cell["size"]), w_max=int(cell["size"])))
    if "p" in cell:
        augment = replace(augment, erase=replace(augment.erase, p=float(cell["p"])))
    config = replace(config, augment=augment)
    if "seed" in cell:
        config = replace(config, seed=int(cell["seed"]))
    name = "_".join(f"{k}-{cell[k]}" for k in ABLATION_AXES if k in cell)
    return replace(config, out_dir=str(Path(out_dir) / name))


def run_ablation(base: ExperimentConfig, axes: dict[str, list], out_dir,
                 data_dir=None) -> tuple[list[dict], Path]:
    """Cartesian sweep over declared axes; one table row per cell."""
    unknown = set(axes) - set(ABLATION_AXES)
    if unknown:
        raise ConfigError(f"unknown ablation axes: {sorted(unknown)}; "
                          f"declared axes must be among {ABLATION_AXES}")
    if not axes or any(len(v) == 0 for v in axes.values()):
        raise ConfigError("each declared axis needs at least one value")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = [axis for axis in ABLATION_AXES if axis in axes]
    rows: list[dict] = []
    for values in itertools.product(*(axes[a] for a in names)):
        cell = dict(zip(names, values))
        config = apply_cell(base, cell, out)
        run_training(config, data_dir=data_dir)
        reports = run_evaluation(config, Path(config.out_dir) / "checkpoint_final.ckpt",
                                 out_dir=config.out_dir, data_dir=data_dir)
        variant = cell.get("variant", base.augment.mode)
        row = {
            "variant": variant,
            "label": VARIANT_LABELS.get(variant, variant),
            "size": cell.get("size", config.augment.erase.h_max),
            "p": cell.get("p", config.augment.erase.p),
            "seed": config.seed,
        }
        for name, report in reports.items():
            prefix = "" if name == "standard" else f"{name}_"
            row[f"{prefix}auc"] = report.auc
            for level, tdr in report.tdr_at_fdr.items():
                row[f"{prefix}tdr_{level:g}"] = tdr
        rows.append(row)
    columns: list[str] = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    table = out / "ablation_table.csv"
    with open(table, "w", encoding="utf-8") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_cell_str(row.get(col)) for col in columns) + "\n")
    return rows, table


def _cell_str(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)
