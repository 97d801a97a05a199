"""Datasets: synthetic forgery proxies, directory ingestion, region masks, sampling.

The synthetic generator is a desk-scale stand-in for full face-forgery
corpora: real samples are smooth procedural noise fields, fake samples add
a high-frequency checker perturbation inside one or two fixed rectangles
(a dominant region present in every fake and a secondary region present
with some probability), with ground-truth masks of exactly the perturbed
pixels.  Everything is reproducible from a master seed; per-sample streams
are derived from (seed, class, index).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np
import yaml
from scipy.spatial import ConvexHull, QhullError

from .errors import (
    ConfigError,
    ContractViolationError,
    DegenerateLandmarksError,
    EmptyDatasetError,
)
from .imaging import Image, load_mask_png, load_png, save_mask_png, save_png


class Label(IntEnum):
    REAL = 0
    FAKE = 1


@dataclass
class SampleRecord:
    image: Image
    label: Label
    technique: str
    forgery_mask: np.ndarray | None = None           # H x W bool, fakes only
    region_masks: dict[str, np.ndarray] | None = None
    source_id: str = ""

    def __post_init__(self):
        if self.label == Label.REAL and self.forgery_mask is not None \
                and self.forgery_mask.any():
            raise ContractViolationError("real samples must have an empty forgery mask")
        if self.region_masks:
            names = sorted(self.region_masks)
            for a in range(len(names)):
                for b in range(a + 1, len(names)):
                    if (self.region_masks[names[a]] & self.region_masks[names[b]]).any():
                        raise ContractViolationError(
                            f"region masks {names[a]!r} and {names[b]!r} overlap")


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegionSpec:
    """Axis-aligned rectangle plus its per-fake occurrence probability."""

    top: int
    left: int
    height: int
    width: int
    prob: float = 1.0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ConfigError("region must be at least 1x1")
        if not (0.0 <= self.prob <= 1.0):
            raise ConfigError("occurrence probability must lie in [0, 1]")

    def mask(self, size: int) -> np.ndarray:
        if self.top < 0 or self.left < 0 or self.top + self.height > size \
                or self.left + self.width > size:
            raise ConfigError(f"region {self} outside {size}x{size} image")
        m = np.zeros((size, size), dtype=bool)
        m[self.top:self.top + self.height, self.left:self.left + self.width] = True
        return m


@dataclass(frozen=True)
class SyntheticSpec:
    count_per_class: int
    image_size: int = 32
    channels: int = 3
    family: str = "global"          # "global" (one-stage proxy) | "boundary" (two-stage)
    strength: int = 48              # peak perturbation in 8-bit units
    dominant: RegionSpec | None = None
    secondary: RegionSpec | None = None
    band_width: int | None = None   # boundary family: border band width

    def __post_init__(self):
        if self.count_per_class < 0:
            raise ConfigError("count per class must be non-negative")
        if self.image_size < 8:
            raise ConfigError("image size must be at least 8")
        if self.channels not in (1, 3):
            raise ConfigError("channels must be 1 or 3")
        if self.family not in ("global", "boundary"):
            raise ConfigError("family must be 'global' or 'boundary'")
        if self.strength < 0:
            raise ConfigError("strength must be non-negative")

    @property
    def technique(self) -> str:
        return "synthetic-one-stage" if self.family == "global" else "synthetic-two-stage"

    def band(self) -> int:
        return self.band_width if self.band_width is not None else max(2, self.image_size // 6)

    def regions(self) -> tuple[RegionSpec, RegionSpec]:
        """Dominant/secondary layout; defaults depend on the artifact family."""
        s = self.image_size
        if self.dominant is not None and self.secondary is not None:
            dom, sec = self.dominant, self.secondary
        elif self.family == "boundary":
            b = self.band()
            dom = RegionSpec(0, 0, b, s, prob=1.0)
            sec = RegionSpec(s - b, 0, b, s, prob=0.5)
        else:
            q = s // 4
            dom = RegionSpec(s // 8, s // 8, q, q, prob=1.0)
            sec = RegionSpec(5 * s // 8, 5 * s // 8, q, q, prob=0.5)
        if (dom.mask(s) & sec.mask(s)).any():
            raise ConfigError("dominant and secondary regions must be disjoint")
        return dom, sec

    def region_masks(self) -> dict[str, np.ndarray]:
        dom, sec = self.regions()
        return {"dominant": dom.mask(self.image_size),
                "secondary": sec.mask(self.image_size)}


def _smooth_field(rng: np.random.Generator, channels: int, size: int,
                  grid: int = 4) -> np.ndarray:
    """Bilinearly upsampled coarse uniform noise: the 'real' texture recipe."""
    coarse = rng.uniform(0.0, 255.0, size=(channels, grid, grid))
    pos = (np.arange(size) + 0.5) * grid / size - 0.5
    lo = np.floor(pos).astype(int)
    frac = pos - lo
    i0 = np.clip(lo, 0, grid - 1)
    i1 = np.clip(lo + 1, 0, grid - 1)
    rows = coarse[:, i0, :] * (1.0 - frac)[None, :, None] \
        + coarse[:, i1, :] * frac[None, :, None]
    out = rows[:, :, i0] * (1.0 - frac)[None, None, :] \
        + rows[:, :, i1] * frac[None, None, :]
    return out


def _real_pixels(rng: np.random.Generator, spec: SyntheticSpec) -> np.ndarray:
    field = _smooth_field(rng, spec.channels, spec.image_size)
    return np.round(field).astype(np.uint8)


def _checker_delta(region: RegionSpec, size: int, strength: int) -> np.ndarray:
    """Signed +/-strength parity pattern over the region, zero elsewhere."""
    rr, cc = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    sign = np.where((rr + cc) % 2 == 0, 1, -1)
    delta = np.zeros((size, size), dtype=np.int16)
    m = region.mask(size)
    delta[m] = (strength * sign[m]).astype(np.int16)
    return delta


def _sample_rng(seed: int, label: Label, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, int(label), index)))


def fake_base_pixels(spec: SyntheticSpec, seed: int, index: int) -> np.ndarray:
    """The pristine base under fake #index (regenerable for mask-fidelity checks)."""
    return _real_pixels(_sample_rng(seed, Label.FAKE, index), spec)


def generate_synthetic_dataset(spec: SyntheticSpec, seed: int) -> list[SampleRecord]:
    """Seed-reproducible dataset of count_per_class reals and fakes.

    Per fake, the draw order is: base field, dominant presence, secondary
    presence.  The forgery mask marks exactly the pixels whose value changed.
    """
    if spec.count_per_class == 0:
        raise EmptyDatasetError("count per class is zero")
    size = spec.image_size
    dom, sec = spec.regions()
    deltas = {"dominant": _checker_delta(dom, size, spec.strength),
              "secondary": _checker_delta(sec, size, spec.strength)}
    layout = spec.region_masks()
    records: list[SampleRecord] = []
    for i in range(spec.count_per_class):
        rng = _sample_rng(seed, Label.REAL, i)
        records.append(SampleRecord(
            image=Image(_real_pixels(rng, spec)), label=Label.REAL,
            technique="real", source_id=f"real-{i:05d}"))
    for i in range(spec.count_per_class):
        rng = _sample_rng(seed, Label.FAKE, i)
        base = _real_pixels(rng, spec)
        use_dom = rng.random() < dom.prob
        use_sec = rng.random() < sec.prob
        delta = np.zeros((size, size), dtype=np.int16)
        if use_dom:
            delta += deltas["dominant"]
        if use_sec:
            delta += deltas["secondary"]
        forged = np.clip(base.astype(np.int16) + delta[None], 0, 255).astype(np.uint8)
        mask = (forged != base).any(axis=0)
        records.append(SampleRecord(
            image=Image(forged), label=Label.FAKE, technique=spec.technique,
            forgery_mask=mask,
            region_masks={k: v.copy() for k, v in layout.items()},
            source_id=f"fake-{i:05d}"))
    return records


# ---------------------------------------------------------------------------
# Directory ingestion
# ---------------------------------------------------------------------------

_IMAGE_SUFFIXES = {".png"}


@dataclass
class IngestReport:
    loaded: int = 0
    skipped: list[tuple[str, str]] = field(default_factory=list)


def ingest_directory(root, layout: dict[str, tuple[Label, str]],
                     ) -> tuple[list[SampleRecord], IngestReport]:
    """Load records from subdirectories mapped to (label, technique).

    Files are visited in lexicographic order of their relative path;
    unreadable files are skipped with a tally in the report.
    """
    root = Path(root)
    report = IngestReport()
    records: list[SampleRecord] = []
    for subdir in sorted(layout):
        label, technique = layout[subdir]
        folder = root / subdir
        if not folder.is_dir():
            report.skipped.append((str(folder), "missing directory"))
            continue
        for path in sorted(folder.rglob("*")):
            if not path.is_file() or path.suffix.lower() not in _IMAGE_SUFFIXES:
                continue
            try:
                image = load_png(path)
            except Exception as exc:  # unreadable/corrupt file
                report.skipped.append((str(path), str(exc)))
                continue
            records.append(SampleRecord(
                image=image, label=Label(label), technique=technique,
                source_id=str(path.relative_to(root))))
            report.loaded += 1
    if not records:
        raise EmptyDatasetError(f"no readable images under {root}")
    return records, report


# ---------------------------------------------------------------------------
# Landmark-driven region masks
# ---------------------------------------------------------------------------

# Standard 68-point index groups; eyes merges brows with eyes.
LANDMARK_GROUPS = {
    "eyes": list(range(17, 27)) + list(range(36, 48)),
    "nose": list(range(27, 36)),
    "mouth": list(range(48, 68)),
}


def read_landmarks(path) -> np.ndarray:
    """68 rows of 'x,y' delimited text."""
    pts = np.loadtxt(path, delimiter=",", dtype=np.float64)
    if pts.shape != (68, 2):
        raise ContractViolationError(f"expected 68 x,y rows, got shape {pts.shape}")
    return pts


def _hull_mask(points: np.ndarray, height: int, width: int) -> np.ndarray:
    """Filled convex hull over pixel centers (boundary inclusive).

    Inclusion is tested with cross products against the hull edges, which is
    exact for integer-valued landmarks.
    """
    try:
        hull = ConvexHull(points)
    except QhullError as exc:
        raise DegenerateLandmarksError(f"degenerate landmark group: {exc}") from exc
    verts = points[hull.vertices]  # counterclockwise
    cols, rows = np.meshgrid(np.arange(width, dtype=np.float64),
                             np.arange(height, dtype=np.float64))
    inside = np.ones((height, width), dtype=bool)
    for k in range(len(verts)):
        ax, ay = verts[k]
        bx, by = verts[(k + 1) % len(verts)]
        cross = (bx - ax) * (rows - ay) - (by - ay) * (cols - ax)
        inside &= cross >= 0.0
    return inside


def partition_regions(landmarks: np.ndarray, height: int,
                      width: int) -> dict[str, np.ndarray]:
    """Split a face into disjoint eyes/nose/mouth/skin masks.

    Eyes, nose and mouth are filled convex hulls of their index groups,
    made disjoint in that priority order; skin is the full-face hull minus
    the three parts.
    """
    landmarks = np.asarray(landmarks, dtype=np.float64)
    if landmarks.shape != (68, 2):
        raise ContractViolationError(f"expected (68, 2) landmarks, got {landmarks.shape}")
    if landmarks[:, 0].min() < 0 or landmarks[:, 1].min() < 0 \
            or landmarks[:, 0].max() >= width or landmarks[:, 1].max() >= height:
        raise ContractViolationError("landmarks must lie within image bounds")
    masks = {name: _hull_mask(landmarks[idx], height, width)
             for name, idx in LANDMARK_GROUPS.items()}
    face = _hull_mask(landmarks, height, width)
    masks["nose"] &= ~masks["eyes"]
    masks["mouth"] &= ~(masks["eyes"] | masks["nose"])
    masks["skin"] = face & ~(masks["eyes"] | masks["nose"] | masks["mouth"])
    return masks


def make_less_forgery(fake: SampleRecord, real_source: SampleRecord,
                      region: str) -> SampleRecord:
    """Replace one semantic region of a fake with the same pixels of a real face.

    The output stays labeled fake; its technique tag gains a '<region>Real'
    suffix and its forgery mask drops the neutralized pixels.
    """
    if not fake.region_masks or region not in fake.region_masks:
        raise ContractViolationError(f"fake sample has no region mask {region!r}")
    if fake.image.shape != real_source.image.shape:
        raise ContractViolationError("fake and real source must share one shape")
    mask = fake.region_masks[region]
    pixels = np.where(mask[None], real_source.image.pixels, fake.image.pixels)
    remaining = None
    if fake.forgery_mask is not None:
        remaining = fake.forgery_mask & ~mask
    return SampleRecord(
        image=Image(np.ascontiguousarray(pixels)), label=Label.FAKE,
        technique=f"{fake.technique}-{region}Real", forgery_mask=remaining,
        region_masks={k: v.copy() for k, v in fake.region_masks.items()},
        source_id=f"{fake.source_id}-{region}Real")


def neutralized_test_set(records: list[SampleRecord], region: str,
                         rng: np.random.Generator) -> list[SampleRecord]:
    """Reals unchanged; each fake has `region` replaced from a seeded random real."""
    reals = [r for r in records if r.label == Label.REAL]
    if not reals:
        raise EmptyDatasetError("need real samples to neutralize against")
    out: list[SampleRecord] = []
    for rec in records:
        if rec.label == Label.REAL:
            out.append(rec)
        else:
            source = reals[int(rng.integers(0, len(reals)))]
            out.append(make_less_forgery(rec, source, region))
    return out


# ---------------------------------------------------------------------------
# Balanced batches
# ---------------------------------------------------------------------------

def batch_sampler(dataset: list[SampleRecord], batch_size: int,
                  rng: np.random.Generator):
    """Endless stream of index batches: half real, half fake, reals first.

    Each class is drawn without replacement from a shuffled pool; when a
    pool cannot fill a half-batch it is reshuffled and restarted (the
    remaining tail of that epoch is dropped).
    """
    if batch_size < 2 or batch_size % 2 != 0:
        raise ConfigError("batch size must be even")
    half = batch_size // 2
    pools = {
        Label.REAL: [i for i, r in enumerate(dataset) if r.label == Label.REAL],
        Label.FAKE: [i for i, r in enumerate(dataset) if r.label == Label.FAKE],
    }
    for label, pool in pools.items():
        if len(pool) < half:
            raise EmptyDatasetError(
                f"need at least {half} samples of class {label.name}")
    orders = {lb: rng.permutation(pool) for lb, pool in pools.items()}
    cursors = {lb: 0 for lb in pools}

    def take(label: Label) -> list[int]:
        if cursors[label] + half > len(orders[label]):
            orders[label] = rng.permutation(pools[label])
            cursors[label] = 0
        chunk = orders[label][cursors[label]:cursors[label] + half]
        cursors[label] += half
        return [int(i) for i in chunk]

    while True:
        yield take(Label.REAL) + take(Label.FAKE)


# ---------------------------------------------------------------------------
# Disk layout: images + masks + manifest + metadata
# ---------------------------------------------------------------------------

def write_dataset(records: list[SampleRecord], out_dir, spec: SyntheticSpec | None = None,
                  seed: int | None = None) -> list[Path]:
    """Persist records as PNGs with a manifest.csv and dataset.yaml; returns paths."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    rows = []
    for rec in records:
        img_rel = f"images/{rec.source_id}.png"
        save_png(rec.image, out / img_rel)
        written.append(out / img_rel)
        mask_rel = ""
        if rec.forgery_mask is not None:
            mask_rel = f"masks/{rec.source_id}.png"
            save_mask_png(rec.forgery_mask, out / mask_rel)
            written.append(out / mask_rel)
        rows.append((img_rel, rec.label.name, rec.technique, mask_rel, rec.source_id))
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "label", "technique", "mask", "source_id"])
        writer.writerows(rows)
    written.append(manifest)
    meta: dict = {"count": len(records)}
    if spec is not None:
        dom, sec = spec.regions()
        meta.update({
            "image_size": spec.image_size, "channels": spec.channels,
            "family": spec.family, "strength": spec.strength,
            "regions": {
                "dominant": {"top": dom.top, "left": dom.left, "height": dom.height,
                             "width": dom.width, "prob": dom.prob},
                "secondary": {"top": sec.top, "left": sec.left, "height": sec.height,
                              "width": sec.width, "prob": sec.prob},
            },
        })
    if seed is not None:
        meta["seed"] = seed
    meta_path = out / "dataset.yaml"
    with open(meta_path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(meta, fh, sort_keys=True)
    written.append(meta_path)
    return written


def load_dataset(root) -> tuple[list[SampleRecord], dict]:
    """Load a written dataset; region masks are rebuilt from dataset.yaml rects."""
    root = Path(root)
    manifest = root / "manifest.csv"
    if not manifest.is_file():
        raise EmptyDatasetError(f"no manifest.csv under {root}")
    meta: dict = {}
    meta_path = root / "dataset.yaml"
    if meta_path.is_file():
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = yaml.safe_load(fh) or {}
    region_masks: dict[str, np.ndarray] | None = None
    if "regions" in meta and "image_size" in meta:
        size = int(meta["image_size"])
        region_masks = {}
        for name, r in meta["regions"].items():
            region_masks[name] = RegionSpec(r["top"], r["left"], r["height"],
                                            r["width"], r.get("prob", 1.0)).mask(size)
    records: list[SampleRecord] = []
    with open(manifest, "r", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            label = Label[row["label"]]
            mask = load_mask_png(root / row["mask"]) if row.get("mask") else None
            regions = None
            if label == Label.FAKE and region_masks is not None:
                regions = {k: v.copy() for k, v in region_masks.items()}
            records.append(SampleRecord(
                image=load_png(root / row["path"]), label=label,
                technique=row["technique"], forgery_mask=mask,
                region_masks=regions, source_id=row["source_id"]))
    if not records:
        raise EmptyDatasetError(f"manifest {manifest} lists no records")
    return records, meta
