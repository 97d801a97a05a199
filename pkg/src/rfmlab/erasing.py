"""Guided and baseline erasers operating in the raw 8-bit pixel domain.

The guided eraser visits pixel coordinates in descending attention order
(ties row-major) and drops up to N random-integer blocks on unoccluded
anchors.  The rng draw protocol is pinned and documented per operation so
naive replay oracles can reproduce outputs bit-exactly:

  sfe:  gate u ~ U[0,1); [random-anchor mode: one permutation of H*W];
        per placed block: top ~ U{1..H_max}, left ~ U{1..W_max},
        then fill values for the clipped rectangle in (C, rows, cols) order.
  psfe: gate, then per round: top, left, fill (a fresh attention map is
        computed from the detector before each round; no extra draws).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .detector import Detector, FAKE_INDEX, REAL_INDEX, compute_cam
from .errors import ConfigError, ContractViolationError
from .imaging import BlockGeometry, Image, OcclusionMask, fill_random_block
from .saliency import compute_fam


class Guidance(Enum):
    FAM_GUIDED = "fam"
    RANDOM_ANCHOR = "random"


@dataclass(frozen=True)
class EraseConfig:
    """Knobs of the guided eraser: block count, gate probability, max extents."""

    blocks: int = 3
    p: float = 1.0
    h_max: int = 120
    w_max: int = 120
    guidance: Guidance = Guidance.FAM_GUIDED
    anchor_budget: int | None = None  # max anchors visited; None = H*W

    def __post_init__(self):
        if self.blocks < 1:
            raise ConfigError("block count must be >= 1")
        if not (0.0 <= self.p <= 1.0):
            raise ConfigError("erase probability must lie in [0, 1]")
        if self.h_max < 1 or self.w_max < 1:
            raise ConfigError("max extents must be >= 1")

    def validate_for(self, height: int, width: int) -> None:
        if self.h_max > height or self.w_max > width:
            raise ContractViolationError(
                f"max extents {self.h_max}x{self.w_max} exceed image {height}x{width}")


@dataclass
class EraseTrace:
    """Audit record of one erasing invocation."""

    applied: bool
    placed_anchors: list[tuple[int, int]] = field(default_factory=list)
    skipped_anchors: list[tuple[int, int]] = field(default_factory=list)

    def format(self) -> str:
        lines = [f"applied: {self.applied}",
                 f"placed: {len(self.placed_anchors)}"]
        lines += [f"  anchor {i} {j}" for i, j in self.placed_anchors]
        lines.append(f"skipped: {len(self.skipped_anchors)}")
        lines += [f"  anchor {i} {j}" for i, j in self.skipped_anchors]
        return "\n".join(lines) + "\n"


def descending_order(values: np.ndarray) -> np.ndarray:
    """Flat indices sorted by value descending, ties broken row-major."""
    return np.argsort(-values.ravel(), kind="stable")


def sfe(image: Image, fam: np.ndarray | None, config: EraseConfig,
        rng: np.random.Generator) -> tuple[Image, EraseTrace]:
    """Erase the Top-N attention-ranked unoccluded anchors with random blocks.

    With probability 1 - p the image is returned unmodified.  In
    random-anchor mode (the multiple-erasing-blocks ablation) the visiting
    order is a random permutation instead of the attention ranking and fam
    may be None.
    """
    c, h, w = image.shape
    config.validate_for(h, w)
    if config.guidance is Guidance.FAM_GUIDED:
        if fam is None:
            raise ContractViolationError("attention-guided erasing requires a map")
        if fam.shape != (h, w):
            raise ContractViolationError(
                f"map shape {fam.shape} does not match image {h}x{w}")
    if rng.random() >= config.p:
        return image, EraseTrace(applied=False)

    if config.guidance is Guidance.FAM_GUIDED:
        order = descending_order(np.asarray(fam))
    else:
        order = rng.permutation(h * w)
    budget = config.anchor_budget if config.anchor_budget is not None else h * w
    trace = EraseTrace(applied=True)
    mask = OcclusionMask.empty(h, w)
    out = image
    visited = 0
    for flat in order:
        if len(trace.placed_anchors) >= config.blocks or visited >= budget:
            break
        visited += 1
        i, j = int(flat) // w, int(flat) % w
        if mask.is_covered(i, j):
            trace.skipped_anchors.append((i, j))
            continue
        geom = BlockGeometry.sample((i, j), config.h_max, config.w_max, rng)
        out, mask = fill_random_block(out, mask, geom, rng)
        trace.placed_anchors.append((i, j))
    return out, trace


def psfe(detector: Detector, image: Image, config: EraseConfig,
         rng: np.random.Generator) -> tuple[Image, EraseTrace]:
    """Progressive variant: recompute the attention map before every block.

    Runs N rounds of {fresh map on the current partially erased image;
    erase its Top-1 unoccluded coordinate}.  The probability gate applies
    once, up front.  Performs exactly N map computations.
    """
    c, h, w = image.shape
    config.validate_for(h, w)
    if rng.random() >= config.p:
        return image, EraseTrace(applied=False)
    trace = EraseTrace(applied=True)
    mask = OcclusionMask.empty(h, w)
    out = image
    for _ in range(config.blocks):
        fam = compute_fam(detector, out)
        free = ~mask.covered
        if not free.any():
            break
        ranked = descending_order(fam)
        flat = ranked[free.ravel()[ranked].argmax()]  # first unoccluded in rank order
        i, j = int(flat) // w, int(flat) % w
        geom = BlockGeometry.sample((i, j), config.h_max, config.w_max, rng)
        out, mask = fill_random_block(out, mask, geom, rng)
        trace.placed_anchors.append((i, j))
    return out, trace


# ---------------------------------------------------------------------------
# Baseline erasers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RandomEraseConfig:
    """Single random rectangle sampled by area and aspect ratio (original settings)."""

    probability: float = 0.5
    area_range: tuple[float, float] = (0.02, 0.4)
    aspect_range: tuple[float, float] = (0.3, 1.0 / 0.3)
    max_attempts: int = 100

    def __post_init__(self):
        if not (0.0 <= self.probability <= 1.0):
            raise ConfigError("probability must lie in [0, 1]")
        if not (0 < self.area_range[0] <= self.area_range[1]):
            raise ConfigError("area range must satisfy 0 < low <= high")
        if not (0 < self.aspect_range[0] <= self.aspect_range[1]):
            raise ConfigError("aspect range must satisfy 0 < low <= high")


@dataclass
class RandomEraseTrace:
    gated: bool              # probability gate outcome
    applied: bool            # a rectangle was actually erased
    rect: tuple[int, int, int, int] | None = None  # top, left, height, width
    attempts: int = 0

    @property
    def no_op(self) -> bool:
        return self.gated and not self.applied


def random_erasing(image: Image, config: RandomEraseConfig,
                   rng: np.random.Generator) -> tuple[Image, RandomEraseTrace]:
    """Fill one random rectangle with uniform integers, resampling until it fits.

    Draw order: gate; per attempt (area fraction, aspect ratio); on fit
    (top, left) then fill values in (C, rows, cols) order.
    """
    c, h, w = image.shape
    if rng.random() >= config.probability:
        return image, RandomEraseTrace(gated=False, applied=False)
    for attempt in range(1, config.max_attempts + 1):
        target_area = rng.uniform(*config.area_range) * h * w
        aspect = rng.uniform(*config.aspect_range)
        rect_h = int(round(np.sqrt(target_area * aspect)))
        rect_w = int(round(np.sqrt(target_area / aspect)))
        if rect_h < h and rect_w < w:
            top = int(rng.integers(0, h - rect_h + 1))
            left = int(rng.integers(0, w - rect_w + 1))
            out = image.pixels.copy()
            out[:, top:top + rect_h, left:left + rect_w] = rng.integers(
                0, 256, size=(c, rect_h, rect_w), dtype=np.uint8)
            return Image(out), RandomEraseTrace(
                gated=True, applied=True, rect=(top, left, rect_h, rect_w),
                attempts=attempt)
    return image, RandomEraseTrace(gated=True, applied=False,
                                   attempts=config.max_attempts)


@dataclass(frozen=True)
class AdversarialEraseConfig:
    """Quantile-thresholded CAM eraser (the fine-grained mask baseline)."""

    quantile: float = 0.15
    cam_class: int = FAKE_INDEX

    def __post_init__(self):
        if not (0.0 <= self.quantile <= 1.0):
            raise ConfigError("quantile must lie in [0, 1]")
        if self.cam_class not in (REAL_INDEX, FAKE_INDEX):
            raise ConfigError("cam class must be a logit index (0 or 1)")


def adversarial_erasing(detector: Detector, image: Image,
                        config: AdversarialEraseConfig,
                        rng: np.random.Generator) -> tuple[Image, OcclusionMask]:
    """Erase the ceil(q * H * W) pixels with the highest upsampled CAM values.

    Ties are broken row-major.  Fill values are drawn per selected pixel in
    ranked order, (pixel, channel) layout.
    """
    c, h, w = image.shape
    cam = compute_cam(detector, image, config.cam_class, upsample=True)
    k = int(np.ceil(config.quantile * h * w))
    mask = OcclusionMask.empty(h, w)
    if k == 0:
        return image, mask
    ranked = descending_order(cam)[:k]
    rows, cols = np.unravel_index(ranked, (h, w))
    values = rng.integers(0, 256, size=(k, c), dtype=np.uint8)
    out = image.pixels.copy()
    out[:, rows, cols] = values.T
    mask.covered[rows, cols] = True
    return Image(out), mask


# ---------------------------------------------------------------------------
# Ablation variants of the guided eraser
# ---------------------------------------------------------------------------

VARIANT_LABELS = {
    "fam_meb": "w/ FAM&MEB",
    "meb": "w/ MEB",
    "fam": "w/ FAM",
    "single": "w/o MEB|FAM",
}


def variant_erase_config(variant: str, base: EraseConfig) -> EraseConfig:
    """Map an ablation variant name onto guidance/block-count settings."""
    if variant == "fam_meb":
        guidance, blocks = Guidance.FAM_GUIDED, max(base.blocks, 2)
    elif variant == "meb":
        guidance, blocks = Guidance.RANDOM_ANCHOR, max(base.blocks, 2)
    elif variant == "fam":
        guidance, blocks = Guidance.FAM_GUIDED, 1
    elif variant == "single":
        guidance, blocks = Guidance.RANDOM_ANCHOR, 1
    else:
        raise ConfigError(f"unknown erase variant {variant!r}; "
                          f"known: {sorted(VARIANT_LABELS)}")
    return EraseConfig(blocks=blocks, p=base.p, h_max=base.h_max,
                       w_max=base.w_max, guidance=guidance,
                       anchor_budget=base.anchor_budget)
