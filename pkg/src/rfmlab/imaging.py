"""Pixel-level primitives: images, occlusion masks, preprocessing, block fill.

Images are 8-bit C x H x W arrays (C in {1, 3}).  All erasing happens in
this raw integer domain, before any normalization for network input.
Every random operation takes an explicit ``numpy.random.Generator`` so the
whole pipeline replays under a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PILImage

from .errors import ContractViolationError, InvalidImageError


@dataclass(frozen=True)
class Image:
    """An 8-bit image, channel-first.

    pixels: uint8 array of shape (C, H, W), C in {1, 3}.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = self.pixels
        if not isinstance(px, np.ndarray) or px.ndim != 3:
            raise InvalidImageError("pixels must be a (C, H, W) array")
        if px.dtype != np.uint8:
            raise InvalidImageError(f"pixels must be uint8, got {px.dtype}")
        c, h, w = px.shape
        if c not in (1, 3):
            raise InvalidImageError(f"channel count must be 1 or 3, got {c}")
        if h < 1 or w < 1:
            raise InvalidImageError(f"image must be at least 1x1, got {h}x{w}")

    @property
    def channels(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pixels.shape

    def copy(self) -> "Image":
        return Image(self.pixels.copy())


def image_from_array(arr: np.ndarray) -> Image:
    """Build an Image from any integer-valued array in [0, 255], (C, H, W) or (H, W)."""
    a = np.asarray(arr)
    if a.ndim == 2:
        a = a[None]
    if a.dtype != np.uint8:
        if np.any((a < 0) | (a > 255)):
            raise InvalidImageError("values outside [0, 255]")
        a = a.astype(np.uint8)
    return Image(np.ascontiguousarray(a))


@dataclass
class OcclusionMask:
    """Boolean H x W field of pixels covered so far during one erasing call.

    Bits are only ever set, never cleared.
    """

    covered: np.ndarray

    @classmethod
    def empty(cls, height: int, width: int) -> "OcclusionMask":
        return cls(np.zeros((height, width), dtype=bool))

    def is_covered(self, i: int, j: int) -> bool:
        return bool(self.covered[i, j])

    def copy(self) -> "OcclusionMask":
        return OcclusionMask(self.covered.copy())


@dataclass(frozen=True)
class BlockGeometry:
    """One erasing block: anchor plus extents in the four directions.

    The block spans rows [i - top, i + bottom) x cols [j - left, j + right)
    before clipping to image bounds.  For a draw with maxima (H_max, W_max),
    top + bottom == H_max and left + right == W_max, so the unclipped area
    is always exactly H_max * W_max.
    """

    anchor: tuple[int, int]
    top: int
    left: int
    bottom: int
    right: int

    @classmethod
    def sample(cls, anchor: tuple[int, int], h_max: int, w_max: int,
               rng: np.random.Generator) -> "BlockGeometry":
        """Draw extents: top ~ U{1..h_max}, left ~ U{1..w_max} (two rng draws)."""
        top = int(rng.integers(1, h_max + 1))
        left = int(rng.integers(1, w_max + 1))
        return cls(anchor=anchor, top=top, left=left,
                   bottom=h_max - top, right=w_max - left)

    def clipped(self, height: int, width: int) -> tuple[int, int, int, int]:
        """Row/col bounds (r0, r1, c0, c1) of the block clipped to the image."""
        i, j = self.anchor
        r0 = max(0, i - self.top)
        r1 = min(height, i + self.bottom)
        c0 = max(0, j - self.left)
        c1 = min(width, j + self.right)
        return r0, r1, c0, c1


def fill_random_block(image: Image, mask: OcclusionMask, geom: BlockGeometry,
                      rng: np.random.Generator) -> tuple[Image, OcclusionMask]:
    """Fill one block with i.i.d. uniform integers in [0, 255], per pixel per channel.

    Returns a new image and mask; pixels outside the clipped block are left
    bit-identical.  Fill values are drawn for the clipped rectangle only, in
    (C, rows, cols) order, after the two extent draws made by the caller.
    """
    c, h, w = image.shape
    i, j = geom.anchor
    if not (0 <= i < h and 0 <= j < w):
        raise ContractViolationError(f"anchor {geom.anchor} outside {h}x{w} image")
    if mask.covered.shape != (h, w):
        raise ContractViolationError("mask shape does not match image")
    r0, r1, c0, c1 = geom.clipped(h, w)
    out = image.pixels.copy()
    new_mask = mask.covered.copy()
    if r1 > r0 and c1 > c0:
        out[:, r0:r1, c0:c1] = rng.integers(
            0, 256, size=(c, r1 - r0, c1 - c0), dtype=np.uint8)
        new_mask[r0:r1, c0:c1] = True
    return Image(out), OcclusionMask(new_mask)


# ---------------------------------------------------------------------------
# Preprocessing: resize -> crop -> flip
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PreprocessConfig:
    """Sizes for the resize/crop pipeline; crop == resize degenerates to identity."""

    resize: int = 256
    crop: int = 224
    flip: bool = True


def _to_pil(image: Image) -> PILImage.Image:
    px = image.pixels
    if image.channels == 1:
        return PILImage.fromarray(px[0], mode="L")
    return PILImage.fromarray(np.moveaxis(px, 0, 2), mode="RGB")


def _from_pil(pil: PILImage.Image) -> Image:
    arr = np.asarray(pil)
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = np.moveaxis(arr, 2, 0)
    return Image(np.ascontiguousarray(arr))


def resize_bilinear(image: Image, height: int, width: int) -> Image:
    """Deterministic bilinear resize (Pillow kernel). No-op if already sized."""
    if (image.height, image.width) == (height, width):
        return image
    return _from_pil(_to_pil(image).resize((width, height), PILImage.BILINEAR))


def crop(image: Image, top: int, left: int, height: int, width: int) -> Image:
    if top < 0 or left < 0 or top + height > image.height or left + width > image.width:
        raise ContractViolationError("crop window outside image bounds")
    return Image(np.ascontiguousarray(image.pixels[:, top:top + height, left:left + width]))


def hflip(image: Image) -> Image:
    return Image(np.ascontiguousarray(image.pixels[:, :, ::-1]))


def preprocess_train(image: Image, rng: np.random.Generator,
                     config: PreprocessConfig = PreprocessConfig()) -> Image:
    """Training pipeline: resize -> random crop -> horizontal flip with prob 0.5.

    Draw order is pinned (top, left, flip) so runs replay under a shared seed.
    """
    img = resize_bilinear(image, config.resize, config.resize)
    top = int(rng.integers(0, img.height - config.crop + 1))
    left = int(rng.integers(0, img.width - config.crop + 1))
    img = crop(img, top, left, config.crop, config.crop)
    if config.flip and rng.random() < 0.5:
        img = hflip(img)
    return img


def preprocess_eval(image: Image,
                    config: PreprocessConfig = PreprocessConfig()) -> Image:
    """Evaluation pipeline: resize -> center crop. Deterministic, no flip."""
    img = resize_bilinear(image, config.resize, config.resize)
    top = (img.height - config.crop) // 2
    left = (img.width - config.crop) // 2
    return crop(img, top, left, config.crop, config.crop)


# ---------------------------------------------------------------------------
# PNG persistence
# ---------------------------------------------------------------------------

def save_png(image: Image, path) -> None:
    _to_pil(image).save(path, format="PNG")


def load_png(path) -> Image:
    with PILImage.open(path) as pil:
        pil = pil.convert("RGB") if pil.mode not in ("L", "RGB") else pil.copy()
    return _from_pil(pil)


def save_mask_png(mask: np.ndarray, path) -> None:
    """Persist a boolean H x W mask as an 8-bit PNG bitmap (255 = set)."""
    PILImage.fromarray(mask.astype(np.uint8) * 255, mode="L").save(path, format="PNG")


def load_mask_png(path) -> np.ndarray:
    with PILImage.open(path) as pil:
        arr = np.asarray(pil.convert("L"))
    return arr > 127


def save_image_array(image: Image, path) -> None:
    """Raw array persistence (.npy) for pipelines that bypass PNG encoding."""
    np.save(path, image.pixels)


def load_image_array(path) -> Image:
    return image_from_array(np.load(path))
