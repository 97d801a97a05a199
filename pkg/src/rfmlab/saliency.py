"""Forgery attention maps: per-pixel detector sensitivity and aggregates.

A FAM is the channel-wise maximum absolute value of the input gradient of
(fake logit - real logit): non-negative, same spatial shape as the image,
computed in evaluation mode with zero parameter side effects.
"""

from __future__ import annotations

import numpy as np
from matplotlib import colormaps

from .detector import Detector, GradientTarget
from .errors import DegenerateMapError, EmptyAggregateError
from .imaging import Image, image_from_array, save_png


def fam_from_gradient(grad: np.ndarray) -> np.ndarray:
    """Collapse a (C, H, W) gradient to an H x W map: max over channels of |g|."""
    return np.abs(grad).max(axis=0)


def compute_fam(detector: Detector, image: Image) -> np.ndarray:
    grad = detector.input_gradient(image, GradientTarget.FAKE_MINUS_REAL)
    return fam_from_gradient(grad)


def compute_fam_batch(detector: Detector, images: list[Image]) -> np.ndarray:
    """Per-image FAMs for a whole batch in a single forward/backward pass."""
    grads = detector.input_gradient_batch(images, GradientTarget.FAKE_MINUS_REAL)
    return np.abs(grads).max(axis=1)


def average_fam(detector: Detector, images: list[Image],
                batch_size: int = 64) -> np.ndarray:
    """Element-wise mean of per-image FAMs over a uniformly shaped image list."""
    if not images:
        raise EmptyAggregateError("cannot average FAMs over an empty image list")
    total = np.zeros((images[0].height, images[0].width), dtype=np.float64)
    for start in range(0, len(images), batch_size):
        chunk = images[start:start + batch_size]
        total += compute_fam_batch(detector, chunk).astype(np.float64).sum(axis=0)
    return total / len(images)


def minmax_normalize(values: np.ndarray) -> np.ndarray:
    """Scale to [0, 1]; a constant map has no range and is degenerate."""
    lo = float(values.min())
    hi = float(values.max())
    if hi == lo:
        raise DegenerateMapError("map is constant; min-max normalization undefined")
    return (values - lo) / (hi - lo)


def fam_correlation_matrix(avg_maps: list[np.ndarray]) -> np.ndarray:
    """Pairwise cosine similarity of min-max normalized, flattened maps.

    Symmetry is enforced by mirroring the upper triangle; the diagonal is
    cos(x, x) = 1 up to rounding.
    """
    if len(avg_maps) < 1:
        raise EmptyAggregateError("need at least one map")
    shape = avg_maps[0].shape
    flats = []
    for m in avg_maps:
        if m.shape != shape:
            raise DegenerateMapError("maps must share one spatial shape")
        flats.append(minmax_normalize(np.asarray(m, dtype=np.float64)).ravel())
    k = len(flats)
    norms = [np.linalg.norm(f) for f in flats]
    out = np.zeros((k, k), dtype=np.float64)
    for a in range(k):
        for b in range(a, k):
            val = float(np.dot(flats[a], flats[b]) / (norms[a] * norms[b]))
            out[a, b] = val
            out[b, a] = val
    return out


# ---------------------------------------------------------------------------
# Persistence: raw arrays plus rendered heatmaps
# ---------------------------------------------------------------------------

def save_heatmap_png(values: np.ndarray, path, cmap: str = "viridis") -> None:
    """Render a scalar map as a colormapped PNG after min-max scaling.

    Constant maps render as the colormap floor instead of failing, so
    visualization of a degenerate detector still produces output.
    """
    v = np.asarray(values, dtype=np.float64)
    rng = v.max() - v.min()
    scaled = (v - v.min()) / rng if rng > 0 else np.zeros_like(v)
    rgba = colormaps[cmap](scaled)
    rgb = (rgba[..., :3] * 255.0).round().astype(np.uint8)
    save_png(image_from_array(np.moveaxis(rgb, 2, 0)), path)


def save_fam(values: np.ndarray, base_path) -> tuple[str, str]:
    """Persist a map as <base>.npy (raw) and <base>.png (heatmap)."""
    raw = f"{base_path}.npy"
    png = f"{base_path}.png"
    np.save(raw, np.asarray(values, dtype=np.float64))
    save_heatmap_png(values, png)
    return raw, png


def save_correlation_csv(matrix: np.ndarray, techniques: list[str], path) -> None:
    """Delimited text with a technique-name header row."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("technique," + ",".join(techniques) + "\n")
        for name, row in zip(techniques, matrix):
            fh.write(name + "," + ",".join(repr(float(v)) for v in row) + "\n")
