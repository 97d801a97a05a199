"""Two-logit detector: reference CNNs, input gradients, CAM, flooded training.

The detector consumes images normalized to [0, 1] (pixels / 255) and emits a
(real, fake) logit pair.  Input gradients are taken with respect to the
normalized input and are exact autograd derivatives; saliency passes run in
evaluation mode and never touch parameters.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import (
    BatchShapeError,
    ChecksumError,
    ConfigError,
    GradientUnavailableError,
    TrainingDivergedError,
    UnsupportedArchitectureError,
)
from .imaging import Image

REAL_INDEX = 0
FAKE_INDEX = 1


class GradientTarget(Enum):
    """Which scalar the input gradient is taken of."""

    REAL = "real"
    FAKE = "fake"
    FAKE_MINUS_REAL = "fake_minus_real"


@dataclass(frozen=True)
class LogitPair:
    o_real: float
    o_fake: float

    @property
    def predicted(self) -> int:
        """0 = real, 1 = fake; ties go to real (argmax convention)."""
        return FAKE_INDEX if self.o_fake > self.o_real else REAL_INDEX

    @property
    def fake_score(self) -> float:
        """softmax probability of the fake logit; monotone in o_fake - o_real."""
        d = self.o_fake - self.o_real
        if d >= 0:
            return 1.0 / (1.0 + np.exp(-d))
        e = np.exp(d)
        return float(e / (1.0 + e))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-4
    batch_size: int = 16
    flood_level: float = 0.04
    iterations: int = 1000

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if self.flood_level < 0:
            raise ConfigError("flood level must be non-negative")
        if self.batch_size < 2 or self.batch_size % 2 != 0:
            raise ConfigError("batch size must be even (balanced halves)")
        if self.iterations < 0:
            raise ConfigError("iterations must be non-negative")


@dataclass
class PassCounters:
    """Bookkeeping for the loop-accounting checks: batched passes and updates."""

    forward_passes: int = 0
    backward_passes: int = 0
    parameter_updates: int = 0

    def reset(self) -> None:
        self.forward_passes = 0
        self.backward_passes = 0
        self.parameter_updates = 0


class GapConvNet(nn.Module):
    """Stride-2 conv blocks with GELU, global average pooling, linear 2-class head."""

    def __init__(self, in_channels: int, widths: tuple[int, ...], num_classes: int = 2):
        super().__init__()
        layers: list[nn.Module] = []
        prev = in_channels
        for width in widths:
            layers.append(nn.Conv2d(prev, width, kernel_size=3, stride=2, padding=1))
            layers.append(nn.GELU())
            prev = width
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(prev, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = self.features(x)
        pooled = feats.mean(dim=(2, 3))
        return self.head(pooled)


ARCHITECTURES: dict[str, tuple[int, ...]] = {
    "ref_cnn": (8, 16, 32, 32),
    "tiny_cnn": (8, 16),
}

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


def _init_parameters(net: nn.Module, rng: np.random.Generator) -> None:
    # Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) drawn from the init stream in
    # registration order, so initialization is identical across torch versions.
    for name, param in net.named_parameters():
        if param.ndim > 1:
            fan_in = int(np.prod(param.shape[1:]))
        else:
            fan_in = int(param.shape[0])
        bound = 1.0 / np.sqrt(fan_in)
        values = rng.uniform(-bound, bound, size=tuple(param.shape))
        with torch.no_grad():
            param.copy_(torch.from_numpy(values).to(param.dtype))


class Detector:
    """Wraps a GAP+linear-head CNN behind the detector contract.

    A detector instance is single-writer: training mutates parameters
    sequentially, read-only calls are safe between train steps.
    """

    def __init__(self, arch: str = "ref_cnn", in_channels: int = 3,
                 dtype: str = "float32",
                 init_rng: np.random.Generator | None = None,
                 net: nn.Module | None = None):
        if net is None and arch not in ARCHITECTURES:
            raise UnsupportedArchitectureError(
                f"unknown architecture {arch!r}; known: {sorted(ARCHITECTURES)}")
        if dtype not in _DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(_DTYPES)}")
        self.arch = arch
        self.in_channels = in_channels
        self.dtype_name = dtype
        self.torch_dtype = _DTYPES[dtype]
        # A custom backbone may be supplied as long as it maps (B, C, H, W)
        # inputs to (B, 2) logits; checkpoints cover registry archs only.
        self.net = (net if net is not None
                    else GapConvNet(in_channels, ARCHITECTURES[arch])).to(self.torch_dtype)
        self.net.eval()
        if init_rng is not None:
            _init_parameters(self.net, init_rng)
        self.counters = PassCounters()

    # -- tensor plumbing ----------------------------------------------------

    def to_input_tensor(self, images: list[Image]) -> torch.Tensor:
        if not images:
            raise BatchShapeError("empty batch")
        shape = images[0].shape
        for img in images:
            if img.shape != shape:
                raise BatchShapeError(f"mixed shapes in batch: {img.shape} vs {shape}")
            if img.channels != self.in_channels:
                raise BatchShapeError(
                    f"detector expects {self.in_channels} channels, got {img.channels}")
        stack = np.stack([img.pixels for img in images]).astype(np.float64) / 255.0
        return torch.from_numpy(stack).to(self.torch_dtype)

    def logits_from_tensor(self, x: torch.Tensor, train_mode: bool = False) -> torch.Tensor:
        """One batched forward pass on a normalized (B, C, H, W) tensor."""
        self.net.train(train_mode)
        try:
            logits = self.net(x)
        finally:
            self.net.eval()
        self.counters.forward_passes += 1
        return logits

    # -- inference ----------------------------------------------------------

    def forward(self, images: list[Image]) -> list[LogitPair]:
        """Order-preserving logit pairs; deterministic in evaluation mode."""
        with torch.no_grad():
            logits = self.logits_from_tensor(self.to_input_tensor(images))
        arr = logits.numpy()
        return [LogitPair(float(row[REAL_INDEX]), float(row[FAKE_INDEX])) for row in arr]

    def fake_scores(self, images: list[Image], batch_size: int = 64) -> np.ndarray:
        out = []
        for start in range(0, len(images), batch_size):
            out.extend(p.fake_score for p in self.forward(images[start:start + batch_size]))
        return np.asarray(out, dtype=np.float64)

    # -- gradients ----------------------------------------------------------

    @staticmethod
    def _select_scalar(logits: torch.Tensor, target: GradientTarget) -> torch.Tensor:
        if target is GradientTarget.REAL:
            return logits[:, REAL_INDEX]
        if target is GradientTarget.FAKE:
            return logits[:, FAKE_INDEX]
        return logits[:, FAKE_INDEX] - logits[:, REAL_INDEX]

    def input_gradient_tensor(self, x: torch.Tensor, target: GradientTarget) -> torch.Tensor:
        """Exact d(scalar)/d(input) per batch element; no parameter state is touched."""
        x = x.detach().requires_grad_(True)
        logits = self.logits_from_tensor(x)
        scalar = self._select_scalar(logits, target).sum()
        try:
            (grad,) = torch.autograd.grad(scalar, x)
        except RuntimeError as exc:  # pragma: no cover - defensive
            raise GradientUnavailableError(str(exc)) from exc
        self.counters.backward_passes += 1
        return grad

    def input_gradient_batch(self, images: list[Image], target: GradientTarget) -> np.ndarray:
        """Per-image gradients for a whole batch in one forward/backward pass."""
        grad = self.input_gradient_tensor(self.to_input_tensor(images), target)
        return grad.numpy()

    def input_gradient(self, image: Image, target: GradientTarget) -> np.ndarray:
        return self.input_gradient_batch([image], target)[0]

    # -- CAM ----------------------------------------------------------------

    def supports_cam(self) -> bool:
        return (hasattr(self.net, "features") and hasattr(self.net, "head")
                and isinstance(self.net.head, nn.Linear))

    def feature_maps(self, image: Image) -> np.ndarray:
        """Last-convolutional-layer activations, shape (K, h, w)."""
        if not self.supports_cam():
            raise UnsupportedArchitectureError("detector does not expose feature maps")
        with torch.no_grad():
            x = self.to_input_tensor([image])
            self.counters.forward_passes += 1
            feats = self.net.features(x)
        return feats[0].numpy()

    def head_weights(self) -> np.ndarray:
        """Per-class weights over feature channels, shape (2, K)."""
        if not self.supports_cam():
            raise UnsupportedArchitectureError("detector has no GAP+linear head")
        return self.net.head.weight.detach().numpy().copy()

    # -- parameter state ----------------------------------------------------

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.detach().numpy().copy() for name, p in self.net.named_parameters()}

    def load_parameter_arrays(self, params: dict[str, np.ndarray]) -> None:
        with torch.no_grad():
            for name, p in self.net.named_parameters():
                if name not in params:
                    raise ChecksumError(f"missing parameter {name!r}")
                src = params[name]
                if tuple(src.shape) != tuple(p.shape):
                    raise ChecksumError(f"shape mismatch for {name!r}")
                p.copy_(torch.from_numpy(np.ascontiguousarray(src)).to(p.dtype))


def compute_cam(detector: Detector, image: Image, cam_class: int,
                upsample: bool = True) -> np.ndarray:
    """Class activation map: weighted sum of last-conv feature maps.

    cam_class is a logit index (0 = real, 1 = fake).  Upsampling is bilinear
    to the input resolution.
    """
    feats = detector.feature_maps(image)
    weights = detector.head_weights()[cam_class]
    cam = np.tensordot(weights, feats, axes=(0, 0))
    if not upsample or cam.shape == (image.height, image.width):
        return cam
    t = torch.from_numpy(cam[None, None].astype(np.float64))
    up = F.interpolate(t, size=(image.height, image.width),
                       mode="bilinear", align_corners=False)
    return up[0, 0].numpy()


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainState:
    optimizer: torch.optim.Optimizer
    steps: int = 0


def make_train_state(detector: Detector, config: TrainConfig) -> TrainState:
    opt = torch.optim.Adam(detector.net.parameters(), lr=config.learning_rate)
    return TrainState(optimizer=opt)


def flooded_loss(ce: torch.Tensor, flood_level: float) -> torch.Tensor:
    """|CE - b| + b, with the subgradient at the floor pinned to the upper branch."""
    b = flood_level
    return torch.where(ce >= b, ce, 2.0 * b - ce)


def train_step(detector: Detector, images: list[Image], labels: np.ndarray,
               config: TrainConfig, state: TrainState) -> float:
    """One flooded cross-entropy Adam update; returns the pre-update flooded loss."""
    x = detector.to_input_tensor(images)
    targets = torch.as_tensor(np.asarray(labels, dtype=np.int64))
    logits = detector.logits_from_tensor(x, train_mode=True)
    ce = F.cross_entropy(logits, targets)
    loss = flooded_loss(ce, config.flood_level)
    if not torch.isfinite(loss):
        raise TrainingDivergedError(
            f"non-finite loss at step {state.steps}: ce={float(ce.detach())!r}")
    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    detector.counters.backward_passes += 1
    state.optimizer.step()
    detector.counters.parameter_updates += 1
    state.steps += 1
    return float(loss.detach())


# ---------------------------------------------------------------------------
# Checkpoints: versioned container with a content checksum
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"RFMLABCKPT1\n"


def save_checkpoint(detector: Detector, path) -> None:
    """Write arch id + parameter tensors + sha256 of the payload, byte-deterministic."""
    params = detector.parameter_arrays()
    payload = io.BytesIO()
    table = []
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name])
        raw = arr.tobytes()
        table.append({"name": name, "shape": list(arr.shape),
                      "dtype": str(arr.dtype), "bytes": len(raw)})
        payload.write(raw)
    blob = payload.getvalue()
    header = {
        "format": "rfmlab-checkpoint",
        "version": 1,
        "arch": detector.arch,
        "in_channels": detector.in_channels,
        "dtype": detector.dtype_name,
        "params": table,
        "payload_bytes": len(blob),
        "payload_sha256": hashlib.sha256(blob).hexdigest(),
    }
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(blob)


def load_checkpoint(path) -> Detector:
    """Restore a detector bit-exactly; corrupt or truncated files raise ChecksumError."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise ChecksumError(f"{path}: not a checkpoint file")
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ChecksumError(f"{path}: corrupt header") from exc
        blob = fh.read()
    if len(blob) != header.get("payload_bytes"):
        raise ChecksumError(f"{path}: payload truncated "
                            f"({len(blob)} of {header.get('payload_bytes')} bytes)")
    if hashlib.sha256(blob).hexdigest() != header.get("payload_sha256"):
        raise ChecksumError(f"{path}: payload checksum mismatch")
    detector = Detector(arch=header["arch"], in_channels=header["in_channels"],
                        dtype=header["dtype"])
    params: dict[str, np.ndarray] = {}
    offset = 0
    for entry in header["params"]:
        n = entry["bytes"]
        arr = np.frombuffer(blob[offset:offset + n], dtype=np.dtype(entry["dtype"]))
        params[entry["name"]] = arr.reshape(entry["shape"]).copy()
        offset += n
    detector.load_parameter_arrays(params)
    return detector
