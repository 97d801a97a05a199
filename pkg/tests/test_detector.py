import subprocess
import sys

import numpy as np
import pytest
import torch
from scipy.special import erf
from torch import nn

from rfmlab.detector import (
    ARCHITECTURES,
    Detector,
    GradientTarget,
    LogitPair,
    TrainConfig,
    compute_cam,
    flooded_loss,
    load_checkpoint,
    make_train_state,
    save_checkpoint,
    train_step,
)
from rfmlab.errors import (
    BatchShapeError,
    ChecksumError,
    TrainingDivergedError,
    UnsupportedArchitectureError,
)

from conftest import random_image


def make_detector(arch="tiny_cnn", seed=3, dtype="float32", in_channels=3):
    return Detector(arch=arch, in_channels=in_channels, dtype=dtype,
                    init_rng=np.random.default_rng(seed))


# -- forward ------------------------------------------------------------------

def test_forward_identical_heads_give_equal_logits(rng):
    det = make_detector()
    with torch.no_grad():
        det.net.head.weight[1] = det.net.head.weight[0]
        det.net.head.bias[1] = det.net.head.bias[0]
    pairs = det.forward([random_image(rng, height=16, width=16) for _ in range(4)])
    for p in pairs:
        assert p.o_real == p.o_fake


def test_forward_duplicate_inputs_give_duplicate_pairs(rng):
    det = make_detector()
    img = random_image(rng, height=16, width=16)
    a, b = det.forward([img, img])
    assert (a.o_real, a.o_fake) == (b.o_real, b.o_fake)


def test_forward_batch_shape_errors(rng):
    det = make_detector()
    with pytest.raises(BatchShapeError):
        det.forward([])
    with pytest.raises(BatchShapeError):
        det.forward([random_image(rng, height=16, width=16),
                     random_image(rng, height=8, width=8)])
    with pytest.raises(BatchShapeError):
        det.forward([random_image(rng, channels=1, height=16, width=16)])


def _oracle_conv(x, weight, bias, stride=2, pad=1):
    c_out, c_in, kh, kw = weight.shape
    h, w = x.shape[1:]
    padded = np.zeros((c_in, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    padded[:, pad:pad + h, pad:pad + w] = x
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((c_out, oh, ow), dtype=np.float64)
    for co in range(c_out):
        for i in range(oh):
            for j in range(ow):
                patch = padded[:, i * stride:i * stride + kh, j * stride:j * stride + kw]
                out[co, i, j] = float((patch * weight[co]).sum()) + bias[co]
    return out


def _oracle_gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


@pytest.mark.parametrize("arch", sorted(ARCHITECTURES))
def test_forward_matches_layer_by_layer_oracle(arch, rng):
    det = make_detector(arch=arch, dtype="float64")
    img = random_image(rng, height=16, width=16)
    pair = det.forward([img])[0]

    x = img.pixels.astype(np.float64) / 255.0
    params = det.parameter_arrays()
    n_convs = len(ARCHITECTURES[arch])
    for k in range(n_convs):
        x = _oracle_conv(x, params[f"features.{2 * k}.weight"],
                         params[f"features.{2 * k}.bias"])
        x = _oracle_gelu(x)
    pooled = x.mean(axis=(1, 2))
    logits = params["head.weight"] @ pooled + params["head.bias"]
    assert pair.o_real == pytest.approx(logits[0], rel=1e-5)
    assert pair.o_fake == pytest.approx(logits[1], rel=1e-5)


# -- input gradients ----------------------------------------------------------

def test_gradient_of_input_blind_detector_is_zero(rng):
    det = make_detector()
    with torch.no_grad():
        for name, p in det.net.named_parameters():
            if name.startswith("features"):
                p.zero_()
    grad = det.input_gradient(random_image(rng, height=16, width=16),
                              GradientTarget.FAKE_MINUS_REAL)
    assert np.all(grad == 0.0)


class _LinearNet(nn.Module):
    def __init__(self, c, h, w):
        super().__init__()
        self.flatten = nn.Flatten()
        self.linear = nn.Linear(c * h * w, 2)

    def forward(self, x):
        return self.linear(self.flatten(x))


def test_gradient_of_linear_detector_equals_weights(rng):
    net = _LinearNet(3, 8, 8)
    det = Detector(arch="linear-probe", net=net, dtype="float64",
                   init_rng=np.random.default_rng(0))
    img = random_image(rng)
    w = det.net.linear.weight.detach().numpy()
    grad_fake = det.input_gradient(img, GradientTarget.FAKE)
    grad_real = det.input_gradient(img, GradientTarget.REAL)
    assert np.allclose(grad_fake, w[1].reshape(3, 8, 8), atol=0)
    assert np.allclose(grad_real, w[0].reshape(3, 8, 8), atol=0)


def finite_difference_gradient(det, x, target, step=1e-3):
    """Batched central differences on the normalized input (float64)."""
    flat = x.reshape(-1)
    n = flat.numel()
    probes = x.repeat(2 * n, 1, 1, 1).reshape(2 * n, -1)
    idx = torch.arange(n)
    probes[2 * idx, idx] += step
    probes[2 * idx + 1, idx] -= step
    probes = probes.reshape(2 * n, *x.shape[1:])
    outs = []
    with torch.no_grad():
        for start in range(0, 2 * n, 512):
            logits = det.net(probes[start:start + 512])
            outs.append(det._select_scalar(logits, target))
    vals = torch.cat(outs)
    grad = (vals[0::2] - vals[1::2]) / (2.0 * step)
    return grad.reshape(x.shape[1:]).numpy()


def max_relative_error(reference, estimate):
    scale = max(np.abs(reference).max(), 1e-12)
    return float(np.abs(reference - estimate).max() / scale)


@pytest.mark.parametrize("arch", sorted(ARCHITECTURES))
def test_gradient_matches_finite_differences(arch):
    det = make_detector(arch=arch, dtype="float64", seed=11)
    gen = np.random.default_rng(42)
    for _ in range(3):
        x = torch.from_numpy(gen.uniform(0, 1, size=(1, 3, 16, 16)))
        analytic = det.input_gradient_tensor(x, GradientTarget.FAKE_MINUS_REAL)[0].numpy()
        numeric = finite_difference_gradient(det, x, GradientTarget.FAKE_MINUS_REAL)
        assert max_relative_error(analytic, numeric) <= 1e-3


def test_gradient_linearity(rng):
    det = make_detector(dtype="float64")
    img = random_image(rng, height=16, width=16)
    g_diff = det.input_gradient(img, GradientTarget.FAKE_MINUS_REAL)
    g_fake = det.input_gradient(img, GradientTarget.FAKE)
    g_real = det.input_gradient(img, GradientTarget.REAL)
    assert np.abs(g_diff - (g_fake - g_real)).max() < 1e-6


def test_gradient_pass_leaves_parameters_untouched(rng):
    det = make_detector()
    before = det.parameter_arrays()
    det.input_gradient(random_image(rng, height=16, width=16),
                       GradientTarget.FAKE_MINUS_REAL)
    after = det.parameter_arrays()
    for name in before:
        assert np.array_equal(before[name], after[name])


# -- CAM ----------------------------------------------------------------------

def test_cam_matches_manual_weighted_sum(rng):
    det = make_detector()
    img = random_image(rng, height=16, width=16)
    feats = det.feature_maps(img)
    weights = det.head_weights()
    for cls in (0, 1):
        manual = np.tensordot(weights[cls], feats, axes=(0, 0))
        cam = compute_cam(det, img, cls, upsample=False)
        assert np.abs(cam - manual).max() < 1e-6


class _StubCamDetector:
    def __init__(self, feats, weights):
        self._feats = feats
        self._weights = weights

    def feature_maps(self, image):
        return self._feats

    def head_weights(self):
        return self._weights


def test_cam_single_channel_and_cancellation(rng):
    feats = rng.normal(size=(1, 4, 4))
    stub = _StubCamDetector(feats, np.array([[1.0], [1.0]]))
    img = random_image(rng, height=4, width=4)
    assert np.array_equal(compute_cam(stub, img, 0, upsample=False), feats[0])
    same = rng.normal(size=(4, 4))
    stub2 = _StubCamDetector(np.stack([same, same]), np.array([[1.0, -1.0], [0.5, 0.5]]))
    assert np.abs(compute_cam(stub2, img, 0, upsample=False)).max() == 0.0


def test_cam_upsample_reaches_input_resolution(rng):
    det = make_detector()
    img = random_image(rng, height=16, width=16)
    cam = compute_cam(det, img, 1, upsample=True)
    assert cam.shape == (16, 16)


def test_cam_unsupported_architecture(rng):
    det = Detector(arch="linear-probe", net=_LinearNet(3, 8, 8),
                   init_rng=np.random.default_rng(0))
    with pytest.raises(UnsupportedArchitectureError):
        det.feature_maps(random_image(rng))
    with pytest.raises(UnsupportedArchitectureError):
        det.head_weights()


# -- flooding loss and training -----------------------------------------------

def test_flooded_loss_values():
    b = 0.04
    assert float(flooded_loss(torch.tensor(0.74), b)) == pytest.approx(0.74)
    assert float(flooded_loss(torch.tensor(b), b)) == pytest.approx(b)
    assert float(flooded_loss(torch.tensor(0.01), b)) == pytest.approx(0.07)


def test_flooded_loss_gradient_flips_sign_at_floor():
    b = 0.04
    for ce_value, expected in ((b, 1.0), (b + 0.1, 1.0), (b - 0.02, -1.0)):
        ce = torch.tensor(ce_value, requires_grad=True)
        flooded_loss(ce, b).backward()
        assert float(ce.grad) == expected  # magnitude equals raw CE gradient


def test_train_step_loss_floor_and_replay(rng):
    def run():
        det = make_detector(seed=5)
        state = make_train_state(det, TrainConfig(batch_size=4, iterations=10))
        images = [random_image(np.random.default_rng(i), height=16, width=16)
                  for i in range(4)]
        labels = np.array([0, 0, 1, 1])
        return [train_step(det, images, labels, TrainConfig(batch_size=4), state)
                for _ in range(10)]

    first, second = run(), run()
    assert first == second  # bit-exact replay
    assert all(loss >= 0.04 for loss in first)  # flooding floor


def test_train_step_detects_divergence(rng):
    det = make_detector()
    state = make_train_state(det, TrainConfig(batch_size=2))
    with torch.no_grad():
        det.net.head.bias[0] = float("nan")
    with pytest.raises(TrainingDivergedError):
        train_step(det, [random_image(rng, height=16, width=16) for _ in range(2)],
                   np.array([0, 1]), TrainConfig(batch_size=2), state)


def test_logit_pair_argmax_invariance():
    for o_real, o_fake in ((0.3, 0.9), (1.2, -0.4), (0.0, 0.0)):
        base = LogitPair(o_real, o_fake)
        shifted = LogitPair(o_real + 17.5, o_fake + 17.5)
        assert base.predicted == shifted.predicted
    assert LogitPair(0.0, 1.0).fake_score == pytest.approx(1 / (1 + np.exp(-1.0)))


# -- checkpoints --------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    det = make_detector(arch="ref_cnn")
    path = tmp_path / "det.ckpt"
    save_checkpoint(det, path)
    back = load_checkpoint(path)
    images = [random_image(np.random.default_rng(k), height=16, width=16)
              for k in range(10)]
    for a, b in zip(det.forward(images), back.forward(images)):
        assert (a.o_real, a.o_fake) == (b.o_real, b.o_fake)
    for name, arr in det.parameter_arrays().items():
        assert np.array_equal(arr, back.parameter_arrays()[name])


def test_checkpoint_truncated_and_corrupt(tmp_path):
    det = make_detector()
    path = tmp_path / "det.ckpt"
    save_checkpoint(det, path)
    blob = path.read_bytes()
    truncated = tmp_path / "trunc.ckpt"
    truncated.write_bytes(blob[:len(blob) - 40])
    with pytest.raises(ChecksumError):
        load_checkpoint(truncated)
    corrupt = tmp_path / "corrupt.ckpt"
    flipped = bytearray(blob)
    flipped[-1] ^= 0xFF
    corrupt.write_bytes(bytes(flipped))
    with pytest.raises(ChecksumError):
        load_checkpoint(corrupt)
    not_ckpt = tmp_path / "other.bin"
    not_ckpt.write_bytes(b"hello world")
    with pytest.raises(ChecksumError):
        load_checkpoint(not_ckpt)


def test_checkpoint_cross_process_replay(tmp_path):
    det = make_detector(arch="tiny_cnn", seed=21)
    path = tmp_path / "det.ckpt"
    save_checkpoint(det, path)
    img = random_image(np.random.default_rng(77), height=16, width=16)
    expected = det.forward([img])[0]
    script = (
        "import numpy as np\n"
        "from rfmlab.detector import load_checkpoint\n"
        "from rfmlab.imaging import Image\n"
        f"det = load_checkpoint({str(path)!r})\n"
        "img = Image(np.random.default_rng(77).integers(0, 256, size=(3, 16, 16),"
        " dtype=np.uint8))\n"
        "pair = det.forward([img])[0]\n"
        "print(repr((pair.o_real, pair.o_fake)))\n"
    )
    out = subprocess.run([sys.executable, "-c", script], capture_output=True,
                         text=True, check=True)
    assert out.stdout.strip() == repr((expected.o_real, expected.o_fake))
