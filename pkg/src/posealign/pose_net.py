"""Head-pose ConvNet: numpy forward/backward layers trained with NAG.

The regressor maps a 96x96 face crop to three angles normalized by 90
degrees.  Convolutions run as im2col matrix products; their input gradient
is the full convolution of the output gradient with spatially flipped
kernels, so no scatter-add is needed anywhere in the backward pass.
Dropout and weight init draw from explicitly passed generators, which makes
training a pure function of (dataset order, seed).
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ModelIOError, NonFiniteLoss, ShapeMismatch
from .geometry import BoundingBox, HeadPose
from .image import GrayImage, crop_resize
from .model_io import load_model, save_model

ANGLE_SCALE = 90.0


def normalize_angles(pose: HeadPose) -> np.ndarray:
    return pose.as_array() / ANGLE_SCALE


def denormalize_angles(values: np.ndarray) -> HeadPose:
    clipped = np.clip(np.asarray(values, dtype=float) * ANGLE_SCALE, -90.0, 90.0)
    return HeadPose(*clipped)


# ---------------------------------------------------------------------------
# layers


class Conv2D:
    """Valid-mode convolution, stride 1, weights (out_ch, in_ch, k, k)."""

    def __init__(self, in_ch: int, out_ch: int, ksize: int, rng: np.random.Generator,
                 need_dx: bool = True, dtype=np.float64):
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.ksize = ksize
        self.need_dx = need_dx
        std = math.sqrt(2.0 / (in_ch * ksize * ksize))
        self.w = rng.normal(0.0, std, size=(out_ch, in_ch, ksize, ksize)).astype(dtype)
        self.b = np.zeros(out_ch, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)

    params = property(lambda self: [self.w, self.b])
    grads = property(lambda self: [self.dw, self.db])

    def forward(self, x, train=False, rng=None):
        batch, ch, h, w = x.shape
        if ch != self.in_ch:
            raise ShapeMismatch(f"conv expects {self.in_ch} channels, got {ch}")
        k = self.ksize
        if h < k or w < k:
            raise ShapeMismatch(f"input {h}x{w} smaller than kernel {k}")
        windows = sliding_window_view(x, (k, k), axis=(2, 3))
        hp, wp = h - k + 1, w - k + 1
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * hp * wp, ch * k * k)
        self._cols = cols
        self._outhw = (batch, hp, wp)
        y = cols @ self.w.reshape(self.out_ch, -1).T + self.b
        return y.reshape(batch, hp, wp, self.out_ch).transpose(0, 3, 1, 2)

    def backward(self, dy):
        batch, hp, wp = self._outhw
        k = self.ksize
        dy_flat = dy.transpose(0, 2, 3, 1).reshape(-1, self.out_ch)
        self.dw[...] = (dy_flat.T @ self._cols).reshape(self.w.shape)
        self.db[...] = dy_flat.sum(axis=0)
        self._cols = None
        if not self.need_dx:
            return None
        pad = k - 1
        dyp = np.pad(dy, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        wins = sliding_window_view(dyp, (k, k), axis=(2, 3))
        h, w = hp + pad, wp + pad
        cols = wins.transpose(0, 2, 3, 1, 4, 5).reshape(batch * h * w, self.out_ch * k * k)
        wr = self.w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(self.in_ch, -1)
        dx = (cols @ wr.T).reshape(batch, h, w, self.in_ch).transpose(0, 3, 1, 2)
        return dx


class MaxPool2:
    """2x2 max pooling, stride 2; ties resolve to the first maximum."""

    params = property(lambda self: [])
    grads = property(lambda self: [])

    def forward(self, x, train=False, rng=None):
        batch, ch, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeMismatch(f"pool input {h}x{w} must have even sides")
        r = x.reshape(batch, ch, h // 2, 2, w // 2, 2)
        r = r.transpose(0, 1, 2, 4, 3, 5).reshape(batch, ch, h // 2, w // 2, 4)
        self._idx = r.argmax(axis=-1)
        self._inshape = x.shape
        return np.take_along_axis(r, self._idx[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        batch, ch, h, w = self._inshape
        dr = np.zeros((batch, ch, h // 2, w // 2, 4), dtype=dy.dtype)
        np.put_along_axis(dr, self._idx[..., None], dy[..., None], axis=-1)
        dx = dr.reshape(batch, ch, h // 2, w // 2, 2, 2)
        return dx.transpose(0, 1, 2, 4, 3, 5).reshape(batch, ch, h, w)


class ReLU:
    params = property(lambda self: [])
    grads = property(lambda self: [])

    def forward(self, x, train=False, rng=None):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class Dropout:
    """Inverted dropout; identity when not training."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    params = property(lambda self: [])
    grads = property(lambda self: [])

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("training-mode dropout requires an rng")
        keep = 1.0 - self.rate
        self._mask = (rng.random(x.shape) < keep).astype(x.dtype) / np.asarray(keep, x.dtype)
        return x * self._mask

    def backward(self, dy):
        return dy if self._mask is None else dy * self._mask


class Flatten:
    params = property(lambda self: [])
    grads = property(lambda self: [])

    def forward(self, x, train=False, rng=None):
        self._inshape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._inshape)


class Dense:
    """Affine layer, weights (out_dim, in_dim)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 gain: float = 2.0, dtype=np.float64):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.w = rng.normal(0.0, math.sqrt(gain / in_dim), size=(out_dim, in_dim)).astype(dtype)
        self.b = np.zeros(out_dim, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)

    params = property(lambda self: [self.w, self.b])
    grads = property(lambda self: [self.dw, self.db])

    def forward(self, x, train=False, rng=None):
        if x.shape[1] != self.in_dim:
            raise ShapeMismatch(f"dense expects {self.in_dim} inputs, got {x.shape[1]}")
        self._x = x
        return x @ self.w.T + self.b

    def backward(self, dy):
        self.dw[...] = dy.T @ self._x
        self.db[...] = dy.sum(axis=0)
        self._x = None
        return dy @ self.w


# ---------------------------------------------------------------------------
# network


@dataclass(frozen=True)
class PoseNetArch:
    """Shape of the regressor; all sizes checked at construction time."""

    input_size: int = 96
    conv_channels: tuple[int, ...] = (8, 16, 32)
    conv_kernels: tuple[int, ...] = (5, 3, 3)
    fc_sizes: tuple[int, ...] = (128, 64)
    dropout: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "conv_kernels", tuple(int(k) for k in self.conv_kernels))
        object.__setattr__(self, "fc_sizes", tuple(int(f) for f in self.fc_sizes))
        if len(self.conv_channels) != len(self.conv_kernels):
            raise ValueError("conv_channels and conv_kernels must have equal length")
        if not self.conv_channels or not self.fc_sizes:
            raise ValueError("need at least one conv and one fc layer")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        self.feature_size()  # validates the size arithmetic

    def feature_size(self) -> int:
        """Flattened activation size after the conv/pool stack."""
        size = self.input_size
        for k in self.conv_kernels:
            size = size - k + 1
            if size < 2 or size % 2:
                raise ValueError(f"conv/pool stack does not fit input {self.input_size}")
            size //= 2
        return self.conv_channels[-1] * size * size

    def to_dict(self) -> dict:
        return {
            "input_size": self.input_size,
            "conv_channels": list(self.conv_channels),
            "conv_kernels": list(self.conv_kernels),
            "fc_sizes": list(self.fc_sizes),
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PoseNetArch":
        return cls(
            input_size=d["input_size"],
            conv_channels=tuple(d["conv_channels"]),
            conv_kernels=tuple(d["conv_kernels"]),
            fc_sizes=tuple(d["fc_sizes"]),
            dropout=d["dropout"],
        )


class PoseNet:
    """Stacked layers with a flat parameter list for the optimizer."""

    def __init__(self, arch: PoseNetArch, seed: int = 0, dtype=np.float64):
        self.arch = arch
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
        layers: list = []
        in_ch = 1
        for i, (ch, k) in enumerate(zip(arch.conv_channels, arch.conv_kernels)):
            layers.append(Conv2D(in_ch, ch, k, rng, need_dx=i > 0, dtype=self.dtype))
            layers.append(ReLU())
            layers.append(MaxPool2())
            in_ch = ch
        layers.append(Dropout(arch.dropout))
        layers.append(Flatten())
        width = arch.feature_size()
        for fc in arch.fc_sizes:
            layers.append(Dense(width, fc, rng, dtype=self.dtype))
            layers.append(ReLU())
            layers.append(Dropout(arch.dropout))
            width = fc
        layers.append(Dense(width, 3, rng, gain=1.0, dtype=self.dtype))
        self.layers = layers

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    def gradients(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.grads]

    def set_parameters(self, values) -> None:
        params = self.parameters()
        if len(values) != len(params):
            raise ShapeMismatch(f"expected {len(params)} parameter arrays, got {len(values)}")
        for p, v in zip(params, values):
            if p.shape != v.shape:
                raise ShapeMismatch(f"parameter shape {v.shape} does not match {p.shape}")
            p[...] = v

    def forward_batch(self, x: np.ndarray, train: bool = False,
                      rng: np.random.Generator | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        size = self.arch.input_size
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != (size, size):
            raise ShapeMismatch(f"expected (B, 1, {size}, {size}) input, got {x.shape}")
        # fixed centering of [0,1] intensities; not a learned parameter
        x = x - 0.5
        for layer in self.layers:
            x = layer.forward(x, train=train, rng=rng)
        return x

    def backward_batch(self, dout: np.ndarray) -> None:
        for layer in reversed(self.layers):
            dout = layer.backward(dout)

    def loss_and_grads(self, x, targets, train: bool = False,
                       rng: np.random.Generator | None = None):
        pred = self.forward_batch(x, train=train, rng=rng)
        diff = pred - targets
        loss = float(np.mean(diff ** 2))
        self.backward_batch(2.0 * diff / diff.size)
        return loss, self.gradients()


# ---------------------------------------------------------------------------
# user-facing ops


def preprocess(image: GrayImage, bb: BoundingBox, size: int = 96) -> GrayImage:
    """Face crop for the net: box cut out of the image, resized to ``size``."""
    return crop_resize(image, bb, size=size)


def forward(net: PoseNet, image: GrayImage) -> np.ndarray:
    """Normalized pose vector for one preprocessed crop (dropout disabled)."""
    size = net.arch.input_size
    if (image.height, image.width) != (size, size):
        raise ShapeMismatch(f"expected {size}x{size} input, got {image.height}x{image.width}")
    return net.forward_batch(image.pixels[None, None, :, :], train=False)[0]


def predict_pose(net: PoseNet, image: GrayImage, bb: BoundingBox) -> HeadPose:
    return denormalize_angles(forward(net, preprocess(image, bb, net.arch.input_size)))


def predict_pose_batch(net: PoseNet, samples) -> list[HeadPose]:
    """predict_pose over many samples, batched for speed."""
    crops = [preprocess(s.image, s.bb, net.arch.input_size).pixels for s in samples]
    poses = []
    for start in range(0, len(crops), 64):
        chunk = np.stack(crops[start:start + 64])[:, None, :, :]
        out = net.forward_batch(chunk, train=False)
        poses.extend(denormalize_angles(row) for row in out)
    return poses


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainHistory:
    """Per-epoch RMSE in degrees plus the early-stop bookkeeping."""

    train_rmse: list[float] = field(default_factory=list)
    val_rmse: list[float] = field(default_factory=list)
    best_epoch: int = -1
    epochs_run: int = 0


def _stack_dataset(dataset, size: int):
    images = np.stack([img.pixels for img, _ in dataset])[:, None, :, :]
    if images.shape[2:] != (size, size):
        raise ShapeMismatch(f"expected {size}x{size} crops, got {images.shape[2:]}")
    targets = np.stack([normalize_angles(pose) for _, pose in dataset])
    return images, targets


def _eval_rmse(net: PoseNet, images, targets, batch_size: int = 64) -> float:
    sq = 0.0
    for start in range(0, len(images), batch_size):
        pred = net.forward_batch(images[start:start + batch_size], train=False)
        sq += float(np.sum((pred - targets[start:start + batch_size]) ** 2))
    return math.sqrt(sq / targets.size) * ANGLE_SCALE


def train(dataset, cfg: TrainConfig, arch: PoseNetArch | None = None,
          val_fraction: float = 0.1, dtype=np.float64):
    """Fit a PoseNet with Nesterov momentum; returns (net, history).

    The gradient is evaluated at the lookahead point theta + mu*v.  A
    seeded tail of the dataset is held out for early stopping; the weights
    from the best-validation epoch are restored before returning.
    """
    dataset = list(dataset)
    if len(dataset) < 2:
        raise ValueError("need at least 2 training samples")
    if arch is None:
        arch = PoseNetArch()
    images, targets = _stack_dataset(dataset, arch.input_size)
    images = images.astype(dtype)
    targets = targets.astype(dtype)

    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    init_seed = cfg.seed
    shuffle_rng = np.random.default_rng(seeds[1])
    dropout_rng = np.random.default_rng(seeds[2])

    n = len(dataset)
    n_val = min(max(1, int(round(val_fraction * n))), n - 1)
    perm = np.random.default_rng(seeds[0]).permutation(n)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    tr_images, tr_targets = images[train_idx], targets[train_idx]
    val_images, val_targets = images[val_idx], targets[val_idx]

    net = PoseNet(arch, seed=init_seed, dtype=dtype)
    params = net.parameters()
    velocity = [np.zeros_like(p) for p in params]

    history = TrainHistory()
    best_val = math.inf
    best_params: list[np.ndarray] | None = None
    since_best = 0

    for epoch in range(cfg.max_epochs):
        order = shuffle_rng.permutation(len(tr_images))
        sq_sum = 0.0
        for batch_no, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            for p, v in zip(params, velocity):
                p += cfg.momentum * v
            loss, grads = net.loss_and_grads(
                tr_images[idx], tr_targets[idx], train=True, rng=dropout_rng)
            if not math.isfinite(loss):
                raise NonFiniteLoss("training loss is not finite",
                                    epoch=epoch, batch=batch_no)
            for p, v, g in zip(params, velocity, grads):
                v *= cfg.momentum
                v -= cfg.learning_rate * g
                p -= cfg.learning_rate * g
            sq_sum += loss * idx.size * 3
        history.train_rmse.append(math.sqrt(sq_sum / (len(order) * 3)) * ANGLE_SCALE)
        val_rmse = _eval_rmse(net, val_images, val_targets)
        history.val_rmse.append(val_rmse)
        history.epochs_run = epoch + 1

        if val_rmse < best_val - 1e-12:
            best_val = val_rmse
            best_params = [p.copy() for p in params]
            history.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break

    if best_params is not None:
        net.set_parameters(best_params)
    return net, history


# ---------------------------------------------------------------------------
# training-set assembly


def jitter_box(bb: BoundingBox, magnitude: float, rng: np.random.Generator) -> BoundingBox:
    """Randomly shift and rescale a face box by up to ``magnitude`` of its size."""
    dx, dy = rng.uniform(-magnitude, magnitude, size=2) * (bb.w, bb.h)
    ds = 1.0 + rng.uniform(-magnitude, magnitude)
    w, h = bb.w * ds, bb.h * ds
    cx, cy = bb.center + (dx, dy)
    return BoundingBox(cx - w / 2.0, cy - h / 2.0, w, h)


def build_pose_training_set(samples, copies: int = 1, jitter: float = 0.05,
                            seed: int = 0, size: int = 96):
    """(crop, pose) pairs for train(); extra copies use jittered face boxes.

    The first copy always uses the sample's own box; further copies shift
    and rescale it, which teaches the net some robustness to detector noise.
    """
    if copies < 1:
        raise ValueError(f"copies must be >= 1, got {copies}")
    children = np.random.SeedSequence(seed).spawn(len(samples))
    pairs = []
    for sample, child in zip(samples, children):
        if sample.pose is None:
            raise ValueError(f"sample {sample.sample_id!r} has no pose")
        rng = np.random.default_rng(child)
        for copy in range(copies):
            bb = sample.bb if copy == 0 else jitter_box(sample.bb, jitter, rng)
            pairs.append((preprocess(sample.image, bb, size), sample.pose))
    return pairs


# ---------------------------------------------------------------------------
# persistence


def save_pose_net(path, net: PoseNet, extra_meta: dict | None = None) -> None:
    meta = {
        "arch": net.arch.to_dict(),
        "dtype": net.dtype.str,
    }
    if extra_meta:
        meta["extra"] = extra_meta
    arrays = [(f"param_{i:03d}", p) for i, p in enumerate(net.parameters())]
    save_model(path, "pose-net", meta, arrays)


def load_pose_net(path) -> PoseNet:
    meta, arrays = load_model(path, expect_kind="pose-net")
    net = PoseNet(PoseNetArch.from_dict(meta["arch"]), dtype=np.dtype(meta["dtype"]))
    try:
        net.set_parameters([arrays[f"param_{i:03d}"]
                            for i in range(len(net.parameters()))])
    except (KeyError, ShapeMismatch) as exc:
        raise ModelIOError(f"pose net arrays do not match declared architecture: {exc}")
    return net
