"""Cascaded shape regression with fern regressors over pixel-difference features.

Each stage samples a fresh pool of shape-indexed probe pairs, extracts the
difference features at the current shape estimates, and fits M ferns
sequentially to the remaining residuals.  Residuals live in the
normalized-box frame (origin at the box center, unit = box width), so a
trained model transfers across face-box sizes.

Training augments every sample with A random initializations drawn from the
other training shapes; inference runs each initialization independently and
aggregates with the coordinate-wise median.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteUpdate, ShapeMismatch
from .geometry import BoundingBox, Shape2D, load_mean_face
from .image import GrayImage
from .init_schemes import InitSet, TrainExemplar, aggregate_median, random_init
from .model_io import load_model, save_model
from .pose_solver import fit_pose_from_landmarks

MAX_PROBE_OFFSET = 0.25  # probe offsets are capped at a quarter box width


@dataclass(frozen=True)
class CascadeConfig:
    stages: int = 100
    ferns_per_stage: int = 10
    fern_depth: int = 5
    pool_size: int = 400
    shrinkage: float = 0.1
    augmentations: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.stages < 1 or self.ferns_per_stage < 1 or self.augmentations < 1:
            raise ValueError("stages, ferns_per_stage and augmentations must be >= 1")
        if not 1 <= self.fern_depth <= 20:
            raise ValueError(f"fern_depth must be in [1, 20], got {self.fern_depth}")
        if self.pool_size < self.fern_depth:
            raise ValueError("pool_size must be >= fern_depth")
        if not 0.0 < self.shrinkage <= 1.0:
            raise ValueError(f"shrinkage must be in (0, 1], got {self.shrinkage}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CascadeConfig":
        return cls(**d)


@dataclass(frozen=True)
class FeatureDef:
    """One probe point: interpolate between landmarks a and b, then offset.

    The probe lands at alpha*x_a + (1-alpha)*x_b + offset*box_width, so the
    offset is stored in normalized-box units.
    """

    a: int
    b: int
    alpha: float
    offset: tuple[float, float]

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ValueError("landmark indices must be non-negative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if math.hypot(*self.offset) > MAX_PROBE_OFFSET + 1e-12:
            raise ValueError(f"|offset| must be <= {MAX_PROBE_OFFSET}, got {self.offset}")

    def probe(self, shape: Shape2D, bb: BoundingBox) -> np.ndarray:
        p = self.alpha * shape.points[self.a] + (1.0 - self.alpha) * shape.points[self.b]
        return p + np.asarray(self.offset) * bb.w


@dataclass(frozen=True)
class FeaturePool:
    """F difference features, two probes each, packed as arrays.

    Layout: a, b are (F, 2) landmark indices, alpha is (F, 2), offset is
    (F, 2, 2); the middle axis picks the probe within the pair.
    """

    a: np.ndarray
    b: np.ndarray
    alpha: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        f = self.a.shape[0]
        if (self.a.shape != (f, 2) or self.b.shape != (f, 2)
                or self.alpha.shape != (f, 2) or self.offset.shape != (f, 2, 2)):
            raise ValueError("inconsistent pool array shapes")
        if self.a.min(initial=0) < 0 or self.b.min(initial=0) < 0:
            raise ValueError("landmark indices must be non-negative")
        if self.alpha.min(initial=0.0) < 0.0 or self.alpha.max(initial=0.0) > 1.0:
            raise ValueError("alpha values must be in [0, 1]")
        norms = np.hypot(self.offset[..., 0], self.offset[..., 1])
        if norms.max(initial=0.0) > MAX_PROBE_OFFSET + 1e-12:
            raise ValueError(f"probe offsets exceed {MAX_PROBE_OFFSET} box widths")

    def __len__(self) -> int:
        return self.a.shape[0]

    @property
    def max_index(self) -> int:
        return int(max(self.a.max(initial=0), self.b.max(initial=0)))

    @classmethod
    def from_pairs(cls, pairs) -> "FeaturePool":
        pairs = list(pairs)
        a = np.array([[p.a for p in pair] for pair in pairs], dtype=np.int32)
        b = np.array([[p.b for p in pair] for pair in pairs], dtype=np.int32)
        alpha = np.array([[p.alpha for p in pair] for pair in pairs], dtype=np.float64)
        offset = np.array([[p.offset for p in pair] for pair in pairs], dtype=np.float64)
        return cls(a, b, alpha, offset)

    def to_pairs(self) -> list[tuple[FeatureDef, FeatureDef]]:
        out = []
        for i in range(len(self)):
            pair = tuple(
                FeatureDef(int(self.a[i, j]), int(self.b[i, j]),
                           float(self.alpha[i, j]), tuple(self.offset[i, j]))
                for j in range(2))
            out.append(pair)
        return out


@dataclass(frozen=True)
class Fern:
    """Depth-D fern: bin index from D thresholded features, one update per bin.

    ``updates`` rows are the applied quantities (shrinkage already folded in),
    flattened shape deltas of width 2K in the normalized-box frame.  Bins that
    saw no training instances keep a zero row; ``counts`` records occupancy.
    """

    features: np.ndarray
    thresholds: np.ndarray
    updates: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        d = self.features.shape[0]
        if self.thresholds.shape != (d,):
            raise ValueError("thresholds must match feature count")
        if self.updates.shape[0] != 2 ** d or self.counts.shape != (2 ** d,):
            raise ValueError(f"fern of depth {d} needs {2 ** d} bins")
        if not np.all(np.isfinite(self.updates)):
            raise ValueError("fern updates must be finite")

    @property
    def depth(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class CascadeStage:
    pool: FeaturePool
    ferns: tuple[Fern, ...]

    def used_features(self) -> np.ndarray:
        return np.unique(np.concatenate([f.features for f in self.ferns]))

    def max_update(self) -> float:
        return max(float(np.abs(f.updates).max(initial=0.0)) for f in self.ferns)


@dataclass(frozen=True)
class CascadeModel:
    config: CascadeConfig
    stages: tuple[CascadeStage, ...]
    mean_shape: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.stages) != self.config.stages:
            raise ValueError(
                f"config declares {self.config.stages} stages, found {len(self.stages)}")
        k = self.k
        if k < 2 or self.mean_shape.shape != (k, 2):
            raise ValueError(f"mean shape must be (K, 2) with K >= 2, got {self.mean_shape.shape}")
        if not np.all(np.isfinite(self.mean_shape)):
            raise ValueError("mean shape must be finite")
        for t, stage in enumerate(self.stages):
            if stage.pool.max_index >= k:
                raise ValueError(f"stage {t} pool references landmark >= K={k}")
            for fern in stage.ferns:
                if fern.updates.shape[1] != 2 * k:
                    raise ValueError(f"stage {t} fern update width != 2K")
                if fern.features.min(initial=0) < 0 or fern.features.max(initial=0) >= len(stage.pool):
                    raise ValueError(f"stage {t} fern indexes outside its pool")

    @property
    def k(self) -> int:
        return self.mean_shape.shape[0]


# ---------------------------------------------------------------------------
# feature extraction


@dataclass(frozen=True)
class _ImageStack:
    """Flat concatenation of images of possibly different sizes."""

    flat: np.ndarray
    heights: np.ndarray
    widths: np.ndarray
    bases: np.ndarray

    @classmethod
    def from_images(cls, images) -> "_ImageStack":
        heights = np.array([im.height for im in images], dtype=np.intp)
        widths = np.array([im.width for im in images], dtype=np.intp)
        sizes = heights * widths
        bases = np.concatenate(([0], np.cumsum(sizes)[:-1]))
        flat = np.concatenate([im.pixels.ravel() for im in images])
        return cls(flat, heights, widths, bases)


def _probe_values(stack: _ImageStack, img_idx, xs, ys):
    """Bilinear clamp sampling of per-instance probe points.

    xs, ys: (..., ) image coordinates; img_idx broadcasts against them and
    picks each instance's image inside the stack.
    """
    w = stack.widths[img_idx]
    h = stack.heights[img_idx]
    base = stack.bases[img_idx]
    x = np.clip(xs, 0.0, w - 1.0)
    y = np.clip(ys, 0.0, h - 1.0)
    x0 = np.clip(np.floor(x), 0, np.maximum(w - 2, 0)).astype(np.intp)
    y0 = np.clip(np.floor(y), 0, np.maximum(h - 2, 0)).astype(np.intp)
    fx = x - x0
    fy = y - y0
    x1 = np.minimum(x0 + 1, w - 1)
    row0 = base + y0 * w
    row1 = base + np.minimum(y0 + 1, h - 1) * w
    v00 = stack.flat[row0 + x0]
    v01 = stack.flat[row0 + x1]
    v10 = stack.flat[row1 + x0]
    v11 = stack.flat[row1 + x1]
    return ((1 - fx) * (1 - fy) * v00 + fx * (1 - fy) * v01
            + (1 - fx) * fy * v10 + fx * fy * v11)


def _extract_batch(stack: _ImageStack, shapes, box_widths, img_idx,
                   pool: FeaturePool, subset=None, chunk: int = 2048) -> np.ndarray:
    """Difference features for N instances; returns (N, F_subset).

    shapes: (N, K, 2) image-frame landmark estimates; box_widths: (N,).
    """
    a = pool.a if subset is None else pool.a[subset]
    b = pool.b if subset is None else pool.b[subset]
    alpha = (pool.alpha if subset is None else pool.alpha[subset])[None, :, :, None]
    offset = (pool.offset if subset is None else pool.offset[subset])[None]
    n = shapes.shape[0]
    out = np.empty((n, a.shape[0]), dtype=np.float64)
    for start in range(0, n, chunk):
        sl = slice(start, min(n, start + chunk))
        s = shapes[sl]
        pos = (alpha * s[:, a, :] + (1.0 - alpha) * s[:, b, :]
               + offset * box_widths[sl][:, None, None, None])
        vals = _probe_values(stack, img_idx[sl][:, None, None],
                             pos[..., 0], pos[..., 1])
        out[sl] = vals[..., 0] - vals[..., 1]
    return out


def extract_features(image: GrayImage, shape: Shape2D, bb: BoundingBox, defs) -> np.ndarray:
    """Pixel-difference feature vector for one image at the given shape.

    ``defs`` is a FeaturePool or a sequence of (FeatureDef, FeatureDef)
    pairs; each feature is intensity(probe1) - intensity(probe2), so values
    lie in [-1, 1].  Probes outside the image clamp to the nearest pixel.
    """
    pool = defs if isinstance(defs, FeaturePool) else FeaturePool.from_pairs(defs)
    if pool.max_index >= shape.k:
        raise ShapeMismatch(f"pool references landmark >= K={shape.k}")
    stack = _ImageStack.from_images([image])
    return _extract_batch(
        stack, shape.points[None], np.array([bb.w]), np.zeros(1, dtype=np.intp), pool)[0]


# ---------------------------------------------------------------------------
# training


def _sample_pool(rng: np.random.Generator, k: int, size: int) -> FeaturePool:
    a = rng.integers(0, k, size=(size, 2))
    b = (a + 1 + rng.integers(0, k - 1, size=(size, 2))) % k
    alpha = rng.random(size=(size, 2))
    radius = MAX_PROBE_OFFSET * np.sqrt(rng.random(size=(size, 2)))
    angle = rng.random(size=(size, 2)) * 2.0 * np.pi
    offset = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=-1)
    return FeaturePool(a.astype(np.int32), b.astype(np.int32), alpha, offset)


def _bin_index(features: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """features: (N, D) -> bin in [0, 2^D); bit d set when feature >= threshold."""
    bits = features >= thresholds
    weights = 1 << np.arange(features.shape[1], dtype=np.int64)
    return bits @ weights


def _bin_sums(bins: np.ndarray, residuals: np.ndarray, n_bins: int) -> np.ndarray:
    sums = np.empty((n_bins, residuals.shape[1]))
    for col in range(residuals.shape[1]):
        sums[:, col] = np.bincount(bins, weights=residuals[:, col], minlength=n_bins)
    return sums


def _rms(residuals: np.ndarray) -> float:
    return float(np.sqrt(np.mean(residuals ** 2)))


def train_cascade(trainset, cfg: CascadeConfig, face3d=None) -> CascadeModel:
    """Fit the cascade on (image, bb, ground-truth shape) triples.

    Every sample is augmented with ``cfg.augmentations`` starting shapes
    drawn from the other training shapes via random_init.  Stages are
    trained on residuals in the normalized-box frame; each fern bin stores
    shrinkage * (mean residual of its members), zero when the bin is empty.
    The returned model's metadata carries the training trace: RMS residual
    per stage, entry 0 taken before the first stage.  Deterministic given
    cfg.seed.
    """
    triples = list(trainset)
    if not triples:
        raise ValueError("need at least 1 training sample")
    k = triples[0][2].k
    for _, _, shape in triples:
        if shape.k != k:
            raise ShapeMismatch("all training shapes must share K")
    if face3d is None:
        face3d = load_mean_face()

    exemplars = [
        TrainExemplar(f"train-{i:05d}", shape, bb,
                      fit_pose_from_landmarks(shape, face3d).pose)
        for i, (_, bb, shape) in enumerate(triples)
    ]

    ss = np.random.SeedSequence(cfg.seed)
    ss_aug, ss_stages = ss.spawn(2)
    aug_seeds = np.random.default_rng(ss_aug).integers(0, 2 ** 63, size=len(triples))
    stage_seeds = ss_stages.spawn(cfg.stages)

    stack = _ImageStack.from_images([img for img, _, _ in triples])
    shapes_list, gt_list, centers_list, widths_list, img_idx_list = [], [], [], [], []
    for i, (_, bb, shape) in enumerate(triples):
        inits = random_init(exemplars, bb, n=cfg.augmentations, seed=int(aug_seeds[i]))
        for init in inits.shapes:
            shapes_list.append(init.points)
            gt_list.append(shape.points)
            centers_list.append(bb.center)
            widths_list.append(bb.w)
            img_idx_list.append(i)
    shapes = np.array(shapes_list)
    gt = np.array(gt_list)
    centers = np.array(centers_list)
    widths = np.array(widths_list)
    img_idx = np.array(img_idx_list, dtype=np.intp)
    n = shapes.shape[0]

    # residuals in normalized-box units, flattened row-major to (N, 2K)
    residuals = ((gt - shapes) / widths[:, None, None]).reshape(n, 2 * k)
    trace = [_rms(residuals)]

    stages = []
    n_bins = 2 ** cfg.fern_depth
    for t in range(cfg.stages):
        rng = np.random.default_rng(stage_seeds[t])
        pool = _sample_pool(rng, k, cfg.pool_size)
        current = gt - residuals.reshape(n, k, 2) * widths[:, None, None]
        feats = _extract_batch(stack, current, widths, img_idx, pool)
        ferns = []
        for m in range(cfg.ferns_per_stage):
            chosen = np.sort(rng.choice(cfg.pool_size, size=cfg.fern_depth, replace=False))
            sub = feats[:, chosen]
            thresholds = rng.uniform(sub.min(axis=0), sub.max(axis=0))
            bins = _bin_index(sub, thresholds)
            counts = np.bincount(bins, minlength=n_bins)
            sums = _bin_sums(bins, residuals, n_bins)
            denom = np.maximum(counts, 1)[:, None]
            update = cfg.shrinkage * (sums / denom)
            update[counts == 0] = 0.0
            if not np.all(np.isfinite(update)):
                raise NonFiniteUpdate(f"non-finite fern update at stage {t}, fern {m}")
            residuals -= update[bins]
            ferns.append(Fern(chosen.astype(np.int32), thresholds, update, counts))
        stages.append(CascadeStage(pool, tuple(ferns)))
        trace.append(_rms(residuals))

    mean_shape = np.mean(
        [(shape.points - bb.center) / bb.w for _, bb, shape in triples], axis=0)
    metadata = {
        "seed": cfg.seed,
        "n_train": len(triples),
        "training_trace": trace,
    }
    return CascadeModel(cfg, tuple(stages), mean_shape, metadata)


# ---------------------------------------------------------------------------
# inference


def run_cascade_batch(model: CascadeModel, items) -> list[Shape2D]:
    """Run the cascade over (image, bb, InitSet) triples; one Shape2D each.

    Every initialization runs its own trajectory through all stages; items
    with more than one initialization return the coordinate-wise median of
    the per-init outputs.
    """
    items = list(items)
    k = model.k
    counts = []
    for _, _, inits in items:
        if inits.k != k:
            raise ShapeMismatch(f"init has K={inits.k}, model expects K={k}")
        counts.append(len(inits))
    if not items:
        return []

    stack = _ImageStack.from_images([img for img, _, _ in items])
    norm_list, centers_list, widths_list, img_idx_list = [], [], [], []
    for i, (_, bb, inits) in enumerate(items):
        for init in inits.shapes:
            norm_list.append((init.points - bb.center) / bb.w)
            centers_list.append(bb.center)
            widths_list.append(bb.w)
            img_idx_list.append(i)
    norm = np.array(norm_list)
    centers = np.array(centers_list)
    widths = np.array(widths_list)
    img_idx = np.array(img_idx_list, dtype=np.intp)
    n = norm.shape[0]

    for stage in model.stages:
        used = stage.used_features()
        inverse = np.zeros(len(stage.pool), dtype=np.intp)
        inverse[used] = np.arange(used.size)
        current = norm * widths[:, None, None] + centers[:, None, :]
        feats = _extract_batch(stack, current, widths, img_idx, stage.pool, subset=used)
        cap = stage.max_update()
        for fern in stage.ferns:
            bins = _bin_index(feats[:, inverse[fern.features]], fern.thresholds)
            applied = fern.updates[bins]
            # every applied delta must come from some stored bin
            assert applied.size == 0 or np.abs(applied).max() <= cap + 1e-12
            norm += applied.reshape(n, k, 2)

    final = norm * widths[:, None, None] + centers[:, None, :]
    outputs = []
    row = 0
    for n_inits in counts:
        group = final[row:row + n_inits]
        row += n_inits
        if n_inits == 1:
            outputs.append(Shape2D(group[0]))
        else:
            outputs.append(aggregate_median([Shape2D(g) for g in group]))
    return outputs


def run_cascade(model: CascadeModel, image: GrayImage, bb: BoundingBox,
                inits: InitSet) -> Shape2D:
    return run_cascade_batch(model, [(image, bb, inits)])[0]


def truncate_cascade(model: CascadeModel, t: int) -> CascadeModel:
    """Model that stops after the first t stages (for stagewise evaluation)."""
    if not 1 <= t <= len(model.stages):
        raise ValueError(f"t must be in [1, {len(model.stages)}], got {t}")
    cfg = dataclasses.replace(model.config, stages=t)
    return CascadeModel(cfg, model.stages[:t], model.mean_shape, dict(model.metadata))


# ---------------------------------------------------------------------------
# persistence


def save_cascade(path, model: CascadeModel) -> None:
    meta = {
        "config": model.config.to_dict(),
        "k": model.k,
        "metadata": model.metadata,
    }
    arrays: list[tuple[str, np.ndarray]] = [("mean_shape", model.mean_shape)]
    for t, stage in enumerate(model.stages):
        prefix = f"s{t:03d}"
        arrays.append((f"{prefix}_pool_a", stage.pool.a))
        arrays.append((f"{prefix}_pool_b", stage.pool.b))
        arrays.append((f"{prefix}_pool_alpha", stage.pool.alpha))
        arrays.append((f"{prefix}_pool_offset", stage.pool.offset))
        arrays.append((f"{prefix}_fern_features",
                       np.stack([f.features for f in stage.ferns])))
        arrays.append((f"{prefix}_fern_thresholds",
                       np.stack([f.thresholds for f in stage.ferns])))
        arrays.append((f"{prefix}_fern_updates",
                       np.stack([f.updates for f in stage.ferns])))
        arrays.append((f"{prefix}_fern_counts",
                       np.stack([f.counts for f in stage.ferns])))
    save_model(path, "cascade", meta, arrays)


def load_cascade(path) -> CascadeModel:
    meta, arrays = load_model(path, expect_kind="cascade")
    cfg = CascadeConfig.from_dict(meta["config"])
    stages = []
    for t in range(cfg.stages):
        prefix = f"s{t:03d}"
        pool = FeaturePool(arrays[f"{prefix}_pool_a"], arrays[f"{prefix}_pool_b"],
                           arrays[f"{prefix}_pool_alpha"], arrays[f"{prefix}_pool_offset"])
        ferns = tuple(
            Fern(arrays[f"{prefix}_fern_features"][m],
                 arrays[f"{prefix}_fern_thresholds"][m],
                 arrays[f"{prefix}_fern_updates"][m],
                 arrays[f"{prefix}_fern_counts"][m])
            for m in range(cfg.ferns_per_stage))
        stages.append(CascadeStage(pool, ferns))
    return CascadeModel(cfg, tuple(stages), arrays["mean_shape"], meta["metadata"])
