"""Grayscale images and bilinear sampling.

Pixel (row i, column j) is centered at continuous coordinates (x=j, y=i),
so sampling at integer coordinates returns pixel values unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyIntersection
from .geometry import BoundingBox

PAD_VALUE = 0.5


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Immutable grayscale image with intensities in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float)
        if px.ndim != 2 or px.size == 0:
            raise ValueError(f"expected a non-empty 2D array, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("pixel intensities must be finite")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("pixel intensities must lie in [0, 1]")
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def bilinear_sample(pixels: np.ndarray, points: np.ndarray, *,
                    mode: str = "clamp", fill: float = PAD_VALUE) -> np.ndarray:
    """Bilinearly interpolate ``pixels`` at continuous (x, y) ``points``.

    mode="clamp" snaps out-of-image coordinates to the border pixel;
    mode="fill" treats everything outside the image as the ``fill``
    intensity and blends across the border.
    """
    px = np.asarray(pixels, dtype=float)
    h, w = px.shape
    pts = np.asarray(points, dtype=float)
    x = pts[..., 0]
    y = pts[..., 1]
    if mode == "clamp":
        x = np.clip(x, 0.0, w - 1.0)
        y = np.clip(y, 0.0, h - 1.0)
        x0 = np.clip(np.floor(x).astype(np.intp), 0, max(w - 2, 0))
        y0 = np.clip(np.floor(y).astype(np.intp), 0, max(h - 2, 0))
        fx = x - x0
        fy = y - y0
        x1 = np.minimum(x0 + 1, w - 1)
        y1 = np.minimum(y0 + 1, h - 1)
        v00 = px[y0, x0]
        v01 = px[y0, x1]
        v10 = px[y1, x0]
        v11 = px[y1, x1]
    elif mode == "fill":
        x0 = np.floor(x).astype(np.intp)
        y0 = np.floor(y).astype(np.intp)
        fx = x - x0
        fy = y - y0
        x1 = x0 + 1
        y1 = y0 + 1

        def corner(yi, xi):
            valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            vals = px[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
            return np.where(valid, vals, fill)

        v00 = corner(y0, x0)
        v01 = corner(y0, x1)
        v10 = corner(y1, x0)
        v11 = corner(y1, x1)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    return top * (1.0 - fy) + bot * fy


def crop_resize(image: GrayImage, bb: BoundingBox, size: int = 96) -> GrayImage:
    """Crop ``bb`` out of the image and bilinearly resize to ``size`` square.

    Area of the box outside the image is padded with a constant mid-gray,
    so the output always exists as long as the box overlaps the image.
    """
    if bb.x >= image.width or bb.x + bb.w <= 0 or bb.y >= image.height or bb.y + bb.h <= 0:
        raise EmptyIntersection(
            f"box ({bb.x}, {bb.y}, {bb.w}, {bb.h}) does not overlap a "
            f"{image.width}x{image.height} image")
    # Output pixel centers map to box-interior positions; a box matching the
    # image size maps pixel centers onto pixel centers (identity resize).
    jj = bb.x + (np.arange(size) + 0.5) * (bb.w / size) - 0.5
    ii = bb.y + (np.arange(size) + 0.5) * (bb.h / size) - 0.5
    xs, ys = np.meshgrid(jj, ii)
    grid = np.stack([xs, ys], axis=-1)
    values = bilinear_sample(image.pixels, grid, mode="fill", fill=PAD_VALUE)
    return GrayImage(np.clip(values, 0.0, 1.0))
