"""Grayscale OCT slice preprocessing and augmentation.

Images are 2-D ``uint8`` numpy arrays indexed ``img[y, x]``. Every operation
returns a new array and leaves its input untouched. Randomized operations take
an explicit :class:`numpy.random.Generator`; nothing reads global RNG state.

All intensity quantization rounds half away from zero and clamps to [0, 255].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

__all__ = [
    "AugmentSpec",
    "LinearTransformParams",
    "ParameterError",
    "affine_warp",
    "augment",
    "blacken_background",
    "gaussian_blur",
    "gaussian_kernel",
    "horizontal_flip",
    "linear_transform",
    "perspective_warp",
    "quantize",
    "random_affine",
    "random_crop",
    "random_perspective",
    "read_png",
    "write_png",
]

DEFAULT_ALPHA = 1.15
DEFAULT_BETA = -15.0
DEFAULT_BACKGROUND_THRESHOLD = 240

# slack for warp source coordinates that land a hair outside the raster
_COORD_EPS = 1e-6

_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


class ParameterError(ValueError):
    """Raised for out-of-range operation parameters."""


def _as_image(img) -> np.ndarray:
    arr = np.asarray(img)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ParameterError(f"expected a non-empty 2-D grayscale image, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        return arr
    if not np.issubdtype(arr.dtype, np.integer):
        raise ParameterError(f"image intensities must be integers, got dtype {arr.dtype}")
    if arr.min() < 0 or arr.max() > 255:
        raise ParameterError("image intensities must lie in [0, 255]")
    return arr.astype(np.uint8)


def quantize(values) -> np.ndarray:
    """Round half away from zero, clamp to [0, 255] and cast to ``uint8``."""
    values = np.asarray(values, dtype=np.float64)
    rounded = np.sign(values) * np.floor(np.abs(values) + 0.5)
    return np.clip(rounded, 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# Intensity operations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearTransformParams:
    """Contrast gain ``alpha`` and brightness offset ``beta``."""

    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise ParameterError(f"alpha must be a positive finite number, got {self.alpha}")
        if not math.isfinite(self.beta):
            raise ParameterError(f"beta must be finite, got {self.beta}")


def linear_transform(img, params: LinearTransformParams) -> np.ndarray:
    """Apply ``clamp(round(alpha * p + beta))`` to every pixel.

    The multiplication comes first, so ``beta`` is an offset in output
    intensity units. Lowering brightness (``beta < 0``) while raising contrast
    (``alpha > 1``) suppresses the low-level speckle in the vitreous without
    erasing thin bright structures.
    """
    img = _as_image(img)
    if not params.alpha > 0:
        raise ParameterError(f"alpha must be positive, got {params.alpha}")
    return quantize(params.alpha * img.astype(np.float64) + params.beta)


def blacken_background(img, threshold: int = DEFAULT_BACKGROUND_THRESHOLD) -> np.ndarray:
    """Set the bright, border-connected background to 0.

    A pixel is background when it is ``>= threshold`` and reachable from the
    image border through a 4-connected path of such pixels. Bright regions
    enclosed by darker tissue are left alone.
    """
    img = _as_image(img)
    if not 0 <= threshold <= 255:
        raise ParameterError(f"threshold must lie in [0, 255], got {threshold}")
    bright = img >= threshold
    labels, _ = ndimage.label(bright, structure=_FOUR_CONNECTED)
    border = np.concatenate([labels[0, :], labels[-1, :], labels[:, 0], labels[:, -1]])
    touching = np.unique(border[border > 0])
    out = img.copy()
    out[np.isin(labels, touching)] = 0
    return out


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps over ``[-ceil(3 sigma), ceil(3 sigma)]``."""
    if sigma < 0 or not math.isfinite(sigma):
        raise ParameterError(f"sigma must be a non-negative finite number, got {sigma}")
    if sigma == 0:
        return np.ones(1)
    radius = math.ceil(3 * sigma)
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-(offsets**2) / (2 * sigma**2))
    return taps / taps.sum()


def _convolve_axis(values: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = kernel.size // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (radius, radius)
    # "symmetric" mirrors about the pixel edge: d c b a | a b c d
    padded = np.pad(values, pad, mode="symmetric")
    n = values.shape[axis]
    out = np.zeros_like(values)
    for i, tap in enumerate(kernel):
        window = padded[i:i + n, :] if axis == 0 else padded[:, i:i + n]
        out += tap * window
    return out


def gaussian_blur(img, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with edge-mirrored borders.

    ``sigma == 0`` returns an unchanged copy.
    """
    img = _as_image(img)
    kernel = gaussian_kernel(sigma)
    if kernel.size == 1:
        return img.copy()
    values = img.astype(np.float64)
    values = _convolve_axis(values, kernel, axis=1)
    values = _convolve_axis(values, kernel, axis=0)
    return quantize(values)


# ---------------------------------------------------------------------------
# Geometric operations
# ---------------------------------------------------------------------------


def horizontal_flip(img) -> np.ndarray:
    """Mirror left to right: ``out[y, x] = img[y, width - 1 - x]``."""
    return _as_image(img)[:, ::-1].copy()


def _crop_size(length: int, fraction: float) -> int:
    return max(1, int(math.floor(length * fraction + 0.5)))


def random_crop(img, crop_fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Crop a ``round(f * w) x round(f * h)`` window at a uniform random offset.

    The horizontal offset is drawn before the vertical one.
    """
    img = _as_image(img)
    if not 0 < crop_fraction <= 1:
        raise ParameterError(f"crop_fraction must lie in (0, 1], got {crop_fraction}")
    height, width = img.shape
    cw, ch = _crop_size(width, crop_fraction), _crop_size(height, crop_fraction)
    left = int(rng.integers(0, width - cw + 1))
    top = int(rng.integers(0, height - ch + 1))
    return img[top:top + ch, left:left + cw].copy()


def _sample_bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear lookup at source coordinates; points off the raster read 0."""
    height, width = img.shape
    inside = (
        (xs >= -_COORD_EPS) & (xs <= width - 1 + _COORD_EPS)
        & (ys >= -_COORD_EPS) & (ys <= height - 1 + _COORD_EPS)
    )
    xs = np.clip(xs, 0, width - 1)
    ys = np.clip(ys, 0, height - 1)
    x0 = np.minimum(np.floor(xs).astype(np.intp), max(width - 2, 0))
    y0 = np.minimum(np.floor(ys).astype(np.intp), max(height - 2, 0))
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    fx = xs - x0
    fy = ys - y0
    src = img.astype(np.float64)
    top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
    bottom = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
    out = top * (1 - fy) + bottom * fy
    return np.where(inside, out, 0.0)


def _output_grid(shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.indices(shape, dtype=np.float64)
    return xs, ys


def _homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """3x3 projective map taking the four ``src`` points onto ``dst``."""
    rows, rhs = [], []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        rhs.extend([u, v])
    h = np.linalg.solve(np.array(rows, dtype=np.float64), np.array(rhs, dtype=np.float64))
    return np.append(h, 1.0).reshape(3, 3)


def perspective_warp(img, src_corners, dst_corners) -> np.ndarray:
    """Resample so that ``src_corners`` in the input land on ``dst_corners``.

    Corners are ``(x, y)`` pairs in pixel-center coordinates.
    """
    img = _as_image(img)
    if min(img.shape) < 2:
        # corners coincide; no projective map is defined
        return img.copy()
    # map output pixels back into the source
    inverse = _homography(np.asarray(dst_corners, float), np.asarray(src_corners, float))
    xs, ys = _output_grid(img.shape)
    denom = inverse[2, 0] * xs + inverse[2, 1] * ys + inverse[2, 2]
    sx = (inverse[0, 0] * xs + inverse[0, 1] * ys + inverse[0, 2]) / denom
    sy = (inverse[1, 0] * xs + inverse[1, 1] * ys + inverse[1, 2]) / denom
    return quantize(_sample_bilinear(img, sx, sy))


def _corners(width: int, height: int) -> np.ndarray:
    return np.array(
        [[0, 0], [width - 1, 0], [width - 1, height - 1], [0, height - 1]], dtype=np.float64
    )


def random_perspective(img, distortion: float, rng: np.random.Generator) -> np.ndarray:
    """Displace each corner by up to ``distortion * (width, height)`` and warp.

    Corners are visited top-left, top-right, bottom-right, bottom-left; for each
    the x then y displacement is drawn uniformly from ``[-d * size, d * size]``.
    """
    img = _as_image(img)
    if not 0 <= distortion <= 0.5:
        raise ParameterError(f"distortion must lie in [0, 0.5], got {distortion}")
    height, width = img.shape
    src = _corners(width, height)
    dst = src.copy()
    for corner in dst:
        corner[0] += rng.uniform(-distortion * width, distortion * width)
        corner[1] += rng.uniform(-distortion * height, distortion * height)
    return perspective_warp(img, src, dst)


def affine_warp(
    img,
    angle: float = 0.0,
    translate: tuple[float, float] = (0.0, 0.0),
    scale: float = 1.0,
) -> np.ndarray:
    """Rotate by ``angle`` degrees and scale about the image center, then shift.

    The forward map is ``dst = R(angle) * scale * (src - c) + c + translate``
    with ``R = [[cos, -sin], [sin, cos]]`` acting on ``(x, y)``. Since ``y``
    points down, a positive angle turns the picture clockwise on screen.
    """
    img = _as_image(img)
    if not scale > 0:
        raise ParameterError(f"scale must be positive, got {scale}")
    height, width = img.shape
    cx, cy = (width - 1) / 2, (height - 1) / 2
    theta = math.radians(angle)
    cos, sin = math.cos(theta), math.sin(theta)
    xs, ys = _output_grid(img.shape)
    dx = xs - cx - translate[0]
    dy = ys - cy - translate[1]
    # inverse of the rotation-scale is its transpose divided by scale
    sx = (cos * dx + sin * dy) / scale + cx
    sy = (-sin * dx + cos * dy) / scale + cy
    return quantize(_sample_bilinear(img, sx, sy))


# ---------------------------------------------------------------------------
# Augmentation config
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentSpec:
    """Knobs for :func:`augment`. The defaults leave images untouched."""

    crop_fraction: float = 1.0
    hflip_probability: float = 0.0
    blur_sigma_range: tuple[float, float] = (0.0, 0.0)
    perspective_distortion: float = 0.0
    affine_max_rotation: float = 0.0
    affine_max_translate_fraction: float = 0.0
    affine_scale_range: tuple[float, float] = (1.0, 1.0)
    background_threshold: int = DEFAULT_BACKGROUND_THRESHOLD
    seed: int = 0

    def __post_init__(self):
        def check(ok: bool, msg: str):
            if not ok:
                raise ParameterError(msg)

        check(0 < self.crop_fraction <= 1, "crop_fraction must lie in (0, 1]")
        check(0 <= self.hflip_probability <= 1, "hflip_probability must lie in [0, 1]")
        lo, hi = self.blur_sigma_range
        check(0 <= lo <= hi, "blur_sigma_range must satisfy 0 <= low <= high")
        check(0 <= self.perspective_distortion <= 0.5, "perspective_distortion must lie in [0, 0.5]")
        check(0 <= self.affine_max_rotation <= 45, "affine_max_rotation must lie in [0, 45]")
        check(
            0 <= self.affine_max_translate_fraction <= 0.3,
            "affine_max_translate_fraction must lie in [0, 0.3]",
        )
        lo, hi = self.affine_scale_range
        check(0 < lo <= hi, "affine_scale_range must satisfy 0 < low <= high")
        check(0 <= self.background_threshold <= 255, "background_threshold must lie in [0, 255]")
        check(0 <= self.seed < 2**64, "seed must be an unsigned 64-bit integer")

    @classmethod
    def from_text(cls, text: str) -> AugmentSpec:
        """Parse flat ``key = value`` lines; ``#`` starts a comment.

        Range-valued keys take two comma-separated numbers.
        """
        known = {f.name: f for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not key:
                raise ParameterError(f"line {lineno}: expected 'key = value', got {raw!r}")
            if key not in known:
                raise ParameterError(f"line {lineno}: unknown key {key!r}")
            if key in values:
                raise ParameterError(f"line {lineno}: duplicate key {key!r}")
            try:
                if key.endswith("_range"):
                    parts = [float(p) for p in value.split(",")]
                    if len(parts) != 2:
                        raise ValueError("expected two numbers")
                    values[key] = tuple(parts)
                elif key in ("seed", "background_threshold"):
                    values[key] = int(value)
                else:
                    values[key] = float(value)
            except ValueError as exc:
                raise ParameterError(f"line {lineno}: bad value for {key!r}: {exc}") from None
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> AugmentSpec:
        text = Path(path).read_text(encoding="utf-8")
        try:
            return cls.from_text(text)
        except ParameterError as exc:
            raise ParameterError(f"{path}: {exc}") from None


def random_affine(img, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    """Affine warp with angle, x shift, y shift and scale drawn in that order."""
    img = _as_image(img)
    height, width = img.shape
    rot = spec.affine_max_rotation
    shift = spec.affine_max_translate_fraction
    angle = rng.uniform(-rot, rot)
    tx = rng.uniform(-shift * width, shift * width)
    ty = rng.uniform(-shift * height, shift * height)
    scale = rng.uniform(*spec.affine_scale_range)
    return affine_warp(img, angle, (tx, ty), scale)


def augment(img, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    """Run the full augmentation chain on one slice.

    Order: background removal, crop, horizontal flip, blur, perspective,
    affine. Every random draw happens even when its range is degenerate, so
    the generator advances identically for any spec.
    """
    out = blacken_background(img, spec.background_threshold)
    out = random_crop(out, spec.crop_fraction, rng)
    if rng.random() < spec.hflip_probability:
        out = horizontal_flip(out)
    out = gaussian_blur(out, rng.uniform(*spec.blur_sigma_range))
    out = random_perspective(out, spec.perspective_distortion, rng)
    return random_affine(out, spec, rng)


# ---------------------------------------------------------------------------
# PNG I/O
# ---------------------------------------------------------------------------


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode != "L":
            raise ParameterError(f"{path}: expected an 8-bit grayscale PNG, got mode {im.mode}")
        return np.array(im, dtype=np.uint8)


def write_png(path, img) -> None:
    Image.fromarray(_as_image(img)).save(path, format="PNG")
