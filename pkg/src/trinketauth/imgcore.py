"""Pixel-level primitives: decode/encode, grayscale, smoothing, pyramids, cropping.

Everything here is deterministic and pure; images are immutable after
construction so they can be shared freely between threads.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import CropOutOfBounds, DegenerateImage, PyramidTooDeep

# A 31x31 descriptor patch (plus padding) must be definable at the coarsest
# usable pyramid level.
MIN_PYRAMID_DIM = 16

# Canonical processing size adopted for candidate and reference images
# (width, height).
CANONICAL_WIDTH = 270
CANONICAL_HEIGHT = 312


@dataclasses.dataclass(frozen=True)
class GrayImage:
    """8-bit luminance raster, row-major, shape (height, width)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] == 0 or px.shape[1] == 0:
            raise DegenerateImage(f"expected non-empty 2-D raster, got shape {px.shape}")
        if px.dtype != np.uint8:
            if px.min() < 0 or px.max() > 255:
                raise DegenerateImage("luminance values outside [0, 255]")
            px = px.astype(np.uint8)
        px = px.copy()
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def as_float(self) -> np.ndarray:
        return self.pixels.astype(np.float64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.all(self.pixels == other.pixels)
        )


@dataclasses.dataclass(frozen=True)
class Pyramid:
    """Ordered scale-space levels; level 0 is the unmodified source."""

    levels: tuple
    scale_factor: float

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def scale(self, level: int) -> float:
        """Multiplier mapping level coordinates back to level-0 coordinates."""
        return self.scale_factor ** level


def to_grayscale(rgb: np.ndarray) -> GrayImage:
    """Convert an RGB raster to luminance (ITU-R 601 weights)."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] < 3 or rgb.shape[0] == 0 or rgb.shape[1] == 0:
        raise DegenerateImage(f"expected HxWx3 raster, got shape {rgb.shape}")
    r = rgb[..., 0].astype(np.float64)
    g = rgb[..., 1].astype(np.float64)
    b = rgb[..., 2].astype(np.float64)
    lum = np.round(0.299 * r + 0.587 * g + 0.114 * b)
    return GrayImage(np.clip(lum, 0, 255).astype(np.uint8))


def crop_center(img: GrayImage, w: int, h: int) -> GrayImage:
    """Centered w x h sub-raster; offsets are floor((dim - target) / 2)."""
    if w > img.width or h > img.height or w <= 0 or h <= 0:
        raise CropOutOfBounds(
            f"cannot crop {img.width}x{img.height} to {w}x{h}"
        )
    x0 = (img.width - w) // 2
    y0 = (img.height - h) // 2
    return GrayImage(img.pixels[y0:y0 + h, x0:x0 + w])


def gaussian_blur(pixels: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian smoothing on a float array (reflect boundary)."""
    if sigma <= 0:
        return pixels.astype(np.float64)
    return ndimage.gaussian_filter(pixels.astype(np.float64), sigma, mode="reflect")


def _resize_bilinear(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    in_h, in_w = pixels.shape
    sy = in_h / out_h
    sx = in_w / out_w
    ys = (np.arange(out_h) + 0.5) * sy - 0.5
    xs = (np.arange(out_w) + 0.5) * sx - 0.5
    grid = np.meshgrid(ys, xs, indexing="ij")
    return ndimage.map_coordinates(
        pixels.astype(np.float64), grid, order=1, mode="nearest"
    )


def build_pyramid(img: GrayImage, n_levels: int, scale_factor: float) -> Pyramid:
    """Scale pyramid with Gaussian pre-blur and bilinear downsampling.

    Raises PyramidTooDeep if any level would fall below 16x16; truncation is
    deliberately not performed, the caller must reduce n_levels.
    """
    if n_levels < 1:
        raise ValueError("n_levels must be >= 1")
    if scale_factor <= 1:
        raise ValueError("scale_factor must be > 1")
    dims = []
    for i in range(n_levels):
        s = scale_factor ** i
        w = int(img.width / s)
        h = int(img.height / s)
        if w < MIN_PYRAMID_DIM or h < MIN_PYRAMID_DIM:
            raise PyramidTooDeep(
                f"level {i} would be {w}x{h}, below {MIN_PYRAMID_DIM}x{MIN_PYRAMID_DIM}"
            )
        dims.append((h, w))

    levels = [img]
    src = img.as_float()
    for i in range(1, n_levels):
        s = scale_factor ** i
        # Anti-alias blur proportional to the total downscale step.
        sigma = 0.6 * np.sqrt(max(s * s - 1.0, 0.0))
        blurred = gaussian_blur(src, sigma)
        h, w = dims[i]
        small = _resize_bilinear(blurred, h, w)
        levels.append(GrayImage(np.clip(np.round(small), 0, 255).astype(np.uint8)))
    return Pyramid(levels=tuple(levels), scale_factor=float(scale_factor))


def max_feasible_levels(img: GrayImage, n_levels: int, scale_factor: float) -> int:
    """Largest level count <= n_levels whose coarsest level stays >= 16x16."""
    n = 0
    for i in range(n_levels):
        s = scale_factor ** i
        if int(img.width / s) < MIN_PYRAMID_DIM or int(img.height / s) < MIN_PYRAMID_DIM:
            break
        n += 1
    return n


# --------------------------------------------------------------------------
# File I/O: PNG and binary PGM (P5) only.


def load_image(path) -> GrayImage:
    """Load a PNG or binary PGM file as grayscale."""
    path = Path(path)
    data = path.read_bytes()
    return decode_image(data)


def decode_image(data: bytes) -> GrayImage:
    """Decode PNG or binary PGM bytes as grayscale."""
    if data[:2] == b"P5":
        return _decode_pgm(data)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        import io

        with Image.open(io.BytesIO(data)) as im:
            if im.mode in ("L", "I;16"):
                arr = np.asarray(im.convert("L"))
                return GrayImage(arr)
            arr = np.asarray(im.convert("RGB"))
            return to_grayscale(arr)
    raise DegenerateImage("unsupported image format (PNG and PGM P5 only)")


def _decode_pgm(data: bytes) -> GrayImage:
    # P5 header: magic, width, height, maxval, then raw bytes. Comments start
    # with '#'.
    tokens = []
    i = 2
    while len(tokens) < 3:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(data) and not data[i:i + 1].isspace():
            i += 1
        tokens.append(data[start:i])
    i += 1  # single whitespace after maxval
    w, h, maxval = (int(t) for t in tokens)
    if maxval > 255:
        raise DegenerateImage("16-bit PGM not supported")
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=i)
    return GrayImage(raster.reshape(h, w))


def encode_pgm(img: GrayImage) -> bytes:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.tobytes()


def save_pgm(img: GrayImage, path) -> None:
    Path(path).write_bytes(encode_pgm(img))


def encode_png(img: GrayImage) -> bytes:
    import io

    buf = io.BytesIO()
    Image.fromarray(img.pixels, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def save_png(img: GrayImage, path) -> None:
    Path(path).write_bytes(encode_png(img))
