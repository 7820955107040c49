"""Keypoint detection and description, plus the Canny edge detector.

FAST-9 corners over a scale pyramid, Harris ranking, intensity-centroid
orientation, and steered 256-bit binary descriptors sampled from a frozen
pattern shipped as package data (data/brief_pattern.bin: 256 records of four
signed bytes x1,y1,x2,y2).
"""

from __future__ import annotations

import dataclasses
import importlib.resources

import numpy as np
from scipy import ndimage

from .errors import DegenerateImage, KeypointNearBorder
from .imgcore import GrayImage, build_pyramid, gaussian_blur, max_feasible_levels

# Defaults exposed in config; canonical ORB values.
DEFAULT_MAX_KEYPOINTS = 500
DEFAULT_FAST_THRESHOLD = 20
DEFAULT_N_LEVELS = 8
DEFAULT_SCALE_FACTOR = 1.2
DEFAULT_CANNY_LOW = 50.0
DEFAULT_CANNY_HIGH = 150.0

PATCH_SIZE = 31          # descriptor patch diameter at the keypoint's level
ORIENTATION_RADIUS = 15
# Pattern offsets are clipped to [-12, 12]; a rotated offset never exceeds
# ceil(12 * sqrt(2)) = 17, so 18 pixels of border suffice for description and
# orientation alike. We keep 2 extra pixels of slack.
BORDER = 20

HARRIS_K = 0.04

# Bresenham circle of radius 3, clockwise from 12 o'clock: (dx, dy).
CIRCLE_OFFSETS = np.array(
    [
        (0, -3), (1, -3), (2, -2), (3, -1),
        (3, 0), (3, 1), (2, 2), (1, 3),
        (0, 3), (-1, 3), (-2, 2), (-3, 1),
        (-3, 0), (-3, -1), (-2, -2), (-1, -3),
    ],
    dtype=np.int64,
)
FAST_ARC = 9


@dataclasses.dataclass(frozen=True)
class Keypoint:
    """Oriented scale-space corner in level-0 coordinates."""

    x: float
    y: float
    octave: int = 0
    size: float = float(PATCH_SIZE)
    angle: float = 0.0
    response: float = 0.0


@dataclasses.dataclass(frozen=True)
class EdgeMap:
    """Boolean per-pixel edge mask matching the source dimensions."""

    edges: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "edges", np.asarray(self.edges, dtype=bool))

    @property
    def width(self) -> int:
        return self.edges.shape[1]

    @property
    def height(self) -> int:
        return self.edges.shape[0]

    def count(self) -> int:
        return int(self.edges.sum())


def _load_pattern() -> np.ndarray:
    raw = (
        importlib.resources.files("trinketauth")
        .joinpath("data/brief_pattern.bin")
        .read_bytes()
    )
    pat = np.frombuffer(raw, dtype=np.int8).reshape(256, 4).astype(np.int64)
    return pat


_PATTERN = _load_pattern()

# Pre-rotated integer patterns for the 30 quantized orientations (12 degrees
# per bin), shape (30, 256, 4).
def _rotated_patterns() -> np.ndarray:
    out = np.empty((30, 256, 4), dtype=np.int64)
    for b in range(30):
        a = np.deg2rad(b * 12.0)
        ca, sa = np.cos(a), np.sin(a)
        x1, y1, x2, y2 = (_PATTERN[:, i].astype(np.float64) for i in range(4))
        out[b, :, 0] = np.round(ca * x1 - sa * y1)
        out[b, :, 1] = np.round(sa * x1 + ca * y1)
        out[b, :, 2] = np.round(ca * x2 - sa * y2)
        out[b, :, 3] = np.round(sa * x2 + ca * y2)
    return out


_ROTATED = _rotated_patterns()


# --------------------------------------------------------------------------
# FAST


def fast_corner_mask(img: GrayImage, threshold: int) -> np.ndarray:
    """Boolean mask of FAST-9 corners, before non-maximum suppression.

    A pixel is a corner when at least 9 contiguous pixels on its 16-pixel
    circle are all brighter than center + threshold or all darker than
    center - threshold. Pixels whose circle leaves the image are never
    corners.
    """
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    if img.width < 7 or img.height < 7:
        raise DegenerateImage("image smaller than 7x7")
    px = img.as_float()
    h, w = px.shape
    center = px
    hi = center + threshold
    lo = center - threshold
    brighter = np.zeros((16, h, w), dtype=bool)
    darker = np.zeros((16, h, w), dtype=bool)
    for k, (dx, dy) in enumerate(CIRCLE_OFFSETS):
        shifted = np.full((h, w), np.nan)
        ys = slice(max(dy, 0), h + min(dy, 0))
        xs = slice(max(dx, 0), w + min(dx, 0))
        yd = slice(max(-dy, 0), h + min(-dy, 0))
        xd = slice(max(-dx, 0), w + min(-dx, 0))
        shifted[yd, xd] = px[ys, xs]
        with np.errstate(invalid="ignore"):
            brighter[k] = shifted > hi
            darker[k] = shifted < lo
    mask = np.zeros((h, w), dtype=bool)
    bright_wrap = np.concatenate([brighter, brighter[: FAST_ARC - 1]], axis=0)
    dark_wrap = np.concatenate([darker, darker[: FAST_ARC - 1]], axis=0)
    for k in range(16):
        mask |= bright_wrap[k : k + FAST_ARC].all(axis=0)
        mask |= dark_wrap[k : k + FAST_ARC].all(axis=0)
    # Border pixels can never satisfy the full-circle requirement (NaN
    # comparisons are False), but make it explicit.
    mask[:3, :] = False
    mask[-3:, :] = False
    mask[:, :3] = False
    mask[:, -3:] = False
    return mask


def harris_response(img: GrayImage) -> np.ndarray:
    """Harris corner measure over the full image (7x7 block window)."""
    px = img.as_float()
    ix = ndimage.sobel(px, axis=1, mode="reflect")
    iy = ndimage.sobel(px, axis=0, mode="reflect")
    sxx = ndimage.uniform_filter(ix * ix, size=7, mode="reflect")
    syy = ndimage.uniform_filter(iy * iy, size=7, mode="reflect")
    sxy = ndimage.uniform_filter(ix * iy, size=7, mode="reflect")
    det = sxx * syy - sxy * sxy
    tr = sxx + syy
    return det - HARRIS_K * tr * tr


def detect_fast(
    img: GrayImage, threshold: int = DEFAULT_FAST_THRESHOLD
) -> list[Keypoint]:
    """FAST-9 corners with Harris responses and 3x3 non-maximum suppression."""
    mask = fast_corner_mask(img, threshold)
    if not mask.any():
        return []
    harris = harris_response(img)
    scored = np.where(mask, harris, -np.inf)
    local_max = ndimage.maximum_filter(scored, size=3, mode="constant", cval=-np.inf)
    keep = mask & (scored >= local_max)
    ys, xs = np.nonzero(keep)
    return [
        Keypoint(x=float(x), y=float(y), response=float(max(harris[y, x], 0.0)))
        for y, x in zip(ys, xs)
    ]


# --------------------------------------------------------------------------
# Orientation and description


def _patch_moments_angle(px: np.ndarray, cx: int, cy: int) -> float:
    r = ORIENTATION_RADIUS
    ys, xs = np.mgrid[-r : r + 1, -r : r + 1]
    circ = (xs * xs + ys * ys) <= r * r
    patch = px[cy - r : cy + r + 1, cx - r : cx + r + 1]
    m10 = float((xs * patch)[circ].sum())
    m01 = float((ys * patch)[circ].sum())
    if m10 == 0.0 and m01 == 0.0:
        return 0.0
    ang = np.rad2deg(np.arctan2(m01, m10))
    return float(ang % 360.0)


def compute_orientation(img: GrayImage, kp: Keypoint) -> float:
    """Intensity-centroid orientation in degrees [0, 360)."""
    cx, cy = int(round(kp.x)), int(round(kp.y))
    r = ORIENTATION_RADIUS
    if cx - r < 0 or cy - r < 0 or cx + r >= img.width or cy + r >= img.height:
        raise KeypointNearBorder(f"orientation patch out of bounds at ({cx},{cy})")
    return _patch_moments_angle(img.as_float(), cx, cy)


def describe(img: GrayImage, kp: Keypoint, *, _smoothed: np.ndarray | None = None) -> np.ndarray:
    """Steered 256-bit descriptor, packed to 32 bytes.

    The image is expected pre-smoothed (Gaussian, sigma 2); pass the raw image
    and smoothing is applied here.
    """
    px = _smoothed if _smoothed is not None else gaussian_blur(img.as_float(), 2.0)
    cx, cy = int(round(kp.x)), int(round(kp.y))
    h, w = px.shape
    b = BORDER - 2  # 18: the actual reach of a rotated pattern offset
    if cx - b < 0 or cy - b < 0 or cx + b >= w or cy + b >= h:
        raise KeypointNearBorder(f"descriptor patch out of bounds at ({cx},{cy})")
    bin_idx = int(round(kp.angle / 12.0)) % 30
    pat = _ROTATED[bin_idx]
    i1 = px[cy + pat[:, 1], cx + pat[:, 0]]
    i2 = px[cy + pat[:, 3], cx + pat[:, 2]]
    bits = (i1 < i2).astype(np.uint8)
    return np.packbits(bits)


# --------------------------------------------------------------------------
# Full ORB pipeline


def orb_detect_and_compute(
    img: GrayImage,
    max_kp: int = DEFAULT_MAX_KEYPOINTS,
    threshold: int = DEFAULT_FAST_THRESHOLD,
    n_levels: int = DEFAULT_N_LEVELS,
    scale_factor: float = DEFAULT_SCALE_FACTOR,
) -> tuple[list[Keypoint], np.ndarray]:
    """Detect up to max_kp oriented keypoints and their descriptors.

    Returns (keypoints, descriptors) with descriptors as a (N, 32) uint8
    array; keypoint i pairs with row i. An empty result is valid.
    """
    if max_kp < 1:
        raise ValueError("max_kp must be >= 1")
    feasible = max_feasible_levels(img, n_levels, scale_factor)
    if feasible == 0:
        return [], np.zeros((0, 32), dtype=np.uint8)
    pyr = build_pyramid(img, feasible, scale_factor)

    kps: list[Keypoint] = []
    descs: list[np.ndarray] = []
    for lvl, level_img in enumerate(pyr.levels):
        lw, lh = level_img.width, level_img.height
        if lw <= 2 * BORDER or lh <= 2 * BORDER:
            continue
        mask = fast_corner_mask(level_img, threshold)
        mask[:BORDER, :] = False
        mask[-BORDER:, :] = False
        mask[:, :BORDER] = False
        mask[:, -BORDER:] = False
        if not mask.any():
            continue
        harris = harris_response(level_img)
        scored = np.where(mask, harris, -np.inf)
        local_max = ndimage.maximum_filter(
            scored, size=3, mode="constant", cval=-np.inf
        )
        keep = mask & (scored >= local_max)
        ys, xs = np.nonzero(keep)
        if len(ys) == 0:
            continue
        px = level_img.as_float()
        smoothed = gaussian_blur(px, 2.0)
        s = pyr.scale(lvl)
        for y, x in zip(ys, xs):
            angle = _patch_moments_angle(px, x, y)
            kp = Keypoint(
                x=float(x * s),
                y=float(y * s),
                octave=lvl,
                size=float(PATCH_SIZE * s),
                angle=angle,
                response=float(max(harris[y, x], 0.0)),
            )
            descs.append(
                describe(level_img, Keypoint(x=float(x), y=float(y), angle=angle),
                         _smoothed=smoothed)
            )
            kps.append(kp)

    if not kps:
        return [], np.zeros((0, 32), dtype=np.uint8)
    order = sorted(range(len(kps)), key=lambda i: (-kps[i].response, i))[:max_kp]
    kps_out = [kps[i] for i in order]
    desc_out = np.stack([descs[i] for i in order])
    return kps_out, desc_out


# --------------------------------------------------------------------------
# Canny


def canny(
    img: GrayImage,
    low: float = DEFAULT_CANNY_LOW,
    high: float = DEFAULT_CANNY_HIGH,
) -> EdgeMap:
    """Canny edges: Gaussian (sigma 1.4), Sobel, directional NMS, hysteresis.

    Non-maximum suppression quantizes the gradient direction to 4 bins and
    keeps a pixel when its magnitude is strictly greater than the previous
    neighbor along the direction and >= the next one, so 2-pixel plateaus thin
    to a single pixel.
    """
    if not (0 < low < high):
        raise ValueError("need 0 < low < high")
    px = gaussian_blur(img.as_float(), 1.4)
    gx = ndimage.sobel(px, axis=1, mode="reflect")
    gy = ndimage.sobel(px, axis=0, mode="reflect")
    mag = np.hypot(gx, gy)
    h, w = mag.shape

    ang = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    # Direction bins: 0 = horizontal gradient (compare left/right),
    # 1 = diagonal down-right, 2 = vertical gradient, 3 = diagonal down-left.
    dbin = np.zeros((h, w), dtype=np.int8)
    dbin[(ang >= 22.5) & (ang < 67.5)] = 1
    dbin[(ang >= 67.5) & (ang < 112.5)] = 2
    dbin[(ang >= 112.5) & (ang < 157.5)] = 3

    pad = np.pad(mag, 1, mode="constant")
    # neighbor offsets per bin: (prev, next) along the gradient direction
    steps = {0: ((0, -1), (0, 1)), 1: ((-1, -1), (1, 1)),
             2: ((-1, 0), (1, 0)), 3: ((-1, 1), (1, -1))}
    nms = np.zeros((h, w), dtype=bool)
    yy, xx = np.mgrid[0:h, 0:w]
    for b, ((py, pxo), (ny, nxo)) in steps.items():
        sel = dbin == b
        prev = pad[yy + 1 + py, xx + 1 + pxo]
        nxt = pad[yy + 1 + ny, xx + 1 + nxo]
        nms |= sel & (mag > prev) & (mag >= nxt)

    strong = nms & (mag > high)
    weak = nms & (mag > low)
    if not strong.any():
        return EdgeMap(np.zeros((h, w), dtype=bool))
    labels, _ = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    keep = np.unique(labels[strong])
    edges = np.isin(labels, keep) & weak
    return EdgeMap(edges)
