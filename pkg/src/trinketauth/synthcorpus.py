"""Procedurally rendered planar "trinkets" for desk-scale evaluation.

Each trinket is a distinct seeded texture on a planar card; views vary
rotation, scale, brightness and background. Plain and blurry negative
fixtures exercise the quality filters.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .imgcore import CANONICAL_HEIGHT, CANONICAL_WIDTH, GrayImage, gaussian_blur

TEXTURE_SIZE = 480
VIEW_ROTATION_DEG = 20.0
VIEW_SCALE_PCT = 0.15
VIEW_BRIGHTNESS_PCT = 0.25


def render_texture(seed: int, size: int = TEXTURE_SIZE) -> np.ndarray:
    """A distinct high-contrast planar texture for one trinket."""
    rng = np.random.default_rng(seed)
    base = gaussian_blur(rng.uniform(0, 255, size=(size, size)), 6.0)
    base = (base - base.min()) / (base.max() - base.min() + 1e-9)
    img = 40.0 + 120.0 * base

    # sharp geometric elements give FAST corners something to find
    for _ in range(60):
        shape = rng.integers(0, 3)
        v = rng.uniform(0, 255)
        cx, cy = rng.integers(30, size - 30, size=2)
        if shape == 0:  # rectangle
            w, h = rng.integers(8, 46, size=2)
            x0, x1 = max(cx - w // 2, 0), min(cx + w // 2, size)
            y0, y1 = max(cy - h // 2, 0), min(cy + h // 2, size)
            img[y0:y1, x0:x1] = v
        elif shape == 1:  # ellipse
            a, b = rng.integers(6, 30, size=2)
            yy, xx = np.mgrid[0:size, 0:size]
            mask = ((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2 <= 1.0
            img[mask] = v
        else:  # bar
            w = rng.integers(3, 8)
            ln = rng.integers(20, 80)
            ang = rng.uniform(0, np.pi)
            yy, xx = np.mgrid[0:size, 0:size]
            dx, dy = np.cos(ang), np.sin(ang)
            along = (xx - cx) * dx + (yy - cy) * dy
            across = -(xx - cx) * dy + (yy - cy) * dx
            img[(np.abs(along) <= ln / 2) & (np.abs(across) <= w / 2)] = v
    return np.clip(img, 0, 255)


def render_view(
    texture: np.ndarray,
    view_seed: int,
    out_w: int = CANONICAL_WIDTH,
    out_h: int = CANONICAL_HEIGHT,
) -> GrayImage:
    """One camera view of a texture: seeded rotation, scale, brightness,
    background and sensor noise."""
    rng = np.random.default_rng(view_seed)
    theta = np.deg2rad(rng.uniform(-VIEW_ROTATION_DEG, VIEW_ROTATION_DEG))
    scale = 1.0 + rng.uniform(-VIEW_SCALE_PCT, VIEW_SCALE_PCT)
    brightness = 1.0 + rng.uniform(-VIEW_BRIGHTNESS_PCT, VIEW_BRIGHTNESS_PCT)
    shift = rng.uniform(-10, 10, size=2)

    ca, sa = np.cos(theta), np.sin(theta)
    # inverse map: output pixel -> texture coordinate
    rot = np.array([[ca, -sa], [sa, ca]]) / scale
    t_in = np.array(texture.shape, dtype=np.float64) / 2.0
    t_out = np.array([out_h / 2.0, out_w / 2.0]) + shift
    offset = t_in - rot @ t_out
    bg = rng.uniform(30, 220)
    view = ndimage.affine_transform(
        texture, rot, offset=offset, output_shape=(out_h, out_w),
        order=1, mode="constant", cval=bg,
    )
    view = view * brightness
    view = view + rng.normal(0, 2.0, size=view.shape)
    return GrayImage(np.clip(np.round(view), 0, 255).astype(np.uint8))


def trinket_views(trinket_seed: int, n_views: int = 4) -> list[GrayImage]:
    tex = render_texture(trinket_seed)
    return [
        render_view(tex, view_seed=trinket_seed * 1000 + k) for k in range(n_views)
    ]


def plain_image(seed: int = 0) -> GrayImage:
    """Near-constant fixture: fails the keypoint-count filters."""
    rng = np.random.default_rng(seed)
    px = np.full((CANONICAL_HEIGHT, CANONICAL_WIDTH), 128.0)
    px += rng.normal(0, 1.0, size=px.shape)
    return GrayImage(np.clip(np.round(px), 0, 255).astype(np.uint8))


def blurry_image(seed: int = 0) -> GrayImage:
    """Heavily defocused trinket view: few keypoints, few edges."""
    tex = render_texture(seed)
    view = render_view(tex, view_seed=seed * 1000 + 7)
    px = gaussian_blur(view.as_float(), 9.0)
    return GrayImage(np.clip(np.round(px), 0, 255).astype(np.uint8))


def clutter_image(seed: int, n_patches: int = 12,
                  target_seeds=None) -> GrayImage:
    """Composite of many trinket textures: a master-image style attack input.

    With target_seeds the patches come from those trinkets' textures (an
    engineered master image against specific victims); otherwise the patch
    textures are random.
    """
    rng = np.random.default_rng(seed)
    out = np.full((CANONICAL_HEIGHT, CANONICAL_WIDTH), rng.uniform(60, 200))
    if target_seeds is not None:
        n_patches = len(target_seeds)
    for k in range(n_patches):
        if target_seeds is not None:
            tex = render_texture(int(target_seeds[k]))
            # crop from the texture center: the region the views actually show
            ph = pw = 130
            cy, cx = tex.shape[0] // 2, tex.shape[1] // 2
            src = tex[cy - ph // 2:cy + ph - ph // 2,
                      cx - pw // 2:cx + pw - pw // 2]
        else:
            tex = render_texture(int(rng.integers(10 ** 6, 10 ** 7)))
            ph = rng.integers(60, 140)
            pw = rng.integers(60, 140)
            src = tex[:ph, :pw]
        if target_seeds is not None:
            # non-overlapping 2-column grid so every victim patch survives
            col, row_i = k % 2, k // 2
            y0 = min(row_i * ph, CANONICAL_HEIGHT - ph)
            x0 = min(col * pw, CANONICAL_WIDTH - pw)
        else:
            y0 = int(rng.integers(0, CANONICAL_HEIGHT - ph))
            x0 = int(rng.integers(0, CANONICAL_WIDTH - pw))
        out[y0:y0 + ph, x0:x0 + pw] = src
    return GrayImage(np.clip(np.round(out), 0, 255).astype(np.uint8))


def distractor_image(seed: int) -> GrayImage:
    """A synthetic non-trinket attack image (texture unrelated to any corpus
    trinket)."""
    rng = np.random.default_rng(seed)
    kind = rng.integers(0, 2)
    if kind == 0:
        tex = render_texture(int(rng.integers(10 ** 8, 10 ** 9)))
        return render_view(tex, view_seed=int(rng.integers(1, 10 ** 6)))
    return clutter_image(int(rng.integers(10 ** 8, 10 ** 9)), n_patches=6)
