"""1-to-1 descriptor matching and RANSAC homography outlier rejection."""

from __future__ import annotations

import dataclasses
import hashlib

import numpy as np

from .errors import DegenerateGeometry, NotEnoughMatches

DEFAULT_REPROJ_THRESH = 3.0
DEFAULT_MAX_ITERS = 1000
RANSAC_CONFIDENCE = 0.99

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint16)


@dataclasses.dataclass(frozen=True)
class Match:
    query_idx: int
    train_idx: int
    distance: int


@dataclasses.dataclass(frozen=True)
class Homography:
    """3x3 perspective map, h33-normalized, or a declared-degenerate marker."""

    matrix: np.ndarray | None

    @property
    def degenerate(self) -> bool:
        return self.matrix is None

    @staticmethod
    def identity() -> "Homography":
        return Homography(np.eye(3))

    @staticmethod
    def none() -> "Homography":
        return Homography(None)


def hamming_matrix(desc_a: np.ndarray, desc_b: np.ndarray) -> np.ndarray:
    """Pairwise Hamming distances between packed (N,32) uint8 descriptor sets."""
    if len(desc_a) == 0 or len(desc_b) == 0:
        return np.zeros((len(desc_a), len(desc_b)), dtype=np.uint16)
    xor = desc_a[:, None, :] ^ desc_b[None, :, :]
    return _POPCOUNT[xor].sum(axis=2)


def match_bruteforce(desc_a: np.ndarray, desc_b: np.ndarray) -> list[Match]:
    """Nearest-neighbor Hamming matching with cross-check (mutual nearest).

    Ties break toward the lowest train index (argmin picks the first
    occurrence). The result is 1-to-1: no index repeats on either side.
    """
    if len(desc_a) == 0 or len(desc_b) == 0:
        return []
    d = hamming_matrix(desc_a, desc_b)
    nn_ab = d.argmin(axis=1)
    nn_ba = d.argmin(axis=0)
    out = []
    for qi, ti in enumerate(nn_ab):
        if nn_ba[ti] == qi:
            out.append(Match(query_idx=qi, train_idx=int(ti), distance=int(d[qi, ti])))
    return out


# --------------------------------------------------------------------------
# Homography estimation


def _normalize_points(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    if d < 1e-12:
        return None, None
    s = np.sqrt(2.0) / d
    t = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])
    ph = np.c_[pts, np.ones(len(pts))]
    pn = (t @ ph.T).T
    return pn[:, :2], t


def _dlt(pts_a: np.ndarray, pts_b: np.ndarray) -> np.ndarray | None:
    """Direct linear transform with Hartley normalization; None if degenerate."""
    an, ta = _normalize_points(pts_a)
    bn, tb = _normalize_points(pts_b)
    if an is None or bn is None:
        return None
    n = len(an)
    x, y = an[:, 0], an[:, 1]
    u, v = bn[:, 0], bn[:, 1]
    A = np.zeros((2 * n, 9))
    A[0::2] = np.c_[x, y, np.ones(n), np.zeros(n), np.zeros(n), np.zeros(n),
                    -u * x, -u * y, -u]
    A[1::2] = np.c_[np.zeros(n), np.zeros(n), np.zeros(n), x, y, np.ones(n),
                    -v * x, -v * y, -v]
    try:
        _, sv, vt = np.linalg.svd(A)
    except np.linalg.LinAlgError:
        return None
    if n == 4 and sv[-2] < 1e-10:
        return None  # collinear / near-degenerate sample
    hn = vt[-1].reshape(3, 3)
    try:
        h = np.linalg.inv(tb) @ hn @ ta
    except np.linalg.LinAlgError:
        return None
    if abs(h[2, 2]) < 1e-12 or not np.isfinite(h).all():
        return None
    h = h / h[2, 2]
    if abs(np.linalg.det(h[:2, :2])) < 1e-12:
        return None
    return h


def _project(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    ph = np.c_[pts, np.ones(len(pts))]
    q = (h @ ph.T).T
    w = q[:, 2]
    w = np.where(np.abs(w) < 1e-12, 1e-12, w)
    return q[:, :2] / w[:, None]


def symmetric_transfer_error(
    h: np.ndarray, pts_a: np.ndarray, pts_b: np.ndarray
) -> np.ndarray:
    """Per-point sqrt of the summed forward and backward squared residuals."""
    try:
        hinv = np.linalg.inv(h)
    except np.linalg.LinAlgError:
        return np.full(len(pts_a), np.inf)
    fwd = _project(h, pts_a) - pts_b
    bwd = _project(hinv, pts_b) - pts_a
    return np.sqrt((fwd ** 2).sum(axis=1) + (bwd ** 2).sum(axis=1))


def _dlt4_batch(sa: np.ndarray, sb: np.ndarray) -> np.ndarray:
    """Vectorized 4-point DLT over (k, 4, 2) sample stacks.

    Returns (k, 3, 3) hypotheses with NaN entries where the scalar _dlt
    would have returned None; arithmetic mirrors _dlt step for step.
    """
    k = len(sa)
    bad = np.zeros(k, dtype=bool)

    def normalize(pts):
        c = pts.mean(axis=1)
        d = np.sqrt(((pts - c[:, None]) ** 2).sum(axis=2)).mean(axis=1)
        deg = d < 1e-12
        s = np.sqrt(2.0) / np.where(deg, 1.0, d)
        t = np.zeros((k, 3, 3))
        t[:, 0, 0] = s
        t[:, 1, 1] = s
        t[:, 2, 2] = 1.0
        t[:, 0, 2] = -s * c[:, 0]
        t[:, 1, 2] = -s * c[:, 1]
        ph = np.concatenate([pts, np.ones((k, 4, 1))], axis=2)
        pn = (t @ ph.transpose(0, 2, 1)).transpose(0, 2, 1)
        return pn[:, :, :2], t, deg

    an, ta, dega = normalize(sa)
    bn, tb, degb = normalize(sb)
    bad |= dega | degb
    x, y = an[:, :, 0], an[:, :, 1]
    u, v = bn[:, :, 0], bn[:, :, 1]
    one = np.ones((k, 4))
    zero = np.zeros((k, 4))
    A = np.zeros((k, 8, 9))
    A[:, 0::2] = np.stack(
        [x, y, one, zero, zero, zero, -u * x, -u * y, -u], axis=2
    )
    A[:, 1::2] = np.stack(
        [zero, zero, zero, x, y, one, -v * x, -v * y, -v], axis=2
    )
    with np.errstate(all="ignore"):
        try:
            _, sv, vt = np.linalg.svd(A)
        except np.linalg.LinAlgError:
            return np.full((k, 3, 3), np.nan)
        bad |= sv[:, -2] < 1e-10  # collinear / near-degenerate sample
        hn = vt[:, -1].reshape(k, 3, 3)
        tb_safe = np.where(bad[:, None, None], np.eye(3), tb)
        h = np.linalg.inv(tb_safe) @ hn @ ta
        bad |= np.abs(h[:, 2, 2]) < 1e-12
        bad |= ~np.isfinite(h).all(axis=(1, 2))
        h = h / np.where(bad, 1.0, h[:, 2, 2])[:, None, None]
        det2 = h[:, 0, 0] * h[:, 1, 1] - h[:, 0, 1] * h[:, 1, 0]
        bad |= np.abs(det2) < 1e-12
    h[bad] = np.nan
    return h


def _transfer_error_batch(
    hs: np.ndarray, pts_a: np.ndarray, pts_b: np.ndarray
) -> np.ndarray:
    """Symmetric transfer errors for a (k, 3, 3) hypothesis stack: (k, n),
    inf rows for NaN/singular hypotheses."""
    k, n = len(hs), len(pts_a)
    out = np.full((k, n), np.inf)
    ok = np.isfinite(hs).all(axis=(1, 2))
    if not ok.any():
        return out
    hs_ok = hs[ok]
    with np.errstate(all="ignore"):
        try:
            hinv = np.linalg.inv(hs_ok)
        except np.linalg.LinAlgError:
            # batch inv failed outright; fall back per hypothesis
            for i in np.flatnonzero(ok):
                out[i] = symmetric_transfer_error(hs[i], pts_a, pts_b)
            return out

        def project(h, pts):
            ph = np.c_[pts, np.ones(n)]
            q = (h @ ph.T).transpose(0, 2, 1)
            w = q[:, :, 2]
            w = np.where(np.abs(w) < 1e-12, 1e-12, w)
            return q[:, :, :2] / w[:, :, None]

        fwd = project(hs_ok, pts_a) - pts_b
        bwd = project(hinv, pts_b) - pts_a
        err = np.sqrt((fwd ** 2).sum(axis=2) + (bwd ** 2).sum(axis=2))
    err[~np.isfinite(err)] = np.inf
    out[ok] = err
    return out


_RANSAC_CHUNK = 128


def estimate_homography_ransac(
    pts_a: np.ndarray,
    pts_b: np.ndarray,
    reproj_thresh: float = DEFAULT_REPROJ_THRESH,
    max_iters: int = DEFAULT_MAX_ITERS,
    seed: int = 0,
) -> tuple[Homography, np.ndarray]:
    """Seeded RANSAC over 4-point DLT hypotheses.

    Inliers have symmetric transfer error < reproj_thresh; the winning
    hypothesis is re-estimated by DLT over all of its inliers. Deterministic
    for a given seed (adaptive early exit at 99% confidence). Hypotheses are
    solved and scored in chunks; the sample sequence and the accept/adapt
    logic are identical to a one-at-a-time loop (surplus hypotheses drawn
    past the adaptive stopping point are discarded unused).
    """
    pts_a = np.asarray(pts_a, dtype=np.float64)
    pts_b = np.asarray(pts_b, dtype=np.float64)
    n = len(pts_a)
    if n != len(pts_b) or n < 4:
        raise NotEnoughMatches(f"need >= 4 correspondences, got {n}")
    rng = np.random.default_rng(seed)
    best_count = 0
    best_mask = None
    needed = max_iters
    it = 0
    while it < min(max_iters, needed):
        k = min(_RANSAC_CHUNK, min(max_iters, needed) - it)
        samples = np.stack([rng.choice(n, size=4, replace=False)
                            for _ in range(k)])
        hs = _dlt4_batch(pts_a[samples], pts_b[samples])
        masks = _transfer_error_batch(hs, pts_a, pts_b) < reproj_thresh
        counts = masks.sum(axis=1)
        stop = False
        for j in range(k):
            it += 1
            count = int(counts[j])
            if count > best_count:
                best_count = count
                best_mask = masks[j]
                ratio = count / n
                if ratio >= 1.0:
                    stop = True
                    break
                # adaptive iteration budget at the target confidence
                denom = np.log(max(1.0 - ratio ** 4, 1e-15))
                needed = int(np.ceil(np.log(1.0 - RANSAC_CONFIDENCE) / denom))
                if it >= min(max_iters, needed):
                    stop = True
                    break
        if stop:
            break
    if best_mask is None or best_count < 4:
        raise DegenerateGeometry("no non-degenerate hypothesis found")
    h = _dlt(pts_a[best_mask], pts_b[best_mask])
    if h is None:
        raise DegenerateGeometry("final re-estimation degenerate")
    err = symmetric_transfer_error(h, pts_a, pts_b)
    final_mask = err < reproj_thresh
    if final_mask.sum() < 4:
        final_mask = best_mask
        h_best = _dlt(pts_a[best_mask], pts_b[best_mask])
        if h_best is not None:
            h = h_best
    return Homography(h), final_mask


def derive_seed(desc_a: np.ndarray, desc_b: np.ndarray) -> int:
    """Stable per-instance RANSAC seed from both descriptor sets."""
    hsh = hashlib.blake2b(digest_size=8)
    hsh.update(np.ascontiguousarray(desc_a).tobytes())
    hsh.update(np.ascontiguousarray(desc_b).tobytes())
    return int.from_bytes(hsh.digest(), "little")


def filter_matches(
    matches: list[Match],
    kps_a,
    kps_b,
    reproj_thresh: float = DEFAULT_REPROJ_THRESH,
    max_iters: int = DEFAULT_MAX_ITERS,
    seed: int = 0,
) -> tuple[list[Match], Homography]:
    """RANSAC-inlier subset of matches plus the fitted homography.

    Below 4 matches this degrades gracefully to (no inliers, degenerate
    homography); similarity then evaluates to 0 downstream.
    """
    if len(matches) < 4:
        return [], Homography.none()
    pts_a = np.array([(kps_a[m.query_idx].x, kps_a[m.query_idx].y) for m in matches])
    pts_b = np.array([(kps_b[m.train_idx].x, kps_b[m.train_idx].y) for m in matches])
    try:
        hom, mask = estimate_homography_ransac(
            pts_a, pts_b, reproj_thresh, max_iters, seed
        )
    except (NotEnoughMatches, DegenerateGeometry):
        return [], Homography.none()
    inliers = [m for m, keep in zip(matches, mask) if keep]
    return inliers, hom
