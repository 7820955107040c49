"""Image-pair similarity, reference-set statistics and classifier features.

Sim(C, R) is the ratio of RANSAC-inlier matches to the keypoint count of the
candidate C. A ReferenceSet caches the full directed pairwise similarity
matrix; the template is the member with the highest summed similarity from
the other members ("closest to the center").
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import keypoints as kpmod
from .errors import ReferenceSetTooSmall
from .imgcore import GrayImage
from .keypoints import Keypoint, canny, orb_detect_and_compute
from .matching import (
    DEFAULT_MAX_ITERS,
    DEFAULT_REPROJ_THRESH,
    Homography,
    Match,
    derive_seed,
    filter_matches,
    match_bruteforce,
    symmetric_transfer_error,
)


def spread_from_centroid(points: np.ndarray) -> float:
    """Mean Euclidean distance of points to their centroid; 0 when empty."""
    if len(points) == 0:
        return 0.0
    pts = np.asarray(points, dtype=np.float64)
    c = pts.mean(axis=0)
    return float(np.sqrt(((pts - c) ** 2).sum(axis=1)).mean())


@dataclasses.dataclass(frozen=True)
class ProcessedImage:
    """A decoded image reduced to keypoints, descriptors and quality stats."""

    image_id: str
    keypoints: tuple
    descriptors: np.ndarray
    kp_cnt: int
    dtc_kp: float
    white_cnt: int
    dtc_white: float

    def kp_xy(self) -> np.ndarray:
        if not self.keypoints:
            return np.zeros((0, 2))
        return np.array([(kp.x, kp.y) for kp in self.keypoints])


def process_image(
    img: GrayImage,
    image_id: str = "",
    max_kp: int = kpmod.DEFAULT_MAX_KEYPOINTS,
    fast_threshold: int = kpmod.DEFAULT_FAST_THRESHOLD,
    n_levels: int = kpmod.DEFAULT_N_LEVELS,
    scale_factor: float = kpmod.DEFAULT_SCALE_FACTOR,
    canny_low: float = kpmod.DEFAULT_CANNY_LOW,
    canny_high: float = kpmod.DEFAULT_CANNY_HIGH,
) -> ProcessedImage:
    """Run keypoint extraction and edge analysis, caching the quality stats."""
    kps, desc = orb_detect_and_compute(
        img, max_kp=max_kp, threshold=fast_threshold,
        n_levels=n_levels, scale_factor=scale_factor,
    )
    em = canny(img, canny_low, canny_high)
    ys, xs = np.nonzero(em.edges)
    white_pts = np.c_[xs, ys]
    kp_xy = np.array([(kp.x, kp.y) for kp in kps]) if kps else np.zeros((0, 2))
    return ProcessedImage(
        image_id=image_id,
        keypoints=tuple(kps),
        descriptors=desc,
        kp_cnt=len(kps),
        dtc_kp=spread_from_centroid(kp_xy),
        white_cnt=int(len(white_pts)),
        dtc_white=spread_from_centroid(white_pts),
    )


@dataclasses.dataclass(frozen=True)
class PairMatchResult:
    """Everything the features need from matching one candidate to one image."""

    matches_pre: tuple
    inliers: tuple
    homography: Homography
    similarity: float
    mean_reproj_err: float
    dtc_mkp_candidate: float
    dtc_mkp_train: float


def match_pair(
    c: ProcessedImage,
    r: ProcessedImage,
    reproj_thresh: float = DEFAULT_REPROJ_THRESH,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> PairMatchResult:
    """Match candidate c against image r: brute force, cross-check, RANSAC.

    The RANSAC seed derives from both descriptor sets, so the result is a
    pure function of the two images.
    """
    matches = match_bruteforce(c.descriptors, r.descriptors)
    seed = derive_seed(c.descriptors, r.descriptors)
    inliers, hom = filter_matches(
        matches, c.keypoints, r.keypoints,
        reproj_thresh=reproj_thresh, max_iters=max_iters, seed=seed,
    )
    sim = len(inliers) / c.kp_cnt if c.kp_cnt > 0 else 0.0
    err = 0.0
    dtc_c = 0.0
    dtc_t = 0.0
    if inliers and not hom.degenerate:
        pa = np.array([(c.keypoints[m.query_idx].x, c.keypoints[m.query_idx].y)
                       for m in inliers])
        pb = np.array([(r.keypoints[m.train_idx].x, r.keypoints[m.train_idx].y)
                       for m in inliers])
        err = float(symmetric_transfer_error(hom.matrix, pa, pb).mean())
        dtc_c = spread_from_centroid(pa)
        dtc_t = spread_from_centroid(pb)
    return PairMatchResult(
        matches_pre=tuple(matches),
        inliers=tuple(inliers),
        homography=hom,
        similarity=sim,
        mean_reproj_err=err,
        dtc_mkp_candidate=dtc_c,
        dtc_mkp_train=dtc_t,
    )


def similarity(c: ProcessedImage, r: ProcessedImage) -> float:
    """Sim(C, R): RANSAC-inlier match count over |keypoints of C|."""
    return match_pair(c, r).similarity


@dataclasses.dataclass(frozen=True)
class ReferenceSet:
    """A user's enrolled images with cached pairwise similarity statistics."""

    images: tuple
    template_idx: int
    sim_matrix: np.ndarray  # directed: sim_matrix[i, j] = Sim(images[i], images[j])
    avg_ref_nn: float
    avg_ref_fn: float
    avg_ref_templ: float
    min_cross_sim: float
    max_cross_sim: float
    avg_cross_sim: float

    @property
    def template(self) -> ProcessedImage:
        return self.images[self.template_idx]

    def __len__(self) -> int:
        return len(self.images)


def refset_stats_from_matrix(sim: np.ndarray) -> dict:
    """Template index and aggregate similarity statistics from a directed
    pairwise matrix (diagonal ignored)."""
    n = sim.shape[0]
    off = ~np.eye(n, dtype=bool)
    col_sums = np.where(off, sim, 0.0).sum(axis=0)
    template_idx = int(np.argmax(col_sums))  # argmax breaks ties low

    nn = [max(sim[i, j] for j in range(n) if j != i) for i in range(n)]
    fn = [min(sim[i, j] for j in range(n) if j != i) for i in range(n)]
    avg_templ = float(
        np.mean([sim[i, template_idx] for i in range(n) if i != template_idx])
    )
    pair_vals = [
        (sim[i, j] + sim[j, i]) / 2.0
        for i in range(n)
        for j in range(i + 1, n)
    ]
    return {
        "template_idx": template_idx,
        "avg_ref_nn": float(np.mean(nn)),
        "avg_ref_fn": float(np.mean(fn)),
        "avg_ref_templ": avg_templ,
        "min_cross_sim": float(min(pair_vals)),
        "max_cross_sim": float(max(pair_vals)),
        "avg_cross_sim": float(np.mean(pair_vals)),
    }


def build_reference_set(images) -> ReferenceSet:
    """Compute the full pairwise Sim matrix and every cached statistic."""
    images = tuple(images)
    n = len(images)
    if n < 3:
        raise ReferenceSetTooSmall(f"need >= 3 images, got {n}")
    sim = np.eye(n)
    for i in range(n):
        for j in range(n):
            if i != j:
                sim[i, j] = similarity(images[i], images[j])
    stats = refset_stats_from_matrix(sim)
    return ReferenceSet(images=images, sim_matrix=sim, **stats)


def nn_fn_sim(c: ProcessedImage, refset: ReferenceSet) -> tuple[float, float]:
    """(nearest, farthest) neighbor similarity of c over the set members."""
    sims = [similarity(c, r) for r in refset.images]
    return max(sims), min(sims)


# --------------------------------------------------------------------------
# Feature vector

_MATCH_STAT_ATTRS = ("distance", "size", "response", "angle")
_MATCH_STAT_FUNCS = ("min", "max", "mean", "sd")

FEATURE_NAMES: tuple[str, ...] = tuple(
    ["kp_cnt_c", "kp_cnt_t", "match_cnt_preransac"]
    + [f"match_{a}_{f}" for a in _MATCH_STAT_ATTRS for f in _MATCH_STAT_FUNCS]
    + ["avg_ref_nn", "avg_ref_fn", "avg_ref_templ"]
    + ["sim_to_template_norm", "min_sim_norm", "max_sim_norm"]
    + ["homography_inlier_cnt", "homography_inlier_ratio",
       "homography_mean_reproj_err"]
    + ["dtc_mkp_c", "dtc_mkp_t", "dtc_mkp_min", "dtc_mkp_max", "dtc_mkp_mean"]
)

N_FEATURES = len(FEATURE_NAMES)


def _angle_diff(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return d if d <= 180.0 else 360.0 - d


def _match_stats(inliers, kps_c, kps_t) -> list[float]:
    if not inliers:
        return [0.0] * 16
    dist = np.array([m.distance for m in inliers], dtype=np.float64)
    size = np.array(
        [abs(kps_c[m.query_idx].size - kps_t[m.train_idx].size) for m in inliers]
    )
    resp = np.array(
        [abs(kps_c[m.query_idx].response - kps_t[m.train_idx].response)
         for m in inliers]
    )
    ang = np.array(
        [_angle_diff(kps_c[m.query_idx].angle, kps_t[m.train_idx].angle)
         for m in inliers]
    )
    out = []
    for arr in (dist, size, resp, ang):
        out += [float(arr.min()), float(arr.max()), float(arr.mean()),
                float(arr.std())]
    return out


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def extract_features(c: ProcessedImage, refset: ReferenceSet) -> np.ndarray:
    """The frozen per-instance feature row fed to the classifier.

    Degenerate cases (no keypoints, too few matches, zero divisors) yield
    documented 0 sentinels; the row never contains NaN.
    """
    results = [match_pair(c, r) for r in refset.images]
    t_res = results[refset.template_idx]
    sims = [r.similarity for r in results]
    dtc_mkps = [r.dtc_mkp_candidate for r in results]

    template = refset.template
    pre = len(t_res.matches_pre)
    inl = len(t_res.inliers)

    row = [float(c.kp_cnt), float(template.kp_cnt), float(pre)]
    row += _match_stats(t_res.inliers, c.keypoints, template.keypoints)
    row += [refset.avg_ref_nn, refset.avg_ref_fn, refset.avg_ref_templ]
    row += [
        _safe_div(t_res.similarity, refset.avg_ref_templ),
        _safe_div(min(sims), refset.avg_ref_fn),
        _safe_div(max(sims), refset.avg_ref_nn),
    ]
    row += [float(inl), _safe_div(float(inl), float(pre)), t_res.mean_reproj_err]
    row += [
        t_res.dtc_mkp_candidate,
        t_res.dtc_mkp_train,
        float(min(dtc_mkps)),
        float(max(dtc_mkps)),
        float(np.mean(dtc_mkps)),
    ]
    vec = np.asarray(row, dtype=np.float64)
    assert vec.shape == (N_FEATURES,)
    assert not np.isnan(vec).any()
    return vec


def feature_csv_header() -> str:
    return ",".join(FEATURE_NAMES) + ",label"


def feature_csv_row(vec: np.ndarray, label: int) -> str:
    return ",".join(repr(float(v)) for v in vec) + f",{int(label)}"
