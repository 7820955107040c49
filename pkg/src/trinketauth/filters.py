"""Quality filters with actionable feedback.

Rule #1 rejects images the matcher is predicted to fail on (rule-based and
classifier-based variants); Rule #2 rejects candidates outside the space the
classifier was trained in. Thresholds are configurable; the defaults keep
the published values for traceability even though a from-scratch detector
shifts their scales.
"""

from __future__ import annotations

import dataclasses
import enum
import json
from pathlib import Path

import numpy as np

from . import learn
from .errors import DegenerateTrainingSet
from .imgcore import GrayImage
from .simfeat import ProcessedImage, ReferenceSet, process_image


class FeedbackCode(str, enum.Enum):
    LOW_QUALITY_OR_PLAIN = "LOW_QUALITY_OR_PLAIN"
    NON_IDENTICAL_TRINKETS = "NON_IDENTICAL_TRINKETS"
    OUT_OF_BOUNDS = "OUT_OF_BOUNDS"


FEEDBACK_MESSAGES = {
    FeedbackCode.LOW_QUALITY_OR_PLAIN:
        "The photo quality is too low or the object is too plain. "
        "Move closer, improve the lighting, and hold the camera steady.",
    FeedbackCode.NON_IDENTICAL_TRINKETS:
        "The reference photos do not show the same object. "
        "Take all photos of the same object from similar angles.",
    FeedbackCode.OUT_OF_BOUNDS:
        "This photo is outside the range the system can judge reliably. "
        "Center the object and reduce background clutter.",
}


def feedback_table() -> dict:
    """Code -> message table, the single source for client wording."""
    return {code.value: msg for code, msg in FEEDBACK_MESSAGES.items()}


def write_feedback_table(path) -> None:
    Path(path).write_text(json.dumps(feedback_table(), indent=2) + "\n")


@dataclasses.dataclass(frozen=True)
class FilterRuleConfig:
    """Thresholds for the rule-based and bounds filters (strict inequalities)."""

    ref_kp_cnt_min: float = 20.0
    ref_dtc_kp_min: float = 30.0
    ref_avg_cross_sim_min: float = 0.6
    cand_kp_cnt_min: float = 20.0
    cand_dtc_kp_max: float = 44600.0
    cand_white_cnt_max: float = 22400.0
    cand_dtc_white_max: float = 160.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) <= 0:
                raise ValueError(f"{f.name} must be positive")

    @staticmethod
    def from_file(path) -> "FilterRuleConfig":
        """Flat key=value file; unknown keys are ignored."""
        known = {f.name for f in dataclasses.fields(FilterRuleConfig)}
        kwargs = {}
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#") or "=" not in line:
                continue
            key, _, val = line.partition("=")
            key = key.strip()
            if key in known:
                kwargs[key] = float(val.strip())
        return FilterRuleConfig(**kwargs)


@dataclasses.dataclass(frozen=True)
class FilterReason:
    rule_id: str
    code: FeedbackCode

    @property
    def message(self) -> str:
        return FEEDBACK_MESSAGES[self.code]


@dataclasses.dataclass(frozen=True)
class FilterVerdict:
    reasons: tuple

    @property
    def accepted(self) -> bool:
        return not self.reasons

    @property
    def codes(self) -> list:
        return [r.code for r in self.reasons]


def _verdict(reasons) -> FilterVerdict:
    return FilterVerdict(reasons=tuple(reasons))


ACCEPT = _verdict(())


def compute_filter_stats(img: GrayImage, **process_kwargs):
    """(kp_cnt, dtc_kp, white_cnt, dtc_white) for a raw image."""
    p = process_image(img, **process_kwargs)
    return p.kp_cnt, p.dtc_kp, p.white_cnt, p.dtc_white


def rbfilter_reference(
    refset: ReferenceSet, cfg: FilterRuleConfig = FilterRuleConfig()
) -> FilterVerdict:
    """Reference-set rules: template keypoint count and spread, cross
    similarity. All comparisons are strict."""
    t = refset.template
    reasons = []
    if t.kp_cnt < cfg.ref_kp_cnt_min:
        reasons.append(FilterReason("ref_kp_cnt", FeedbackCode.LOW_QUALITY_OR_PLAIN))
    if t.dtc_kp < cfg.ref_dtc_kp_min:
        reasons.append(FilterReason("ref_dtc_kp", FeedbackCode.LOW_QUALITY_OR_PLAIN))
    if refset.avg_cross_sim < cfg.ref_avg_cross_sim_min:
        reasons.append(
            FilterReason("ref_avg_cross_sim", FeedbackCode.NON_IDENTICAL_TRINKETS)
        )
    return _verdict(reasons)


def rbfilter_candidate(
    stats, cfg: FilterRuleConfig = FilterRuleConfig()
) -> FilterVerdict:
    """Candidate rule: keypoint count below the minimum."""
    kp_cnt = stats[0] if isinstance(stats, (tuple, list)) else stats.kp_cnt
    if kp_cnt < cfg.cand_kp_cnt_min:
        return _verdict(
            [FilterReason("cand_kp_cnt", FeedbackCode.LOW_QUALITY_OR_PLAIN)]
        )
    return ACCEPT


def ubounds_candidate(
    stats, cfg: FilterRuleConfig = FilterRuleConfig()
) -> FilterVerdict:
    """Universe-boundary rules: reject candidates outside the trained space."""
    if isinstance(stats, (tuple, list)):
        _, dtc_kp, white_cnt, dtc_white = stats
    else:
        dtc_kp, white_cnt, dtc_white = stats.dtc_kp, stats.white_cnt, stats.dtc_white
    reasons = []
    if dtc_kp > cfg.cand_dtc_kp_max:
        reasons.append(FilterReason("cand_dtc_kp", FeedbackCode.OUT_OF_BOUNDS))
    if white_cnt > cfg.cand_white_cnt_max:
        reasons.append(FilterReason("cand_white_cnt", FeedbackCode.OUT_OF_BOUNDS))
    if dtc_white > cfg.cand_dtc_white_max:
        reasons.append(FilterReason("cand_dtc_white", FeedbackCode.OUT_OF_BOUNDS))
    return _verdict(reasons)


# --------------------------------------------------------------------------
# Classifier-based filter


CBFILTER_FEATURE_NAMES: tuple[str, ...] = tuple(
    [f"templ_{s}" for s in ("kp_cnt", "dtc_kp", "white_cnt", "dtc_white")]
    + [f"{agg}_{s}" for s in ("kp_cnt", "dtc_kp", "white_cnt", "dtc_white")
       for agg in ("min", "max")]
    + ["min_cross_sim", "max_cross_sim", "avg_cross_sim"]
)


def cbfilter_features(refset: ReferenceSet) -> np.ndarray:
    """Fixed 15-value row describing a reference set's quality."""
    t = refset.template
    row = [float(t.kp_cnt), t.dtc_kp, float(t.white_cnt), t.dtc_white]
    for attr in ("kp_cnt", "dtc_kp", "white_cnt", "dtc_white"):
        vals = [float(getattr(im, attr)) for im in refset.images]
        row += [min(vals), max(vals)]
    row += [refset.min_cross_sim, refset.max_cross_sim, refset.avg_cross_sim]
    vec = np.asarray(row, dtype=np.float64)
    assert vec.shape == (len(CBFILTER_FEATURE_NAMES),)
    return vec


@dataclasses.dataclass
class CBFilterModel:
    """Random forest over reference-set quality rows; 1 predicts "will fail"."""

    model: learn.Model

    def reject(self, refset: ReferenceSet) -> bool:
        return self.model.predict(cbfilter_features(refset)) == 1

    def reject_row(self, row: np.ndarray) -> bool:
        return self.model.predict(row) == 1

    def save(self, path) -> None:
        self.model.save(path)

    @staticmethod
    def load(path) -> "CBFilterModel":
        return CBFilterModel(model=learn.Model.load(path))


def cbfilter_train(rows, labels, seed: int = 0,
                   hyperparams: dict | None = None) -> CBFilterModel:
    """Train the classifier-based filter on labeled reference-set rows.

    Label 1 marks sets that participated in a misclassified authentication
    instance; prediction 1 rejects the set.
    """
    rows = np.asarray(rows, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(rows) == 0 or len(np.unique(labels)) < 2:
        raise DegenerateTrainingSet("need both classes of reference sets")
    ds = learn.Dataset(rows, labels, feature_names=CBFILTER_FEATURE_NAMES)
    return CBFilterModel(model=learn.train("RF", ds, hyperparams, seed=seed))
