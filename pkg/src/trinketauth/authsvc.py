"""Deployable authentication service: enrollment, candidate scoring,
lockout/fallback policy, and atomic on-disk persistence.

Per-user operations are serialized with per-user locks; the scoring model
and filter configuration are immutable shared state.
"""

from __future__ import annotations

import base64
import dataclasses
import datetime
import json
import os
import threading
from pathlib import Path

import numpy as np

from .errors import (
    AlreadyEnrolled,
    BadImage,
    BadRequest,
    FallbackRequired,
    NotEnrolled,
)
from .filters import (
    CBFilterModel,
    FeedbackCode,
    FilterRuleConfig,
    rbfilter_candidate,
    rbfilter_reference,
    ubounds_candidate,
)
from .imgcore import (
    CANONICAL_HEIGHT,
    CANONICAL_WIDTH,
    GrayImage,
    crop_center,
    decode_image,
)
from .keypoints import Keypoint
from .learn import Model
from .simfeat import (
    ProcessedImage,
    ReferenceSet,
    build_reference_set,
    extract_features,
    process_image,
)

REQUIRED_REFERENCE_IMAGES = 3
DEFAULT_MAX_ATTEMPTS = 3
DEFAULT_THRESHOLD = 0.5


@dataclasses.dataclass
class UserRecord:
    user_id: str
    refset: ReferenceSet
    enrolled_at: str  # ISO-8601 UTC
    failure_count: int = 0
    locked: bool = False


@dataclasses.dataclass(frozen=True)
class AuthDecision:
    accepted: bool
    score: float
    feedback: tuple = ()  # feedback code strings
    fallback_required: bool = False


@dataclasses.dataclass(frozen=True)
class EnrollResult:
    ok: bool
    feedback: tuple = ()  # feedback code strings


# --------------------------------------------------------------------------
# Record (de)serialization


def _processed_to_dict(p: ProcessedImage) -> dict:
    return {
        "image_id": p.image_id,
        "keypoints": [dataclasses.asdict(k) for k in p.keypoints],
        "descriptors": base64.b64encode(
            np.ascontiguousarray(p.descriptors).tobytes()
        ).decode(),
        "kp_cnt": p.kp_cnt,
        "dtc_kp": p.dtc_kp,
        "white_cnt": p.white_cnt,
        "dtc_white": p.dtc_white,
    }


def _processed_from_dict(d: dict) -> ProcessedImage:
    kps = tuple(Keypoint(**k) for k in d["keypoints"])
    desc = np.frombuffer(
        base64.b64decode(d["descriptors"]), dtype=np.uint8
    ).reshape(len(kps), 32).copy()
    return ProcessedImage(
        image_id=d["image_id"], keypoints=kps, descriptors=desc,
        kp_cnt=d["kp_cnt"], dtc_kp=d["dtc_kp"],
        white_cnt=d["white_cnt"], dtc_white=d["dtc_white"],
    )


def record_to_dict(rec: UserRecord) -> dict:
    rs = rec.refset
    return {
        "user_id": rec.user_id,
        "enrolled_at": rec.enrolled_at,
        "failure_count": rec.failure_count,
        "locked": rec.locked,
        "refset": {
            "images": [_processed_to_dict(p) for p in rs.images],
            "template_idx": rs.template_idx,
            "sim_matrix": [list(map(float, row)) for row in rs.sim_matrix],
            "avg_ref_nn": rs.avg_ref_nn,
            "avg_ref_fn": rs.avg_ref_fn,
            "avg_ref_templ": rs.avg_ref_templ,
            "min_cross_sim": rs.min_cross_sim,
            "max_cross_sim": rs.max_cross_sim,
            "avg_cross_sim": rs.avg_cross_sim,
        },
    }


def record_from_dict(d: dict) -> UserRecord:
    r = d["refset"]
    refset = ReferenceSet(
        images=tuple(_processed_from_dict(p) for p in r["images"]),
        template_idx=r["template_idx"],
        sim_matrix=np.asarray(r["sim_matrix"], dtype=np.float64),
        avg_ref_nn=r["avg_ref_nn"], avg_ref_fn=r["avg_ref_fn"],
        avg_ref_templ=r["avg_ref_templ"], min_cross_sim=r["min_cross_sim"],
        max_cross_sim=r["max_cross_sim"], avg_cross_sim=r["avg_cross_sim"],
    )
    return UserRecord(
        user_id=d["user_id"], refset=refset, enrolled_at=d["enrolled_at"],
        failure_count=d["failure_count"], locked=d["locked"],
    )


# --------------------------------------------------------------------------
# Storage


class MemoryStorage:
    """Dict-backed store, mainly for tests."""

    def __init__(self):
        self._records: dict[str, dict] = {}
        self.audit: list[str] = []

    def load(self, user_id):
        d = self._records.get(user_id)
        return record_from_dict(d) if d is not None else None

    def store(self, rec: UserRecord) -> None:
        self._records[rec.user_id] = record_to_dict(rec)

    def delete(self, user_id) -> None:
        self._records.pop(user_id, None)

    def write_audit(self, line: str) -> None:
        self.audit.append(line)


class FileStorage:
    """One JSON file per user; writes go to a temp file then os.replace, so a
    reader never observes a partially-written record."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, user_id) -> Path:
        safe = base64.urlsafe_b64encode(user_id.encode()).decode().rstrip("=")
        return self.root / f"user_{safe}.json"

    def load(self, user_id):
        p = self._path(user_id)
        if not p.exists():
            return None
        return record_from_dict(json.loads(p.read_text()))

    def store(self, rec: UserRecord) -> None:
        p = self._path(rec.user_id)
        tmp = p.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(record_to_dict(rec)))
        os.replace(tmp, p)

    def delete(self, user_id) -> None:
        p = self._path(user_id)
        if p.exists():
            p.unlink()

    def write_audit(self, line: str) -> None:
        with open(self.root / "audit.log", "a") as fh:
            fh.write(line + "\n")


# --------------------------------------------------------------------------
# Service


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def prepare_image(img: GrayImage) -> GrayImage:
    """Center-crop to the canonical processing size."""
    if img.width < CANONICAL_WIDTH or img.height < CANONICAL_HEIGHT:
        raise BadImage(
            f"image {img.width}x{img.height} smaller than canonical "
            f"{CANONICAL_WIDTH}x{CANONICAL_HEIGHT}"
        )
    if (img.width, img.height) == (CANONICAL_WIDTH, CANONICAL_HEIGHT):
        return img
    return crop_center(img, CANONICAL_WIDTH, CANONICAL_HEIGHT)


def decode_request_image(b64: str) -> GrayImage:
    try:
        raw = base64.b64decode(b64, validate=True)
    except Exception as exc:
        raise BadImage(f"invalid base64 payload: {exc}") from exc
    try:
        return decode_image(raw)
    except BadImage:
        raise
    except Exception as exc:
        raise BadImage(f"undecodable image: {exc}") from exc


class AuthService:
    def __init__(
        self,
        storage,
        model: Model,
        threshold: float = DEFAULT_THRESHOLD,
        filter_cfg: FilterRuleConfig | None = None,
        cbfilter: CBFilterModel | None = None,
        max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    ):
        self.storage = storage
        self.model = model
        self.threshold = float(threshold)
        self.filter_cfg = filter_cfg or FilterRuleConfig()
        self.cbfilter = cbfilter
        self.max_attempts = int(max_attempts)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _user_lock(self, user_id) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(user_id, threading.Lock())

    # -- operations --------------------------------------------------------

    def enroll(self, user_id: str, images) -> EnrollResult:
        """3 reference images -> filters -> persisted record, or rejection
        with every triggered feedback code and nothing persisted."""
        if len(images) != REQUIRED_REFERENCE_IMAGES:
            raise BadRequest(
                f"enrollment needs exactly {REQUIRED_REFERENCE_IMAGES} "
                f"images, got {len(images)}"
            )
        with self._user_lock(user_id):
            if self.storage.load(user_id) is not None:
                raise AlreadyEnrolled(f"user {user_id!r} already enrolled")
            processed = [
                process_image(prepare_image(img), f"{user_id}_ref{i}")
                for i, img in enumerate(images)
            ]
            refset = build_reference_set(processed)
            verdict = rbfilter_reference(refset, self.filter_cfg)
            codes = [c.value for c in verdict.codes]
            if verdict.accepted and self.cbfilter is not None:
                if self.cbfilter.reject(refset):
                    codes.append(FeedbackCode.LOW_QUALITY_OR_PLAIN.value)
            if codes:
                return EnrollResult(ok=False, feedback=tuple(dict.fromkeys(codes)))
            rec = UserRecord(user_id=user_id, refset=refset, enrolled_at=_now())
            self.storage.store(rec)
            self.storage.write_audit(f"{rec.enrolled_at} enroll {user_id}")
            return EnrollResult(ok=True)

    def authenticate(self, user_id: str, image: GrayImage) -> AuthDecision:
        """Candidate filters -> feature extraction -> model score vs
        threshold; tracks consecutive failures up to the fallback point."""
        with self._user_lock(user_id):
            rec = self.storage.load(user_id)
            if rec is None:
                raise NotEnrolled(f"user {user_id!r} is not enrolled")
            if rec.locked:
                raise FallbackRequired(
                    f"user {user_id!r} exceeded {self.max_attempts} attempts"
                )
            cand = process_image(prepare_image(image), f"{user_id}_cand")
            stats = (cand.kp_cnt, cand.dtc_kp, cand.white_cnt, cand.dtc_white)
            reasons = (
                list(rbfilter_candidate(stats, self.filter_cfg).reasons)
                + list(ubounds_candidate(stats, self.filter_cfg).reasons)
            )
            if reasons:
                score, accepted = 0.0, False
                feedback = tuple(dict.fromkeys(r.code.value for r in reasons))
            else:
                score = float(
                    self.model.predict_proba(extract_features(cand, rec.refset))
                )
                accepted = score >= self.threshold
                feedback = ()
            if accepted:
                rec.failure_count = 0
            else:
                rec.failure_count = min(rec.failure_count + 1, self.max_attempts)
                if rec.failure_count >= self.max_attempts:
                    rec.locked = True
            self.storage.store(rec)
            self.storage.write_audit(
                f"{_now()} auth {user_id} accepted={accepted} "
                f"score={score:.4f} failures={rec.failure_count}"
            )
            return AuthDecision(
                accepted=accepted,
                score=score,
                feedback=feedback,
                fallback_required=rec.locked,
            )

    def reset_trinket(self, user_id: str) -> None:
        """Clear the record so the user can re-enroll a new trinket."""
        with self._user_lock(user_id):
            if self.storage.load(user_id) is None:
                raise NotEnrolled(f"user {user_id!r} is not enrolled")
            self.storage.delete(user_id)
            self.storage.write_audit(f"{_now()} reset {user_id}")
