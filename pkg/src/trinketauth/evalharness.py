"""Experimental protocol: fold construction, cross-validation with taint
prevention, filter ablations, attack generation, master-image analysis and
threshold-discovery histograms.

The corpus shape follows the published protocol: 4 images per trinket, one
randomly chosen as candidate, the other 3 as references; each trinket
contributes one genuine instance and one fraud instance against every other
trinket in its fold set.
"""

from __future__ import annotations

import csv
import dataclasses
import io
from pathlib import Path

import numpy as np

from . import learn, synthcorpus
from .errors import DegenerateTrainingSet, MissingCategories, ShapeError
from .filters import (
    FilterRuleConfig,
    cbfilter_features,
    cbfilter_train,
    rbfilter_candidate,
    rbfilter_reference,
    ubounds_candidate,
)
from .imgcore import GrayImage, load_image
from .learn import Dataset, EvalReport, Model, compute_eer, evaluate, roc_auc
from .simfeat import (
    FEATURE_NAMES,
    ProcessedImage,
    ReferenceSet,
    build_reference_set,
    extract_features,
    process_image,
)

IMAGES_PER_TRINKET = 4
REFERENCES_PER_SET = 3


@dataclasses.dataclass(frozen=True)
class Trinket:
    trinket_id: str
    category: str
    image_ids: tuple


class TrinketCorpus:
    """Trinkets with resolvable images; images may be in memory or on disk."""

    def __init__(self, trinkets, images, extras=None):
        for t in trinkets:
            if len(t.image_ids) != IMAGES_PER_TRINKET:
                raise ShapeError(
                    f"trinket {t.trinket_id} has {len(t.image_ids)} images, "
                    f"need {IMAGES_PER_TRINKET}"
                )
        self.trinkets = list(trinkets)
        self._images = dict(images)  # id -> GrayImage | Path
        self.extras = dict(extras or {})

    def __len__(self):
        return len(self.trinkets)

    @property
    def categories(self):
        return sorted({t.category for t in self.trinkets})

    def get_image(self, image_id) -> GrayImage:
        img = self._images[image_id]
        if not isinstance(img, GrayImage):
            img = load_image(img)
            self._images[image_id] = img
        return img

    def image_ids(self):
        return list(self._images)

    @staticmethod
    def from_manifest(path) -> "TrinketCorpus":
        """CSV manifest: trinket_id, category, then 4 image paths per row."""
        trinkets, images = [], {}
        base = Path(path).parent
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].startswith("#"):
                    continue
                tid, category, *paths = [c.strip() for c in row]
                if len(paths) != IMAGES_PER_TRINKET:
                    raise ShapeError(f"manifest row for {tid}: need 4 image paths")
                ids = []
                for k, p in enumerate(paths):
                    img_id = f"{tid}_{k}"
                    images[img_id] = (base / p) if not Path(p).is_absolute() else Path(p)
                    ids.append(img_id)
                trinkets.append(Trinket(tid, category, tuple(ids)))
        return TrinketCorpus(trinkets, images)


def synth_corpus(n_trinkets: int, seed: int, n_categories: int = 10) -> TrinketCorpus:
    """Deterministic synthetic corpus: n trinkets x 4 views, plus plain and
    blurry negative fixtures under corpus.extras."""
    if n_trinkets < 10 or n_trinkets % 10 != 0:
        raise ShapeError("n_trinkets must be >= 10 and divisible by 10")
    trinkets, images = [], {}
    for t in range(n_trinkets):
        tid = f"t{t:03d}"
        trinket_seed = seed * 100_000 + t
        views = synthcorpus.trinket_views(trinket_seed)
        ids = []
        for k, v in enumerate(views):
            img_id = f"{tid}_{k}"
            images[img_id] = v
            ids.append(img_id)
        trinkets.append(Trinket(tid, f"cat{t % n_categories}", tuple(ids)))
    extras = {
        "plain_0": synthcorpus.plain_image(seed),
        "plain_1": synthcorpus.plain_image(seed + 1),
        "blurry_0": synthcorpus.blurry_image(seed),
        "blurry_1": synthcorpus.blurry_image(seed + 1),
    }
    return TrinketCorpus(trinkets, images, extras)


# --------------------------------------------------------------------------
# Instance generation


@dataclasses.dataclass(frozen=True)
class AuthInstance:
    candidate_id: str
    reference_ids: tuple
    label: int  # 1 = genuine, 0 = fraud
    subset_id: int
    fold_id: int
    cand_trinket: str
    ref_trinket: str

    @property
    def instance_id(self) -> str:
        return f"s{self.subset_id}f{self.fold_id}:{self.cand_trinket}->{self.ref_trinket}"


def generate_subsets(
    corpus: TrinketCorpus, seed: int, n_subsets: int = 10, n_folds: int = 10
):
    """n_subsets independent splits, each with n_folds folds of instances.

    Per fold set: every trinket yields 1 genuine instance plus one fraud
    instance against each other trinket's references.
    """
    n = len(corpus)
    if n % n_folds != 0:
        raise ShapeError(f"{n} trinkets not divisible into {n_folds} folds")
    per_fold = n // n_folds
    subsets = []
    for s in range(n_subsets):
        rng = np.random.default_rng([seed, s])
        order = rng.permutation(n)
        # per-subset candidate/reference split for every trinket
        roles = {}
        for t in corpus.trinkets:
            cand_idx = int(rng.integers(0, IMAGES_PER_TRINKET))
            refs = tuple(
                t.image_ids[i] for i in range(IMAGES_PER_TRINKET) if i != cand_idx
            )
            roles[t.trinket_id] = (t.image_ids[cand_idx], refs)
        folds = []
        for f in range(n_folds):
            members = [corpus.trinkets[i] for i in order[f * per_fold:(f + 1) * per_fold]]
            fold = []
            for t in members:
                cand, _ = roles[t.trinket_id]
                for other in members:
                    _, refs = roles[other.trinket_id]
                    fold.append(
                        AuthInstance(
                            candidate_id=cand,
                            reference_ids=refs,
                            label=1 if other.trinket_id == t.trinket_id else 0,
                            subset_id=s,
                            fold_id=f,
                            cand_trinket=t.trinket_id,
                            ref_trinket=other.trinket_id,
                        )
                    )
            folds.append(fold)
        subsets.append(folds)
    return subsets


# --------------------------------------------------------------------------
# Cross-validation driver


@dataclasses.dataclass
class PipelineConfig:
    classifier: str = "RF"
    classifier_hyperparams: dict = dataclasses.field(default_factory=dict)
    threshold: float = 0.5
    use_rbfilter: bool = False
    use_cbfilter: bool = False
    use_ubounds: bool = False
    filter_cfg: FilterRuleConfig = dataclasses.field(default_factory=FilterRuleConfig)
    seed: int = 0


@dataclasses.dataclass
class Decision:
    instance: AuthInstance
    score: float
    accepted: bool
    filter_codes: tuple = ()

    @property
    def outcome(self) -> str:
        if self.instance.label == 1:
            return "TA" if self.accepted else "FR"
        return "FA" if self.accepted else "TR"


@dataclasses.dataclass
class CrossValResult:
    report: EvalReport
    auc: float
    decisions: list
    n_filtered_refsets: int
    n_filtered_candidates: int


class FeatureCache:
    """Processes every image once and caches refsets and per-instance rows."""

    def __init__(self, corpus: TrinketCorpus):
        self.corpus = corpus
        self._processed = {}
        self._refsets = {}
        self._rows = {}

    def processed(self, image_id) -> ProcessedImage:
        if image_id not in self._processed:
            self._processed[image_id] = process_image(
                self.corpus.get_image(image_id), image_id
            )
        return self._processed[image_id]

    def refset(self, reference_ids) -> ReferenceSet:
        key = tuple(reference_ids)
        if key not in self._refsets:
            self._refsets[key] = build_reference_set(
                [self.processed(i) for i in key]
            )
        return self._refsets[key]

    def features(self, inst: AuthInstance) -> np.ndarray:
        key = (inst.candidate_id, tuple(inst.reference_ids))
        if key not in self._rows:
            self._rows[key] = extract_features(
                self.processed(inst.candidate_id), self.refset(inst.reference_ids)
            )
        return self._rows[key]


def _score_fold(model, cache, fold, threshold):
    out = []
    for inst in fold:
        score = model.predict_proba(cache.features(inst))
        out.append(Decision(inst, float(score), score >= threshold))
    return out


def run_cross_validation(
    corpus: TrinketCorpus,
    subsets,
    config: PipelineConfig,
    cache: FeatureCache | None = None,
) -> CrossValResult:
    """Per subset, each fold is tested once on a model trained on the other 9.

    Reference sets rejected by the enabled filters are dropped from the test
    fold (enrollment would have refused them); genuine candidates removed by
    the candidate filter count toward FRR, filtered frauds count as true
    rejects.
    """
    cache = cache or FeatureCache(corpus)
    cbfilter_labels = None
    if config.use_cbfilter:
        base_cfg = dataclasses.replace(
            config, use_cbfilter=False, use_rbfilter=False, use_ubounds=False
        )
        base = run_cross_validation(corpus, subsets, base_cfg, cache)
        cbfilter_labels = label_reference_sets(base.decisions)

    decisions = []
    n_filtered_refsets = 0
    n_filtered_candidates = 0
    for folds in subsets:
        rows = {f: np.array([cache.features(i) for i in fold])
                for f, fold in enumerate(folds)}
        labels = {f: np.array([i.label for i in fold])
                  for f, fold in enumerate(folds)}
        for test_f, test_fold in enumerate(folds):
            train_X = np.vstack([rows[f] for f in rows if f != test_f])
            train_y = np.concatenate([labels[f] for f in labels if f != test_f])
            model = learn.train(
                config.classifier,
                Dataset(train_X, train_y, FEATURE_NAMES),
                config.classifier_hyperparams,
                seed=config.seed,
            )
            cbf = None
            if cbfilter_labels is not None:
                test_refsets = {tuple(i.reference_ids) for i in test_fold}
                rsb_rows, rsb_labels = [], []
                for key, lab in cbfilter_labels.items():
                    if key not in test_refsets:
                        rsb_rows.append(cbfilter_features(cache.refset(key)))
                        rsb_labels.append(lab)
                try:
                    cbf = cbfilter_train(
                        np.array(rsb_rows), np.array(rsb_labels), seed=config.seed
                    )
                except DegenerateTrainingSet:
                    cbf = None  # no failure examples to learn from
            for inst in test_fold:
                refset = cache.refset(inst.reference_ids)
                if config.use_rbfilter:
                    verdict = rbfilter_reference(refset, config.filter_cfg)
                    if not verdict.accepted:
                        n_filtered_refsets += 1
                        continue
                if cbf is not None and cbf.reject(refset):
                    n_filtered_refsets += 1
                    continue
                cand_codes = ()
                if config.use_rbfilter or config.use_ubounds:
                    cand = cache.processed(inst.candidate_id)
                    stats = (cand.kp_cnt, cand.dtc_kp, cand.white_cnt,
                             cand.dtc_white)
                    reasons = []
                    if config.use_rbfilter:
                        reasons += rbfilter_candidate(stats, config.filter_cfg).reasons
                    if config.use_ubounds:
                        reasons += ubounds_candidate(stats, config.filter_cfg).reasons
                    if reasons:
                        n_filtered_candidates += 1
                        # removed "valid" instances count into FRR
                        decisions.append(Decision(
                            inst, 0.0, False,
                            tuple(r.code.value for r in reasons),
                        ))
                        continue
                score = model.predict_proba(cache.features(inst))
                decisions.append(
                    Decision(inst, float(score), score >= config.threshold)
                )

    scores = [(d.score, d.instance.label) for d in decisions]
    report = evaluate(scores, config.threshold)
    scored = [(d.score, d.instance.label) for d in decisions if not d.filter_codes]
    eer, thr = compute_eer(scored)
    report = dataclasses.replace(report, eer=eer, threshold_at_eer=thr)
    return CrossValResult(
        report=report,
        auc=roc_auc(scores),
        decisions=decisions,
        n_filtered_refsets=n_filtered_refsets,
        n_filtered_candidates=n_filtered_candidates,
    )


def label_reference_sets(decisions) -> dict:
    """Reference-set bank labels: 1 when the set appeared in any
    misclassified instance, else 0."""
    labels = {}
    for d in decisions:
        key = tuple(d.instance.reference_ids)
        bad = d.outcome in ("FA", "FR")
        labels[key] = max(labels.get(key, 0), 1 if bad else 0)
    return labels


def audit_taint(subsets) -> bool:
    """No test instance may share a reference image with a training instance
    of the same experiment (fold-disjoint reference sets)."""
    for folds in subsets:
        ref_by_fold = [
            {i for inst in fold for i in inst.reference_ids} for fold in folds
        ]
        for a in range(len(folds)):
            for b in range(len(folds)):
                if a != b and ref_by_fold[a] & ref_by_fold[b]:
                    return False
    return True


# --------------------------------------------------------------------------
# Attacks


@dataclasses.dataclass(frozen=True)
class AttackImage:
    image_id: str
    category: str


@dataclasses.dataclass
class AttackRun:
    kind: str
    far: float
    trials_until_success: dict  # refset owner -> trial count
    decisions: list  # (refset owner, image_id, score, accepted)
    corpus_size: int


def synth_attack_corpus(n_images: int, seed: int, categories=None):
    """Seeded synthetic distractor images standing in for a web-scraped
    attack dictionary. Returns (list of AttackImage, {id: GrayImage})."""
    categories = list(categories or ["cat0"])
    images = {}
    meta = []
    for k in range(n_images):
        img_id = f"atk{k:05d}"
        images[img_id] = synthcorpus.distractor_image(seed * 10_000_019 + k)
        meta.append(AttackImage(img_id, categories[k % len(categories)]))
    return meta, images


def attack_reference_sets(corpus: TrinketCorpus, cache: FeatureCache, seed: int,
                          filter_cfg: FilterRuleConfig | None = None):
    """One reference set per trinket (3 of its 4 images, seeded choice),
    dropping sets the reference filters reject."""
    cfg = filter_cfg or FilterRuleConfig()
    rng = np.random.default_rng(seed)
    out = {}
    for t in corpus.trinkets:
        drop = int(rng.integers(0, IMAGES_PER_TRINKET))
        refs = tuple(t.image_ids[i] for i in range(IMAGES_PER_TRINKET) if i != drop)
        refset = cache.refset(refs)
        if rbfilter_reference(refset, cfg).accepted:
            out[t.trinket_id] = refset
    return out


def attack_trial_order(kind, attack_meta, refset_category=None):
    if kind == "pictionary":
        return list(attack_meta)
    if kind == "shoulder_surf":
        if refset_category is None or any(a.category is None for a in attack_meta):
            raise MissingCategories("shoulder_surf needs categorized images")
        same = [a for a in attack_meta if a.category == refset_category]
        rest = [a for a in attack_meta if a.category != refset_category]
        return same + rest
    raise ValueError(f"unknown attack kind {kind!r}")


def generate_attack_instances(refsets, attack_meta, kind, categories=None):
    """Stream of (refset owner, AttackImage, trial index) trials.

    Pictionary is the full cross product; shoulder surfing reorders the
    dictionary per victim so same-category images come first.
    """
    categories = categories or {}
    for owner, refset in refsets.items():
        order = attack_trial_order(kind, attack_meta, categories.get(owner))
        for trial, img in enumerate(order, start=1):
            yield owner, img, trial


def run_attack(
    refsets,
    attack_meta,
    attack_images,
    model: Model,
    kind: str = "pictionary",
    threshold: float = 0.5,
    config: PipelineConfig | None = None,
    cache: FeatureCache | None = None,
    categories=None,
    extra_processed=None,
) -> AttackRun:
    """Score every attack trial; unbroken reference sets record the corpus
    size as their trials-until-success (the published convention)."""
    config = config or PipelineConfig()
    processed = dict(extra_processed or {})

    def get_processed(img: AttackImage):
        if img.image_id not in processed:
            processed[img.image_id] = process_image(
                attack_images[img.image_id], img.image_id
            )
        return processed[img.image_id]

    decisions = []
    trials_until_success = {}
    n_accept = 0
    n_total = 0
    for owner, img, trial in generate_attack_instances(
        refsets, attack_meta, kind, categories
    ):
        cand = get_processed(img)
        stats = (cand.kp_cnt, cand.dtc_kp, cand.white_cnt, cand.dtc_white)
        filtered = (
            not rbfilter_candidate(stats, config.filter_cfg).accepted
            or not ubounds_candidate(stats, config.filter_cfg).accepted
        )
        if filtered:
            score, accepted = 0.0, False
        else:
            score = model.predict_proba(extract_features(cand, refsets[owner]))
            accepted = score >= threshold
        n_total += 1
        n_accept += accepted
        decisions.append((owner, img.image_id, float(score), bool(accepted)))
        if accepted and owner not in trials_until_success:
            trials_until_success[owner] = trial
    corpus_size = len(attack_meta)
    for owner in refsets:
        trials_until_success.setdefault(owner, corpus_size)
    far = 100.0 * n_accept / n_total if n_total else 0.0
    return AttackRun(
        kind=kind, far=far, trials_until_success=trials_until_success,
        decisions=decisions, corpus_size=corpus_size,
    )


def find_master_images(attack_run: AttackRun, min_matches: int = 5):
    """Attack images falsely accepted by at least min_matches distinct
    reference sets, sorted by that count descending."""
    per_image = {}
    for owner, image_id, _, accepted in attack_run.decisions:
        if accepted:
            per_image.setdefault(image_id, set()).add(owner)
    out = [
        (image_id, len(owners))
        for image_id, owners in per_image.items()
        if len(owners) >= min_matches
    ]
    return sorted(out, key=lambda kv: (-kv[1], kv[0]))


# --------------------------------------------------------------------------
# Rule-discovery histograms


def rule_discovery_histograms(records, feature_pair, bins: int = 10):
    """2D histogram of outcomes over a feature pair.

    records: iterable of (feature_x, feature_y, outcome) with outcome in
    {TA, TR, FA, FR}. Returns a dict with cell counts and flags: 1 when the
    misclassified count dominates, -1 for empty cells, else 0.
    """
    records = list(records)
    xs = np.array([r[0] for r in records], dtype=np.float64)
    ys = np.array([r[1] for r in records], dtype=np.float64)
    if len(records) == 0:
        raise ValueError("no records")
    x_edges = np.linspace(xs.min(), xs.max() + 1e-9, bins + 1)
    y_edges = np.linspace(ys.min(), ys.max() + 1e-9, bins + 1)
    counts = {
        k: np.zeros((bins, bins), dtype=np.int64) for k in ("TA", "TR", "FA", "FR")
    }
    for x, y, outcome in records:
        i = min(int(np.searchsorted(x_edges, x, side="right")) - 1, bins - 1)
        j = min(int(np.searchsorted(y_edges, y, side="right")) - 1, bins - 1)
        counts[outcome][i, j] += 1
    good = counts["TA"] + counts["TR"]
    bad = counts["FA"] + counts["FR"]
    flags = np.zeros((bins, bins), dtype=np.int64)
    flags[bad > good] = 1
    flags[(good + bad) == 0] = -1
    return {
        "feature_pair": tuple(feature_pair),
        "x_edges": x_edges,
        "y_edges": y_edges,
        "counts": counts,
        "flags": flags,
    }


def histogram_csv(hist) -> str:
    """CSV rendering of a rule-discovery histogram for human inspection."""
    buf = io.StringIO()
    w = csv.writer(buf)
    fx, fy = hist["feature_pair"]
    w.writerow(["x_bin", "y_bin", f"{fx}_lo", f"{fx}_hi", f"{fy}_lo", f"{fy}_hi",
                "TA", "TR", "FA", "FR", "flag"])
    bins = hist["flags"].shape[0]
    for i in range(bins):
        for j in range(bins):
            w.writerow([
                i, j,
                hist["x_edges"][i], hist["x_edges"][i + 1],
                hist["y_edges"][j], hist["y_edges"][j + 1],
                hist["counts"]["TA"][i, j], hist["counts"]["TR"][i, j],
                hist["counts"]["FA"][i, j], hist["counts"]["FR"][i, j],
                hist["flags"][i, j],
            ])
    return buf.getvalue()


# --------------------------------------------------------------------------
# Decision log persistence


DECISION_LOG_HEADER = (
    "instance_id,subset,fold,label,score,decision,filter_codes"
)


def write_decision_log(decisions, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(DECISION_LOG_HEADER + "\n")
        w = csv.writer(fh)
        for d in decisions:
            w.writerow([
                d.instance.instance_id, d.instance.subset_id, d.instance.fold_id,
                d.instance.label, repr(d.score), int(d.accepted),
                ";".join(d.filter_codes),
            ])


def read_decision_log(path):
    rows = []
    with open(path, newline="") as fh:
        next(fh)
        for row in csv.reader(fh):
            rows.append({
                "instance_id": row[0], "subset": int(row[1]), "fold": int(row[2]),
                "label": int(row[3]), "score": float(row[4]),
                "decision": bool(int(row[5])),
                "filter_codes": tuple(c for c in row[6].split(";") if c),
            })
    return rows


def report_table(results: dict) -> str:
    """Human-readable ablation table: name -> CrossValResult."""
    lines = [f"{'config':<24} {'FAR%':>8} {'FRR%':>8} {'F%':>8} {'EER%':>8} {'AUC':>6}"]
    for name, res in results.items():
        r = res.report
        lines.append(
            f"{name:<24} {r.far:>8.3f} {r.frr:>8.3f} {r.f_measure:>8.2f} "
            f"{r.eer:>8.3f} {res.auc:>6.3f}"
        )
    return "\n".join(lines)
