"""Acceptance gate: one test per acceptance criterion, each asserting its
stated tolerance and runtime budget.

The headline error rates of the original study are not reproducible at desk
scale without its image corpora; these are the property-based and scaled
substitutes. The heavy 60-trinket synthetic-corpus fixtures are shared
across the end-to-end, master-image and latency criteria.
"""

import sys
import time

import numpy as np
import pytest

from trinketauth import evalharness as eh
from trinketauth import learn
from trinketauth.authsvc import AuthService, MemoryStorage
from trinketauth.filters import (
    FeedbackCode,
    FilterRuleConfig,
    rbfilter_candidate,
    rbfilter_reference,
    ubounds_candidate,
)
from trinketauth.keypoints import (
    canny,
    fast_corner_mask,
    orb_detect_and_compute,
)
from trinketauth.learn import Dataset, compute_eer, mlp_loss_and_grads
from trinketauth.matching import estimate_homography_ransac
from trinketauth.simfeat import (
    FEATURE_NAMES,
    extract_features,
    process_image,
)
from trinketauth.synthcorpus import clutter_image, distractor_image

from conftest import SYNTH_FILTER_CFG
from test_evalharness import fake_corpus
from test_filters import stub_image, stub_refset
from test_keypoints import canny_oracle, fast_oracle, gray


ACCEPTANCE_LINES = []


def report(name, detail):
    # collected by conftest's terminal-summary hook so the lines survive
    # pytest's output capture; printed too for `pytest -s`
    line = f"[ACCEPTANCE] {name}: PASS ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)


# --------------------------------------------------------------------------
# Shared 60-trinket synthetic-corpus fixtures


@pytest.fixture(scope="module")
def corpus60():
    return eh.synth_corpus(60, seed=0)


@pytest.fixture(scope="module")
def cache60(corpus60):
    return eh.FeatureCache(corpus60)


@pytest.fixture(scope="module")
def subsets60(corpus60):
    return eh.generate_subsets(corpus60, seed=0, n_subsets=1, n_folds=10)


@pytest.fixture(scope="module")
def e2e(corpus60, cache60, subsets60):
    """Timed no-filter and RB+CB cross-validation runs (criterion: end-to-end
    separation). The clock covers feature extraction and both runs."""
    t0 = time.monotonic()
    base = eh.run_cross_validation(
        corpus60, subsets60,
        eh.PipelineConfig(seed=1, filter_cfg=SYNTH_FILTER_CFG), cache60,
    )
    both = eh.run_cross_validation(
        corpus60, subsets60,
        eh.PipelineConfig(seed=1, filter_cfg=SYNTH_FILTER_CFG,
                          use_rbfilter=True, use_cbfilter=True), cache60,
    )
    return {"base": base, "both": both, "elapsed": time.monotonic() - t0}


# --------------------------------------------------------------------------


class TestProtocolArithmetic:
    def test_published_shape_and_desk_shape(self):
        t0 = time.monotonic()
        subsets = eh.generate_subsets(fake_corpus(350), seed=0)
        per_subset = [sum(len(f) for f in folds) for folds in subsets]
        assert per_subset == [12_250] * 10
        assert sum(per_subset) == 122_500

        desk = eh.generate_subsets(fake_corpus(60), seed=0, n_subsets=1)
        for fold in desk[0]:
            genuine = [i for i in fold if i.label == 1]
            fraud = [i for i in fold if i.label == 0]
            assert len(genuine) == 6
            assert len(fraud) == 30
            # enumeration: every ordered cross pair exactly once
            pairs = {(i.cand_trinket, i.ref_trinket) for i in fraud}
            members = {i.cand_trinket for i in genuine}
            assert pairs == {(a, b) for a in members for b in members if a != b}
        elapsed = time.monotonic() - t0
        assert elapsed < 1.0
        report("protocol arithmetic",
               f"12250/subset, 122500 total, 6+30 per desk fold, {elapsed:.2f}s")


class TestOracleEquivalence:
    def test_fast_and_canny_match_bruteforce(self):
        t0 = time.monotonic()
        rng = np.random.default_rng(1234)
        for trial in range(50):
            px = rng.integers(0, 256, size=(64, 64), dtype=np.uint8)
            got_fast = fast_corner_mask(gray(px), 20)
            want_fast = fast_oracle(px.astype(np.int32), 20)
            assert np.array_equal(got_fast, want_fast), f"FAST trial {trial}"
            got_canny = canny(gray(px)).edges
            want_canny = canny_oracle(px, 50.0, 150.0)
            assert np.array_equal(got_canny, want_canny), f"Canny trial {trial}"
        elapsed = time.monotonic() - t0
        assert elapsed < 30.0
        report("oracle equivalence", f"50/50 exact, {elapsed:.1f}s")


class TestRansacRecovery:
    def test_planted_homographies(self):
        t0 = time.monotonic()
        rng = np.random.default_rng(99)
        hits = 0
        for trial in range(100):
            theta = rng.uniform(-0.4, 0.4)
            s = rng.uniform(0.8, 1.25)
            h_true = np.array([
                [s * np.cos(theta), -s * np.sin(theta), rng.uniform(-30, 30)],
                [s * np.sin(theta), s * np.cos(theta), rng.uniform(-30, 30)],
                [rng.uniform(-1e-4, 1e-4), rng.uniform(-1e-4, 1e-4), 1.0],
            ])
            pts_a = rng.uniform(20, 250, size=(50, 2))
            ph = np.c_[pts_a, np.ones(50)] @ h_true.T
            pts_b = ph[:, :2] / ph[:, 2:3]
            # 30% outliers: 22 of 72 correspondences are random
            out_a = rng.uniform(20, 250, size=(22, 2))
            out_b = rng.uniform(20, 250, size=(22, 2))
            a = np.vstack([pts_a, out_a])
            b = np.vstack([pts_b, out_b])
            hom, _ = estimate_homography_ransac(a, b, seed=trial)
            if not hom.degenerate:
                if np.abs(hom.matrix - h_true).max() < 1e-2:
                    hits += 1
        elapsed = time.monotonic() - t0
        assert hits >= 99
        assert elapsed < 10.0
        report("RANSAC recovery", f"{hits}/100 within 1e-2, {elapsed:.1f}s")


class TestEerCorrectness:
    def test_analytic_and_perfect_fixtures(self):
        t0 = time.monotonic()
        rng = np.random.default_rng(7)
        n = 20_000
        # genuine ~ U(0.4, 1.0), fraud ~ U(0.0, 0.6): analytic EER = 1/6
        scores = [(float(rng.uniform(0.4, 1.0)), 1) for _ in range(n)]
        scores += [(float(rng.uniform(0.0, 0.6)), 0) for _ in range(n)]
        eer, _ = compute_eer(scores)
        assert abs(eer - 100.0 / 6) <= 1.5

        perfect = [(1.0, 1)] * 100 + [(0.0, 0)] * 100
        eer0, _ = compute_eer(perfect)
        assert eer0 == 0.0
        elapsed = time.monotonic() - t0
        assert elapsed < 5.0
        report("EER correctness",
               f"uniform fixture {eer:.2f}% vs 16.67%, perfect = 0, {elapsed:.1f}s")


class TestEndToEndSeparation:
    def test_auc_eer_and_filter_ablation(self, e2e):
        base, both = e2e["base"], e2e["both"]
        assert base.auc >= 0.95
        assert base.report.eer <= 10.0
        assert both.report.eer <= base.report.eer + 1e-9
        assert e2e["elapsed"] < 600.0
        report(
            "end-to-end separation",
            f"AUC {base.auc:.3f}, EER {base.report.eer:.2f}% "
            f"(RB+CB {both.report.eer:.2f}%), {e2e['elapsed']:.0f}s",
        )


class TestFilterBoundaryConformance:
    CFG = FilterRuleConfig()

    def test_strict_inequalities_at_boundaries(self):
        # reference rules (reject when value < threshold)
        for value, ok in [(19, False), (20, True), (21, True)]:
            rs = stub_refset(stub_image(kp_cnt=value))
            assert rbfilter_reference(rs, self.CFG).accepted is ok
        for value, ok in [(29.0, False), (30.0, True), (31.0, True)]:
            rs = stub_refset(stub_image(dtc_kp=value))
            assert rbfilter_reference(rs, self.CFG).accepted is ok
        for value, ok in [(0.59, False), (0.6, True), (0.61, True)]:
            rs = stub_refset(avg_cross_sim=value)
            assert rbfilter_reference(rs, self.CFG).accepted is ok
        # candidate rule
        for value, ok in [(19, False), (20, True), (21, True)]:
            assert rbfilter_candidate((value, 50.0, 100, 50.0),
                                      self.CFG).accepted is ok
        # trained-space upper bounds (reject when value > threshold)
        for value, ok in [(44599.0, True), (44600.0, True), (44601.0, False)]:
            assert ubounds_candidate((100, value, 100, 50.0),
                                     self.CFG).accepted is ok
        for value, ok in [(22399, True), (22400, True), (22401, False)]:
            assert ubounds_candidate((100, 50.0, value, 50.0),
                                     self.CFG).accepted is ok
        for value, ok in [(159.0, True), (160.0, True), (161.0, False)]:
            assert ubounds_candidate((100, 50.0, 100, value),
                                     self.CFG).accepted is ok
        report("filter boundaries", "7 rules strict at t-1/t/t+1")

    def test_all_feedback_codes_reachable(self):
        codes = set()
        codes |= set(
            rbfilter_candidate((0, 0.0, 0, 0.0), self.CFG).codes
        )
        codes |= set(
            rbfilter_reference(stub_refset(avg_cross_sim=0.0), self.CFG).codes
        )
        codes |= set(
            ubounds_candidate((100, 50.0, 10 ** 6, 50.0), self.CFG).codes
        )
        assert codes == set(FeedbackCode)
        report("feedback codes", "all 3 reachable")


class _MaskedModel:
    """Scoring model restricted to a feature subset (columns zeroed)."""

    def __init__(self, inner, mask):
        self.inner = inner
        self.mask = mask

    def predict_proba(self, row):
        return self.inner.predict_proba(np.asarray(row) * self.mask)


MASTER_TAU = 0.05
MASTER_VICTIMS = [50, 51, 52, 53]  # textures unused in the clutter training rows


@pytest.fixture(scope="module")
def master_setup(corpus60, cache60, subsets60):
    rows, labels = [], []
    for folds in subsets60:
        for fold in folds:
            for inst in fold:
                rows.append(cache60.features(inst))
                labels.append(inst.label)
    refsets_all = {
        t.trinket_id: cache60.refset(t.image_ids[1:])
        for t in corpus60.trinkets
    }
    # clutter-regime fraud rows against non-victim trinkets 10..41
    for i in range(8):
        targets = [10 + 4 * i + k for k in range(4)]
        cm = process_image(
            clutter_image(100 + i, target_seeds=targets), f"clutter{i}"
        )
        for t in targets:
            rows.append(extract_features(cm, refsets_all[f"t{t:03d}"]))
            labels.append(0)
    rows, labels = np.array(rows), np.array(labels)
    mask = np.array(
        [0.0 if n.startswith("dtc_mkp") else 1.0 for n in FEATURE_NAMES]
    )
    hp = {"n_trees": 400, "n_sub_features": 2}
    with_dtc = learn.train(
        "RF", Dataset(rows, labels, tuple(FEATURE_NAMES)), hp, seed=3
    )
    without_dtc = _MaskedModel(
        learn.train("RF", Dataset(rows * mask, labels,
                                  tuple(FEATURE_NAMES)), hp, seed=3),
        mask,
    )
    victims = {f"t{v:03d}": refsets_all[f"t{v:03d}"] for v in MASTER_VICTIMS}
    return with_dtc, without_dtc, victims


class TestMasterImageMachinery:
    """Engineered clutter fixture: patches of 4 victim textures. Compares a
    model without the 5 matched-keypoint-spread (DTC-MKP) features against
    the retrained model that has them, at a permissive operating threshold
    where the attack has traction at desk scale."""

    TAU = MASTER_TAU
    VICTIMS = MASTER_VICTIMS

    def _attack(self, model, victims):
        meta = [eh.AttackImage("master", "cat0")] + [
            eh.AttackImage(f"dis{k}", "cat0") for k in range(3)
        ]
        images = {"master": clutter_image(7, target_seeds=self.VICTIMS)}
        for k in range(3):
            images[f"dis{k}"] = distractor_image(4242 + k)
        return eh.run_attack(victims, meta, images, model, threshold=self.TAU)

    def test_reported_count_and_dtc_mkp_reduction(self, master_setup):
        with_dtc, without_dtc, victims = master_setup
        run_without = self._attack(without_dtc, victims)
        truth = {
            owner for owner, img, _, acc in run_without.decisions
            if img == "master" and acc
        }
        assert len(truth) >= 2, "fixture failed to master-match"
        masters = eh.find_master_images(run_without, min_matches=2)
        assert ("master", len(truth)) in masters  # correct refset count

        run_with = self._attack(with_dtc, victims)
        count_with = sum(
            acc for _, img, _, acc in run_with.decisions if img == "master"
        )
        assert count_with < len(truth)  # direction of the published reduction
        report("master-image machinery",
               f"matched refsets {len(truth)} -> {count_with} with DTC-MKP")


class TestLatency:
    def test_decision_and_orb_budgets(self, scoring_model, trinket_a_views,
                                      trinket_b_views):
        service = AuthService(
            storage=MemoryStorage(), model=scoring_model,
            filter_cfg=SYNTH_FILTER_CFG,
        )
        assert service.enroll("u", trinket_a_views[:3]).ok
        service.authenticate("u", trinket_a_views[3])  # warm
        worst = 0.0
        for img in (trinket_a_views[3], trinket_b_views[0]):
            t0 = time.monotonic()
            service.authenticate("u", img)
            worst = max(worst, time.monotonic() - t0)
        assert worst <= 0.5

        img = trinket_a_views[0]
        orb_detect_and_compute(img)  # warm
        t0 = time.monotonic()
        orb_detect_and_compute(img)
        orb_ms = (time.monotonic() - t0) * 1000
        assert orb_ms <= 150.0
        report("latency", f"auth worst {worst * 1000:.0f}ms, ORB {orb_ms:.0f}ms")


class TestMlpGradientCheck:
    def test_random_5x4x1_networks(self):
        rng = np.random.default_rng(6)
        worst = 0.0
        for _ in range(5):
            X = rng.normal(size=(5, 4))
            y = rng.integers(0, 2, size=5).astype(np.float64)
            params = {
                "w1": rng.normal(0, 0.5, size=(4, 3)),
                "b1": rng.normal(0, 0.1, size=3),
                "w2": rng.normal(0, 0.5, size=(3, 1)),
                "b2": rng.normal(0, 0.1, size=1),
            }
            _, grads = mlp_loss_and_grads(params, X, y)
            eps = 1e-6
            for key in params:
                flat = params[key].ravel()
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + eps
                    lp, _ = mlp_loss_and_grads(params, X, y)
                    flat[i] = orig - eps
                    lm, _ = mlp_loss_and_grads(params, X, y)
                    flat[i] = orig
                    num = (lp - lm) / (2 * eps)
                    ana = grads[key].ravel()[i]
                    rel = abs(num - ana) / max(abs(num), abs(ana), 1e-8)
                    worst = max(worst, rel)
        assert worst < 1e-4
        report("MLP gradient check", f"worst relative error {worst:.2e}")
