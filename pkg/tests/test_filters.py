import numpy as np
import pytest

from trinketauth.errors import DegenerateTrainingSet
from trinketauth.filters import (
    CBFILTER_FEATURE_NAMES,
    FeedbackCode,
    FilterRuleConfig,
    cbfilter_features,
    cbfilter_train,
    compute_filter_stats,
    feedback_table,
    rbfilter_candidate,
    rbfilter_reference,
    ubounds_candidate,
)
from trinketauth.simfeat import (
    ProcessedImage,
    ReferenceSet,
    build_reference_set,
    process_image,
)
from trinketauth.synthcorpus import blurry_image, plain_image, trinket_views

CFG = FilterRuleConfig()


def stub_image(kp_cnt=100, dtc_kp=80.0, white_cnt=5000, dtc_white=100.0):
    return ProcessedImage(
        image_id="stub", keypoints=(), descriptors=np.zeros((0, 32), np.uint8),
        kp_cnt=kp_cnt, dtc_kp=dtc_kp, white_cnt=white_cnt, dtc_white=dtc_white,
    )


def stub_refset(template=None, members=None, avg_cross_sim=0.8,
                min_cross_sim=0.7, max_cross_sim=0.9):
    template = template or stub_image()
    members = members or [template, stub_image(), stub_image()]
    return ReferenceSet(
        images=tuple(members), template_idx=0, sim_matrix=np.eye(len(members)),
        avg_ref_nn=0.8, avg_ref_fn=0.6, avg_ref_templ=0.7,
        min_cross_sim=min_cross_sim, max_cross_sim=max_cross_sim,
        avg_cross_sim=avg_cross_sim,
    )


class TestRbfilterReference:
    def test_all_rules_satisfied(self):
        rs = stub_refset(stub_image(kp_cnt=25, dtc_kp=35.0), avg_cross_sim=0.7)
        assert rbfilter_reference(rs, CFG).accepted

    def test_low_cross_sim_rejected(self):
        rs = stub_refset(avg_cross_sim=0.5)
        v = rbfilter_reference(rs, CFG)
        assert not v.accepted
        assert v.codes == [FeedbackCode.NON_IDENTICAL_TRINKETS]

    @pytest.mark.parametrize("kp_cnt,ok", [(19, False), (20, True), (21, True)])
    def test_kp_cnt_boundary_strict(self, kp_cnt, ok):
        rs = stub_refset(stub_image(kp_cnt=kp_cnt))
        assert rbfilter_reference(rs, CFG).accepted is ok

    @pytest.mark.parametrize("dtc,ok", [(29.0, False), (30.0, True), (31.0, True)])
    def test_dtc_kp_boundary_strict(self, dtc, ok):
        rs = stub_refset(stub_image(dtc_kp=dtc))
        assert rbfilter_reference(rs, CFG).accepted is ok

    @pytest.mark.parametrize("sim,ok", [(0.59, False), (0.6, True), (0.61, True)])
    def test_cross_sim_boundary_strict(self, sim, ok):
        rs = stub_refset(avg_cross_sim=sim)
        assert rbfilter_reference(rs, CFG).accepted is ok

    def test_multiple_reasons_accumulate(self):
        rs = stub_refset(stub_image(kp_cnt=5, dtc_kp=5.0), avg_cross_sim=0.1)
        v = rbfilter_reference(rs, CFG)
        assert len(v.reasons) == 3


class TestRbfilterCandidate:
    @pytest.mark.parametrize("kp_cnt,ok", [(19, False), (20, True), (21, True),
                                           (500, True)])
    def test_boundary_strict(self, kp_cnt, ok):
        v = rbfilter_candidate((kp_cnt, 50.0, 100, 50.0), CFG)
        assert v.accepted is ok
        if not ok:
            assert v.codes == [FeedbackCode.LOW_QUALITY_OR_PLAIN]


class TestUbounds:
    def test_all_zero_accepted(self):
        assert ubounds_candidate((0, 0.0, 0, 0.0), CFG).accepted

    @pytest.mark.parametrize("white,ok", [(30000, False), (22400, True),
                                          (22401, False)])
    def test_white_cnt_boundary_strict(self, white, ok):
        v = ubounds_candidate((100, 50.0, white, 50.0), CFG)
        assert v.accepted is ok
        if not ok:
            assert v.codes == [FeedbackCode.OUT_OF_BOUNDS]

    @pytest.mark.parametrize("dw,ok", [(159.0, True), (160.0, True),
                                       (161.0, False)])
    def test_dtc_white_boundary_strict(self, dw, ok):
        assert ubounds_candidate((100, 50.0, 100, dw), CFG).accepted is ok

    @pytest.mark.parametrize("dk,ok", [(44599.0, True), (44600.0, True),
                                       (44601.0, False)])
    def test_dtc_kp_boundary_strict(self, dk, ok):
        assert ubounds_candidate((100, dk, 100, 50.0), CFG).accepted is ok


class TestComputeFilterStats:
    def test_constant_image_all_zero(self):
        from trinketauth.imgcore import GrayImage

        img = GrayImage(np.full((64, 64), 90, dtype=np.uint8))
        assert compute_filter_stats(img) == (0, 0.0, 0, 0.0)

    def test_blurry_fails_candidate_rule(self):
        stats = compute_filter_stats(blurry_image(3))
        assert not rbfilter_candidate(stats, CFG).accepted

    def test_plain_fails_candidate_rule(self):
        stats = compute_filter_stats(plain_image(3))
        assert not rbfilter_candidate(stats, CFG).accepted


class TestCbfilterFeatures:
    def test_identical_members_degenerate_stats(self):
        views = [process_image(v, str(i)) for i, v in
                 enumerate(trinket_views(7)[:1] * 3)]
        rs = build_reference_set(views)
        row = cbfilter_features(rs)
        names = list(CBFILTER_FEATURE_NAMES)
        for stat in ("kp_cnt", "dtc_kp", "white_cnt", "dtc_white"):
            assert row[names.index(f"min_{stat}")] == row[names.index(f"max_{stat}")]
        assert row[names.index("min_cross_sim")] == pytest.approx(1.0)
        assert row[names.index("avg_cross_sim")] == pytest.approx(1.0)

    def test_row_length_constant(self):
        rs = stub_refset()
        assert cbfilter_features(rs).shape == (15,)

    def test_values_match_recomputation(self):
        a = stub_image(kp_cnt=30, dtc_kp=40.0, white_cnt=100, dtc_white=20.0)
        b = stub_image(kp_cnt=50, dtc_kp=60.0, white_cnt=300, dtc_white=30.0)
        c = stub_image(kp_cnt=10, dtc_kp=20.0, white_cnt=200, dtc_white=10.0)
        rs = stub_refset(a, [a, b, c])
        row = cbfilter_features(rs)
        names = list(CBFILTER_FEATURE_NAMES)
        assert row[names.index("templ_kp_cnt")] == 30.0
        assert row[names.index("min_kp_cnt")] == 10.0
        assert row[names.index("max_white_cnt")] == 300.0
        assert row[names.index("avg_cross_sim")] == 0.8


def separable_rsb(rng, n=40):
    rows, labels = [], []
    for i in range(n):
        bad = i % 2 == 0
        base = stub_refset(
            avg_cross_sim=rng.uniform(0.1, 0.5) if bad else rng.uniform(0.8, 1.0),
            min_cross_sim=0.1 if bad else 0.7,
            max_cross_sim=0.6 if bad else 1.0,
        )
        rows.append(cbfilter_features(base))
        labels.append(1 if bad else 0)
    return np.array(rows), np.array(labels)


class TestCbfilterTrain:
    def test_separable_perfect_heldout(self):
        rng = np.random.default_rng(5)
        rows, labels = separable_rsb(rng, 60)
        model = cbfilter_train(rows[:40], labels[:40], seed=1)
        preds = [model.reject_row(r) for r in rows[40:]]
        assert preds == [bool(l) for l in labels[40:]]

    def test_empty_raises(self):
        with pytest.raises(DegenerateTrainingSet):
            cbfilter_train(np.zeros((0, 15)), np.zeros(0, dtype=int))

    def test_single_class_raises(self):
        rows = np.zeros((5, 15))
        with pytest.raises(DegenerateTrainingSet):
            cbfilter_train(rows, np.ones(5, dtype=int))

    def test_deterministic(self):
        rng = np.random.default_rng(6)
        rows, labels = separable_rsb(rng, 30)
        m1 = cbfilter_train(rows, labels, seed=9)
        m2 = cbfilter_train(rows, labels, seed=9)
        assert m1.model.to_json() == m2.model.to_json()


class TestConfigAndFeedback:
    def test_from_file(self, tmp_path):
        p = tmp_path / "filters.cfg"
        p.write_text("# thresholds\nref_kp_cnt_min = 25\ncand_dtc_white_max=200\n")
        cfg = FilterRuleConfig.from_file(p)
        assert cfg.ref_kp_cnt_min == 25.0
        assert cfg.cand_dtc_white_max == 200.0
        assert cfg.ref_avg_cross_sim_min == 0.6

    def test_nonpositive_threshold_rejected(self):
        with pytest.raises(ValueError):
            FilterRuleConfig(ref_kp_cnt_min=0)

    def test_feedback_table_complete(self):
        table = feedback_table()
        assert set(table) == {c.value for c in FeedbackCode}
        assert all(table.values())
