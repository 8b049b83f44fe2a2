import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wireparse.geom import GridSpec, LineSegment
from wireparse.metrics import auc
from wireparse.scene_io import Wireframe, synth_scene
from wireparse.verify import (
    FeatureMap,
    LabeledProposal,
    MLPScorer,
    VerifyConfig,
    assign_labels,
    augment_samples,
    bilinear_sample,
    junction_pair_negatives,
    loi_points,
    loi_pool,
    loi_pool_batch,
    segment_distance,
    train_reference_scorer,
)

from oracles import brute_segment_distance, pair_counting_auc

SPEC = GridSpec(64, 64, 4)
coord = st.floats(-20, 20, allow_nan=False)
segment = st.lists(coord, min_size=4, max_size=4)


class TestSegmentDistance:
    def test_hand_example(self):
        assert segment_distance((0, 0, 10, 0), (0.5, 0, 10, 1)) == 1.0

    def test_identical_either_order(self):
        assert segment_distance((1, 2, 3, 4), (1, 2, 3, 4)) == 0
        assert segment_distance((1, 2, 3, 4), (3, 4, 1, 2)) == 0

    def test_enumerated_pairings(self):
        # direct pairing: sqrt(50) + sqrt(145) < sqrt(162) + sqrt(41), so the max is sqrt(145)
        a, b = (0, 0, 1, 0), (5, 5, 9, 9)
        assert math.sqrt(50) + math.sqrt(145) < math.sqrt(162) + math.sqrt(41)
        assert abs(segment_distance(a, b) - math.sqrt(145)) < 1e-12

    @given(segment, segment)
    def test_symmetry_order_and_oracle(self, a, b):
        d = segment_distance(a, b)
        assert abs(d - segment_distance(b, a)) < 1e-12
        assert abs(d - segment_distance(a[2:] + a[:2], b)) < 1e-12
        assert abs(d - segment_distance(a, b[2:] + b[:2])) < 1e-12
        assert abs(d - brute_segment_distance(a, b)) < 1e-12

    @given(segment)
    def test_zero_iff_equal(self, a):
        assert segment_distance(a, a) == 0
        b = [a[0] + 0.5, *a[1:]]
        assert segment_distance(a, b) > 0


class TestLabels:
    def setup_method(self):
        self.gt = Wireframe(64, 64, [[0, 0], [40, 0]], [[0, 1]])  # coarse (0,0)-(10,0)

    def test_positive_example(self):
        (lp,) = assign_labels(np.array([[0.5, 0, 10, 1]]), self.gt, SPEC)
        assert lp.label and lp.origin == "matched"

    def test_exactly_eta_is_negative(self):
        (lp,) = assign_labels(np.array([[0, 1.5, 10, 0]]), self.gt, SPEC)
        assert not lp.label

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(3)
        gt = synth_scene(5, SPEC, 4, min_len=8, min_separation=4)
        g = (gt.lines / 4).tolist()
        props = np.concatenate([np.array(g) + rng.normal(0, 1.0, (len(g), 4)) for _ in range(20)])
        labels = assign_labels(props, gt, SPEC)
        for p, lp in zip(props.tolist(), labels):
            assert lp.label == (min(brute_segment_distance(p, q) for q in g) < 1.5)

    def test_no_gt_all_negative(self):
        labels = assign_labels(np.array([[0, 0, 1, 1]]), Wireframe(64, 64), SPEC)
        assert [lp.label for lp in labels] == [False]


class TestAugment:
    def test_gt_segments_included(self):
        gt = synth_scene(1, SPEC, 5, min_len=8, min_separation=4)
        cfg = VerifyConfig(n=1000)
        pos, _ = augment_samples([], gt, SPEC, cfg)
        got = {tuple(p.segment) for p in pos if p.origin == "gt_augment"}
        assert got == {tuple(s) for s in gt.lines / 4}

    def test_junction_pair_count(self):
        gt = Wireframe(64, 64, [[4, 4], [60, 4], [4, 60], [60, 60]], [[0, 1], [2, 3]])
        negs = junction_pair_negatives(gt, SPEC, 1e-9)
        assert len(negs) == 4  # C(4,2) - 2
        assert len(junction_pair_negatives(gt, SPEC, 1.5)) <= 4

    def test_pair_negatives_respect_eta(self):
        gt = synth_scene(2, SPEC, 6, min_len=8, min_separation=4)
        for s in junction_pair_negatives(gt, SPEC, 1.5):
            assert min(brute_segment_distance(s.tolist(), q) for q in (gt.lines / 4).tolist()) >= 1.5

    def test_draw_sizes_and_determinism(self):
        gt = synth_scene(3, SPEC, 6, min_len=8, min_separation=4)
        labeled = [LabeledProposal(np.array([1.0, 1, 5, 5]), False, "matched")]
        cfg = VerifyConfig(n=50)
        a = augment_samples(labeled, gt, SPEC, cfg, seed=11)
        b = augment_samples(labeled, gt, SPEC, cfg, seed=11)
        assert len(a[0]) == len(a[1]) == 50
        assert [p.segment.tolist() for p in a[0] + a[1]] == [p.segment.tolist() for p in b[0] + b[1]]

    def test_without_replacement_when_enough(self):
        gt = synth_scene(3, SPEC, 6, min_len=8, min_separation=4)
        pos, _ = augment_samples([], gt, SPEC, VerifyConfig(n=6), seed=0)
        assert len({tuple(p.segment) for p in pos}) == 6

    def test_file_negatives(self):
        gt = synth_scene(3, SPEC, 3, min_len=8, min_separation=4)
        extra = Wireframe(64, 64, [[1, 1], [2, 50]], [[0, 1]])
        _, neg = augment_samples([], gt, SPEC, VerifyConfig(n=500), negatives_file=extra)
        assert any(p.origin == "file_negative" for p in neg)


class TestPooling:
    def test_sample_points(self):
        xs, ys = loi_points(np.array([[0, 0, 3, 0]]), 4)
        assert xs.tolist() == [[0, 1, 2, 3]] and ys.tolist() == [[0, 0, 0, 0]]

    def test_bilinear_example(self):
        ch = np.array([[[0.0, 1.0], [2.0, 3.0]]])
        assert bilinear_sample(ch, 0.5, 0.5)[0] == 1.5

    def test_bilinear_at_nodes_and_clamped(self):
        ch = np.arange(12.0).reshape(1, 3, 4)
        assert bilinear_sample(ch, 3, 2)[0] == 11
        assert bilinear_sample(ch, -5, 10)[0] == 8

    def test_constant_map(self):
        f = FeatureMap(SPEC, np.full((3, 16, 16), 0.25))
        v = loi_pool((1, 1, 14, 9), f)
        assert v.shape == (3 * 8,) and np.all(v == 0.25)

    def test_pool_layout(self):
        # a ramp along x makes the pooled maximum the last point of each window
        ch = np.tile(np.arange(16.0), (16, 1))[None]
        f = FeatureMap(SPEC, np.concatenate([ch, 2 * ch]))
        cfg = VerifyConfig(s=8, pool_window=2)
        v = loi_pool(LineSegment.from_array((0.5, 3.5, 7.5, 3.5)), f, cfg)
        assert v.tolist() == [1, 3, 5, 7, 2, 6, 10, 14]

    @settings(max_examples=50)
    @given(st.lists(st.floats(0, 16), min_size=4, max_size=4), st.integers(0, 10**6))
    def test_reversal(self, seg, seed):
        f = FeatureMap(SPEC, np.random.default_rng(seed).random((2, 16, 16)))
        cfg = VerifyConfig(s=32, pool_window=4)
        a = loi_pool(seg, f, cfg).reshape(2, 8)
        b = loi_pool(seg[2:] + seg[:2], f, cfg).reshape(2, 8)
        assert np.allclose(a, b[:, ::-1], atol=1e-12)
        full = VerifyConfig(s=32, pool_window=32)
        assert np.allclose(loi_pool(seg, f, full), loi_pool(seg[2:] + seg[:2], f, full), atol=1e-12)

    def test_batch_matches_single(self):
        f = FeatureMap(SPEC, np.random.default_rng(0).random((7, 16, 16)))
        segs = np.random.default_rng(1).uniform(0, 16, (5, 4))
        batch = loi_pool_batch(segs, f)
        for k in range(5):
            assert np.array_equal(batch[k], loi_pool(segs[k], f))

    def test_feature_map_validation(self):
        with pytest.raises(ValueError):
            FeatureMap(SPEC, np.full((1, 16, 16), np.nan))
        with pytest.raises(ValueError):
            FeatureMap(SPEC, np.zeros((1, 15, 16)))


class TestScorer:
    def test_zero_weights(self):
        s = MLPScorer.zeros(5)
        assert np.all(s.score(np.random.default_rng(0).normal(size=(4, 5))) == 0.5)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            MLPScorer.zeros(5).score(np.zeros((2, 4)))

    def test_bce_at_half(self):
        loss, _ = MLPScorer.zeros(3).loss_and_grads(np.zeros((1, 3)), [1.0])
        assert abs(loss - math.log(2)) < 1e-12

    @settings(max_examples=20)
    @given(st.integers(0, 10**6))
    def test_gradient_check(self, seed):
        rng = np.random.default_rng(seed)
        D, H, N = 5, 4, 7
        m = MLPScorer(rng.normal(size=(D, H)), rng.normal(size=H), rng.normal(size=H), float(rng.normal()),
                      rng.normal(size=D), rng.uniform(0.5, 2, D))
        x, y = rng.normal(size=(N, D)), (rng.random(N) < 0.5).astype(float)
        _, grads = m.loss_and_grads(x, y)
        h = 1e-5
        for p, g in zip(m.params(), grads):
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                if p.shape == (1,):
                    m.b2 = float(p[0])
                up = m.loss_and_grads(x, y)[0]
                p[idx] = old - h
                if p.shape == (1,):
                    m.b2 = float(p[0])
                down = m.loss_and_grads(x, y)[0]
                p[idx] = old
                if p.shape == (1,):
                    m.b2 = float(p[0])
                num = (up - down) / (2 * h)
                # ReLU kinks make a central difference meaningless within h of zero
                z1 = ((x - m.mean) / m.std) @ m.w1 + m.b1
                if np.min(np.abs(z1)) < 10 * h:
                    continue
                assert abs(num - g[idx]) <= 1e-4 * max(abs(num), abs(g[idx]), 1e-6), (idx, num, g[idx])

    def test_save_load(self, tmp_path):
        rng = np.random.default_rng(2)
        m = MLPScorer(rng.normal(size=(6, 3)), rng.normal(size=3), rng.normal(size=3), 0.7,
                      rng.normal(size=6), rng.uniform(1, 2, 6))
        m.save(tmp_path / "s.bin")
        back = MLPScorer.load(tmp_path / "s.bin")
        x = rng.normal(size=(4, 6))
        assert np.array_equal(back.score(x), m.score(x))

    def test_training_is_deterministic_and_separates(self):
        rng = np.random.default_rng(0)
        x = np.concatenate([rng.normal(1, 1, (60, 4)), rng.normal(-1, 1, (60, 4))])
        y = np.r_[np.ones(60), np.zeros(60)]
        a = train_reference_scorer(x, y, seed=3, epochs=200)
        b = train_reference_scorer(x, y, seed=3, epochs=200)
        assert np.array_equal(a.w1, b.w1) and a.b2 == b.b2
        s = a.score(x)
        assert auc(s[:60], s[60:]) > 0.9

    def test_auc_matches_pair_counting(self):
        rng = np.random.default_rng(4)
        pos = np.round(rng.random(30), 1)
        neg = np.round(rng.random(25), 1)
        assert abs(auc(pos, neg) - pair_counting_auc(pos, neg)) < 1e-12
