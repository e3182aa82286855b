"""Sobel baseline tests: oracle equality, invariances, threshold behavior."""

import numpy as np
import pytest

from microcompat import sobel as S
from microcompat.data import synth_compatible, synth_incompatible
from microcompat.errors import ShapeError, UsageError
from oracles import naive_sobel


def rand_img(rng, h, w):
    return rng.integers(0, 256, (h, w), dtype=np.uint8)


class TestSobelFilter:
    def test_constant_image_scores_zero(self):
        res = S.sobel_filter(np.full((16, 16), 137, np.uint8))
        assert np.all(res.gx == 0) and np.all(res.gy == 0)
        assert res.score == 0.0

    def test_vertical_step_gives_4h_in_gx(self):
        h = 50
        img = np.zeros((8, 8), np.uint8)
        img[:, 4:] = h
        res = S.sobel_filter(img)
        ref_gx, ref_gy, _, _ = naive_sobel(img)
        assert np.array_equal(res.gx, ref_gx)
        assert np.array_equal(res.gy, ref_gy)
        # the two columns whose window straddles the step see 4h
        assert np.all(res.gx[:, 2:4] == 4 * h)
        assert np.all(res.gx[:, :2] == 0) and np.all(res.gx[:, 4:] == 0)
        assert np.all(res.gy == 0)

    def test_horizontal_step_is_transposed_case(self):
        h = 70
        img = np.zeros((8, 8), np.uint8)
        img[4:, :] = h
        res = S.sobel_filter(img)
        res_t = S.sobel_filter(img.T)
        assert np.array_equal(res.gy, res_t.gx.T)
        assert np.array_equal(res.gx, res_t.gy.T)

    def test_matches_oracle_on_random_images(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            hgt = int(rng.integers(3, 24))
            wid = int(rng.integers(3, 24))
            img = rand_img(rng, hgt, wid)
            res = S.sobel_filter(img)
            gx, gy, mag, score = naive_sobel(img)
            assert np.array_equal(res.gx, gx)
            assert np.array_equal(res.gy, gy)
            assert np.allclose(res.magnitude, mag)
            assert res.score == score

    def test_small_image_rejected(self):
        with pytest.raises(ShapeError):
            S.sobel_filter(np.zeros((2, 5), np.uint8))

    def test_score_invariant_under_rotations_and_flips(self):
        rng = np.random.default_rng(3)
        img = rand_img(rng, 40, 40)
        base = S.sobel_score(img)
        for variant in (np.rot90(img), np.rot90(img, 2), np.rot90(img, 3),
                        img[:, ::-1], img[::-1]):
            assert abs(S.sobel_score(np.ascontiguousarray(variant)) - base) < 1e-9

    def test_score_scales_with_contrast_on_float_planes(self):
        rng = np.random.default_rng(4)
        plane = rng.normal(size=(32, 32))
        plane -= plane.mean()
        s1 = S.sobel_filter(plane).score
        s3 = S.sobel_filter(3.0 * plane).score
        assert abs(s3 - 3.0 * s1) < 1e-9 * max(1.0, s3)


class TestSobelClassify:
    def test_constant_image_compatible_at_default_boundary(self):
        out = S.sobel_classify(np.full((16, 16), 99, np.uint8))
        assert out.decision == "compatible" and out.score == 0.0 and out.boundary == 18.0

    def test_boundary_zero_degenerate(self):
        assert S.sobel_classify(np.zeros((8, 8), np.uint8), boundary=0.0).decision == "incompatible"
        noisy = np.random.default_rng(0).integers(0, 256, (8, 8), dtype=np.uint8)
        assert S.sobel_classify(noisy, boundary=0.0).decision == "incompatible"

    def test_synthetic_islands_detected_at_tuned_boundary(self):
        scores_c, scores_i = [], []
        for i in range(100):
            scores_c.append(S.sobel_score(synth_compatible(np.random.default_rng([9, 0, i]), 256)))
            scores_i.append(S.sobel_score(synth_incompatible(np.random.default_rng([9, 1, i]), 256)))
        rows = S.sweep_scores(scores_c + scores_i,
                              ["compatible"] * 100 + ["incompatible"] * 100,
                              boundaries=np.arange(0.0, 40.0, 0.5))
        tuned = next(r.boundary for r in rows if r.best)
        hit = sum(1 for s in scores_i if s >= tuned)
        assert hit >= 90


class TestThresholdSweep:
    def test_single_image_accuracy_in_01(self):
        img = np.full((8, 8), 10, np.uint8)
        rows = S.threshold_sweep([(img, "compatible")], [0.0, 5.0, 50.0])
        for r in rows:
            assert r.report.accuracy in (0, 1)

    def test_count_monotonicity_under_rising_boundary(self):
        # predicted-incompatible set shrinks as the boundary rises, so TP
        # never decreases and TN never increases
        rng = np.random.default_rng(5)
        imgs = [(rand_img(rng, 12, 12), "incompatible") for _ in range(12)]
        imgs += [(np.full((12, 12), int(v), np.uint8), "compatible") for v in rng.integers(0, 255, 6)]
        boundaries = [0.0, 5.0, 20.0, 60.0, 200.0, 1e9]
        rows = S.threshold_sweep(imgs, boundaries)
        tps = [r.report.recall * 6 for r in rows]
        tns = [r.report.specificity * 12 for r in rows]
        assert all(a <= b for a, b in zip(tps, tps[1:]))
        assert all(a >= b for a, b in zip(tns, tns[1:]))

    def test_predicted_incompatible_set_shrinks(self):
        rng = np.random.default_rng(6)
        scores = rng.uniform(0, 50, size=40)
        labels = ["compatible"] * 40
        sets = []
        for b in (5.0, 15.0, 30.0):
            sets.append({i for i, s in enumerate(scores) if s >= b})
        assert sets[2] <= sets[1] <= sets[0]

    def test_flagged_boundary_beats_degenerate_ends(self):
        imgs = []
        for i in range(50):
            imgs.append((synth_compatible(np.random.default_rng([11, 0, i]), 256), "compatible"))
            imgs.append((synth_incompatible(np.random.default_rng([11, 1, i]), 256), "incompatible"))
        boundaries = [0.0] + list(np.arange(2.0, 42.0, 2.0)) + [1e9]
        rows = S.threshold_sweep(imgs, boundaries)
        best = next(r for r in rows if r.best)
        assert best.report.accuracy >= rows[0].report.accuracy
        assert best.report.accuracy >= rows[-1].report.accuracy
        assert best.report.accuracy > 0.9  # exhaustive-sweep oracle on separated classes

    def test_empty_dataset_rejected(self):
        with pytest.raises(UsageError):
            S.threshold_sweep([], [1.0])
