import numpy as np
import pytest

from condet import (
    BoundingBox,
    MatchDistanceSpec,
    hausdorff_distance,
    lac_distance,
    match,
    mix_distance,
    pair_distance,
)
from helpers import random_float_box, random_probs


class TestLacDistance:
    def test_hand_value(self):
        assert lac_distance(1, (0.1, 0.7, 0.2)) == pytest.approx(0.3)

    def test_one_hot_perfect(self):
        assert lac_distance(2, (0.0, 0.0, 1.0)) == 0.0

    def test_uniform_four_classes(self):
        assert lac_distance(3, (0.25, 0.25, 0.25, 0.25)) == 0.75

    def test_out_of_range_label(self):
        with pytest.raises(ValueError):
            lac_distance(3, (0.5, 0.5))


class TestMixDistance:
    def setup_method(self):
        self.gt = (BoundingBox(0, 0, 10, 10), 1)
        self.pred = (BoundingBox(2, 3, 9, 8), (0.2, 0.6, 0.2))

    def test_tau_zero_is_hausdorff(self):
        assert mix_distance(self.gt, self.pred, 0.0) == hausdorff_distance(
            self.gt[0], self.pred[0]
        )

    def test_tau_one_is_lac(self):
        assert mix_distance(self.gt, self.pred, 1.0) == pytest.approx(
            lac_distance(self.gt[1], self.pred[1])
        )

    def test_hand_value(self):
        # d_lac = 0.4, d_haus = 8: 0.25 * 0.4 + 0.75 * 8 = 6.1
        gt = (BoundingBox(0, 0, 10, 10), 0)
        pred = (BoundingBox(8, 0, 10, 10), (0.6, 0.4))
        assert hausdorff_distance(gt[0], pred[0]) == 8.0
        assert mix_distance(gt, pred, 0.25) == pytest.approx(6.1)

    def test_tau_out_of_range(self):
        with pytest.raises(ValueError):
            mix_distance(self.gt, self.pred, 1.5)


class TestMatch:
    def test_singleton_pred(self):
        rng = np.random.default_rng(0)
        gts = [(random_float_box(rng), 0) for _ in range(4)]
        preds = [(random_float_box(rng), random_probs(rng, 3))]
        got = match(gts, preds, MatchDistanceSpec("hausdorff"))
        assert got == (0, 0, 0, 0)

    def test_empty_preds(self):
        rng = np.random.default_rng(1)
        gts = [(random_float_box(rng), 0) for _ in range(3)]
        assert match(gts, [], MatchDistanceSpec("hausdorff")) == (None, None, None)

    def test_matches_brute_force_argmin(self):
        rng = np.random.default_rng(2)
        spec = MatchDistanceSpec("hausdorff")
        for _ in range(200):
            gts = [(random_float_box(rng), int(rng.integers(3))) for _ in range(2)]
            preds = [(random_float_box(rng), random_probs(rng, 3)) for _ in range(3)]
            got = match(gts, preds, spec)
            for j, gt in enumerate(gts):
                dists = [pair_distance(gt, p, spec) for p in preds]
                assert dists[got[j]] == min(dists)
                # lowest-index tie breaking
                assert got[j] == dists.index(min(dists))

    def test_indices_in_range(self):
        rng = np.random.default_rng(3)
        for kind in ("hausdorff", "lac", "giou", "mix"):
            spec = MatchDistanceSpec(kind)
            for _ in range(50):
                n_gt = int(rng.integers(0, 4))
                n_pred = int(rng.integers(0, 5))
                gts = [(random_float_box(rng), int(rng.integers(3))) for _ in range(n_gt)]
                preds = [(random_float_box(rng), random_probs(rng, 3)) for _ in range(n_pred)]
                got = match(gts, preds, spec)
                assert len(got) == n_gt
                for idx in got:
                    assert idx is None or 0 <= idx < n_pred
                    assert (idx is None) == (n_pred == 0)

    def test_stable_under_irrelevant_alternative(self):
        # Appending a prediction strictly farther from every ground truth
        # leaves each ground truth's chosen distance unchanged.
        rng = np.random.default_rng(4)
        spec = MatchDistanceSpec("hausdorff")
        for _ in range(200):
            gts = [(random_float_box(rng, 50.0), 0) for _ in range(3)]
            preds = [(random_float_box(rng, 50.0), random_probs(rng, 3)) for _ in range(3)]
            far = (BoundingBox(5000.0, 5000.0, 5001.0, 5001.0), random_probs(rng, 3))
            before = match(gts, preds, spec)
            after = match(gts, preds + [far], spec)
            for j, gt in enumerate(gts):
                d_before = pair_distance(gt, preds[before[j]], spec)
                d_after = pair_distance(gt, (preds + [far])[after[j]], spec)
                assert d_before == d_after

    def test_hausdorff_ignores_class_lac_ignores_geometry(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            gts = [(random_float_box(rng), int(rng.integers(3))) for _ in range(3)]
            preds = [(random_float_box(rng), random_probs(rng, 3)) for _ in range(4)]
            shuffled_probs = [
                (box, random_probs(rng, 3)) for box, _ in preds
            ]
            assert match(gts, preds, MatchDistanceSpec("hausdorff")) == match(
                gts, shuffled_probs, MatchDistanceSpec("hausdorff")
            )
            moved_boxes = [(random_float_box(rng), probs) for _, probs in preds]
            assert match(gts, preds, MatchDistanceSpec("lac")) == match(
                gts, moved_boxes, MatchDistanceSpec("lac")
            )

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            MatchDistanceSpec("euclidean")
        with pytest.raises(ValueError):
            MatchDistanceSpec("mix", tau=1.5)
