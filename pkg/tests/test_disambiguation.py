import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quadtrack import disambiguation as D
from quadtrack.geometry import Homography, quad_area, warp_points
from quadtrack.imgio import write_feature_file
from quadtrack.providers import PatchFeatureProvider

import oracles
from testutil import quadrant_texture, warp_image

SQUARE = np.array([[60.0, 60.0], [160.0, 60.0], [160.0, 160.0], [60.0, 160.0]])


def make_textured_template(provider=None, policy="biggest-so-far"):
    frame = quadrant_texture(224, 224)
    provider = provider or PatchFeatureProvider()
    cfg = D.RedetectConfig(template_policy=policy)
    return frame, D.make_template(frame, SQUARE, provider, cfg), provider, cfg


class TestCyclicShift:
    def test_indexing(self):
        pts = np.arange(8, dtype=float).reshape(4, 2)
        out = D.cyclic_shift(pts, 1)
        assert np.array_equal(out, pts[[1, 2, 3, 0]])

    def test_shift_zero_identity(self):
        pts = np.random.default_rng(0).normal(size=(4, 2))
        assert np.array_equal(D.cyclic_shift(pts, 0), pts)


class TestMotionShift:
    def test_rolled_square_recovers_inverse_shift(self):
        # candidates[j] = prev[(j + 1) % 4], so the aligning shift is 3
        cand = np.roll(SQUARE, -1, axis=0)
        decision = D.motion_shift(SQUARE, cand)
        assert decision.shift == 3
        assert decision.regime == "motion"
        assert np.allclose(D.cyclic_shift(cand, decision.shift), SQUARE)

    @given(st.integers(0, 3), st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_matches_bruteforce_oracle(self, roll, seed):
        rng = np.random.default_rng(seed)
        prev = rng.uniform(0, 200, size=(4, 2))
        cand = np.roll(prev + rng.normal(0, 1.0, size=(4, 2)), roll, axis=0)
        decision = D.motion_shift(prev, cand)
        assert decision.shift == oracles.motion_shift_oracle(prev, cand)

    def test_tie_goes_to_smallest_shift(self):
        # a perfect square centered at the previous centroid: rotating by
        # 90 degrees relabels corners without changing the cost
        prev = np.array([[0.0, 0.0]] * 4)
        cand = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
        assert D.motion_shift(prev, cand).shift == 0


class TestCropWindow:
    def test_growth_about_center(self):
        quad = np.array([[10.0, 20.0], [50.0, 20.0], [50.0, 60.0], [10.0, 60.0]])
        x0, y0, x1, y1 = D.crop_window(quad, (200, 200), margin=0.10)
        assert (x0, y0, x1, y1) == (8.0, 18.0, 52.0, 62.0)

    def test_clamped_to_frame(self):
        quad = np.array([[-5.0, -5.0], [30.0, -5.0], [30.0, 30.0], [-5.0, 30.0]])
        x0, y0, x1, y1 = D.crop_window(quad, (40, 40), margin=0.10)
        assert x0 == 0.0 and y0 == 0.0
        assert x1 <= 39.0 and y1 <= 39.0

    def test_extract_crop_shape(self):
        frame = quadrant_texture(100, 120)
        win = D.crop_window(SQUARE / 2, frame.shape)
        crop = D.extract_crop(frame, win, size=224)
        assert crop.shape == (224, 224)


class TestFeatureSimilarity:
    def test_self_similarity_is_one(self):
        rng = np.random.default_rng(3)
        grid = rng.normal(size=(16, 16, 3))
        grid /= np.linalg.norm(grid, axis=2, keepdims=True)
        fm = D.FeatureMap(grid.copy())
        assert D.feature_similarity(fm, fm) == pytest.approx(1.0)

    def test_disjoint_masks_give_minus_inf(self):
        a = np.zeros((4, 4, 3))
        b = np.zeros((4, 4, 3))
        a[0, 0] = [1, 0, 0]
        b[3, 3] = [1, 0, 0]
        assert D.feature_similarity(D.FeatureMap(a), D.FeatureMap(b)) == -np.inf

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            D.feature_similarity(
                D.FeatureMap(np.ones((4, 4, 3))), D.FeatureMap(np.ones((8, 8, 3)))
            )

    def test_masked_cells_excluded_from_mean(self):
        a = np.zeros((2, 1, 2))
        b = np.zeros((2, 1, 2))
        a[0, 0] = [1.0, 0.0]
        b[0, 0] = [0.0, 1.0]  # orthogonal: dot 0
        a[1, 0] = [1.0, 0.0]  # present only in a: must not count
        assert D.feature_similarity(D.FeatureMap(a), D.FeatureMap(b)) == 0.0


class TestPatchFeatureProvider:
    def test_grid_shape_and_masking(self):
        fm = PatchFeatureProvider().extract(np.zeros((224, 224)))
        assert fm.grid.shape == (16, 16, 3)
        assert not fm.cell_mask().any()

    def test_unit_norm_where_present(self):
        fm = PatchFeatureProvider().extract(quadrant_texture(224, 224))
        norms = np.linalg.norm(fm.grid, axis=2)
        assert np.allclose(norms[fm.cell_mask()], 1.0)

    def test_indivisible_crop_rejected(self):
        with pytest.raises(ValueError):
            PatchFeatureProvider().extract(np.zeros((223, 224)))


class TestAppearanceShift:
    @pytest.mark.parametrize("roll", [0, 1, 2, 3])
    def test_recovers_alignment_of_rolled_corners(self, roll):
        frame, template, provider, cfg = make_textured_template()
        cand = np.roll(SQUARE, roll, axis=0)
        decision = D.appearance_shift(template, frame, cand, provider, cfg)
        assert decision.regime == "appearance"
        assert np.allclose(D.cyclic_shift(cand, decision.shift), SQUARE)
        assert decision.score > 0.9

    def test_rejects_motion_consistent_but_wrong_orientation(self):
        # object rotated 90 degrees in the frame: motion cost is identical
        # for every shift, appearance must still realign the texture
        frame0, template, provider, cfg = make_textured_template()
        h_rot = Homography.rotation(np.pi / 2, center=(110.0, 110.0))
        frame1 = warp_image(frame0, h_rot, frame0.shape)
        cand = warp_points(h_rot, SQUARE)  # correctly labeled corners
        for roll in range(4):
            rolled = np.roll(cand, roll, axis=0)
            decision = D.appearance_shift(template, frame1, rolled, provider, cfg)
            assert np.allclose(
                D.cyclic_shift(rolled, decision.shift), cand, atol=1e-9
            )


class TestRedetectionConfirmation:
    def test_interrupted_streak_rejected(self):
        assert D.confirm_redetection([2, 2, 1, 2, 2], theta_r=5) is None

    def test_none_resets(self):
        assert D.confirm_redetection([2, 2, None, 2, 2], theta_r=5) is None

    def test_confirmed_after_theta_r(self):
        assert D.confirm_redetection([1, 3, 3, 3, 3, 3], theta_r=5) == 3

    def test_too_short_history(self):
        assert D.confirm_redetection([2, 2, 2, 2], theta_r=5) is None

    def test_theta_r_configurable(self):
        assert D.confirm_redetection([0, 2, 2], theta_r=2) == 2


class TestTemplatePolicy:
    def test_biggest_so_far_keeps_max_area(self):
        frame, template, provider, cfg = make_textured_template()
        quads = [SQUARE * s for s in (1.0, 1.2, 1.1)]  # areas 100%, 144%, 121%
        areas = [quad_area(q) for q in quads]
        store = template
        for q, a in zip(quads, areas):
            store = D.update_template(store, frame, q, a, provider, cfg)
        assert store.area == pytest.approx(areas[1])
        assert np.allclose(store.quad, quads[1])

    def test_init_only_never_updates(self):
        frame, template, provider, cfg = make_textured_template(policy="init-only")
        bigger = SQUARE * 2
        store = D.update_template(
            template, frame, bigger, quad_area(bigger), provider, cfg
        )
        assert store is template

    def test_frozen_blocks_updates(self):
        frame, template, provider, cfg = make_textured_template()
        frozen = D.freeze_template(template)
        assert frozen.frozen and not template.frozen
        bigger = SQUARE * 2
        store = D.update_template(
            frozen, frame, bigger, quad_area(bigger), provider, cfg
        )
        assert store is frozen
        assert store.area == pytest.approx(quad_area(SQUARE))


class TestFeatureFileIngestion:
    def test_round_trip_to_feature_map(self, tmp_path):
        rng = np.random.default_rng(11)
        grid = rng.normal(size=(16, 16, 3)).astype(np.float32)
        path = tmp_path / "feat.bin"
        write_feature_file(path, grid)
        fm = D.load_feature_map(path)
        assert fm.grid.shape == (16, 16, 3)
        assert np.allclose(fm.grid, grid.astype(np.float64))
