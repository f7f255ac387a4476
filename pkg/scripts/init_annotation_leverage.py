#!/usr/bin/env python3
"""Demonstrate how initial-frame annotation error scales with target growth.

A correspondence-style tracker estimates the frame-0 -> frame-t pose and
carries the initial quad through it, so a small error in the initial
annotation is amplified by the target's scale change: on a sequence that
grows 3x, a 2 px RMS init perturbation appears as roughly 6 px in the
final frame.  Direct corner detection on the segmentation mask locates
the target in the current frame instead and barely notices the same
perturbation.  This is the mechanism that makes re-annotating initial
frames worthwhile.
"""

import argparse

import numpy as np

from quadtrack.fusion import track_sequence
from quadtrack.geometry import warp_points
from quadtrack.masktracker import MaskTracker, MaskTrackerConfig
from quadtrack.providers import PatchFeatureProvider
from quadtrack.synth import SceneSpec, SegmentSpec, generate, oracle_providers


def corner_rmse(a: np.ndarray, b: np.ndarray) -> float:
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def growth_spec(growth: float, frames: int) -> SceneSpec:
    rate = growth ** (1.0 / frames)
    return SceneSpec(
        width=480,
        height=420,
        texture="flat",
        quad=(195.0, 172.0, 285.0, 172.0, 285.0, 248.0, 195.0, 248.0),
        segments=(SegmentSpec(kind="scale", frames=frames, rate=rate),),
    )


def perturbed_quad(quad: np.ndarray, rms: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    delta = rng.normal(size=(4, 2))
    delta *= rms / np.sqrt(np.mean(np.sum(delta * delta, axis=1)))
    return quad + delta


def run_correspondence_tracker(gt, init_quad: np.ndarray) -> np.ndarray:
    """Flow-driven pose, initial quad carried along; returns final quad."""
    masks, flows, feats = oracle_providers(gt, exact_masks=True)
    results = track_sequence(
        (gt.frame(t) for t in range(gt.n_frames)), init_quad, masks, flows, feats
    )
    return warp_points(results[-1].h, init_quad)


def run_mask_tracker(gt, init_quad: np.ndarray) -> np.ndarray:
    """Corner detection on the current mask; returns final quad."""
    tracker = MaskTracker(
        gt.frame(0), init_quad, PatchFeatureProvider(), MaskTrackerConfig()
    )
    out = None
    for t in range(1, gt.n_frames):
        out = tracker.step(gt.frame(t), mask=gt.exact_mask(t))
    return out.quad.points


def leverage_experiment(
    init_rms: float = 2.0, growth: float = 3.0, frames: int = 30, seed: int = 0
) -> dict:
    gt = generate(growth_spec(growth, frames))
    q0 = gt.quads[0]
    q_final = gt.quads[-1]
    q_pert = perturbed_quad(q0, init_rms, seed)

    corr_final = run_correspondence_tracker(gt, q_pert)
    err_corr = corner_rmse(corr_final, q_final)

    mask_clean = run_mask_tracker(gt, q0)
    mask_pert = run_mask_tracker(gt, q_pert)
    err_mask_clean = corner_rmse(mask_clean, q_final)
    err_mask_pert = corner_rmse(mask_pert, q_final)

    return {
        "init_rms": init_rms,
        "growth": growth,
        "correspondence_final_err": err_corr,
        "amplification_ratio": err_corr / init_rms,
        "mask_final_err_clean": err_mask_clean,
        "mask_final_err_perturbed": err_mask_pert,
        "mask_degradation": abs(err_mask_pert - err_mask_clean),
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--init-rms", type=float, default=2.0)
    parser.add_argument("--growth", type=float, default=3.0)
    parser.add_argument("--frames", type=int, default=30)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    res = leverage_experiment(args.init_rms, args.growth, args.frames, args.seed)
    print(f"target growth over clip:            {res['growth']:.1f}x")
    print(f"initial annotation error:           {res['init_rms']:.2f} px RMS")
    print(f"correspondence tracker, final err:  {res['correspondence_final_err']:.2f} px")
    print(f"  amplification ratio:              {res['amplification_ratio']:.2f}")
    print(f"mask tracker, final err (clean):    {res['mask_final_err_clean']:.2f} px")
    print(f"mask tracker, final err (perturbed): {res['mask_final_err_perturbed']:.2f} px")
    print(f"  degradation from perturbation:    {res['mask_degradation']:.3f} px")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
