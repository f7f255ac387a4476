"""End-to-end acceptance checks, one printed verdict line per area.

Each test exercises a whole subsystem at realistic scale and prints a
single [PASS]/[FAIL] line with the measured numbers (run pytest with -s
to see them on success).  Tolerances are part of the contract; do not
loosen them to make a failing run green.
"""

import importlib.util
import time
from pathlib import Path

import numpy as np

from testutil import max_corner_error, random_convex_quad, rasterize_quad

from quadtrack import evaluation as E
from quadtrack import flowfit as F
from quadtrack import maskgeom as M
from quadtrack.fusion import FusionConfig, track_sequence
from quadtrack.geometry import (
    Homography,
    alignment_error,
    compose,
    estimate_homography,
    warp_points,
)
from quadtrack.masktracker import MaskTracker, MaskTrackerConfig
from quadtrack.providers import FaultInjectionFlowProvider, PatchFeatureProvider
from quadtrack.synth import (
    OracleFlowProvider,
    OracleMaskProvider,
    SceneSpec,
    SegmentSpec,
    generate,
    oracle_providers,
)

ROOT = Path(__file__).resolve().parents[1]


def report(name: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}", flush=True)
    assert ok, f"{name}: {detail}"


def random_homography(rng: np.random.Generator, scale: float = 0.1) -> Homography:
    """Well-conditioned random projective map built from a perturbed square."""
    src = np.array([[0.0, 0.0], [100.0, 0.0], [100.0, 100.0], [0.0, 100.0]])
    dst = src + rng.uniform(-scale * 100.0, scale * 100.0, size=(4, 2))
    return estimate_homography(src, dst)


class TestGeometry:
    def test_geometry_invariants(self):
        t0 = time.perf_counter()
        rng = np.random.default_rng(20240801)

        worst_comp = 0.0
        for _ in range(200):
            a = random_homography(rng)
            b = random_homography(rng)
            pts = rng.uniform(-50.0, 250.0, size=(12, 2))
            lhs = warp_points(compose(a, b), pts)
            rhs = warp_points(a, warp_points(b, pts))
            worst_comp = max(worst_comp, float(np.abs(lhs - rhs).max()))

        worst_fit = 0.0
        for _ in range(200):
            src = random_convex_quad(rng, (120.0, 120.0), rng.uniform(60.0, 200.0))
            dst = warp_points(random_homography(rng), src)
            h = estimate_homography(src, dst)
            worst_fit = max(worst_fit, float(np.abs(warp_points(h, src) - dst).max()))

        pts = rng.uniform(0.0, 200.0, size=(4, 2))
        a, b = random_homography(rng), random_homography(rng)
        symmetric = alignment_error(a, b, pts) == alignment_error(b, a, pts)
        translation_case = alignment_error(
            Homography.translation(3.0, 4.0), Homography.identity(), pts
        )

        elapsed = time.perf_counter() - t0
        ok = (
            worst_comp < 1e-8
            and worst_fit < 1e-7
            and symmetric
            and translation_case == 5.0
            and elapsed < 10.0
        )
        report(
            "geometry invariants",
            ok,
            f"composition dev {worst_comp:.2e}, exact-fit dev {worst_fit:.2e}, "
            f"symmetry {symmetric}, translation(3,4) err {translation_case}, "
            f"{elapsed:.1f}s",
        )


class TestLineVoting:
    def test_vote_weights_and_corner_recovery(self):
        t0 = time.perf_counter()
        endpoints_ok = (
            M.vote_weight(0.0) == 1.0
            and M.vote_weight(10.0) == 0.5
            and M.vote_weight(-10.0) == 0.5
        )

        mask = np.zeros((90, 90), dtype=bool)
        mask[25:65, 20:70] = True
        contours = M.extract_contours(mask)
        center = np.vstack([c.points for c in contours]).mean(axis=0)
        acc = M.hough_vote([M.Contour(c.points - center) for c in contours])
        n_points = sum(len(c) for c in contours)
        mass = float(acc.grid.sum())
        mass_ok = abs(mass - 8.0 * n_points) < 1e-9 * mass

        rng = np.random.default_rng(77)
        hits = 0
        for _ in range(100):
            quad = random_convex_quad(rng, (256.0, 256.0), rng.uniform(120.0, 260.0))
            res = M.fit_mask_quad(rasterize_quad(quad, 512, 512))
            if len(res.corners) == 4:
                if max_corner_error([c.point for c in res.corners], quad) < 3.0:
                    hits += 1

        elapsed = time.perf_counter() - t0
        ok = endpoints_ok and mass_ok and hits >= 95 and elapsed < 120.0
        report(
            "line voting and corner recovery",
            ok,
            f"weight endpoints {endpoints_ok}, mass {mass:.1f} for {n_points} pts, "
            f"{hits}/100 quads within 3 px, {elapsed:.1f}s",
        )


def rotation_scale_spec() -> SceneSpec:
    """300 motion steps covering scale 0.7..1.5 and rotation +-30 deg."""
    return SceneSpec(
        width=660,
        height=660,
        texture="checkerboard",
        texture_seed=9,
        texture_cell=48,
        quad=(130.0, 130.0, 530.0, 130.0, 530.0, 530.0, 130.0, 530.0),
        segments=(
            SegmentSpec("scale", 40, rate=0.7 ** (1.0 / 40.0)),
            SegmentSpec("scale", 80, rate=(1.5 / 0.7) ** (1.0 / 80.0)),
            SegmentSpec("scale", 40, rate=(1.0 / 1.5) ** (1.0 / 40.0)),
            SegmentSpec("rotate", 70, rate=30.0 / 70.0),
            SegmentSpec("rotate", 70, rate=-30.0 / 70.0),
        ),
        mask_noise_sigma=2.0,
    )


def run_mask_tracker_errors(gt, use_noisy: bool) -> np.ndarray:
    tracker = MaskTracker(
        gt.frame(0), gt.template_quad, PatchFeatureProvider(), MaskTrackerConfig()
    )
    errs = [0.0]
    for t in range(1, gt.n_frames):
        mask = gt.noisy_mask(t) if use_noisy else gt.exact_mask(t)
        out = tracker.step(gt.frame(t), mask=mask)
        d = out.quad.points - gt.quads[t]
        errs.append(float(np.sqrt(np.mean(np.sum(d * d, axis=1)))))
    return np.asarray(errs)


class TestMaskPipeline:
    def test_oracle_rotation_scale_sweep(self):
        t0 = time.perf_counter()
        gt = generate(rotation_scale_spec())
        assert gt.n_frames == 301

        exact_errs = run_mask_tracker_errors(gt, use_noisy=False)
        noisy_errs = run_mask_tracker_errors(gt, use_noisy=True)
        p15 = E.precision(noisy_errs, 15.0)

        elapsed = time.perf_counter() - t0
        ok = float(exact_errs.max()) < 3.0 and p15 >= 0.95 and elapsed < 300.0
        report(
            "mask pipeline oracle sweep",
            ok,
            f"300 steps, exact-mask max err {exact_errs.max():.2f} px, "
            f"noisy-mask p@15 {p15:.3f}, {elapsed:.1f}s",
        )


FIT_QUAD = np.array([[20.0, 20.0], [120.0, 25.0], [115.0, 130.0], [25.0, 120.0]])
FIT_SHAPE = (160, 160)


def flow_from_homography(h: Homography, shape=FIT_SHAPE) -> np.ndarray:
    gx, gy = np.meshgrid(
        np.arange(shape[1], dtype=float), np.arange(shape[0], dtype=float)
    )
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    return (warp_points(h, pts) - pts).reshape(shape[0], shape[1], 2)


class TestFlowFit:
    def test_exact_and_contaminated_recovery(self):
        t0 = time.perf_counter()
        rng = np.random.default_rng(41)

        worst_exact = 0.0
        exact_fractions_one = True
        for _ in range(50):
            h = random_homography(rng, scale=0.05)
            field = F.FlowField(flow_from_homography(h), np.ones(FIT_SHAPE))
            res = F.fit_flow_homography(field, FIT_QUAD)
            worst_exact = max(worst_exact, alignment_error(res.h_resid, h, FIT_QUAD))
            exact_fractions_one &= res.inlier_fraction == 1.0

        grid = F.sample_grid_in_quad(FIT_QUAD, FIT_SHAPE, 4)
        cfg = F.FlowFitConfig(ransac_iters=1500)
        worst_dirty = 0.0
        fractions = []
        for seed in range(50):
            h = random_homography(rng, scale=0.05)
            flow = flow_from_homography(h)
            sub = np.random.default_rng(seed)
            k = int(round(0.70 * len(grid)))
            sel = sub.choice(len(grid), size=k, replace=False)
            bump = sub.uniform(20.0, 60.0, size=(k, 2)) * sub.choice(
                [-1.0, 1.0], size=(k, 2)
            )
            flow[grid[sel, 1], grid[sel, 0]] += bump
            res = F.fit_flow_homography(F.FlowField(flow, np.ones(FIT_SHAPE)), FIT_QUAD, cfg)
            worst_dirty = max(worst_dirty, alignment_error(res.h_resid, h, FIT_QUAD))
            fractions.append(res.inlier_fraction)

        fractions = np.asarray(fractions)
        frac_ok = bool(np.all(np.abs(fractions - 0.30) <= 0.05))
        elapsed = time.perf_counter() - t0
        ok = worst_exact < 1e-3 and exact_fractions_one and worst_dirty < 0.5 and frac_ok
        report(
            "flow homography fit",
            ok,
            f"exact worst err {worst_exact:.2e} px (fractions all 1.0: "
            f"{exact_fractions_one}), 30%-inlier worst err {worst_dirty:.3f} px, "
            f"fraction range [{fractions.min():.3f}, {fractions.max():.3f}], "
            f"{elapsed:.1f}s",
        )


def controller_spec(i: int) -> SceneSpec:
    base = dict(
        width=320,
        height=270,
        texture="checkerboard",
        texture_seed=100 + i,
        texture_cell=28,
        quad=(60.0, 55.0, 185.0, 60.0, 180.0, 175.0, 65.0, 170.0),
    )
    segments = [
        (SegmentSpec("translate", 200, vector=(0.35, 0.18)),),
        (SegmentSpec("rotate", 200, rate=0.22),),
        (SegmentSpec("scale", 200, rate=1.0012),),
        (SegmentSpec("perspective", 200, vector=(1.2e-6, 8e-7)),),
        (
            SegmentSpec("translate", 100, vector=(-0.25, 0.1)),
            SegmentSpec("rotate", 100, rate=-0.2),
        ),
    ][i % 5]
    return SceneSpec(segments=segments, **base)


FAST_FIT = FusionConfig(flowfit=F.FlowFitConfig(ransac_iters=150))


class TestController:
    def test_noise_free_and_fault_injection(self):
        t0 = time.perf_counter()

        pooled = []
        for i in range(20):
            gt = generate(controller_spec(i))
            masks, flows, feats = oracle_providers(gt, exact_masks=True)
            results = track_sequence(
                (gt.frame(t) for t in range(gt.n_frames)),
                gt.template_quad,
                masks,
                flows,
                feats,
                FAST_FIT,
            )
            pooled.append(
                np.array(
                    [
                        alignment_error(r.h, gt.hs[r.frame_index], gt.template_quad)
                        for r in results
                    ]
                )
            )
        p5 = E.pooled_precision(pooled, 5.0)
        n_frames = sum(len(e) for e in pooled)

        fault_window = range(50, 61)
        spec = SceneSpec(
            width=320,
            height=270,
            texture="checkerboard",
            texture_seed=3,
            texture_cell=28,
            quad=(60.0, 55.0, 185.0, 60.0, 180.0, 175.0, 65.0, 170.0),
            segments=(SegmentSpec("translate", 70, vector=(0.5, 0.25)),),
        )
        gt = generate(spec)
        flows = FaultInjectionFlowProvider(
            OracleFlowProvider(gt), fault_window, magnitude=30.0
        )
        results = track_sequence(
            (gt.frame(t) for t in range(gt.n_frames)),
            gt.template_quad,
            OracleMaskProvider(gt, exact=True),
            flows,
            PatchFeatureProvider(),
            FAST_FIT,
        )
        errs = np.array(
            [alignment_error(r.h, gt.hs[r.frame_index], gt.template_quad) for r in results]
        )
        in_window = [results[t] for t in fault_window]
        fallback_exact = all(
            r.path_taken in ("attempt2", "fallback") for r in in_window
        ) and all(r.h is r.h_mask for r in in_window if r.path_taken == "fallback")
        took_fallback = any(r.path_taken == "fallback" for r in in_window)
        # restoration: within two frames after the window the error is back
        recovery_frames = next(
            (k for k in range(3) if errs[61 + k] < 3.0), None
        )
        window_bounded = float(errs[list(fault_window)].max())

        elapsed = time.perf_counter() - t0
        ok = (
            p5 >= 0.99
            and fallback_exact
            and took_fallback
            and recovery_frames is not None
            and recovery_frames <= 2
            and window_bounded < 3.0
            and elapsed < 600.0
        )
        report(
            "fusion controller end-to-end",
            ok,
            f"p@5 {p5:.4f} over {n_frames} frames, fault window max err "
            f"{window_bounded:.2f} px via mask fallback (bit-exact {fallback_exact}), "
            f"recovered {recovery_frames} frame(s) after restoration, {elapsed:.1f}s",
        )


class TestThresholdAblation:
    def test_rows_differ_only_in_fault_window(self):
        spec = SceneSpec(
            width=320,
            height=270,
            texture="checkerboard",
            texture_seed=5,
            texture_cell=28,
            quad=(60.0, 55.0, 185.0, 60.0, 180.0, 175.0, 65.0, 170.0),
            segments=(SegmentSpec("translate", 70, vector=(0.5, 0.25)),),
        )
        window = range(50, 61)
        rows = E.run_threshold_ablation(spec, window, thresholds=(0.10, 0.20, 0.30))

        complete = len(rows) == 3 and all(
            set(r["p"]) == {5.0, 15.0}
            and np.isfinite(list(r["p"].values())).all()
            and len(r["errors"]) == 71
            and len(r["paths"]) == 71
            for r in rows
        )
        outside_same = True
        for other in rows[1:]:
            for t in range(71):
                if t in window:
                    continue
                if rows[0]["paths"][t] != other["paths"][t]:
                    outside_same = False
                if abs(rows[0]["errors"][t] - other["errors"][t]) >= 1e-6:
                    outside_same = False
        ok = complete and outside_same
        report(
            "threshold ablation harness",
            ok,
            f"3 rows complete {complete}, identical outside fault window "
            f"{outside_same}, p@5 per row "
            + str([round(r["p"][5.0], 3) for r in rows]),
        )


class TestMetrics:
    def test_metric_definitions(self):
        boundary = E.precision(np.array([4.9, 5.0, 5.1]), 5.0)
        boundary_ok = boundary == 1.0 / 3.0

        rng = np.random.default_rng(11)
        curve = E.success_curve([rng.uniform(0.0, 25.0, size=500)])
        vals = [p for _, p in curve]
        monotone = bool(np.all(np.diff(vals) >= 0.0)) and len(curve) == 40

        impulse = np.zeros(60)
        impulse[0] = 1.0
        resp = E.ema(impulse, 0.1)
        ema_dev = float(np.abs(resp - 0.9 ** np.arange(60)).max())

        combine_ok = True
        for _ in range(100):
            names = [f"s{k}" for k in range(rng.integers(2, 6))]
            ea = {n: rng.uniform(0.0, 20.0, size=rng.integers(5, 30)) for n in names}
            eb = {n: rng.uniform(0.0, 20.0, size=len(ea[n])) for n in names}
            res = E.oracle_combine(ea, eb, tau=5.0)
            best = max(
                E.pooled_precision(ea.values(), 5.0),
                E.pooled_precision(eb.values(), 5.0),
            )
            combine_ok &= res.p_aggregate >= best

        ok = boundary_ok and monotone and ema_dev < 1e-12 and combine_ok
        report(
            "evaluation metrics",
            ok,
            f"boundary p {boundary:.6f} (exact 1/3 {boundary_ok}), curve monotone "
            f"{monotone}, impulse dev {ema_dev:.1e}, combine>=max on 100 instances "
            f"{combine_ok}",
        )


class TestAnnotationLeverage:
    def test_initial_error_amplification(self):
        mod_path = ROOT / "scripts" / "init_annotation_leverage.py"
        spec = importlib.util.spec_from_file_location("leverage_demo", mod_path)
        mod = importlib.util.module_from_spec(spec)
        spec.loader.exec_module(mod)

        res = mod.leverage_experiment(init_rms=2.0, growth=3.0, frames=30, seed=0)
        ratio = res["amplification_ratio"]
        degradation = res["mask_degradation"]
        ok = 2.0 <= ratio <= 4.0 and degradation < 1.0
        report(
            "initial annotation leverage",
            ok,
            f"correspondence amplification x{ratio:.2f} (target 2..4), direct "
            f"corner detection degradation {degradation:.3f} px",
        )
