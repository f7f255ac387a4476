"""Command line: synth generation, tracking, evaluation, annotation server.

Providers for `track` come either from directories of precomputed outputs
or from the synthetic oracle (which re-generates the sequence from the
spec.json saved next to the frames).  `synthetic` and `oracle` are
accepted as synonyms for the latter; stored .flo files are only faithful
when tracking follows the same pre-warp trajectory they were dumped
with, so the oracle is the default choice for synthetic data.
"""

from __future__ import annotations

import argparse
import sys
from collections import Counter
from pathlib import Path

from . import imgio
from .evaluation import (
    evaluate_dataset,
    parse_annotation_file,
    write_report_json,
    write_success_curve_csv,
    write_timeplot_csv,
)
from .fusion import FusionConfig, track_sequence, write_poses_csv
from .providers import (
    DirectoryFlowProvider,
    DirectoryMaskProvider,
    PatchFeatureProvider,
    find_annotation_file,
    find_frame_files,
)

ORACLE_NAMES = ("synthetic", "oracle")


def _load_oracle_gt(seq_dir: Path):
    from .synth import generate, load_scene_spec

    spec_path = seq_dir / "spec.json"
    if not spec_path.exists():
        raise SystemExit(
            f"error: {spec_path} not found; synthetic providers need the "
            "spec.json written by `quadtrack synth`"
        )
    return generate(load_scene_spec(spec_path))


def cmd_synth(args: argparse.Namespace) -> int:
    from .synth import generate, load_scene_spec, save_sequence

    spec = load_scene_spec(args.spec)
    gt = generate(spec)
    save_sequence(gt, args.out, write_flows=not args.no_flows)
    print(f"wrote {gt.n_frames} frames to {args.out}")
    return 0


def cmd_track(args: argparse.Namespace) -> int:
    from .synth import OracleFlowProvider, OracleMaskProvider

    seq_dir = Path(args.seq)
    frame_paths = find_frame_files(seq_dir)
    if not frame_paths:
        raise SystemExit(f"error: no frames under {seq_dir}")
    annot_path = find_annotation_file(seq_dir)
    if annot_path is None:
        raise SystemExit(f"error: no annotation.txt or quads.txt under {seq_dir}")
    quads = parse_annotation_file(annot_path)
    if not quads or quads[0] is None:
        raise SystemExit(f"error: {annot_path} has no frame-0 quad")

    gt = None
    if args.provider_masks in ORACLE_NAMES or args.provider_flow in ORACLE_NAMES:
        gt = _load_oracle_gt(seq_dir)

    if args.provider_masks in ORACLE_NAMES:
        masks = OracleMaskProvider(gt)
    else:
        masks = DirectoryMaskProvider(args.provider_masks)
    if args.provider_flow in ORACLE_NAMES:
        flows = OracleFlowProvider(gt)
    else:
        flows = DirectoryFlowProvider(args.provider_flow)

    cfg = FusionConfig(inlier_threshold=args.inlier_threshold)
    frames = (imgio.read_pgm(p) for p in frame_paths)
    results = track_sequence(
        frames, quads[0], masks, flows, PatchFeatureProvider(), cfg
    )
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_poses_csv(args.out, results)
    paths = Counter(r.path_taken for r in results)
    summary = ", ".join(f"{name}={paths[name]}" for name in sorted(paths))
    print(f"tracked {len(results)} frames -> {args.out} ({summary})")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    try:
        taus = tuple(float(t) for t in args.thresholds.split(","))
    except ValueError:
        raise SystemExit(f"error: bad --thresholds {args.thresholds!r}") from None
    report = evaluate_dataset(args.gt, args.pred, taus=taus, ema_coeff=args.ema)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_report_json(report, out)
    write_success_curve_csv(report, out.parent / "success_curve.csv")
    write_timeplot_csv(report, out.parent / "timeplot.csv")
    for tau in report.taus:
        print(f"p@{tau:g} = {report.p_aggregate[tau]:.4f}")
    print(f"report -> {out}")
    return 0


def cmd_annot_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .annotserve import create_app

    app = create_app(args.data)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quadtrack", description="planar target tracking toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic sequence from a spec")
    p.add_argument("--spec", required=True, help="scene spec (.json or .toml)")
    p.add_argument("--out", required=True, help="output sequence directory")
    p.add_argument(
        "--no-flows", action="store_true", help="skip writing .flo files"
    )
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("track", help="run the fusion controller on a sequence")
    p.add_argument("--seq", required=True, help="sequence directory")
    p.add_argument(
        "--provider-masks",
        required=True,
        help="mask directory, or 'synthetic' to replay the sequence spec",
    )
    p.add_argument(
        "--provider-flow",
        required=True,
        help="flow directory, or 'synthetic'/'oracle' for analytic flow",
    )
    p.add_argument("--inlier-threshold", type=float, default=0.20)
    p.add_argument("--out", required=True, help="output poses.csv")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--gt", required=True, help="annotation directory")
    p.add_argument("--pred", required=True, help="poses.csv directory")
    p.add_argument("--thresholds", default="5,15", help="comma-separated px taus")
    p.add_argument("--ema", type=float, default=0.1, help="EMA coefficient")
    p.add_argument("--out", required=True, help="output report.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("annot-serve", help="serve the annotation backend")
    p.add_argument("--data", required=True, help="sequence data directory")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.set_defaults(func=cmd_annot_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
