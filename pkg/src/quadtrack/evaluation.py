"""Benchmark evaluation: alignment errors, precision curves, reports.

Ground truth is one annotation file per sequence (one line of 8 reals per
frame, a line of NaN tokens for frames without a visible target), with an
optional ``attributes.txt`` sidecar tagging sequences.  Predictions are
the poses.csv files the tracking controller writes.  All precision
metrics use the strict ``error < tau`` convention and exclude frames
without ground truth from the denominator.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .fusion import FusionConfig, read_poses_csv, track_sequence
from .geometry import (
    GeometryError,
    Homography,
    alignment_error,
    estimate_homography,
    quad_is_degenerate,
)

logger = logging.getLogger(__name__)

# tau grid for success curves: 0.5, 1.0, ..., 20.0 px
SUCCESS_CURVE_TAUS = tuple(0.5 * k for k in range(1, 41))
EMA_TRUNCATE = 500


class EvalError(Exception):
    pass


class AnnotationError(EvalError):
    pass


class EmptyDenominator(EvalError):
    pass


class MismatchedSequences(EvalError):
    pass


# --- dataset ingestion -------------------------------------------------------


@dataclass
class SequenceAnnotation:
    """Per-frame ground-truth quads for one sequence plus its tags."""

    name: str
    quads: List[Optional[np.ndarray]]  # (4, 2) or None for absent frames
    tags: Tuple[str, ...] = ()

    @property
    def n_frames(self) -> int:
        return len(self.quads)

    @property
    def quad0(self) -> np.ndarray:
        return self.quads[0]


def parse_annotation_file(path) -> List[Optional[np.ndarray]]:
    """One quad per non-blank line: 8 reals, or 8 NaN tokens for absent."""
    quads: List[Optional[np.ndarray]] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            tokens = stripped.split()
            if len(tokens) != 8:
                raise AnnotationError(
                    f"{path}:{lineno}: expected 8 values, got {len(tokens)}"
                )
            try:
                vals = [float(t) for t in tokens]
            except ValueError as exc:
                raise AnnotationError(f"{path}:{lineno}: {exc}") from None
            nans = [math.isnan(v) for v in vals]
            if all(nans):
                quads.append(None)
            elif any(nans):
                raise AnnotationError(
                    f"{path}:{lineno}: mixed NaN and numeric coordinates"
                )
            else:
                quads.append(np.array(vals, dtype=np.float64).reshape(4, 2))
    return quads


def load_annotation(path, name: Optional[str] = None, tags: Tuple[str, ...] = ()) -> SequenceAnnotation:
    path = Path(path)
    quads = parse_annotation_file(path)
    if not quads:
        raise AnnotationError(f"{path}: no frames")
    if quads[0] is None:
        raise AnnotationError(f"{path}: frame 0 has no quad")
    if quad_is_degenerate(quads[0]):
        raise AnnotationError(f"{path}: frame 0 quad is degenerate")
    if name is None:
        name = path.parent.name if path.stem == "annotation" else path.stem
    return SequenceAnnotation(name=name, quads=quads, tags=tuple(tags))


def parse_attributes_file(path) -> Dict[str, Tuple[str, ...]]:
    """Sidecar lines: sequence name, then comma-separated tags."""
    out: Dict[str, Tuple[str, ...]] = {}
    with open(path) as fh:
        for line in fh:
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split(None, 1)
            name = parts[0]
            rest = parts[1] if len(parts) > 1 else ""
            out[name] = tuple(t.strip() for t in rest.split(",") if t.strip())
    return out


def discover_annotations(gt_dir) -> Dict[str, SequenceAnnotation]:
    """Load every sequence under ``gt_dir``.

    Two layouts are accepted: flat ``<name>.txt`` files, or one directory
    per sequence containing ``annotation.txt``.  An ``attributes.txt`` at
    the top level tags sequences by name.
    """
    gt_dir = Path(gt_dir)
    if not gt_dir.is_dir():
        raise EvalError(f"not a directory: {gt_dir}")
    tags = {}
    attr_path = gt_dir / "attributes.txt"
    if attr_path.exists():
        tags = parse_attributes_file(attr_path)

    found: Dict[str, SequenceAnnotation] = {}
    for path in sorted(gt_dir.glob("*.txt")):
        if path.name == "attributes.txt":
            continue
        name = path.stem
        found[name] = load_annotation(path, name=name, tags=tags.get(name, ()))
    for sub in sorted(p for p in gt_dir.iterdir() if p.is_dir()):
        annot = sub / "annotation.txt"
        if annot.exists():
            name = sub.name
            if name in found:
                raise EvalError(f"duplicate sequence name {name!r}")
            found[name] = load_annotation(annot, name=name, tags=tags.get(name, ()))
    if not found:
        raise EvalError(f"no annotation files under {gt_dir}")
    return found


# --- per-sequence errors -----------------------------------------------------


def gt_homographies(annot: SequenceAnnotation) -> List[Optional[Homography]]:
    """Exact 4-point DLT from the frame-0 quad to each frame's quad.

    Absent frames yield None; degenerate ground-truth quads are skipped
    with a warning rather than failing the whole sequence.
    """
    out: List[Optional[Homography]] = []
    q0 = annot.quad0
    for t, quad in enumerate(annot.quads):
        if quad is None:
            out.append(None)
            continue
        if quad_is_degenerate(quad):
            logger.warning("%s frame %d: degenerate GT quad skipped", annot.name, t)
            out.append(None)
            continue
        try:
            out.append(estimate_homography(q0, quad))
        except GeometryError:
            logger.warning("%s frame %d: GT homography fit failed", annot.name, t)
            out.append(None)
    return out


def sequence_errors(
    pred: Mapping[int, Homography], annot: SequenceAnnotation
) -> np.ndarray:
    """Per-frame alignment error of predicted poses against the GT quads.

    NaN marks frames without ground truth (excluded from metrics); inf
    marks frames the tracker produced no pose for (counted as misses).
    """
    gt_hs = gt_homographies(annot)
    errors = np.empty(annot.n_frames)
    for t, h_star in enumerate(gt_hs):
        if h_star is None:
            errors[t] = math.nan
        elif t not in pred:
            errors[t] = math.inf
        else:
            errors[t] = alignment_error(pred[t], h_star, annot.quad0)
    return errors


def load_poses_map(path) -> Dict[int, Homography]:
    return {r.frame_index: r.h for r in read_poses_csv(path)}


# --- metrics ------------------------------------------------------------------


def precision(errors, tau: float) -> float:
    """Fraction of evaluable frames with error strictly below ``tau``."""
    errs = np.asarray(errors, dtype=np.float64)
    evaluable = ~np.isnan(errs)
    denom = int(np.count_nonzero(evaluable))
    if denom == 0:
        raise EmptyDenominator("no frames with ground truth")
    hits = int(np.count_nonzero(errs[evaluable] < tau))
    return hits / denom


def pooled_precision(error_arrays: Iterable[np.ndarray], tau: float) -> float:
    pool = [np.asarray(e, dtype=np.float64).ravel() for e in error_arrays]
    if not pool:
        raise EmptyDenominator("no sequences")
    return precision(np.concatenate(pool), tau)


def success_curve(
    error_arrays: Iterable[np.ndarray], taus: Sequence[float] = SUCCESS_CURVE_TAUS
) -> List[Tuple[float, float]]:
    pool = [np.asarray(e, dtype=np.float64).ravel() for e in error_arrays]
    flat = np.concatenate(pool) if pool else np.array([])
    return [(float(tau), precision(flat, tau)) for tau in taus]


def hit_indicators(errors, tau: float) -> np.ndarray:
    """1.0 for hits, 0.0 for misses, NaN where there is no ground truth."""
    errs = np.asarray(errors, dtype=np.float64)
    out = (errs < tau).astype(np.float64)
    out[np.isnan(errs)] = math.nan
    return out


def ema(xs, coeff: float) -> np.ndarray:
    """y_t = coeff*x_t + (1-coeff)*y_{t-1}, seeded with y_0 = x_0."""
    if not 0.0 < coeff <= 1.0:
        raise ValueError("coeff must lie in (0, 1]")
    xs = np.asarray(xs, dtype=np.float64)
    out = np.empty_like(xs)
    prev = math.nan
    for t, x in enumerate(xs):
        prev = x if t == 0 else coeff * x + (1.0 - coeff) * prev
        out[t] = prev
    return out


def ema_timeplot(
    indicator_series: Sequence[np.ndarray],
    coeff: float,
    truncate: int = EMA_TRUNCATE,
) -> np.ndarray:
    """Average hit indicators over still-running sequences, then smooth.

    A sequence contributes at index t while t is within its length and
    the frame has ground truth.  The series stops when no sequence is
    alive or at ``truncate`` entries, whichever is first.
    """
    if not 0.0 < coeff <= 1.0:
        raise ValueError("coeff must lie in (0, 1]")
    series = [np.asarray(s, dtype=np.float64).ravel() for s in indicator_series]
    xs: List[float] = []
    for t in range(truncate):
        alive = [s[t] for s in series if t < len(s) and not math.isnan(s[t])]
        if not alive:
            break
        xs.append(float(np.mean(alive)))
    return ema(xs, coeff) if xs else np.array([])


# --- oracle combiner ----------------------------------------------------------


@dataclass
class CombineResult:
    """Per-sequence better-of-two selection and its pooled precision."""

    tau: float
    choices: Dict[str, str]  # sequence -> "a" | "b"
    errors: Dict[str, np.ndarray]
    p_sequence: Dict[str, float]
    p_aggregate: float


def _seq_precision_or_nan(errors: np.ndarray, tau: float) -> float:
    try:
        return precision(errors, tau)
    except EmptyDenominator:
        return math.nan


def oracle_combine(
    errors_a: Mapping[str, np.ndarray],
    errors_b: Mapping[str, np.ndarray],
    tau: float,
) -> CombineResult:
    """Pick the better tracker per sequence (ties go to ``a``) and pool."""
    if set(errors_a) != set(errors_b):
        raise MismatchedSequences("sequence sets differ")
    choices: Dict[str, str] = {}
    chosen: Dict[str, np.ndarray] = {}
    p_seq: Dict[str, float] = {}
    for name in sorted(errors_a):
        ea = np.asarray(errors_a[name], dtype=np.float64)
        eb = np.asarray(errors_b[name], dtype=np.float64)
        if ea.shape != eb.shape:
            raise MismatchedSequences(f"{name}: frame counts differ")
        pa = _seq_precision_or_nan(ea, tau)
        pb = _seq_precision_or_nan(eb, tau)
        take_b = not math.isnan(pb) and (math.isnan(pa) or pb > pa)
        choices[name] = "b" if take_b else "a"
        chosen[name] = eb if take_b else ea
        p_seq[name] = pb if take_b else pa
    return CombineResult(
        tau=float(tau),
        choices=choices,
        errors=chosen,
        p_sequence=p_seq,
        p_aggregate=pooled_precision(chosen.values(), tau),
    )


# --- report assembly ----------------------------------------------------------


def attribute_report(
    seq_errors: Mapping[str, np.ndarray],
    tags_by_name: Mapping[str, Tuple[str, ...]],
    taus: Sequence[float],
) -> Dict[str, Dict[float, float]]:
    """Pooled precision per attribute tag; row "All" covers every sequence."""
    rows: Dict[str, List[str]] = {"All": sorted(seq_errors)}
    for name in sorted(seq_errors):
        for tag in tags_by_name.get(name, ()):
            rows.setdefault(tag, []).append(name)
    table: Dict[str, Dict[float, float]] = {}
    for tag, names in rows.items():
        table[tag] = {}
        for tau in taus:
            try:
                table[tag][float(tau)] = pooled_precision(
                    (seq_errors[n] for n in names), tau
                )
            except EmptyDenominator:
                table[tag][float(tau)] = math.nan
    return table


@dataclass
class MetricReport:
    taus: Tuple[float, ...]
    p_aggregate: Dict[float, float]
    p_sequence: Dict[str, Dict[float, float]]
    n_frames: Dict[str, int]
    n_evaluated: Dict[str, int]
    success: List[Tuple[float, float]]
    attributes: Dict[str, Dict[float, float]]
    ema_coeff: float
    ema_tau: float
    ema_series: List[float] = field(default_factory=list)

    def as_dict(self) -> dict:
        def taumap(d: Mapping[float, float]) -> Dict[str, float]:
            return {f"{tau:g}": v for tau, v in d.items()}

        return {
            "taus": list(self.taus),
            "p_aggregate": taumap(self.p_aggregate),
            "p_sequence": {n: taumap(d) for n, d in sorted(self.p_sequence.items())},
            "n_frames": dict(sorted(self.n_frames.items())),
            "n_evaluated": dict(sorted(self.n_evaluated.items())),
            "success_curve": [[tau, p] for tau, p in self.success],
            "attributes": {t: taumap(d) for t, d in sorted(self.attributes.items())},
            "ema": {
                "coeff": self.ema_coeff,
                "tau": self.ema_tau,
                "series": list(self.ema_series),
            },
        }


def evaluate_sequences(
    seq_errors: Mapping[str, np.ndarray],
    tags_by_name: Mapping[str, Tuple[str, ...]],
    taus: Sequence[float] = (5.0, 15.0),
    ema_coeff: float = 0.1,
    ema_tau: Optional[float] = None,
) -> MetricReport:
    """Assemble the full metric report from per-sequence error arrays."""
    if not seq_errors:
        raise EvalError("nothing to evaluate")
    if ema_tau is None:
        ema_tau = float(taus[0])
    names = sorted(seq_errors)
    p_seq = {
        n: {float(t): _seq_precision_or_nan(seq_errors[n], t) for t in taus}
        for n in names
    }
    p_agg = {float(t): pooled_precision(seq_errors.values(), t) for t in taus}
    indicators = [hit_indicators(seq_errors[n], ema_tau) for n in names]
    return MetricReport(
        taus=tuple(float(t) for t in taus),
        p_aggregate=p_agg,
        p_sequence=p_seq,
        n_frames={n: int(np.asarray(seq_errors[n]).size) for n in names},
        n_evaluated={
            n: int(np.count_nonzero(~np.isnan(seq_errors[n]))) for n in names
        },
        success=success_curve(seq_errors.values()),
        attributes=attribute_report(seq_errors, tags_by_name, taus),
        ema_coeff=float(ema_coeff),
        ema_tau=float(ema_tau),
        ema_series=[float(v) for v in ema_timeplot(indicators, ema_coeff)],
    )


def _prediction_path(pred_dir: Path, name: str) -> Path:
    flat = pred_dir / f"{name}.csv"
    if flat.exists():
        return flat
    nested = pred_dir / name / "poses.csv"
    if nested.exists():
        return nested
    raise EvalError(f"no prediction for sequence {name!r} under {pred_dir}")


def evaluate_dataset(
    gt_dir,
    pred_dir,
    taus: Sequence[float] = (5.0, 15.0),
    ema_coeff: float = 0.1,
    max_workers: int = 8,
) -> MetricReport:
    """Score a directory of predictions against a directory of annotations.

    Sequences are scored concurrently; the report reduction itself is
    single threaded.
    """
    pred_dir = Path(pred_dir)
    annots = discover_annotations(gt_dir)

    def one(name: str) -> np.ndarray:
        pred = load_poses_map(_prediction_path(pred_dir, name))
        return sequence_errors(pred, annots[name])

    names = sorted(annots)
    with ThreadPoolExecutor(max_workers=min(max_workers, len(names))) as pool:
        arrays = list(pool.map(one, names))
    seq_errors = dict(zip(names, arrays))
    tags = {n: annots[n].tags for n in names}
    return evaluate_sequences(seq_errors, tags, taus=taus, ema_coeff=ema_coeff)


# --- writers -------------------------------------------------------------------


def write_report_json(report: MetricReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_success_curve_csv(report: MetricReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau", "precision"])
        for tau, p in report.success:
            writer.writerow([repr(float(tau)), repr(float(p))])


def write_timeplot_csv(report: MetricReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "ema"])
        for t, v in enumerate(report.ema_series):
            writer.writerow([t, repr(float(v))])


# --- threshold ablation ---------------------------------------------------------


def run_threshold_ablation(
    spec,
    fault_frames: Iterable[int],
    thresholds: Sequence[float] = (0.10, 0.20, 0.30),
    taus: Sequence[float] = (5.0, 15.0),
    magnitude: float = 30.0,
    fault_seed: int = 0,
) -> List[dict]:
    """Sweep the controller's inlier-fraction threshold on one fault run.

    Every row replays the same synthetic sequence with garbage flow on
    ``fault_frames``; only the accept/reject threshold changes, so rows
    should diverge at most around the fault window.
    """
    from .providers import FaultInjectionFlowProvider
    from .synth import generate, oracle_providers

    gt = generate(spec)
    fault = sorted(int(t) for t in fault_frames)
    rows = []
    for threshold in thresholds:
        masks, flows, feats = oracle_providers(gt, exact_masks=True)
        faulty = FaultInjectionFlowProvider(
            flows, fault, magnitude=magnitude, seed=fault_seed
        )
        results = track_sequence(
            (gt.frame(t) for t in range(gt.n_frames)),
            gt.quads[0],
            masks,
            faulty,
            feats,
            FusionConfig(inlier_threshold=threshold),
        )
        errors = np.array(
            [alignment_error(r.h, gt.hs[r.frame_index], gt.quads[0]) for r in results]
        )
        rows.append(
            {
                "threshold": float(threshold),
                "fault_frames": fault,
                "paths": [r.path_taken for r in results],
                "errors": errors,
                "p": {float(t): precision(errors, t) for t in taus},
            }
        )
    return rows
