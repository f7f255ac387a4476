"""HTTP backend for the annotation UI: frames, sessions, previews, saves.

A data directory holds one subdirectory per sequence with PGM frames
(``frames/frame_%06d.pgm`` or flat) and a ground-truth quad file
(``annotation.txt`` or ``quads.txt``, 8 reals per line, NaN line for
absent frames).  The original annotation is never rewritten; saves go to
a parallel ``reannot.txt``, atomically (temp file then rename).

Corner nudges move on an exact 2^-6 px grid: the working quad is the
loaded annotation plus integer multiples of the smallest step, so a
nudge followed by its opposite restores the previous coordinates
bit-exactly regardless of float rounding.
"""

from __future__ import annotations

import io
import math
import os
import tempfile
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from fastapi import FastAPI, HTTPException, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from PIL import Image
from pydantic import BaseModel

from . import imgio
from .evaluation import parse_annotation_file
from .geometry import (
    estimate_homography,
    invert,
    quad_area,
    quad_is_degenerate,
    warp_points,
)
from .interp import bilinear_sample
from .providers import find_annotation_file, find_frame_files

STEP_UNIT = 2.0**-6  # smallest nudge step, px
STEP_K_MIN = -6
STEP_K_MAX = 6
PGM_MEDIA = "image/x-portable-graymap"
PNG_MEDIA = "image/png"

DIRECTIONS = {
    "up": (0, -1),
    "down": (0, 1),
    "left": (-1, 0),
    "right": (1, 0),
}


# --- sequence registry --------------------------------------------------------


@dataclass
class SequenceData:
    name: str
    directory: Path
    frame_paths: List[Path]
    quads: List[Optional[np.ndarray]]  # original GT, never mutated
    reannotation: Optional[np.ndarray] = None

    @property
    def n_frames(self) -> int:
        return len(self.frame_paths)

    def frame(self, t: int) -> np.ndarray:
        return imgio.read_pgm(self.frame_paths[t])

    @property
    def reannot_path(self) -> Path:
        return self.directory / "reannot.txt"

    def default_reference(self) -> int:
        best_t, best_area = 0, -1.0
        for t, quad in enumerate(self.quads):
            if quad is None or quad_is_degenerate(quad):
                continue
            area = quad_area(quad)
            if area > best_area:
                best_t, best_area = t, area
        return best_t

    def working_quad_source(self) -> np.ndarray:
        return self.reannotation if self.reannotation is not None else self.quads[0]


def load_sequence_dir(directory: Path) -> Optional[SequenceData]:
    frames = find_frame_files(directory)
    annot_path = find_annotation_file(directory)
    if not frames or annot_path is None:
        return None
    quads = parse_annotation_file(annot_path)
    if len(quads) < len(frames):
        quads = quads + [None] * (len(frames) - len(quads))
    quads = quads[: len(frames)]
    if not quads or quads[0] is None or quad_is_degenerate(quads[0]):
        return None
    seq = SequenceData(
        name=directory.name, directory=directory, frame_paths=frames, quads=quads
    )
    if seq.reannot_path.exists():
        stored = parse_annotation_file(seq.reannot_path)
        if stored and stored[0] is not None:
            seq.reannotation = stored[0]
    return seq


def scan_data_dir(data_dir) -> Dict[str, SequenceData]:
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise NotADirectoryError(str(data_dir))
    out: Dict[str, SequenceData] = {}
    for sub in sorted(p for p in data_dir.iterdir() if p.is_dir()):
        seq = load_sequence_dir(sub)
        if seq is not None:
            out[seq.name] = seq
    return out


# --- sessions -------------------------------------------------------------------


@dataclass
class Session:
    id: str
    sequence: SequenceData
    base_quad: np.ndarray  # annotation the session started from
    offsets: np.ndarray  # int64 (4, 2), units of STEP_UNIT
    step_k: int = 0  # N = 2**step_k px
    reference: int = 0
    dirty: bool = False
    undo_stack: List[Tuple[np.ndarray, int]] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def quad(self) -> np.ndarray:
        return self.base_quad + self.offsets.astype(np.float64) * STEP_UNIT

    @property
    def step(self) -> float:
        return 2.0**self.step_k

    def push_undo(self) -> None:
        self.undo_stack.append((self.offsets.copy(), self.step_k))

    def state(self) -> dict:
        return {
            "id": self.id,
            "sequence": self.sequence.name,
            "quad": [[float(x), float(y)] for x, y in self.quad],
            "step": self.step,
            "reference": self.reference,
            "undo_depth": len(self.undo_stack),
            "dirty": self.dirty,
            "n_frames": self.sequence.n_frames,
        }


# --- request bodies ---------------------------------------------------------------


class CreateSessionBody(BaseModel):
    sequence: str


class NudgeBody(BaseModel):
    corner: int
    dir: str


class StepBody(BaseModel):
    op: str


class ReferenceBody(BaseModel):
    index: int


class SaveAnnotationBody(BaseModel):
    quad: List[float]


# --- image responses ----------------------------------------------------------------


def encode_pgm(image: np.ndarray) -> bytes:
    image = np.clip(np.round(image), 0, 255).astype(np.uint8)
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii")
    return header + image.tobytes()


def encode_png(image: np.ndarray) -> bytes:
    image = np.clip(np.round(image), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(image, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def wants_pgm(request: Request) -> bool:
    return PGM_MEDIA in request.headers.get("accept", "")


def image_response(image: np.ndarray, request: Request, headers=None) -> Response:
    if wants_pgm(request):
        return Response(encode_pgm(image), media_type=PGM_MEDIA, headers=headers)
    return Response(encode_png(image), media_type=PNG_MEDIA, headers=headers)


# --- overlay geometry ------------------------------------------------------------------


def quad_interior_mask(quad: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Half-plane test of grid points against a convex quad."""
    inside = np.ones(xs.shape, dtype=bool)
    pts = np.asarray(quad, dtype=np.float64)
    # orientation sign so the test works for either winding
    area2 = 0.0
    for i in range(4):
        a, b = pts[i], pts[(i + 1) % 4]
        area2 += a[0] * b[1] - b[0] * a[1]
    sign = 1.0 if area2 >= 0 else -1.0
    for i in range(4):
        a, b = pts[i], pts[(i + 1) % 4]
        cross = (b[0] - a[0]) * (ys - a[1]) - (b[1] - a[1]) * (xs - a[0])
        inside &= sign * cross >= 0
    return inside


def render_overlay(
    init_frame: np.ndarray,
    ref_frame: np.ndarray,
    working_quad: np.ndarray,
    ref_quad: np.ndarray,
    margin: int = 10,
) -> Tuple[np.ndarray, float]:
    """50/50 blend of the reference crop and the warped init-frame target.

    Returns the blended crop plus the mean absolute difference of the two
    layers inside the reference quad, as a fraction of the 255 range.
    """
    h = estimate_homography(working_quad, ref_quad)
    h_inv = invert(h)

    fh, fw = ref_frame.shape[:2]
    x0 = max(0, int(math.floor(ref_quad[:, 0].min())) - margin)
    x1 = min(fw, int(math.ceil(ref_quad[:, 0].max())) + margin + 1)
    y0 = max(0, int(math.floor(ref_quad[:, 1].min())) - margin)
    y1 = min(fh, int(math.ceil(ref_quad[:, 1].max())) + margin + 1)
    if x1 <= x0 or y1 <= y0:
        raise ValueError("reference quad lies outside the frame")

    xs, ys = np.meshgrid(
        np.arange(x0, x1, dtype=np.float64), np.arange(y0, y1, dtype=np.float64)
    )
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1)
    src = warp_points(h_inv, pts)
    warped, valid = bilinear_sample(
        np.asarray(init_frame, dtype=np.float64), src[:, 0], src[:, 1]
    )
    warped = warped.reshape(xs.shape)
    valid = valid.reshape(xs.shape)

    ref_crop = np.asarray(ref_frame, dtype=np.float64)[y0:y1, x0:x1]
    blend = np.where(valid, 0.5 * ref_crop + 0.5 * warped, ref_crop)

    inside = quad_interior_mask(ref_quad, xs, ys) & valid
    if inside.any():
        mad = float(np.mean(np.abs(warped[inside] - ref_crop[inside])) / 255.0)
    else:
        mad = math.nan
    return blend, mad


def annotation_delta(working_quad: np.ndarray, original_quad: np.ndarray) -> float:
    """Eq-style alignment error of the working pose vs the stored GT.

    The pose induced by the working quad is the exact 4-point fit from
    the original corners, so the RMSE over those control points reduces
    to the corner displacement RMSE.
    """
    d = np.asarray(working_quad, dtype=np.float64) - np.asarray(
        original_quad, dtype=np.float64
    )
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


# --- persistence --------------------------------------------------------------------------


def atomic_write_text(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp_annot_")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def quad_to_line(quad: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(quad).ravel())


# --- app ------------------------------------------------------------------------------------


def create_app(data_dir) -> FastAPI:
    app = FastAPI(title="quadtrack annotation service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
        expose_headers=["X-Alignment-Error", "X-Overlay-MAD"],
    )
    sequences = scan_data_dir(data_dir)
    sessions: Dict[str, Session] = {}
    registry_lock = threading.Lock()

    def get_sequence(name: str) -> SequenceData:
        seq = sequences.get(name)
        if seq is None:
            raise HTTPException(status_code=404, detail="NotFound")
        return seq

    def get_session(sid: str) -> Session:
        sess = sessions.get(sid)
        if sess is None:
            raise HTTPException(status_code=404, detail="NotFound")
        return sess

    def save_quad(seq: SequenceData, quad: np.ndarray) -> None:
        if not np.all(np.isfinite(quad)) or quad_is_degenerate(quad):
            raise HTTPException(status_code=422, detail="DegenerateQuad")
        atomic_write_text(seq.reannot_path, quad_to_line(quad) + "\n")
        seq.reannotation = np.asarray(quad, dtype=np.float64).reshape(4, 2)

    # -- sequences --

    @app.get("/sequences")
    def list_sequences():
        return [
            {
                "id": seq.name,
                "n_frames": seq.n_frames,
                "default_reference": seq.default_reference(),
            }
            for seq in sequences.values()
        ]

    @app.get("/sequences/{name}")
    def sequence_info(name: str):
        seq = get_sequence(name)
        return {
            "id": seq.name,
            "n_frames": seq.n_frames,
            "default_reference": seq.default_reference(),
            "gt_present": [q is not None for q in seq.quads],
        }

    @app.get("/sequences/{name}/frames/{t}")
    def sequence_frame(name: str, t: int, request: Request):
        seq = get_sequence(name)
        if not 0 <= t < seq.n_frames:
            raise HTTPException(status_code=404, detail="NotFound")
        if wants_pgm(request):
            # byte-identical with the on-disk file
            return Response(seq.frame_paths[t].read_bytes(), media_type=PGM_MEDIA)
        return Response(encode_png(seq.frame(t)), media_type=PNG_MEDIA)

    @app.get("/sequences/{name}/quads/{t}")
    def sequence_quad(name: str, t: int):
        seq = get_sequence(name)
        if not 0 <= t < seq.n_frames:
            raise HTTPException(status_code=404, detail="NotFound")
        quad = seq.quads[t]
        return {
            "frame": t,
            "quad": None if quad is None else [float(v) for v in quad.ravel()],
        }

    @app.get("/sequences/{name}/annotation")
    def get_annotation(name: str):
        seq = get_sequence(name)
        current = seq.working_quad_source()
        return {
            "original": [float(v) for v in seq.quads[0].ravel()],
            "reannotation": (
                None
                if seq.reannotation is None
                else [float(v) for v in seq.reannotation.ravel()]
            ),
            "current": [float(v) for v in current.ravel()],
        }

    @app.put("/sequences/{name}/annotation")
    def put_annotation(name: str, body: SaveAnnotationBody):
        seq = get_sequence(name)
        if len(body.quad) != 8:
            raise HTTPException(status_code=422, detail="InvalidQuad")
        quad = np.asarray(body.quad, dtype=np.float64).reshape(4, 2)
        save_quad(seq, quad)
        return {"saved": True, "path": str(seq.reannot_path)}

    # -- sessions --

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        seq = get_sequence(body.sequence)
        sid = uuid.uuid4().hex[:12]
        base = seq.working_quad_source().astype(np.float64).copy()
        sess = Session(
            id=sid,
            sequence=seq,
            base_quad=base,
            offsets=np.zeros((4, 2), dtype=np.int64),
            reference=seq.default_reference(),
        )
        with registry_lock:
            sessions[sid] = sess
        return sess.state()

    @app.get("/sessions/{sid}")
    def session_state(sid: str):
        return get_session(sid).state()

    @app.post("/sessions/{sid}/nudge")
    def session_nudge(sid: str, body: NudgeBody):
        sess = get_session(sid)
        if body.corner not in (0, 1, 2, 3):
            raise HTTPException(status_code=422, detail="InvalidCorner")
        if body.dir not in DIRECTIONS:
            raise HTTPException(status_code=422, detail="InvalidDirection")
        dx, dy = DIRECTIONS[body.dir]
        with sess.lock:
            sess.push_undo()
            units = 2 ** (sess.step_k - STEP_K_MIN)  # step in STEP_UNIT multiples
            sess.offsets[body.corner, 0] += dx * units
            sess.offsets[body.corner, 1] += dy * units
            sess.dirty = True
            return sess.state()

    @app.post("/sessions/{sid}/step")
    def session_step(sid: str, body: StepBody):
        sess = get_session(sid)
        if body.op not in ("double", "halve"):
            raise HTTPException(status_code=422, detail="InvalidStepOp")
        with sess.lock:
            sess.push_undo()
            delta = 1 if body.op == "double" else -1
            sess.step_k = min(STEP_K_MAX, max(STEP_K_MIN, sess.step_k + delta))
            return sess.state()

    @app.post("/sessions/{sid}/undo")
    def session_undo(sid: str):
        sess = get_session(sid)
        with sess.lock:
            if sess.undo_stack:
                offsets, step_k = sess.undo_stack.pop()
                sess.offsets = offsets
                sess.step_k = step_k
            return sess.state()

    @app.post("/sessions/{sid}/reference")
    def session_reference(sid: str, body: ReferenceBody):
        sess = get_session(sid)
        if not 0 <= body.index < sess.sequence.n_frames:
            raise HTTPException(status_code=422, detail="InvalidReference")
        with sess.lock:
            sess.reference = body.index
            return sess.state()

    @app.post("/sessions/{sid}/save")
    def session_save(sid: str):
        sess = get_session(sid)
        with sess.lock:
            save_quad(sess.sequence, sess.quad)
            sess.dirty = False
            return sess.state()

    @app.get("/sessions/{sid}/overlay")
    def session_overlay(sid: str, request: Request, ref: Optional[int] = None):
        sess = get_session(sid)
        seq = sess.sequence
        t = sess.reference if ref is None else ref
        if not 0 <= t < seq.n_frames:
            raise HTTPException(status_code=422, detail="InvalidReference")
        ref_quad = seq.quads[t]
        if ref_quad is None or quad_is_degenerate(ref_quad):
            raise HTTPException(status_code=404, detail="NoGroundTruth")
        with sess.lock:
            working = sess.quad
        if quad_is_degenerate(working):
            raise HTTPException(status_code=422, detail="DegenerateQuad")
        blend, mad = render_overlay(seq.frame(0), seq.frame(t), working, ref_quad)
        headers = {
            "X-Alignment-Error": repr(annotation_delta(working, seq.quads[0])),
            "X-Overlay-MAD": repr(mad),
        }
        return image_response(blend, request, headers=headers)

    return app
