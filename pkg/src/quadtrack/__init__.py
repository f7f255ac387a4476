"""Planar target tracking from segmentation masks and dense optical flow.

The package is organized around a small geometry core (`geometry`), a
mask-to-homography pipeline (`maskgeom`, `disambiguation`, `masktracker`),
a robust flow-to-homography fit (`flowfit`), and a two-attempt fusion
controller (`fusion`) that combines both cues.  `synth` generates
deterministic synthetic sequences with exact ground truth, `evaluation`
scores trackers against quad annotations, and `annotserve` exposes an
HTTP service for inspecting and correcting annotations.
"""

__version__ = "0.1.0"
