"""Line generation: candidate chords, target crop, weight map, selection.

The flow mirrors the annotation pipeline: rasterize a fixed family of chord
candidates over an S x S canvas, crop the target region into that canvas,
score every candidate against a weight map (center-proximal positive weight
inside the target, a large negative penalty on opposite-class pixels inside
the region's bounding box), pick the argmax, and map the endpoints of its
longest run inside the target back to source-image pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import annotation
from .masks import (CropTransform, Point, Region, BG, FG, distance_transform,
                    make_crop_transform, raster_line)


class EmptyTargetError(ValueError):
    """The target region vanished in the crop; callers fall back to a click."""


@dataclass(frozen=True)
class CandidateParams:
    """Chord family: n_theta angles x n_rho signed offsets on an S x S canvas."""

    crop_size: int = 64
    n_theta: int = 36
    n_rho: int = 64

    def __post_init__(self):
        if self.n_theta < 4 or self.n_rho < 3 or self.crop_size < 8:
            raise ValueError("need n_theta >= 4, n_rho >= 3, crop_size >= 8")

    @property
    def count(self) -> int:
        return self.n_theta * self.n_rho


class CandidateSet:
    """The rasterized candidate chords plus flattened index machinery.

    lines[i] is an (L, 2) array of (x, y) canvas pixels in traversal order;
    candidate i covers angle index i // n_rho and offset index i % n_rho.
    flat_indices/line_ids hold every line's pixels as raster-sorted flat
    canvas offsets, which keeps per-candidate score accumulation in one fixed
    summation order.
    """

    def __init__(self, params: CandidateParams, lines: list[np.ndarray]):
        self.params = params
        self.lines = lines
        size = params.crop_size
        flats = []
        ids = []
        for i, px in enumerate(lines):
            if len(px) == 0:
                continue
            flat = np.sort(px[:, 1] * size + px[:, 0])
            flats.append(flat)
            ids.append(np.full(len(flat), i, dtype=np.int64))
        self.flat_indices = np.concatenate(flats) if flats else np.empty(0, dtype=np.int64)
        self.line_ids = np.concatenate(ids) if ids else np.empty(0, dtype=np.int64)

    def __len__(self) -> int:
        return self.params.count

    def intersection_counts(self, mask: np.ndarray) -> np.ndarray:
        """Per-candidate count of pixels falling inside a canvas mask."""
        hits = mask.ravel()[self.flat_indices].astype(np.float64)
        return np.bincount(self.line_ids, weights=hits,
                           minlength=self.params.count).astype(np.int64)


@lru_cache(maxsize=8)
def gen_candidates(params: CandidateParams) -> CandidateSet:
    """Rasterize the chord of every (theta, rho) pair clipped to the canvas.

    theta_j = j*pi/n_theta measures the chord normal; rho spans the full
    half-diagonal range [-S*sqrt(2)/2, +S*sqrt(2)/2] around the canvas
    center, so theta=0, rho=0 is the horizontal chord through the middle.
    Off-canvas combinations produce empty pixel lists.
    """
    size = params.crop_size
    center = (size - 1) / 2.0
    rho_max = size * math.sqrt(2.0) / 2.0
    rhos = np.linspace(-rho_max, rho_max, params.n_rho)
    lines = []
    for j in range(params.n_theta):
        theta = j * math.pi / params.n_theta
        ny, nx = math.cos(theta), math.sin(theta)   # normal: (row, col)
        if abs(ny) < 1e-9:                          # snap the axis-aligned cases
            ny, nx = 0.0, math.copysign(1.0, nx)
        elif abs(nx) < 1e-9:
            ny, nx = math.copysign(1.0, ny), 0.0
        dy, dx = -nx, ny                            # direction along the chord
        for rho in rhos:
            py, px = center + rho * ny, center + rho * nx
            seg = _clip_to_canvas(px, py, dx, dy, size)
            if seg is None:
                lines.append(np.empty((0, 2), dtype=np.int64))
                continue
            (x0, y0), (x1, y1) = seg
            lines.append(raster_line(Point(x0, y0), Point(x1, y1)))
    return CandidateSet(params, lines)


def _clip_to_canvas(px, py, dx, dy, size):
    """Liang-Barsky clip of an infinite line to [-0.5, size-0.5]^2.

    Returns integer endpoints in traversal order (t ascending) or None.
    """
    lo, hi = -0.5, size - 0.5
    t0, t1 = -math.inf, math.inf
    for pos, d in ((px, dx), (py, dy)):
        if abs(d) < 1e-12:
            if not (lo <= pos <= hi):
                return None
            continue
        ta, tb = (lo - pos) / d, (hi - pos) / d
        if ta > tb:
            ta, tb = tb, ta
        t0, t1 = max(t0, ta), min(t1, tb)
    if t0 > t1:
        return None
    def to_px(t):
        x = min(max(int(math.floor(px + t * dx + 0.5)), 0), size - 1)
        y = min(max(int(math.floor(py + t * dy + 0.5)), 0), size - 1)
        return x, y
    return to_px(t0), to_px(t1)


@dataclass(frozen=True)
class TargetCrop:
    """Target region and its class context resampled into the crop canvas.

    The class maps cover only the region's own bounding box: the margin ring
    and the square padding around it carry no class, so chords may leave the
    box freely and the penalty bites only where a line would cut across
    opposite-label pixels interleaved with the target itself.
    """

    target: np.ndarray          # (S, S) bool
    same_class: np.ndarray      # (S, S) bool
    opposite_class: np.ndarray  # (S, S) bool
    transform: CropTransform


def build_target_crop(region: Region, gt: np.ndarray, sign: str,
                      params: CandidateParams,
                      margin_frac: float = 0.1) -> TargetCrop:
    """Nearest-neighbor resample of the region and GT classes into the canvas.

    Pixels outside the region's bounding box, outside the image, and ignore
    pixels belong to no class. The target is intersected with its own class
    so T stays inside same_class by construction.
    """
    height, width = gt.shape
    bbox = region.bbox
    tf = make_crop_transform(bbox, margin_frac, params.crop_size, width, height)
    rows, cols = tf.sample_indices()
    in_rows = (rows >= bbox.y0) & (rows <= bbox.y1)
    in_cols = (cols >= bbox.x0) & (cols <= bbox.x1)
    inside = in_rows[:, None] & in_cols[None, :]
    rr = np.clip(rows, 0, height - 1)
    cc = np.clip(cols, 0, width - 1)
    gt_crop = gt[rr[:, None], cc[None, :]]
    own, other = (FG, BG) if sign == annotation.POS else (BG, FG)
    same = (gt_crop == own) & inside
    opposite = (gt_crop == other) & inside
    region_mask = region.to_mask(width, height)
    target = region_mask[rr[:, None], cc[None, :]] & inside & same
    return TargetCrop(target, same, opposite, tf)


@dataclass(frozen=True)
class WeightMap:
    weights: np.ndarray  # (S, S) float64
    penalty: float


def build_weight_map(crop: TargetCrop, penalty: float = -100.0) -> WeightMap:
    """Score field: boundary-distance weight in (0, 1] on the target (max
    exactly 1), the penalty constant on opposite-class pixels, 0 elsewhere."""
    if penalty >= 0:
        raise ValueError("penalty must be negative")
    if not crop.target.any():
        raise EmptyTargetError("target region is empty in the crop")
    dt = distance_transform(crop.target)
    weights = np.zeros(crop.target.shape, dtype=np.float64)
    weights[crop.target] = dt[crop.target] / dt.max()
    weights[crop.opposite_class] = penalty
    return WeightMap(weights, penalty)


def select_line(cands: CandidateSet, wm: WeightMap) -> tuple[int, float]:
    """Argmax of per-candidate weight sums (the flattened mask-by-weights
    product). Ties go to the larger target intersection, then lower index."""
    flat_w = wm.weights.ravel()
    scores = np.bincount(cands.line_ids, weights=flat_w[cands.flat_indices],
                         minlength=cands.params.count)
    best = scores.max()
    tied = np.flatnonzero(scores == best)
    if len(tied) == 1:
        i = int(tied[0])
        return i, float(scores[i])
    inter = cands.intersection_counts(wm.weights > 0)[tied]
    i = int(tied[np.argmax(inter)])  # argmax keeps the lowest index on ties
    return i, float(scores[i])


def extract_endpoints(line_pixels: np.ndarray, crop: TargetCrop):
    """Endpoints of the longest contiguous run of the line inside the target,
    mapped to source-image pixels. None if no usable run exists."""
    if len(line_pixels) == 0:
        return None
    hit = crop.target[line_pixels[:, 1], line_pixels[:, 0]]
    start, length = _longest_run(hit)
    if length < 2:
        return None
    a = crop.transform.crop_to_source_px(Point(*line_pixels[start]))
    b = crop.transform.crop_to_source_px(Point(*line_pixels[start + length - 1]))
    if a == b:
        return None  # collapses to a single pixel once mapped back
    return a, b


def _longest_run(flags: np.ndarray) -> tuple[int, int]:
    best_start, best_len, start = 0, 0, -1
    for i, f in enumerate(flags):
        if f and start < 0:
            start = i
        elif not f and start >= 0:
            if i - start > best_len:
                best_start, best_len = start, i - start
            start = -1
    if start >= 0 and len(flags) - start > best_len:
        best_start, best_len = start, len(flags) - start
    return best_start, best_len


@dataclass(frozen=True)
class SelectionResult:
    """Winning candidate plus its recomputable score and source endpoints."""

    index: int
    score: float
    endpoints: tuple[Point, Point]
    intersection_len: int


def propose_line(region: Region, gt: np.ndarray, sign: str,
                 params: CandidateParams, penalty: float = -100.0,
                 margin_frac: float = 0.1) -> SelectionResult | None:
    """Full selection pipeline; None signals the caller to use a click.

    Falls back when the target vanishes in the crop, when no candidate scores
    above zero (a penalized line is worse than a click), or when no two-pixel
    endpoint pair survives the mapping back to the source image.
    """
    crop = build_target_crop(region, gt, sign, params, margin_frac)
    if not crop.target.any():
        return None
    wm = build_weight_map(crop, penalty)
    cands = gen_candidates(params)
    index, score = select_line(cands, wm)
    if score <= 0.0:
        return None
    endpoints = extract_endpoints(cands.lines[index], crop)
    if endpoints is None:
        return None
    inter = int(cands.intersection_counts(crop.target)[index])
    return SelectionResult(index, score, endpoints, inter)


def line_for_region(region: Region, gt: np.ndarray, sign: str,
                    params: CandidateParams, penalty: float = -100.0,
                    margin_frac: float = 0.1):
    """Signed two-point line annotation for a region, or None to fall back."""
    result = propose_line(region, gt, sign, params, penalty, margin_frac)
    if result is None:
        return None
    return annotation.line(sign, *result.endpoints)


def render_selection_debug(crop: TargetCrop, wm: WeightMap,
                           line_pixels: np.ndarray) -> np.ndarray:
    """RGB canvas: target weight in green, opposite class red, line white."""
    size = crop.target.shape[0]
    img = np.zeros((size, crop.target.shape[1], 3), dtype=np.uint8)
    pos = np.clip(wm.weights, 0.0, 1.0)
    img[..., 1] = (pos * 255).astype(np.uint8)
    img[crop.opposite_class, 0] = 200
    img[crop.same_class & ~crop.target] = np.maximum(
        img[crop.same_class & ~crop.target], 60)
    if len(line_pixels):
        img[line_pixels[:, 1], line_pixels[:, 0]] = 255
    return img
