"""Raster primitives shared by every stage: masks, regions, distance fields,
line rasterization, crop transforms, and IoU.

Binary masks are 2-D bool arrays (True = foreground). Label masks are 2-D
uint8 arrays over {BG, FG, IGNORE}. All values are treated as immutable once
built; every function here is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from PIL import Image
from scipy import ndimage

# Trinary ground-truth labels.
BG, FG, IGNORE = 0, 1, 2

# 4-connectivity for component labeling.
_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


class Point(NamedTuple):
    x: int
    y: int


class BBox(NamedTuple):
    """Inclusive pixel bounds, x0 <= x1 and y0 <= y1."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0 + 1

    @property
    def height(self) -> int:
        return self.y1 - self.y0 + 1


@dataclass(frozen=True)
class Region:
    """One connected component of a binary mask.

    pixels is an (N, 2) int array of (x, y) coordinates. moments holds the
    central second moments (mu20, mu02, mu11) of the pixel coordinates,
    normalized by area.
    """

    pixels: np.ndarray
    area: int
    bbox: BBox
    centroid: tuple[float, float]
    moments: tuple[float, float, float]

    def local_mask(self) -> np.ndarray:
        """Binary mask of this region over its own bounding box."""
        m = np.zeros((self.bbox.height, self.bbox.width), dtype=bool)
        m[self.pixels[:, 1] - self.bbox.y0, self.pixels[:, 0] - self.bbox.x0] = True
        return m

    def to_mask(self, width: int, height: int) -> np.ndarray:
        m = np.zeros((height, width), dtype=bool)
        m[self.pixels[:, 1], self.pixels[:, 0]] = True
        return m


def region_from_pixels(pixels: np.ndarray) -> Region:
    """Build a Region (area, bbox, centroid, moments) from (x, y) coordinates."""
    pixels = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    if len(pixels) == 0:
        raise ValueError("region needs at least one pixel")
    xs = pixels[:, 0].astype(np.float64)
    ys = pixels[:, 1].astype(np.float64)
    cx, cy = float(xs.mean()), float(ys.mean())
    dx, dy = xs - cx, ys - cy
    mu20 = float(np.mean(dx * dx))
    mu02 = float(np.mean(dy * dy))
    mu11 = float(np.mean(dx * dy))
    bbox = BBox(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))
    return Region(pixels, len(pixels), bbox, (cx, cy), (mu20, mu02, mu11))


def connected_components(mask: np.ndarray) -> list[Region]:
    """4-connected components of a binary mask.

    Sorted by area descending; ties broken by the smallest (y0, x0) of the
    bounding box so the ordering is reproducible.
    """
    mask = np.asarray(mask, dtype=bool)
    labels, _ = ndimage.label(mask, structure=_CROSS)
    regions = []
    slices = ndimage.find_objects(labels)
    for idx, sl in enumerate(slices, start=1):
        if sl is None:
            continue
        ys, xs = np.nonzero(labels[sl] == idx)
        ys = ys + sl[0].start
        xs = xs + sl[1].start
        regions.append(region_from_pixels(np.column_stack([xs, ys])))
    regions.sort(key=lambda r: (-r.area, r.bbox.y0, r.bbox.x0))
    return regions


def distance_transform(mask: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance from each True pixel to the nearest False one.

    Everything beyond the image border counts as False, so values never exceed
    the distance to the nearest edge. False pixels map to 0.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return np.zeros(mask.shape, dtype=np.float64)
    # A single False ring is enough: the nearest outside pixel is always in
    # the layer directly adjacent to the border.
    padded = np.pad(mask, 1, constant_values=False)
    dt = ndimage.distance_transform_edt(padded)
    return np.ascontiguousarray(dt[1:-1, 1:-1])


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union of pred against the FG label, skipping IGNORE.

    Defined as 1.0 when both sets are empty over the non-ignore domain.
    """
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    valid = gt != IGNORE
    p = pred & valid
    f = (gt == FG) & valid
    union = int(np.count_nonzero(p | f))
    if union == 0:
        return 1.0
    inter = int(np.count_nonzero(p & f))
    return inter / union


def elongation(region: Region) -> float:
    """sqrt of the principal second-moment eigenvalue ratio, >= 1.

    1.0 for a single pixel; +inf when the pixels are collinear (zero minor
    variance) with area > 1.
    """
    if region.area == 1:
        return 1.0
    mu20, mu02, mu11 = region.moments
    half_tr = 0.5 * (mu20 + mu02)
    disc = math.hypot(0.5 * (mu20 - mu02), mu11)
    lam1 = half_tr + disc
    lam2 = half_tr - disc
    if lam2 <= lam1 * 1e-9:
        return math.inf
    return math.sqrt(lam1 / lam2)


def raster_line(p0: Point, p1: Point) -> np.ndarray:
    """8-connected Bresenham segment from p0 to p1 inclusive.

    Returns an (L, 2) int array of (x, y) pixels in traversal order with
    L = max(|dx|, |dy|) + 1. Endpoints are rasterized in a canonical
    direction so that swapping p0 and p1 yields the exact reversed list.
    """
    a = (int(p0[1]), int(p0[0]))
    b = (int(p1[1]), int(p1[0]))
    if a > b:
        return _bresenham(p1, p0)[::-1].copy()
    return _bresenham(p0, p1)


def _bresenham(p0, p1) -> np.ndarray:
    x, y = int(p0[0]), int(p0[1])
    x1, y1 = int(p1[0]), int(p1[1])
    dx, dy = abs(x1 - x), abs(y1 - y)
    sx = 1 if x1 >= x else -1
    sy = 1 if y1 >= y else -1
    n = max(dx, dy) + 1
    pts = np.empty((n, 2), dtype=np.int64)
    if dx >= dy:
        err = 2 * dy - dx
        for i in range(n):
            pts[i, 0], pts[i, 1] = x, y
            if err > 0:
                y += sy
                err -= 2 * dx
            err += 2 * dy
            x += sx
    else:
        err = 2 * dx - dy
        for i in range(n):
            pts[i, 0], pts[i, 1] = x, y
            if err > 0:
                x += sx
                err -= 2 * dy
            err += 2 * dx
            y += sy
    return pts


@dataclass(frozen=True)
class CropTransform:
    """Maps between source-image pixels and an S x S crop canvas.

    The source window is the margin-expanded, clamped bounding box; the
    shorter side is padded symmetrically to a square of `side` pixels whose
    top-left corner sits at (origin_x, origin_y) in source coordinates
    (possibly outside the image), then scaled to crop_size x crop_size.

    crop_to_source and source_to_crop are exact float inverses of each other;
    the *_px variants round half-up and clamp.
    """

    window: BBox
    origin_x: int
    origin_y: int
    side: int
    crop_size: int
    image_width: int
    image_height: int

    @property
    def scale(self) -> float:
        return self.crop_size / self.side

    def crop_to_source(self, cx, cy):
        s = self.side / self.crop_size
        return (self.origin_x + (np.asarray(cx, dtype=np.float64) + 0.5) * s - 0.5,
                self.origin_y + (np.asarray(cy, dtype=np.float64) + 0.5) * s - 0.5)

    def source_to_crop(self, sx, sy):
        s = self.crop_size / self.side
        return ((np.asarray(sx, dtype=np.float64) - self.origin_x + 0.5) * s - 0.5,
                (np.asarray(sy, dtype=np.float64) - self.origin_y + 0.5) * s - 0.5)

    def crop_to_source_px(self, p: Point) -> Point:
        sx, sy = self.crop_to_source(p[0], p[1])
        x = min(max(int(math.floor(sx + 0.5)), 0), self.image_width - 1)
        y = min(max(int(math.floor(sy + 0.5)), 0), self.image_height - 1)
        return Point(x, y)

    def _nn_index(self, c: np.ndarray) -> np.ndarray:
        # floor((c + 0.5) * side / crop_size), exact in integer arithmetic
        return (2 * c + 1) * self.side // (2 * self.crop_size)

    def sample_indices(self) -> tuple[np.ndarray, np.ndarray]:
        """(rows, cols) source indices for nearest-neighbor resampling.

        Entries may fall outside the image where the padded window does.
        """
        c = np.arange(self.crop_size, dtype=np.int64)
        cols = self.origin_x + self._nn_index(c)
        rows = self.origin_y + self._nn_index(c)
        return rows, cols


def make_crop_transform(bbox: BBox, margin_frac: float, crop_size: int,
                        image_width: int, image_height: int) -> CropTransform:
    """Crop transform for a bounding box: expand by margin, square, scale.

    The margin is margin_frac of the larger bbox side, at least 1 px whenever
    margin_frac > 0. Degenerate windows are widened to at least 3 px per axis
    (image permitting) before squaring.
    """
    if not (0 <= margin_frac < 1):
        raise ValueError("margin_frac must be in [0, 1)")
    if crop_size < 8:
        raise ValueError("crop_size must be >= 8")
    margin = int(round(margin_frac * max(bbox.width, bbox.height)))
    if margin_frac > 0:
        margin = max(margin, 1)
    x0 = max(bbox.x0 - margin, 0)
    y0 = max(bbox.y0 - margin, 0)
    x1 = min(bbox.x1 + margin, image_width - 1)
    y1 = min(bbox.y1 + margin, image_height - 1)
    x0, x1 = _widen(x0, x1, 3, image_width)
    y0, y1 = _widen(y0, y1, 3, image_height)
    window = BBox(x0, y0, x1, y1)
    side = max(window.width, window.height)
    origin_x = x0 - (side - window.width) // 2
    origin_y = y0 - (side - window.height) // 2
    return CropTransform(window, origin_x, origin_y, side, crop_size,
                         image_width, image_height)


def _widen(lo: int, hi: int, target: int, limit: int) -> tuple[int, int]:
    while hi - lo + 1 < target and (lo > 0 or hi < limit - 1):
        if lo > 0:
            lo -= 1
        if hi - lo + 1 < target and hi < limit - 1:
            hi += 1
    return lo, hi


# ---------------------------------------------------------------------------
# PNG encoding: 0 = background, 255 = foreground; on read, anything >= 200
# counts as foreground and mid values (e.g. GrabCut's 128 band) as ignore.

def label_from_gray(gray: np.ndarray) -> np.ndarray:
    gray = np.asarray(gray)
    label = np.full(gray.shape, IGNORE, dtype=np.uint8)
    label[gray == 0] = BG
    label[gray >= 200] = FG
    return label


def label_to_gray(label: np.ndarray) -> np.ndarray:
    gray = np.full(label.shape, 128, dtype=np.uint8)
    gray[label == BG] = 0
    gray[label == FG] = 255
    return gray


def read_label_mask(path) -> np.ndarray:
    gray = np.asarray(Image.open(path).convert("L"))
    return label_from_gray(gray)


def write_label_mask(path, label: np.ndarray) -> None:
    Image.fromarray(label_to_gray(label), mode="L").save(path, format="PNG")


def read_binary_mask(path) -> np.ndarray:
    return read_label_mask(path) == FG


def write_binary_mask(path, mask: np.ndarray) -> None:
    gray = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(gray, mode="L").save(path, format="PNG")


def label_from_binary(mask: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(mask, dtype=bool), FG, BG).astype(np.uint8)


def read_image(path) -> np.ndarray:
    """Load an image as uint8, grayscale (H, W) or RGB (H, W, 3)."""
    img = Image.open(path)
    if img.mode in ("L", "I;16", "I"):
        return np.asarray(img.convert("L"))
    return np.asarray(img.convert("RGB"))


def write_image(path, arr: np.ndarray) -> None:
    mode = "L" if arr.ndim == 2 else "RGB"
    Image.fromarray(np.asarray(arr, dtype=np.uint8), mode=mode).save(path, format="PNG")
