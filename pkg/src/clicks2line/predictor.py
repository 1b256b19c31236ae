"""Segmentation predictors: a deterministic seeded geodesic segmenter and
clients for external predictors speaking the JSON wire protocol.

The geodesic predictor labels each pixel by its nearest signed seed under an
intensity-weighted shortest-path metric on the 4-neighbor grid. It is a
deterministic desk-scale stand-in for a learned model; external predictors
plug in over subprocess stdio (one JSON request/response per line) or HTTP.
"""

from __future__ import annotations

import base64
import io
import json
import shlex
import subprocess
import urllib.error
import urllib.request
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from . import annotation, rle
from .masks import raster_line


class PredictorError(Exception):
    """Base class: a predictor failed; the caller's state stays unchanged."""


class TransportError(PredictorError):
    """The external predictor could not be reached or died mid-request."""


class MalformedResponse(PredictorError):
    """The external predictor answered with undecodable content."""


class DimensionMismatch(PredictorError):
    """The returned mask does not match the request dimensions."""


@dataclass(frozen=True)
class PredictRequest:
    """One prediction call: image, full annotation history, optional prior mask."""

    image: np.ndarray
    annotations: tuple
    prev_mask: np.ndarray | None = None

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]


@dataclass(frozen=True)
class GeodesicParams:
    beta: float = 8.0
    implicit_border_negatives: bool = True

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")


def seed_pixels(req: PredictRequest) -> tuple[set, set]:
    """(positive, negative) seed pixel sets as (y, x) tuples; lines rasterize
    to their full pixel runs."""
    pos, neg = set(), set()
    for ann in req.annotations:
        if ann.kind == annotation.CLICK:
            pixels = [ann.points[0]]
        else:
            pixels = [tuple(p) for p in raster_line(*ann.points)]
        bucket = pos if ann.sign == annotation.POS else neg
        for x, y in pixels:
            bucket.add((int(y), int(x)))
    return pos, neg


def _grid_graph(image: np.ndarray, beta: float) -> coo_matrix:
    """Symmetric 4-neighbor graph; edge weight 1 + beta * mean |dI| / 255."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    h, w = img.shape[:2]
    idx = np.arange(h * w).reshape(h, w)
    right = np.abs(img[:, 1:] - img[:, :-1]).mean(axis=2) / 255.0
    down = np.abs(img[1:, :] - img[:-1, :]).mean(axis=2) / 255.0
    src = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    dst = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    cost = np.concatenate([1.0 + beta * right.ravel(), 1.0 + beta * down.ravel()])
    return coo_matrix((cost, (src, dst)), shape=(h * w, h * w))


def _min_distances(graph, shape, seeds) -> np.ndarray:
    flat = [y * shape[1] + x for y, x in sorted(seeds)]
    d = dijkstra(graph.tocsr(), directed=False, indices=flat, min_only=True)
    return d.reshape(shape)


def geodesic_predict(req: PredictRequest,
                     params: GeodesicParams = GeodesicParams()) -> np.ndarray:
    """Foreground iff strictly closer to a positive seed than to any negative
    one (ties go to background). With no negative annotations, all border
    pixels act as negative seeds so a lone click yields a bounded region."""
    h, w = req.height, req.width
    pos, neg = seed_pixels(req)
    if not pos:
        return np.zeros((h, w), dtype=bool)
    if not neg and params.implicit_border_negatives:
        border = {(0, x) for x in range(w)} | {(h - 1, x) for x in range(w)} \
            | {(y, 0) for y in range(h)} | {(y, w - 1) for y in range(h)}
        neg = border - pos
    graph = _grid_graph(req.image, params.beta)
    d_pos = _min_distances(graph, (h, w), pos)
    if not neg:
        return np.ones((h, w), dtype=bool)
    d_neg = _min_distances(graph, (h, w), neg)
    return d_pos < d_neg


def encode_request(req: PredictRequest) -> dict:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(req.image).save(buf, format="PNG")
    payload = {
        "width": req.width,
        "height": req.height,
        "image_b64": base64.b64encode(buf.getvalue()).decode("ascii"),
        "annotations": [a.to_dict() for a in req.annotations],
    }
    if req.prev_mask is not None:
        payload["prev_mask_rle"] = rle.encode(req.prev_mask)
    return payload


def decode_response(obj, width: int, height: int) -> np.ndarray:
    if not isinstance(obj, dict) or "mask_rle" not in obj:
        raise MalformedResponse("response lacks mask_rle")
    runs = obj["mask_rle"]
    if not isinstance(runs, list) or not all(
            isinstance(r, int) and not isinstance(r, bool) and r >= 0 for r in runs):
        raise MalformedResponse("mask_rle must be a list of non-negative ints")
    if sum(runs) != width * height:
        raise DimensionMismatch(
            f"mask_rle sums to {sum(runs)}, expected {width * height}")
    return rle.decode(runs, width, height)


class SubprocessPredictor:
    """Talks to `cmd` over stdio: one JSON request per line, one JSON
    response per line. The process is started lazily and reused."""

    def __init__(self, cmd: str):
        self.cmd = cmd
        self.proc = None

    def _ensure(self):
        if self.proc is None or self.proc.poll() is not None:
            try:
                self.proc = subprocess.Popen(
                    shlex.split(self.cmd), stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE, text=True)
            except OSError as e:
                raise TransportError(f"cannot start predictor: {e}") from e

    def __call__(self, req: PredictRequest) -> np.ndarray:
        self._ensure()
        line = json.dumps(encode_request(req), sort_keys=True)
        try:
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
            answer = self.proc.stdout.readline()
        except (OSError, ValueError) as e:
            raise TransportError(f"predictor pipe failed: {e}") from e
        if not answer:
            raise TransportError("predictor closed its output")
        try:
            obj = json.loads(answer)
        except json.JSONDecodeError as e:
            raise MalformedResponse(f"invalid JSON from predictor: {e}") from e
        return decode_response(obj, req.width, req.height)

    def close(self):
        if self.proc is not None and self.proc.poll() is None:
            self.proc.stdin.close()
            self.proc.terminate()
            self.proc.wait(timeout=5)
        self.proc = None


class HttpPredictor:
    """POSTs each request to {base}/predict as JSON."""

    def __init__(self, url: str, timeout: float = 30.0):
        base = url.rstrip("/")
        self.url = base if base.endswith("/predict") else base + "/predict"
        self.timeout = timeout

    def __call__(self, req: PredictRequest) -> np.ndarray:
        body = json.dumps(encode_request(req), sort_keys=True).encode("utf-8")
        http_req = urllib.request.Request(
            self.url, data=body, headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(http_req, timeout=self.timeout) as resp:
                raw = resp.read()
        except (urllib.error.URLError, OSError) as e:
            raise TransportError(f"predictor unreachable: {e}") from e
        try:
            obj = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise MalformedResponse(f"invalid JSON from predictor: {e}") from e
        return decode_response(obj, req.width, req.height)
