"""Adaptive annotation policy: pick click vs. line per round and simulate
the user against a predictor.

Each round targets the largest mislabeled region. The first round is always
a click; later rounds use a line when the region's elongation reaches the
aspect-ratio threshold q, falling back to a click whenever line generation
cannot produce a usable two-point segment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import annotation, linegen
from .masks import (FG, IGNORE, Point, Region, connected_components,
                    distance_transform, elongation, iou)
from .predictor import PredictorError, PredictRequest


@dataclass(frozen=True)
class Policy:
    """Knobs of the adaptive strategy. q = inf disables lines entirely,
    which is the clicks-only baseline."""

    q: float = 5.0
    first_round_click: bool = True
    penalty: float = -100.0
    params: linegen.CandidateParams = field(
        default_factory=linegen.CandidateParams)
    budget: int = 20

    def __post_init__(self):
        if not self.q > 1:
            raise ValueError("q must be > 1")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")


@dataclass
class Session:
    """One annotation session: image, optional GT, and the applied history.

    masks[i] is the prediction after annotations[:i+1]; cumulative_cost is
    the click-equivalent total of the applied annotations.
    """

    image: np.ndarray
    gt: np.ndarray | None = None
    annotations: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    cumulative_cost: int = 0

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]

    def current_mask(self) -> np.ndarray:
        if self.masks:
            return self.masks[-1]
        return np.zeros((self.height, self.width), dtype=bool)


@dataclass(frozen=True)
class StepRecord:
    """One simulated round, serializable into the trace format."""

    round_index: int
    annotation: annotation.Annotation
    cost: int
    cumulative_cost: int
    iou: float
    fallback: bool  # a line was called for but a click was placed instead

    def to_dict(self) -> dict:
        return {
            "round": self.round_index,
            "annotation": self.annotation.to_dict(),
            "cost": self.cost,
            "cumulative_cost": self.cumulative_cost,
            "iou": self.iou,
            "fallback": self.fallback,
        }


def next_target(gt: np.ndarray, pred: np.ndarray):
    """Largest mislabeled region and the sign that would fix it.

    False-negative and false-positive components are extracted separately so
    each region is purely one error type; ignore pixels never count. Ties go
    to the larger area, then topmost-leftmost bbox, then positive sign. None
    when the prediction is perfect on non-ignore pixels.
    """
    if gt.shape != pred.shape:
        raise ValueError("gt and pred dimensions differ")
    valid = gt != IGNORE
    fn = (gt == FG) & ~pred & valid
    fp = (gt != FG) & pred & valid
    regions = [(r, annotation.POS) for r in connected_components(fn)]
    regions += [(r, annotation.NEG) for r in connected_components(fp)]
    if not regions:
        return None
    return min(regions, key=lambda t: (-t[0].area, t[0].bbox.y0, t[0].bbox.x0,
                                       0 if t[1] == annotation.POS else 1))


def choose_kind(region: Region, round_index: int, policy: Policy) -> str:
    """Click on round 0; afterwards a line iff the region's elongation
    reaches q. An infinite q never chooses lines."""
    if policy.first_round_click and round_index == 0:
        return annotation.CLICK
    if not math.isfinite(policy.q):
        return annotation.CLICK
    return annotation.LINE if elongation(region) >= policy.q else annotation.CLICK


def place_click(region: Region) -> Point:
    """Deepest-interior pixel of the region: argmax of its internal distance
    transform, ties broken by smallest (y, x)."""
    local = region.local_mask()
    dt = distance_transform(local)
    y, x = np.unravel_index(int(dt.argmax()), dt.shape)
    return Point(region.bbox.x0 + int(x), region.bbox.y0 + int(y))


def propose_input(session: Session, policy: Policy):
    """The annotation the simulated user would enter next, or None when the
    prediction already matches the ground truth. Returns (annotation,
    fallback) where fallback marks a line request that degraded to a click
    because no usable line existed."""
    if session.gt is None:
        raise ValueError("proposing an input requires ground truth")
    target = next_target(session.gt, session.current_mask())
    if target is None:
        return None
    region, sign = target
    kind = choose_kind(region, len(session.annotations), policy)
    ann = None
    fallback = False
    if kind == annotation.LINE:
        ann = linegen.line_for_region(region, session.gt, sign,
                                      policy.params, policy.penalty)
        fallback = ann is None
    if ann is None:
        ann = annotation.click(sign, place_click(region))
    return ann, fallback


def apply_annotation(session: Session, ann, predictor) -> np.ndarray:
    """Run the predictor with the extended annotation list and commit the
    result. On predictor failure the session is left unchanged and the
    error propagates."""
    prev = session.current_mask()
    req = PredictRequest(image=session.image,
                         annotations=tuple(session.annotations) + (ann,),
                         prev_mask=prev if session.masks else None)
    mask = predictor(req)
    expected = (session.height, session.width)
    if not isinstance(mask, np.ndarray) or mask.shape != expected \
            or mask.dtype != np.bool_:
        raise PredictorError("predictor returned an invalid mask")
    session.annotations.append(ann)
    session.masks.append(mask)
    session.cumulative_cost += ann.click_cost
    return mask


def undo_annotation(session: Session) -> np.ndarray:
    """Pop the last annotation and restore the previous mask. Raises
    IndexError when there is nothing to undo."""
    if not session.annotations:
        raise IndexError("nothing to undo")
    ann = session.annotations.pop()
    session.masks.pop()
    session.cumulative_cost -= ann.click_cost
    return session.current_mask()


def step(session: Session, policy: Policy, predictor):
    """Run one simulated round; None means done (perfect mask, or the next
    input would exceed the budget).

    The predictor is any callable PredictRequest -> bool mask. On predictor
    failure the session is left unchanged and the error propagates.
    """
    proposal = propose_input(session, policy)
    if proposal is None:
        return None
    ann, fallback = proposal
    if session.cumulative_cost + ann.click_cost > policy.budget:
        return None
    round_index = len(session.annotations)
    mask = apply_annotation(session, ann, predictor)
    return StepRecord(round_index, ann, ann.click_cost,
                      session.cumulative_cost, iou(mask, session.gt), fallback)
