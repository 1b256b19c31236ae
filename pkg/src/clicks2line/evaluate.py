"""NoC evaluation harness: run annotation sessions against a predictor and
report the click-equivalent cost to reach IoU thresholds.

Also houses the dataset IO (images/ + masks/ directories of matching PNG
stems), a synthetic dataset generator (elongated bars and compact blobs),
and the JSON/markdown report writers.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import interaction, masks
from .interaction import Policy, Session, StepRecord
from .masks import BG, FG, connected_components, elongation, iou
from .predictor import PredictorError

log = logging.getLogger(__name__)

STRATEGIES = ("clicks", "adaptive")


@dataclass
class InstanceResult:
    """Outcome of one annotation session.

    noc maps each IoU threshold to the cumulative click-equivalent cost of
    the first round that reached it; thresholds never reached (or sessions
    that failed outright) cost the full budget and are flagged unreached.
    """

    instance_id: str
    noc: dict[float, int]
    reached: dict[float, bool]
    trace: tuple[StepRecord, ...]
    failed: bool = False

    def to_dict(self) -> dict:
        return {
            "id": self.instance_id,
            "noc": {str(t): v for t, v in self.noc.items()},
            "reached": {str(t): v for t, v in self.reached.items()},
            "trace": [rec.to_dict() for rec in self.trace],
            "failed": self.failed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InstanceResult":
        return cls(
            instance_id=d["id"],
            noc={float(t): int(v) for t, v in d["noc"].items()},
            reached={float(t): bool(v) for t, v in d["reached"].items()},
            trace=tuple(_record_from_dict(r) for r in d["trace"]),
            failed=bool(d["failed"]),
        )


def _record_from_dict(d: dict) -> StepRecord:
    from .annotation import Annotation

    return StepRecord(
        round_index=int(d["round"]),
        annotation=Annotation.from_dict(d["annotation"]),
        cost=int(d["cost"]),
        cumulative_cost=int(d["cumulative_cost"]),
        iou=float(d["iou"]),
        fallback=bool(d["fallback"]),
    )


@dataclass
class Report:
    """Dataset-level summary: mean NoC per threshold with failures counted
    at the full budget, plus every per-instance result."""

    dataset: str
    strategy: str
    predictor_id: str
    thresholds: tuple[float, ...]
    budget: int
    mean_noc: dict[float, float]
    failures: int
    skipped: tuple[str, ...]
    instances: tuple[InstanceResult, ...]

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "strategy": self.strategy,
            "predictor": self.predictor_id,
            "thresholds": list(self.thresholds),
            "budget": self.budget,
            "mean_noc": {str(t): v for t, v in self.mean_noc.items()},
            "failures": self.failures,
            "skipped": list(self.skipped),
            "instances": [r.to_dict() for r in self.instances],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        return cls(
            dataset=d["dataset"],
            strategy=d["strategy"],
            predictor_id=d["predictor"],
            thresholds=tuple(float(t) for t in d["thresholds"]),
            budget=int(d["budget"]),
            mean_noc={float(t): float(v) for t, v in d["mean_noc"].items()},
            failures=int(d["failures"]),
            skipped=tuple(d["skipped"]),
            instances=tuple(InstanceResult.from_dict(r)
                            for r in d["instances"]),
        )


def _check_thresholds(thresholds) -> tuple[float, ...]:
    thresholds = tuple(float(t) for t in thresholds)
    if not thresholds:
        raise ValueError("at least one threshold is required")
    if any(not 0.0 < t < 1.0 for t in thresholds):
        raise ValueError("thresholds must lie strictly between 0 and 1")
    if list(thresholds) != sorted(thresholds):
        raise ValueError("thresholds must be sorted ascending")
    return thresholds


def run_instance(image, gt, predictor, policy: Policy, thresholds,
                 instance_id: str = "") -> InstanceResult:
    """Annotate one image until every threshold is met or the budget runs
    out. Predictor failures abort the session; its thresholds all cost the
    full budget."""
    thresholds = _check_thresholds(thresholds)
    session = Session(image=image, gt=gt)
    records: list[StepRecord] = []
    failed = False
    try:
        while (rec := interaction.step(session, policy, predictor)) is not None:
            records.append(rec)
    except PredictorError as exc:
        log.warning("instance %s: predictor failed: %s", instance_id, exc)
        failed = True

    noc: dict[float, int] = {}
    reached: dict[float, bool] = {}
    initial = iou(np.zeros(gt.shape, dtype=bool), gt)
    for t in thresholds:
        hit = None
        if not failed:
            if initial >= t:
                hit = 0
            else:
                hit = next((r.cumulative_cost for r in records if r.iou >= t),
                           None)
        noc[t] = policy.budget if hit is None else hit
        reached[t] = hit is not None
    return InstanceResult(instance_id, noc, reached, tuple(records), failed)


@dataclass(frozen=True)
class Instance:
    instance_id: str
    image_path: Path
    mask_path: Path


@dataclass(frozen=True)
class Dataset:
    name: str
    instances: tuple[Instance, ...]


def load_dataset(root) -> Dataset:
    """Pair <root>/images/<stem>.png with <root>/masks/<stem>.png by exact
    stem, sorted for a reproducible evaluation order."""
    root = Path(root)
    images_dir = root / "images"
    if not images_dir.is_dir():
        return Dataset(root.name, ())
    images = {p.stem: p for p in sorted(images_dir.glob("*.png"))}
    instances = []
    for stem in sorted(images):
        mask_path = root / "masks" / f"{stem}.png"
        if not mask_path.exists():
            log.warning("dataset %s: no mask for image %r", root.name, stem)
            continue
        instances.append(Instance(stem, images[stem], mask_path))
    return Dataset(root.name, tuple(instances))


def effective_policy(policy: Policy, strategy: str) -> Policy:
    """The clicks-only strategy is the adaptive one with the aspect threshold
    pushed to infinity, so no region ever qualifies for a line."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if strategy == "clicks":
        return dataclasses.replace(policy, q=math.inf)
    return policy


def run_dataset(dataset: Dataset, predictor, policy: Policy, strategy: str,
                *, predictor_id: str = "custom",
                thresholds=(0.85, 0.90, 0.95), workers: int = 1) -> Report:
    """Evaluate every instance and aggregate mean NoC per threshold.

    Instances may run in parallel; results are assembled in dataset order so
    the report never depends on scheduling. Unreadable instances are skipped
    with a warning and recorded in the report.
    """
    thresholds = _check_thresholds(thresholds)
    if not dataset.instances:
        raise ValueError(f"dataset {dataset.name!r} has no instances")
    policy = effective_policy(policy, strategy)

    loaded = []
    skipped = []
    for inst in dataset.instances:
        try:
            image = masks.read_image(inst.image_path)
            gt = masks.read_label_mask(inst.mask_path)
            if image.shape[:2] != gt.shape:
                raise ValueError(f"image {image.shape[:2]} vs mask {gt.shape}")
        except (OSError, ValueError) as exc:
            log.warning("skipping instance %s: %s", inst.instance_id, exc)
            skipped.append(inst.instance_id)
            continue
        loaded.append((inst.instance_id, image, gt))
    if not loaded:
        raise ValueError(f"dataset {dataset.name!r} has no readable instances")

    def one(item):
        instance_id, image, gt = item
        return run_instance(image, gt, predictor, policy, thresholds,
                            instance_id=instance_id)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, loaded))
    else:
        results = [one(item) for item in loaded]

    mean_noc = {t: float(np.mean([r.noc[t] for r in results]))
                for t in thresholds}
    return Report(
        dataset=dataset.name,
        strategy=strategy,
        predictor_id=predictor_id,
        thresholds=thresholds,
        budget=policy.budget,
        mean_noc=mean_noc,
        failures=sum(r.failed for r in results),
        skipped=tuple(skipped),
        instances=tuple(results),
    )


# --- synthetic data ---------------------------------------------------------

# Landscape canvas: long bars nearly span it, so segmentation spillover forms
# wide, thin error slabs — the regime where the aspect-ratio gate matters.
SYNTH_W, SYNTH_H = 128, 40
SYNTH_KINDS = ("bars", "blobs")


def _rotated_bar_mask(rng: np.random.Generator, w: int, h: int) -> np.ndarray:
    length = rng.uniform(0.75 * w, 0.92 * w)
    aspect = rng.uniform(6.0, 12.0)
    thickness = length / aspect
    angle = rng.uniform(0.0, math.pi)
    cy = rng.uniform(0.3 * h, 0.7 * h)
    cx = rng.uniform(0.35 * w, 0.65 * w)
    yy, xx = np.mgrid[0:h, 0:w]
    du = (xx - cx) * math.cos(angle) + (yy - cy) * math.sin(angle)
    dv = -(xx - cx) * math.sin(angle) + (yy - cy) * math.cos(angle)
    return (np.abs(du) <= length / 2) & (np.abs(dv) <= thickness / 2)


def _blob_mask(rng: np.random.Generator, w: int, h: int) -> np.ndarray:
    mask = np.zeros((h, w), dtype=bool)
    yy, xx = np.mgrid[0:h, 0:w]
    cy = rng.uniform(0.35 * h, 0.65 * h)
    cx = rng.uniform(0.25 * w, 0.75 * w)
    for _ in range(int(rng.integers(1, 4))):
        a, b = rng.uniform(0.15 * h, 0.35 * h, size=2)
        angle = rng.uniform(0.0, math.pi)
        du = (xx - cx) * math.cos(angle) + (yy - cy) * math.sin(angle)
        dv = -(xx - cx) * math.sin(angle) + (yy - cy) * math.cos(angle)
        mask |= (du / a) ** 2 + (dv / b) ** 2 <= 1.0
        cy += rng.uniform(-0.1 * h, 0.1 * h)
        cx += rng.uniform(-0.1 * h, 0.1 * h)
    return mask


def _acceptable(mask: np.ndarray, kind: str) -> bool:
    if not mask.any():
        return False
    border = mask[0].any() or mask[-1].any() or mask[:, 0].any() \
        or mask[:, -1].any()
    if border:
        return False
    comps = connected_components(mask)
    if len(comps) != 1 or comps[0].area < 40:
        return False
    e = elongation(comps[0])
    return e >= 5.0 if kind == "bars" else e < 3.0


def _render_instance(rng: np.random.Generator, mask: np.ndarray) -> np.ndarray:
    bg = rng.uniform(30, 80)
    fg = bg + rng.uniform(100, 140)
    image = np.where(mask, fg, bg) + rng.normal(0.0, 3.0, mask.shape)
    return np.clip(image, 0, 255).astype(np.uint8)


def gen_synthetic(out_dir, seed: int, count: int, kinds=SYNTH_KINDS) -> Path:
    """Write `count` image/mask pairs per kind under out_dir/images and
    out_dir/masks. Deterministic in the seed: same seed, same bytes.

    Bars are solid rotated rectangles with aspect ratio in [6, 12]; blobs
    are unions of up to three overlapping ellipses. Both are resampled until
    the mask is a single off-border component with the kind's elongation
    (bars >= 5, blobs < 3), so the two suites cleanly split at the default
    aspect threshold.
    """
    kinds = tuple(k for k in SYNTH_KINDS if k in kinds)
    if not kinds:
        raise ValueError(f"kinds must include one of {SYNTH_KINDS}")
    if count < 1:
        raise ValueError("count must be >= 1")
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    draw = {"bars": _rotated_bar_mask, "blobs": _blob_mask}
    for kind in kinds:
        for i in range(count):
            for _ in range(1000):
                mask = draw[kind](rng, SYNTH_W, SYNTH_H)
                if _acceptable(mask, kind):
                    break
            else:  # pragma: no cover - parameter ranges make this unreachable
                raise RuntimeError(f"could not sample an acceptable {kind} mask")
            image = _render_instance(rng, mask)
            stem = f"{kind[:-1]}_{i:03d}"
            masks.write_image(out_dir / "images" / f"{stem}.png", image)
            masks.write_binary_mask(out_dir / "masks" / f"{stem}.png", mask)
    return out_dir


# --- report output ----------------------------------------------------------

def report_to_json(report: Report) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"


def write_report(report: Report, path) -> None:
    Path(path).write_text(report_to_json(report), encoding="utf-8")


def read_report(path) -> Report:
    return Report.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _noc_label(t: float) -> str:
    return f"NoC{round(t * 100):d}"


def render_table(reports) -> str:
    """Markdown summary: one row per (strategy, predictor), NoC columns per
    dataset."""
    reports = list(reports)
    if not reports:
        raise ValueError("at least one report is required")
    datasets = sorted({r.dataset for r in reports})
    thresholds = reports[0].thresholds
    header = ["strategy", "predictor"]
    for ds in datasets:
        header += [f"{ds} {_noc_label(t)}" for t in thresholds]
    rows = {}
    for r in reports:
        rows.setdefault((r.strategy, r.predictor_id), {})[r.dataset] = r
    lines = ["| " + " | ".join(header) + " |",
             "|" + "|".join(" --- " for _ in header) + "|"]
    for (strategy, predictor_id), by_ds in sorted(rows.items()):
        cells = [strategy, predictor_id]
        for ds in datasets:
            rep = by_ds.get(ds)
            for t in thresholds:
                cells.append(f"{rep.mean_noc[t]:.2f}" if rep else "-")
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
