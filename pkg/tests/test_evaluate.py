"""Tests for the NoC harness, dataset IO, synthetic generator and reports."""

import numpy as np
import pytest

from clicks2line import evaluate, masks
from clicks2line.annotation import CLICK, LINE
from clicks2line.evaluate import (InstanceResult, Report, gen_synthetic,
                                  load_dataset, render_table, report_to_json,
                                  read_report, run_dataset, run_instance,
                                  write_report)
from clicks2line.interaction import Policy
from clicks2line.masks import BG, FG, connected_components, elongation
from clicks2line.predictor import TransportError

THRESHOLDS = (0.85, 0.90, 0.95)


class Scripted:
    def __init__(self, masks_seq):
        self.masks = list(masks_seq)
        self.calls = 0

    def __call__(self, req):
        self.calls += 1
        return self.masks.pop(0) if len(self.masks) > 1 else self.masks[0]


def bar_instance(size=100):
    gt = np.full((size, size), BG, np.uint8)
    gt[0:10, 0:100] = FG
    image = np.full((size, size), 90, np.uint8)
    return image, gt


class TestRunInstance:
    def test_oracle_predictor_costs_one_click(self):
        image, gt = bar_instance()
        oracle = Scripted([gt == FG])
        result = run_instance(image, gt, oracle, Policy(), THRESHOLDS, "x")
        assert result.noc == {0.85: 1, 0.90: 1, 0.95: 1}
        assert all(result.reached.values())
        assert not result.failed
        assert len(result.trace) == 1
        assert result.trace[0].annotation.kind == CLICK

    def test_staged_improvements_pin_each_threshold(self):
        # Masks crossing 0.85 / 0.90 / 0.95 on successive rounds, where every
        # round after the first fixes an elongated sliver with a line, so the
        # cumulative costs run 1, 3, 5, 7. The image is small enough that no
        # sliver is lost to crop downscaling.
        gt = np.full((64, 64), BG, np.uint8)
        gt[0:10, 0:50] = FG
        image = np.full((64, 64), 90, np.uint8)
        full = gt == FG
        m1 = full.copy()
        m1[9, :] = False
        m1[8, 30:50] = False           # IoU 430/500 = 0.86
        m2 = full.copy()
        m2[9, 0:45] = False            # IoU 0.91
        m3 = full.copy()
        m3[9, 0:20] = False            # IoU 0.96
        stub = Scripted([m1, m2, m3, full])
        result = run_instance(image, gt, stub, Policy(), THRESHOLDS, "x")
        assert result.noc == {0.85: 1, 0.90: 3, 0.95: 5}
        assert all(result.reached.values())
        costs = [r.cost for r in result.trace]
        assert costs == [1, 2, 2, 2]
        assert [r.annotation.kind for r in result.trace] == \
            [CLICK, LINE, LINE, LINE]
        assert [round(r.iou, 2) for r in result.trace] == [0.86, 0.91, 0.96, 1.0]

    def test_unreached_threshold_costs_the_budget(self):
        image, gt = bar_instance()
        stuck = gt == FG
        stuck[9, 0:90] = False         # stays at IoU 0.91 forever
        stub = Scripted([stuck])
        result = run_instance(image, gt, stub, Policy(), THRESHOLDS, "x")
        assert result.noc[0.85] == 1
        assert result.noc[0.90] == 1
        assert result.noc[0.95] == Policy().budget
        assert not result.reached[0.95]
        assert not result.failed
        assert result.trace[-1].cumulative_cost <= Policy().budget

    def test_predictor_failure_marks_all_thresholds(self):
        image, gt = bar_instance()
        calls = {"n": 0}

        def flaky(req):
            calls["n"] += 1
            if calls["n"] > 1:
                raise TransportError("gone")
            return np.zeros(gt.shape, bool)

        result = run_instance(image, gt, flaky, Policy(), THRESHOLDS, "x")
        assert result.failed
        assert result.noc == {t: Policy().budget for t in THRESHOLDS}
        assert not any(result.reached.values())

    def test_threshold_validation(self):
        image, gt = bar_instance(20)
        stub = Scripted([gt == FG])
        with pytest.raises(ValueError):
            run_instance(image, gt, stub, Policy(), (0.9, 0.85), "x")
        with pytest.raises(ValueError):
            run_instance(image, gt, stub, Policy(), (0.5, 1.0), "x")
        with pytest.raises(ValueError):
            run_instance(image, gt, stub, Policy(), (), "x")

    def test_noc_is_monotone_and_bounded(self):
        rng = np.random.default_rng(3)
        image, gt = bar_instance(40)
        gt = np.full((40, 40), BG, np.uint8)
        gt[10:30, 8:34] = FG
        for _ in range(15):
            seq = [rng.random((40, 40)) < rng.uniform(0.1, 0.9)
                   for _ in range(rng.integers(1, 6))]
            seq.append(gt == FG)
            result = run_instance(image, gt, Scripted(seq),
                                  Policy(budget=8), THRESHOLDS, "x")
            values = [result.noc[t] for t in THRESHOLDS]
            assert values == sorted(values)
            assert all(v <= 8 for v in values)


class TestGenSynthetic:
    def test_bars_are_single_elongated_components(self, tmp_path):
        root = gen_synthetic(tmp_path / "ds", seed=42, count=8, kinds=("bars",))
        stems = sorted(p.stem for p in (root / "images").glob("*.png"))
        assert len(stems) == 8
        for stem in stems:
            mask = masks.read_binary_mask(root / "masks" / f"{stem}.png")
            comps = connected_components(mask)
            assert len(comps) == 1
            assert elongation(comps[0]) >= 5.0
            image = masks.read_image(root / "images" / f"{stem}.png")
            assert image.shape == mask.shape
            assert image.dtype == np.uint8

    def test_blobs_stay_compact(self, tmp_path):
        root = gen_synthetic(tmp_path / "ds", seed=7, count=8, kinds=("blobs",))
        for path in sorted((root / "masks").glob("*.png")):
            comps = connected_components(masks.read_binary_mask(path))
            assert len(comps) == 1
            assert elongation(comps[0]) < 3.0

    def test_same_seed_is_byte_identical(self, tmp_path):
        a = gen_synthetic(tmp_path / "a", seed=5, count=3)
        b = gen_synthetic(tmp_path / "b", seed=5, count=3)
        files_a = sorted(p.relative_to(a) for p in a.rglob("*.png"))
        files_b = sorted(p.relative_to(b) for p in b.rglob("*.png"))
        assert files_a == files_b
        assert len(files_a) == 12          # 3 bars + 3 blobs, image + mask
        for rel in files_a:
            assert (a / rel).read_bytes() == (b / rel).read_bytes()

    def test_argument_validation(self, tmp_path):
        with pytest.raises(ValueError):
            gen_synthetic(tmp_path / "x", seed=1, count=0)
        with pytest.raises(ValueError):
            gen_synthetic(tmp_path / "x", seed=1, count=1, kinds=("squares",))


class TestLoadDataset:
    def test_pairs_by_stem_sorted(self, tmp_path):
        root = gen_synthetic(tmp_path / "ds", seed=9, count=2)
        ds = load_dataset(root)
        assert ds.name == "ds"
        ids = [inst.instance_id for inst in ds.instances]
        assert ids == sorted(ids)
        assert ids == ["bar_000", "bar_001", "blob_000", "blob_001"]

    def test_images_without_masks_are_dropped(self, tmp_path):
        root = gen_synthetic(tmp_path / "ds", seed=9, count=2, kinds=("bars",))
        (root / "masks" / "bar_001.png").unlink()
        ds = load_dataset(root)
        assert [i.instance_id for i in ds.instances] == ["bar_000"]

    def test_missing_layout_is_empty(self, tmp_path):
        assert load_dataset(tmp_path / "nope").instances == ()


def image_keyed_stub(req):
    """Returns the thresholded image once the annotation count passes the
    stall value stored in the image's corner pixel."""
    stall = int(np.asarray(req.image)[0, 0])
    if len(req.annotations) > stall:
        return np.asarray(req.image) > 127
    return np.zeros(np.asarray(req.image).shape[:2], dtype=bool)


def write_pair(root, stem, gt_mask, stall):
    image = np.where(gt_mask, 255, 0).astype(np.uint8)
    image[0, 0] = stall
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    masks.write_image(root / "images" / f"{stem}.png", image)
    masks.write_binary_mask(root / "masks" / f"{stem}.png", gt_mask)


@pytest.fixture
def two_instance_dataset(tmp_path):
    root = tmp_path / "mini"
    blob = np.zeros((48, 48), bool)
    blob[18:30, 18:30] = True               # compact: always clicked
    write_pair(root, "a_blob", blob, stall=0)
    bar = np.zeros((48, 48), bool)
    bar[20:24, 4:44] = True                 # elongated: line on round two
    write_pair(root, "b_bar", bar, stall=1)
    return load_dataset(root)


class TestRunDataset:
    def test_mean_of_one_and_three_is_two(self, two_instance_dataset):
        report = run_dataset(two_instance_dataset, image_keyed_stub, Policy(),
                             "adaptive", predictor_id="stub")
        by_id = {r.instance_id: r for r in report.instances}
        assert by_id["a_blob"].noc[0.90] == 1
        assert by_id["b_bar"].noc[0.90] == 3
        assert by_id["b_bar"].trace[1].annotation.kind == LINE
        assert report.mean_noc[0.90] == 2.0
        assert report.failures == 0
        assert report.skipped == ()
        assert report.strategy == "adaptive"

    def test_clicks_strategy_disables_lines(self, two_instance_dataset):
        report = run_dataset(two_instance_dataset, image_keyed_stub, Policy(),
                             "clicks", predictor_id="stub")
        kinds = {rec.annotation.kind
                 for r in report.instances for rec in r.trace}
        assert kinds == {CLICK}
        by_id = {r.instance_id: r for r in report.instances}
        assert by_id["b_bar"].noc[0.90] == 2
        assert report.mean_noc[0.90] == 1.5
        assert report.strategy == "clicks"

    def test_unknown_strategy_rejected(self, two_instance_dataset):
        with pytest.raises(ValueError):
            run_dataset(two_instance_dataset, image_keyed_stub, Policy(),
                        "zigzag")

    def test_runs_are_deterministic(self, two_instance_dataset):
        kwargs = dict(predictor_id="stub")
        a = run_dataset(two_instance_dataset, image_keyed_stub, Policy(),
                        "adaptive", **kwargs)
        b = run_dataset(two_instance_dataset, image_keyed_stub, Policy(),
                        "adaptive", **kwargs)
        assert report_to_json(a) == report_to_json(b)

    def test_parallel_matches_serial(self, two_instance_dataset):
        serial = run_dataset(two_instance_dataset, image_keyed_stub, Policy(),
                             "adaptive", predictor_id="stub", workers=1)
        parallel = run_dataset(two_instance_dataset, image_keyed_stub,
                               Policy(), "adaptive", predictor_id="stub",
                               workers=4)
        assert report_to_json(serial) == report_to_json(parallel)

    def test_unreadable_instance_is_skipped(self, tmp_path, caplog):
        root = tmp_path / "mini"
        blob = np.zeros((48, 48), bool)
        blob[18:30, 18:30] = True
        write_pair(root, "good", blob, stall=0)
        (root / "images" / "corrupt.png").write_bytes(b"not a png at all")
        masks.write_binary_mask(root / "masks" / "corrupt.png", blob)
        ds = load_dataset(root)
        assert len(ds.instances) == 2
        with caplog.at_level("WARNING"):
            report = run_dataset(ds, image_keyed_stub, Policy(), "adaptive")
        assert report.skipped == ("corrupt",)
        assert [r.instance_id for r in report.instances] == ["good"]
        assert any("corrupt" in rec.message for rec in caplog.records)

    def test_shape_mismatch_is_skipped(self, tmp_path):
        root = tmp_path / "mini"
        blob = np.zeros((48, 48), bool)
        blob[18:30, 18:30] = True
        write_pair(root, "good", blob, stall=0)
        masks.write_image(root / "images" / "odd.png",
                          np.zeros((10, 10), np.uint8))
        masks.write_binary_mask(root / "masks" / "odd.png",
                                np.zeros((12, 12), bool))
        report = run_dataset(load_dataset(root), image_keyed_stub, Policy(),
                             "adaptive")
        assert report.skipped == ("odd",)

    def test_empty_dataset_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            run_dataset(load_dataset(tmp_path / "nope"), image_keyed_stub,
                        Policy(), "adaptive")


class TestReportIO:
    def make_report(self, two_instance_dataset):
        return run_dataset(two_instance_dataset, image_keyed_stub, Policy(),
                           "adaptive", predictor_id="stub")

    def test_written_json_is_canonical_and_round_trips(
            self, two_instance_dataset, tmp_path):
        report = self.make_report(two_instance_dataset)
        path = tmp_path / "report.json"
        write_report(report, path)
        text = path.read_text()
        import json
        assert text == json.dumps(json.loads(text), sort_keys=True,
                                  indent=2) + "\n"
        again = read_report(path)
        assert again == report
        write_report(again, tmp_path / "second.json")
        assert (tmp_path / "second.json").read_bytes() == path.read_bytes()

    def test_table_has_one_row_per_strategy(self, two_instance_dataset):
        adaptive = self.make_report(two_instance_dataset)
        clicks = run_dataset(two_instance_dataset, image_keyed_stub, Policy(),
                             "clicks", predictor_id="stub")
        table = render_table([adaptive, clicks])
        lines = table.strip().splitlines()
        assert len(lines) == 4                 # header, rule, two data rows
        assert "NoC85" in lines[0] and "NoC90" in lines[0] \
            and "NoC95" in lines[0]
        assert lines[2].startswith("| adaptive |")
        assert lines[3].startswith("| clicks |")
        assert "2.00" in lines[2]
        assert "1.50" in lines[3]

    def test_single_report_single_row(self, two_instance_dataset):
        table = render_table([self.make_report(two_instance_dataset)])
        assert len(table.strip().splitlines()) == 3
        with pytest.raises(ValueError):
            render_table([])
