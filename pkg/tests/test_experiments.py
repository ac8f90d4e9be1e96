import csv
import json

import numpy as np
import pytest

from fisheyehdk.fisheye import VOID_ID
from fisheyehdk.harness.config import ExperimentConfig, load_config
from fisheyehdk.harness.data import class_histogram, generate_toy_dataset, stack_pairs
from fisheyehdk.harness.experiments import (
    compare_modes,
    dump_kernels,
    evaluate,
    make_dataset,
    radial_offset_profile,
    toy_offset_experiment,
    train,
)
from fisheyehdk.harness.segmenter import FisheyeSegmenter
from fisheyehdk.hdk import load_kernel_field


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


class TestData:
    def test_deterministic(self, tiny_config):
        a, b = make_dataset(tiny_config), make_dataset(tiny_config)
        np.testing.assert_array_equal(a.X_train, b.X_train)
        np.testing.assert_array_equal(a.y_val, b.y_val)

    def test_label_values(self):
        pairs = generate_toy_dataset(3, 24, 24, 2, None, seed=0)
        X, y, mask = stack_pairs(pairs, "perspective")
        assert set(np.unique(y)) <= {0, 1}
        assert mask.all() and X.min() >= 0 and X.max() <= 1

    def test_fisheye_void_matches_mask(self, tiny_config):
        d = make_dataset(tiny_config)
        assert set(np.unique(d.y_train)) <= {0, 1, 2, VOID_ID}
        np.testing.assert_array_equal(d.y_train == VOID_ID, ~d.mask_train)

    def test_histogram_sums_to_valid_pixels(self, tiny_config):
        d = make_dataset(tiny_config)
        hist = class_histogram(d.y_train, 3)
        assert hist.sum() == int(d.mask_train.sum())

    def test_undistorted_when_f_is_zero(self, tiny_config):
        tiny_config.dataset.f = 0.0
        d = make_dataset(tiny_config)
        assert d.profile is None and d.mask_train.all()

    def test_pretraining_split(self, tiny_config):
        tiny_config.optim.pretrain_epochs = 1
        d = make_dataset(tiny_config)
        assert d.X_pre.shape == d.X_train.shape
        assert not np.array_equal(d.X_pre, d.X_train)
        assert VOID_ID not in d.y_pre


class TestTrainEval:
    def test_outputs(self, tiny_config):
        res = train(tiny_config)
        assert 0.0 <= res.miou <= 1.0
        rows = _rows(res.metrics_csv)
        assert rows[0] == ["class", "iou", "acc"] and len(rows) == 1 + 3 + 1 and rows[-1][0] == "mean"
        curve = _rows(res.loss_csv)
        assert curve[0] == ["epoch", "loss", "val_miou"] and len(curve) == 1 + tiny_config.optim.epochs
        again = load_config(f"{tiny_config.out}/config.toml")
        assert again.to_dict() == tiny_config.to_dict()

    def test_end_to_end_determinism(self, tiny_config, tmp_path):
        a = train(tiny_config, out_dir=tmp_path / "a")
        b = train(tiny_config, out_dir=tmp_path / "b")
        assert open(a.loss_csv).read() == open(b.loss_csv).read()
        assert open(a.metrics_csv).read() == open(b.metrics_csv).read()

    def test_checkpoint_round_trip(self, tiny_config):
        res = train(tiny_config)
        data = make_dataset(tiny_config)
        cm = evaluate(res.checkpoint, data.X_val, data.y_val)
        assert cm.miou() == pytest.approx(res.miou, abs=1e-15)
        est = FisheyeSegmenter.load(res.checkpoint)
        assert est.config_ == tiny_config.to_dict()

    def test_evaluate_writes_csv(self, tiny_config, tmp_path):
        res = train(tiny_config)
        data = make_dataset(tiny_config)
        evaluate(res.checkpoint, data.X_val, data.y_val, tmp_path / "e.csv")
        assert len(_rows(tmp_path / "e.csv")) == 5

    def test_evaluate_rejects_mismatch(self, tiny_config):
        res = train(tiny_config)
        data = make_dataset(tiny_config)
        with pytest.raises(ValueError):
            evaluate(res.checkpoint, data.X_val, data.y_val, num_classes=5)
        with pytest.raises(ValueError):
            evaluate(res.checkpoint, data.X_val[:0], data.y_val[:0])
        with pytest.raises(ValueError):
            evaluate(res.checkpoint, data.X_val, np.full_like(data.y_val, 4))

    def test_pretrain_then_finetune(self, tiny_config):
        tiny_config.optim.pretrain_epochs = 1
        tiny_config.model.hdk_init = "zeros"
        res = train(tiny_config, write=False)
        assert len(res.estimator.loss_curve_) == tiny_config.optim.epochs


class TestDumpKernels:
    def test_untrained_model_gives_regular_grid(self, tiny_config, tmp_path):
        tiny_config.model.hdk_init = "zeros"
        tiny_config.model.freeze_hyperbolic = True
        res = train(tiny_config)
        image = make_dataset(tiny_config).X_val[0]
        pixels = [(8, 8), (0, 0), (15, 3)]
        rows = dump_kernels(res.checkpoint, image, pixels, tmp_path / "k")
        assert len(rows) == len(pixels) * 9
        table = _rows(tmp_path / "k" / "kernels.csv")
        assert table[0] == ["y", "x", "tap", "pos_y", "pos_x", "dy", "dx"]
        for y, x, t, py, px, dy, dx in table[1:]:
            assert float(dy) == 0.0 and float(dx) == 0.0
            t = int(t)
            assert float(py) == int(y) + t // 3 - 1 and float(px) == int(x) + t % 3 - 1
        assert load_kernel_field(tmp_path / "k" / "kernel_field.bin").shape == (1, 18, 16, 16)
        assert (tmp_path / "k" / "kernels.png").stat().st_size > 0

    def test_out_of_bounds_pixel(self, tiny_config, tmp_path):
        res = train(tiny_config)
        with pytest.raises(IndexError):
            dump_kernels(res.checkpoint, make_dataset(tiny_config).X_val[0], [(16, 0)], tmp_path)

    def test_rejects_plain_model(self, tiny_config, tmp_path):
        tiny_config.model.mode = "none"
        res = train(tiny_config)
        with pytest.raises(ValueError):
            dump_kernels(res.checkpoint, make_dataset(tiny_config).X_val[0], [(1, 1)], tmp_path)


class TestCompare:
    def test_rows_and_summary(self, tiny_config):
        rows, summary = compare_modes(tiny_config)
        assert len(rows) == 2 * 2
        assert set(summary) == {"none", "hdk"}
        table = _rows(f"{tiny_config.out}/compare.csv")
        assert len(table) == 1 + 4
        blob = json.load(open(f"{tiny_config.out}/compare.json"))
        assert blob["config_hash"] == tiny_config.hash()

    def test_duplicate_seeds_identical(self, tiny_config):
        tiny_config.compare.seeds = [3, 3]
        tiny_config.compare.modes = ["rdc"]
        rows, summary = compare_modes(tiny_config, write=False)
        assert rows[0][2] == rows[1][2]
        assert summary["rdc"][1] == 0.0


class TestRadialProfile:
    def test_synthetic_field(self):
        field = np.zeros((1, 18, 21, 21))
        yy, xx = np.mgrid[0:21, 0:21]
        r = np.hypot(yy - 10, xx - 10)
        field[0, 0] = r / 10.0
        mask = np.ones((1, 21, 21), bool)
        centre, band, R = radial_offset_profile(field, mask)
        assert R == pytest.approx(np.hypot(10, 10))
        assert centre < band

    def test_mask_limits_radius(self):
        field = np.ones((1, 18, 11, 11))
        mask = np.zeros((1, 11, 11), bool)
        mask[0, 3:8, 3:8] = True
        _, _, R = radial_offset_profile(field, mask)
        assert R == pytest.approx(np.hypot(2, 2))


def test_toy_offset_experiment_runs(tiny_config):
    out = toy_offset_experiment(tiny_config)
    assert {"center", "band", "R", "miou", "seconds"} <= set(out)
    assert out["center"] >= 0 and out["band"] >= 0


def test_config_from_dict_copy_is_independent(tiny_config):
    copy = ExperimentConfig.from_dict(tiny_config.to_dict())
    copy.model.channels.append(9)
    assert tiny_config.model.channels == [4, 4]
