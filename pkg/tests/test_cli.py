import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from drivearea.cli import main
from drivearea.dataset import parse_labels
from drivearea.geometry import RleMask, rle_decode
from drivearea.metrics import MatchConfig, read_predictions
from drivearea.synth import SynthParams, generate_suite, oracle_map

from test_geometry import read_pgm


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, args):
    return runner.invoke(main, args, catch_exceptions=False)


class TestPreprocess:
    def test_normalizes_and_reports(self, runner, tmp_path, three_image_bdd):
        src = tmp_path / "labels.json"
        src.write_bytes(three_image_bdd)
        out = tmp_path / "normalized.json"
        result = invoke(runner, ["preprocess", "--labels", str(src), "--out", str(out)])
        assert result.exit_code == 0
        report = json.loads(result.stderr.strip().splitlines()[-1])
        assert report["total_in"] == 3
        assert report["kept"] == 2  # the lane-marking-only image is dropped
        assert report["drop_fraction"] == pytest.approx(1 / 3)
        index = parse_labels(out.read_bytes())
        assert len(index) == 2

    def test_keep_empty(self, runner, tmp_path, three_image_bdd):
        src = tmp_path / "labels.json"
        src.write_bytes(three_image_bdd)
        out = tmp_path / "normalized.json"
        result = invoke(runner, ["preprocess", "--labels", str(src), "--out", str(out), "--keep-empty"])
        assert result.exit_code == 0
        report = json.loads(result.stderr.strip().splitlines()[-1])
        assert report["dropped"] == 0
        assert len(parse_labels(out.read_bytes())) == 3

    def test_malformed_input_exits_2_without_output(self, runner, tmp_path):
        src = tmp_path / "bad.json"
        src.write_text("{broken")
        out = tmp_path / "normalized.json"
        result = runner.invoke(main, ["preprocess", "--labels", str(src), "--out", str(out)])
        assert result.exit_code == 2
        assert not out.exists()

    def test_missing_labels_file_exits_2(self, runner, tmp_path):
        result = runner.invoke(
            main, ["preprocess", "--labels", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]
        )
        assert result.exit_code == 2

    def test_unknown_flag_exits_2(self, runner):
        result = runner.invoke(main, ["preprocess", "--nonsense"])
        assert result.exit_code == 2


class TestRasterize:
    def _write_labels(self, tmp_path, three_image_bdd):
        src = tmp_path / "labels.json"
        src.write_bytes(three_image_bdd)
        return src

    def test_rle_artifacts(self, runner, tmp_path, three_image_bdd):
        src = self._write_labels(tmp_path, three_image_bdd)
        out = tmp_path / "masks"
        result = invoke(runner, ["rasterize", "--labels", str(src), "--out", str(out),
                                 "--default-dims", "80x60"])
        assert result.exit_code == 0
        assert json.loads(result.stdout)["written"] == 3  # a: direct+alt, c: direct
        files = sorted(p.name for p in out.iterdir())
        assert files == [
            "img-a.jpg.alternative.rle.json",
            "img-a.jpg.direct.rle.json",
            "img-c.jpg.direct.rle.json",
        ]

    def test_pgm_equals_rle(self, runner, tmp_path, three_image_bdd):
        src = self._write_labels(tmp_path, three_image_bdd)
        out_rle, out_pgm = tmp_path / "rle", tmp_path / "pgm"
        invoke(runner, ["rasterize", "--labels", str(src), "--out", str(out_rle),
                        "--default-dims", "80x60"])
        invoke(runner, ["rasterize", "--labels", str(src), "--out", str(out_pgm),
                        "--format", "pgm", "--default-dims", "80x60"])
        for rle_file in out_rle.iterdir():
            payload = json.loads(rle_file.read_text())
            mask = rle_decode(RleMask(payload["width"], payload["height"], tuple(payload["runs"])))
            pgm_file = out_pgm / rle_file.name.replace(".rle.json", ".pgm")
            pixels = read_pgm(pgm_file.read_bytes())
            assert np.array_equal(pixels == 255, mask.bits)

    def test_empty_index_writes_nothing(self, runner, tmp_path):
        src = tmp_path / "labels.json"
        src.write_text("[]")
        out = tmp_path / "masks"
        result = invoke(runner, ["rasterize", "--labels", str(src), "--out", str(out)])
        assert json.loads(result.stdout)["written"] == 0


class TestSynth:
    ARGS = ["synth", "--seed", "5", "--n-images", "6", "--image-size", "96x64",
            "--jitter", "1.0", "--drop-rate", "0.2", "--fp-rate", "0.5",
            "--score-noise", "0.1"]

    def test_outputs_parse_cleanly(self, runner, tmp_path):
        labels, preds = tmp_path / "gt.json", tmp_path / "preds.jsonl"
        result = invoke(runner, self.ARGS + ["--out-labels", str(labels),
                                             "--out-predictions", str(preds)])
        assert result.exit_code == 0
        index = parse_labels(labels.read_bytes())
        assert len(index) == 6
        with open(preds) as fh:
            dets = list(read_predictions(fh))
        assert all(d.image_id.startswith("synth-") for d in dets)

    def test_same_seed_bit_identical(self, runner, tmp_path):
        paths = [(tmp_path / f"gt{i}.json", tmp_path / f"p{i}.jsonl") for i in (0, 1)]
        for labels, preds in paths:
            invoke(runner, self.ARGS + ["--out-labels", str(labels), "--out-predictions", str(preds)])
        assert paths[0][0].read_bytes() == paths[1][0].read_bytes()
        assert paths[0][1].read_bytes() == paths[1][1].read_bytes()

    def test_zero_images_valid_empty_outputs(self, runner, tmp_path):
        labels, preds = tmp_path / "gt.json", tmp_path / "preds.jsonl"
        result = invoke(runner, ["synth", "--n-images", "0", "--out-labels", str(labels),
                                 "--out-predictions", str(preds)])
        assert result.exit_code == 0
        assert labels.read_bytes() == b'{"records":[]}'
        assert preds.read_text() == ""
        assert len(parse_labels(labels.read_bytes())) == 0


class TestEval:
    def _synth_files(self, runner, tmp_path, corrupt=False):
        labels, preds = tmp_path / "gt.json", tmp_path / "preds.jsonl"
        args = ["synth", "--seed", "9", "--n-images", "8", "--image-size", "96x64",
                "--out-labels", str(labels), "--out-predictions", str(preds)]
        if corrupt:
            args += ["--jitter", "1.5", "--drop-rate", "0.2", "--fp-rate", "0.5",
                     "--score-noise", "0.1"]
        invoke(runner, args)
        return labels, preds

    def test_perfect_predictions_map_one(self, runner, tmp_path):
        labels, preds = self._synth_files(runner, tmp_path)
        out = tmp_path / "report.json"
        result = invoke(runner, ["eval", "--labels", str(labels), "--predictions", str(preds),
                                 "--out", str(out)])
        assert result.exit_code == 0
        report = json.loads(out.read_text())
        assert report["map"] == 1.0
        assert report["per_class_ap"]["direct"] == 1.0

    def test_corrupted_matches_oracle(self, runner, tmp_path):
        labels, preds = self._synth_files(runner, tmp_path, corrupt=True)
        out, csv_out = tmp_path / "report.json", tmp_path / "report.csv"
        result = invoke(runner, ["eval", "--labels", str(labels), "--predictions", str(preds),
                                 "--out", str(out), "--csv", str(csv_out)])
        assert result.exit_code == 0
        report = json.loads(out.read_text())
        params = SynthParams(seed=9, n_images=8, image_size=(96, 64),
                             jitter=1.5, drop_rate=0.2, fp_rate=0.5, score_noise=0.1)
        index, dets = generate_suite(params)
        assert abs(report["map"] - oracle_map(index, dets, MatchConfig())) <= 1e-9
        lines = csv_out.read_text().splitlines()
        assert lines[0] == "axis,tag,n_images,n_gt,ap_direct,ap_alternative,map"

    def test_reports_deterministic_without_stamp(self, runner, tmp_path):
        labels, preds = self._synth_files(runner, tmp_path, corrupt=True)
        outs = [tmp_path / "r1.json", tmp_path / "r2.json"]
        for out in outs:
            invoke(runner, ["eval", "--labels", str(labels), "--predictions", str(preds),
                            "--out", str(out)])
        assert outs[0].read_bytes() == outs[1].read_bytes()

    def test_stamp_embeds_timestamp(self, runner, tmp_path):
        labels, preds = self._synth_files(runner, tmp_path)
        out = tmp_path / "report.json"
        invoke(runner, ["eval", "--labels", str(labels), "--predictions", str(preds),
                        "--out", str(out), "--stamp"])
        assert "generated_at" in json.loads(out.read_text())

    def test_threads_flag(self, runner, tmp_path):
        labels, preds = self._synth_files(runner, tmp_path, corrupt=True)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        invoke(runner, ["eval", "--labels", str(labels), "--predictions", str(preds),
                        "--out", str(a)])
        invoke(runner, ["eval", "--labels", str(labels), "--predictions", str(preds),
                        "--out", str(b), "--threads", "4"])
        assert a.read_bytes() == b.read_bytes()

    def test_missing_predictions_exits_2(self, runner, tmp_path):
        labels, _ = self._synth_files(runner, tmp_path)
        result = runner.invoke(main, ["eval", "--labels", str(labels),
                                      "--predictions", str(tmp_path / "nope.jsonl"),
                                      "--out", str(tmp_path / "r.json")])
        assert result.exit_code == 2

    def test_bad_predictions_exit_2(self, runner, tmp_path):
        labels, _ = self._synth_files(runner, tmp_path)
        bad = tmp_path / "bad.jsonl"
        bad.write_text("{nope\n")
        result = runner.invoke(main, ["eval", "--labels", str(labels),
                                      "--predictions", str(bad),
                                      "--out", str(tmp_path / "r.json")])
        assert result.exit_code == 2


class TestExitCodes:
    def test_internal_error_exits_1(self, runner, tmp_path, monkeypatch):
        labels, preds = tmp_path / "gt.json", tmp_path / "p.jsonl"
        invoke(runner, ["synth", "--n-images", "2", "--out-labels", str(labels),
                        "--out-predictions", str(preds)])

        import drivearea.cli as cli_mod

        def boom(*_args, **_kwargs):
            raise RuntimeError("unexpected")

        monkeypatch.setattr(cli_mod.metrics, "evaluate", boom)
        result = runner.invoke(main, ["eval", "--labels", str(labels),
                                      "--predictions", str(preds),
                                      "--out", str(tmp_path / "r.json")])
        assert result.exit_code == 1

    def test_verbose_flag_accepted(self, runner):
        result = invoke(runner, ["-v", "anchors"])
        assert result.exit_code == 0


class TestAnchors:
    def test_default_grid_count(self, runner):
        result = invoke(runner, ["anchors"])
        doc = json.loads(result.stdout)
        assert doc["count"] == 36  # 3x4 cells, 3 ratios, 1 scale
        assert len(doc["anchors"]) == 36

    def test_three_scales(self, runner):
        result = invoke(runner, ["anchors", "--scales", "8,16,32"])
        assert json.loads(result.stdout)["count"] == 108


class TestRoiDemo:
    def test_misalignment_default_roi(self, runner):
        result = invoke(runner, ["roi-demo"])
        doc = json.loads(result.stdout)
        assert doc["misalignment"]["pool"]["left"] == 0.4375  # x=7 at scale 1/16
        assert doc["misalignment"]["align"] == {"left": 0.0, "top": 0.0, "right": 0.0, "bottom": 0.0}

    def test_constant_field_constant_bins(self, runner):
        result = invoke(runner, ["roi-demo", "--field", "constant", "--fill-value", "2.5",
                                 "--roi", "5,3,40,30"])
        doc = json.loads(result.stdout)
        assert all(v == 2.5 for row in doc["pool"] for v in row)
        assert all(v == 2.5 for row in doc["align"] for v in row)

    def test_outside_roi_exits_2(self, runner):
        result = runner.invoke(main, ["roi-demo", "--roi", "10000,10000,5,5"])
        assert result.exit_code == 2
