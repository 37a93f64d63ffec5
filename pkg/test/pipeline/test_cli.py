"""End-to-end tests of the bayes-seg command line on small synthetic images."""

import json
import sys
from pathlib import Path

import numpy as np
import pyarrow.csv as pa_csv
import pytest
from jsonschema import Draft202012Validator

sys.path.insert(0, str(Path(__file__).parent.parent))
from helpers import bands, write_truth_png

from bayes_seg import cli
from bayes_seg.cli import RunReport, build_parser, config_from_args, main
from bayes_seg.config import RunConfig
from bayes_seg.raster_io import GrayImage, save_gray

TIMING_KEYS = {"seconds", "runtime", "timings"}

# (field, flag, flag value, value expected from the flag, value written to the config file)
PRECEDENCE = [
    ("output", "--output", "cli_out", Path("cli_out"), "file_out"),
    ("superpixels", "--superpixels", "120", 120, 60),
    ("classes", "--classes", "3", 3, 4),
    ("sigma", "--sigma", "40,60", [40.0, 60.0], 30.0),
    ("t1", "--t1", "5", 5.0, 9),
    ("t2", "--t2", "45", 45.0, 35),
    ("predicates", "--predicates", "P2", ("P2",), ["P1"]),
    ("p_true", "--p-true", "0.9", 0.9, 0.7),
    ("p_false", "--p-false", "0.1", 0.1, 0.3),
    ("inference", "--inference", "icm", "icm", "decomp"),
    ("network", "--network", "data", "data", "quality"),
    ("stop_fraction", "--stop-frac", "0.5", 0.5, 0.25),
    ("max_sweeps", "--max-sweeps", "4", 4, 6),
    ("seed", "--seed", "3", 3, 11),
    ("ground_truth", "--ground-truth", "cli_truth.png", Path("cli_truth.png"), "file_truth.png"),
    ("baseline", "--baseline", "otsu", "otsu", "sauvola"),
    ("balance", "--balance", "0.8", 0.8, 0.2),
    ("bandwidth", "--bandwidth", "12", 12.0, 20),
    ("mode", "--mode", "entropy", "entropy", "grid"),
    ("pin_model", "--pin-model", "cli_model.json", Path("cli_model.json"), "file_model.json"),
    ("window", "--window", "7", 7, 9),
    ("niblack_k", "--niblack-k", "-0.3", -0.3, -0.1),
    ("sauvola_k", "--sauvola-k", "0.4", 0.4, 0.3),
    ("sauvola_r", "--sauvola-r", "100", 100.0, 64),
]


def strip_timing(value):
    if isinstance(value, dict):
        return {k: strip_timing(v) for k, v in value.items() if k not in TIMING_KEYS}
    if isinstance(value, list):
        return [strip_timing(v) for v in value]
    return value


def parse_config(argv):
    return config_from_args(build_parser().parse_args(argv))


def last_error(capsys):
    lines = capsys.readouterr().err.strip().splitlines()
    return json.loads(lines[-1])


@pytest.fixture
def sample(tmp_path):
    img, truth = bands(32, [40, 200], noise=5.0, seed=0)
    image_path = save_gray(img, tmp_path / "sample.png")
    truth_path = write_truth_png(tmp_path / "truth.png", truth)
    return image_path, truth_path


class TestPrecedence:
    """Flag > config file > default, for every flag-exposed field."""

    @pytest.mark.parametrize("field,flag,text,expected,file_value", PRECEDENCE, ids=[p[0] for p in PRECEDENCE])
    def test_flag_beats_file(self, tmp_path, field, flag, text, expected, file_value):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({field: file_value}))
        config = parse_config(["run", "--config", str(path), f"{flag}={text}", "img.png"])
        assert getattr(config, field) == expected

    @pytest.mark.parametrize("field,flag,text,expected,file_value", PRECEDENCE, ids=[p[0] for p in PRECEDENCE])
    def test_file_beats_default(self, tmp_path, field, flag, text, expected, file_value):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({field: file_value}))
        config = parse_config(["run", "--config", str(path), "img.png"])
        assert getattr(config, field) == getattr(RunConfig.model_validate({field: file_value}), field)
        assert getattr(config, field) != getattr(RunConfig(), field)

    def test_defaults_without_file_or_flags(self):
        config = parse_config(["run", "img.png"])
        assert config.model_dump() == RunConfig(input=Path("img.png")).model_dump()

    def test_overlay_and_input(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"overlay": False, "input": "file.png"}))
        assert parse_config(["run", "--config", str(path)]).overlay is False
        assert parse_config(["run", "--config", str(path), "--overlay"]).overlay is True
        assert parse_config(["run", "--config", str(path)]).input == Path("file.png")
        assert parse_config(["run", "--config", str(path), "cli.png"]).input == Path("cli.png")

    def test_predicates_none(self):
        assert parse_config(["run", "--predicates", "none", "x.png"]).predicates == ()


class TestRun:
    """Tests for the run subcommand."""

    def test_writes_outputs_and_report(self, sample, tmp_path, capsys):
        image_path, truth_path = sample
        out = tmp_path / "runs"
        main([
            "run", str(image_path), "--output", str(out), "--superpixels", "20",
            "--ground-truth", str(truth_path), "--baseline", "otsu",
        ])
        run_dir = Path(capsys.readouterr().out.strip())
        assert run_dir.parent == out
        for name in ("labels.png", "overlay.png", "superpixels.pgm", "otsu.png", "report.json", "metrics.csv"):
            assert (run_dir / name).exists(), name

        report = RunReport.model_validate_json((run_dir / "report.json").read_text())
        assert report.run == run_dir.name
        assert report.superpixels.n == 20
        assert report.model.k == 2
        assert report.evaluation is not None and report.evaluation.accuracy > 0.95
        assert report.baseline is not None and report.baseline.threshold is not None
        assert len(report.trace.labels) == 20

        rows = pa_csv.read_csv(run_dir / "metrics.csv").to_pylist()
        assert [r["algorithm"] for r in rows] == ["combined", "otsu"]

    def test_no_overlay(self, sample, tmp_path, capsys):
        image_path, _ = sample
        main(["run", str(image_path), "--output", str(tmp_path), "--superpixels", "10", "--no-overlay"])
        run_dir = Path(capsys.readouterr().out.strip())
        assert not (run_dir / "overlay.png").exists()
        assert (run_dir / "labels.png").exists()

    def test_identical_runs_are_deterministic(self, sample, tmp_path, capsys):
        image_path, truth_path = sample
        outputs = []
        for name in ("a", "b"):
            main([
                "run", str(image_path), "--output", str(tmp_path / name), "--superpixels", "15",
                "--ground-truth", str(truth_path), "--seed", "4",
            ])
            outputs.append(Path(capsys.readouterr().out.strip()))
        a, b = outputs
        assert a.name == b.name
        assert (a / "labels.png").read_bytes() == (b / "labels.png").read_bytes()
        report_a = json.loads((a / "report.json").read_text())
        report_b = json.loads((b / "report.json").read_text())
        assert strip_timing(report_a) == strip_timing(report_b)

    def test_pinned_model_from_report(self, sample, tmp_path, capsys):
        image_path, _ = sample
        main(["run", str(image_path), "--output", str(tmp_path / "a"), "--superpixels", "10"])
        first = Path(capsys.readouterr().out.strip()) / "report.json"
        main([
            "run", str(image_path), "--output", str(tmp_path / "b"), "--superpixels", "30",
            "--pin-model", str(first),
        ])
        second = Path(capsys.readouterr().out.strip()) / "report.json"
        assert json.loads(second.read_text())["model"] == json.loads(first.read_text())["model"]

    def test_uniform_image_fails_with_json_error(self, tmp_path, capsys):
        path = save_gray(GrayImage(np.full((8, 8), 77, dtype=np.uint8)), tmp_path / "flat.png")
        with pytest.raises(SystemExit) as exc_info:
            main(["run", str(path), "--output", str(tmp_path), "--superpixels", "4"])
        assert exc_info.value.code == 1
        error = last_error(capsys)
        assert error["error"] == "ClusteringError"
        assert "distinct" in error["message"]

    def test_missing_input(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc_info:
            main(["run", "--output", str(tmp_path)])
        assert exc_info.value.code == 1
        assert last_error(capsys)["error"] == "ConfigurationError"

    def test_unreadable_input(self, tmp_path, capsys):
        with pytest.raises(SystemExit):
            main(["run", str(tmp_path / "absent.png"), "--output", str(tmp_path)])
        error = last_error(capsys)
        assert error["error"] == "ImageReadError"
        assert "absent.png" in error["message"]

    def test_invalid_value_is_validation_error(self, sample, tmp_path, capsys):
        image_path, _ = sample
        with pytest.raises(SystemExit):
            main(["run", str(image_path), "--output", str(tmp_path), "--inference", "gibbs"])
        assert last_error(capsys)["error"] == "ValidationError"

    def test_superpixel_count_out_of_range(self, sample, tmp_path, capsys):
        image_path, _ = sample
        with pytest.raises(SystemExit):
            main(["run", str(image_path), "--output", str(tmp_path), "--superpixels", "5000"])
        assert last_error(capsys)["error"] == "ParameterError"

    def test_palette_missing_label(self, sample, tmp_path, capsys):
        image_path, _ = sample
        config = tmp_path / "c.json"
        config.write_text(json.dumps({"palette": {"1": [0, 0, 0]}, "superpixels": 10}))
        with pytest.raises(SystemExit):
            main(["run", "--config", str(config), str(image_path), "--output", str(tmp_path)])
        assert last_error(capsys)["error"] == "ConfigurationError"

    def test_keyboard_interrupt_exits_130(self, monkeypatch, sample):
        def interrupted(config):
            raise KeyboardInterrupt

        monkeypatch.setattr(cli, "run", interrupted)
        with pytest.raises(SystemExit) as exc_info:
            main(["run", str(sample[0])])
        assert exc_info.value.code == 130


class TestSuite:
    """Tests for synth and suite."""

    def test_synth_then_suite(self, tmp_path, capsys):
        data = tmp_path / "data"
        main(["synth", "--out", str(data), "--count", "2", "--size", "24", "--intensities", "40,200"])
        capsys.readouterr()
        assert sorted(p.name for p in data.glob("config_*.json")) == ["config_000.json", "config_001.json"]

        broken = tmp_path / "broken.json"
        broken.write_text(json.dumps({"input": str(tmp_path / "absent.png")}))
        csv_path = tmp_path / "suite.csv"
        main([
            "suite", str(data), str(broken), "--csv", str(csv_path), "--algorithms", "icm,combined",
            "--superpixels", "12", "--output", str(tmp_path / "runs"), "--workers", "2",
        ])
        assert Path(capsys.readouterr().out.strip()) == csv_path

        rows = pa_csv.read_csv(csv_path).to_pylist()
        items = [r for r in rows if r["status"] != "mean"]
        assert [(r["image"], r["algorithm"]) for r in items] == [
            ("image_000", "icm"),
            ("image_000", "combined"),
            ("image_001", "icm"),
            ("image_001", "combined"),
            ("absent", "icm"),
            ("absent", "combined"),
        ]
        assert [r["status"] for r in items] == ["ok"] * 4 + ["failed"] * 2
        assert "ImageReadError" in items[-1]["error"]
        means = {r["algorithm"]: r for r in rows if r["status"] == "mean"}
        assert set(means) == {"icm", "combined"}
        assert all(0.9 <= m["accuracy"] <= 1.0 for m in means.values())

    def test_jsonl_configs(self, sample, tmp_path, capsys):
        image_path, _ = sample
        lines = tmp_path / "suite.jsonl"
        lines.write_text(
            "\n".join(json.dumps({"input": str(image_path), "seed": s}) for s in (0, 1)) + "\n"
        )
        csv_path = tmp_path / "out.csv"
        main(["suite", str(lines), "--csv", str(csv_path), "--superpixels", "10", "--output", str(tmp_path)])
        rows = pa_csv.read_csv(csv_path).to_pylist()
        assert sum(1 for r in rows if r["status"] == "ok") == 2


class TestExperimentsCli:
    """Tests for bench, sweep-sigma and schema."""

    def test_bench_report(self, sample, tmp_path):
        image_path, truth_path = sample
        report = tmp_path / "bench.json"
        main([
            "bench", str(image_path), "--counts", "10,20", "--repeats", "1",
            "--ground-truth", str(truth_path), "--report", str(report),
        ])
        table = json.loads(report.read_text())
        assert [r["n"] for r in table["rows"]] == [10, 20]
        assert table["slope"] is not None

    def test_sweep_sigma_report(self, sample, tmp_path):
        image_path, truth_path = sample
        report = tmp_path / "sweep.json"
        main([
            "sweep-sigma", str(image_path), "--ground-truth", str(truth_path), "--sigmas", "10,50",
            "--superpixels", "20", "--report", str(report),
        ])
        assert [p["sigma"] for p in json.loads(report.read_text())] == [10.0, 50.0]

    def test_sweep_sigma_needs_truth(self, sample, capsys):
        with pytest.raises(SystemExit):
            main(["sweep-sigma", str(sample[0])])
        assert last_error(capsys)["error"] == "ConfigurationError"

    def test_schema_matches_shipped_file(self, capsys):
        main(["schema"])
        generated = json.loads(capsys.readouterr().out)
        shipped_path = Path(cli.__file__).parent / "run_report.schema.json"
        shipped = json.loads(shipped_path.read_text())
        assert set(generated["properties"]) == set(shipped["properties"])
        assert set(generated["required"]) == set(shipped["required"])

    @pytest.mark.parametrize("extra", [[], ["--ground-truth", "TRUTH", "--baseline", "otsu"]])
    def test_emitted_report_conforms_to_shipped_schema(self, sample, tmp_path, capsys, extra):
        image_path, truth_path = sample
        extra = [str(truth_path) if arg == "TRUTH" else arg for arg in extra]
        main(["run", str(image_path), "--output", str(tmp_path / "runs"), "--superpixels", "20", *extra])
        run_dir = Path(capsys.readouterr().out.strip())

        shipped = json.loads((Path(cli.__file__).parent / "run_report.schema.json").read_text())
        report = json.loads((run_dir / "report.json").read_text())
        errors = [e.message for e in Draft202012Validator(shipped).iter_errors(report)]
        assert errors == []
