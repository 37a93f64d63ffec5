"""CLI entry point: segment images, run suites and benchmarks, emit reports."""

import argparse
import json
import logging
import sys
import time
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from contextlib import suppress
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict
from tqdm import tqdm

from .class_model import ClassModel
from .config import BaselineName, RunConfig, load_config_file, merge_config
from .evaluation import (
    EvalReport,
    band_regions,
    consistency,
    otsu_threshold,
    run_baseline,
    scaling_benchmark,
    sigma_sweep,
    synth_image,
)
from .inference import InferenceName, InferenceTrace
from .pipeline import segment
from .raster_io import (
    encode_png,
    load_gray,
    load_labels,
    render_labels,
    render_overlay,
    save_gray,
    save_id_map_pgm,
)
from .report_writer import SUITE_SCHEMA, MetricsWriter
from .utils import ConfigurationError, stream_json_lines

logger = logging.getLogger(__name__)

REPORT_VERSION = "1"


class ImageInfo(BaseModel):
    path: str
    width: int
    height: int


class SuperpixelInfo(BaseModel):
    n: int
    mode: str
    mean_size: float


class BaselineReport(BaseModel):
    name: BaselineName
    threshold: int | None = None
    evaluation: EvalReport | None = None
    seconds: float


class RunReport(BaseModel):
    """Machine-readable record of one run; ``timings`` and ``seconds``/``runtime`` fields vary."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    version: str = REPORT_VERSION
    run: str
    config_hash: str
    config: dict[str, Any]
    image: ImageInfo
    superpixels: SuperpixelInfo
    model: ClassModel
    trace: InferenceTrace
    evaluation: EvalReport | None = None
    baseline: BaselineReport | None = None
    outputs: dict[str, str]
    timings: dict[str, float]


def metrics_row(image: str, algorithm: str, report: RunReport) -> dict[str, Any]:
    return {
        "image": image,
        "algorithm": algorithm,
        "n": report.superpixels.n,
        "k": report.model.k,
        "accuracy": report.evaluation.accuracy if report.evaluation else None,
        "seconds": sum(report.timings.values()),
        "sweeps": report.trace.icm_sweeps,
    }


def run(config: RunConfig) -> tuple[RunReport, Path]:
    """Segment one image and write labels, overlay, report and metrics into the run directory."""
    if config.input is None:
        raise ConfigurationError("no input image given")
    img = load_gray(config.input)
    run_dir = config.output / config.run_name()
    run_dir.mkdir(parents=True, exist_ok=True)

    result = segment(img, config)
    outputs = {"labels": "labels.png", "report": "report.json", "metrics": "metrics.csv"}
    (run_dir / outputs["labels"]).write_bytes(render_labels(result.label_image, config.palette))
    if config.overlay:
        outputs["overlay"] = "overlay.png"
        outputs["superpixels"] = "superpixels.pgm"
        (run_dir / outputs["overlay"]).write_bytes(render_overlay(img, result.sp.assignment))
        save_id_map_pgm(result.sp.assignment, run_dir / outputs["superpixels"])

    truth = load_labels(config.ground_truth) if config.ground_truth is not None else None
    runtime = sum(result.timings.values())
    evaluation = consistency(result.label_image, truth, runtime) if truth is not None else None

    baseline = None
    if config.baseline is not None:
        start = time.perf_counter()
        baseline_labels = run_baseline(config.baseline, img, config)
        seconds = time.perf_counter() - start
        outputs["baseline"] = f"{config.baseline}.png"
        (run_dir / outputs["baseline"]).write_bytes(render_labels(baseline_labels))
        baseline = BaselineReport(
            name=config.baseline,
            threshold=otsu_threshold(img) if config.baseline == "otsu" else None,
            evaluation=consistency(baseline_labels, truth, seconds) if truth is not None else None,
            seconds=seconds,
        )

    report = RunReport(
        run=config.run_name(),
        config_hash=config.config_hash(),
        config=config.model_dump(mode="json", exclude={"output"}),
        image=ImageInfo(path=str(config.input), width=img.width, height=img.height),
        superpixels=SuperpixelInfo(
            n=result.sp.n, mode=config.mode, mean_size=img.width * img.height / result.sp.n
        ),
        model=result.model,
        trace=result.trace,
        evaluation=evaluation,
        baseline=baseline,
        outputs=outputs,
        timings=result.timings,
    )

    image_name = config.input.stem
    writer = MetricsWriter(str(run_dir / outputs["metrics"]))
    writer.add_row(metrics_row(image_name, config.inference, report))
    if baseline is not None:
        writer.add_row(
            {
                "image": image_name,
                "algorithm": baseline.name,
                "n": 0,
                "k": 2,
                "accuracy": baseline.evaluation.accuracy if baseline.evaluation else None,
                "seconds": baseline.seconds,
                "sweeps": 0,
            }
        )
    writer.close()
    (run_dir / outputs["report"]).write_text(report.model_dump_json(indent=2) + "\n")
    logger.info("wrote run %s", run_dir)
    return report, run_dir


def _suite_job(config: RunConfig) -> dict[str, Any]:
    image = config.input.stem if config.input is not None else ""
    try:
        report, _ = run(config)
    except Exception as e:
        logger.warning("suite item %s (%s) failed: %s", image, config.inference, e)
        return {
            "image": image,
            "algorithm": config.inference,
            "n": config.superpixels,
            "k": config.classes,
            "accuracy": None,
            "seconds": 0.0,
            "sweeps": 0,
            "status": "failed",
            "error": f"{type(e).__name__}: {e}",
        }
    return {**metrics_row(image, config.inference, report), "status": "ok", "error": None}


def run_suite(
    configs: Sequence[RunConfig],
    csv_path: str | Path,
    *,
    algorithms: Sequence[InferenceName] | None = None,
    workers: int = 1,
    progress: bool = False,
) -> dict[str, int | str]:
    """Run every config (once per requested algorithm) and write one aggregated CSV.

    Failed items become ``failed`` rows; the remaining items still run.
    """
    if not configs:
        raise ConfigurationError("suite needs at least one config")
    jobs = [
        config.model_copy(update={"inference": algorithm})
        for config in configs
        for algorithm in (algorithms or [config.inference])
    ]
    writer = MetricsWriter(str(csv_path), SUITE_SCHEMA, mean_rows=True)
    completed = False
    try:
        with ThreadPoolExecutor(max_workers=max(workers, 1)) as pool:
            rows = tqdm(pool.map(_suite_job, jobs), total=len(jobs), disable=not progress)
            for row in rows:
                writer.add_row(row)
        stats = writer.close()
        completed = True
        return stats
    finally:
        if not completed:
            with suppress(Exception):
                writer.close()


def collect_suite_configs(inputs: Sequence[str], overrides: dict[str, Any]) -> list[RunConfig]:
    """Configs from JSON files, directories of JSON files and JSONL files, in order."""
    documents: list[dict[str, Any]] = []
    for item in inputs:
        path = Path(item)
        if path.is_dir():
            documents.extend(load_config_file(p) for p in sorted(path.glob("*.json")))
        elif path.suffix == ".jsonl":
            with path.open() as stream:
                documents.extend(stream_json_lines(stream))
        else:
            documents.append(load_config_file(path))
    return [merge_config(doc, overrides) for doc in documents]


def _parse_floats(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part.strip()]


def _parse_ints(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part.strip()]


def _parse_sigma(text: str) -> float | list[float]:
    values = _parse_floats(text)
    return values[0] if len(values) == 1 else values


def _parse_predicates(text: str) -> list[str]:
    if text.strip().lower() == "none":
        return []
    return [part.strip().upper() for part in text.split(",") if part.strip()]


# (flag, field, type); dest is the RunConfig field name
_CONFIG_FLAGS: list[tuple[str, str, Callable[[str], Any]]] = [
    ("--output", "output", Path),
    ("--superpixels", "superpixels", int),
    ("--classes", "classes", int),
    ("--sigma", "sigma", _parse_sigma),
    ("--t1", "t1", float),
    ("--t2", "t2", float),
    ("--predicates", "predicates", _parse_predicates),
    ("--p-true", "p_true", float),
    ("--p-false", "p_false", float),
    ("--inference", "inference", str),
    ("--init", "init", str),
    ("--network", "network", str),
    ("--stop-frac", "stop_fraction", float),
    ("--max-sweeps", "max_sweeps", int),
    ("--seed", "seed", int),
    ("--ground-truth", "ground_truth", Path),
    ("--baseline", "baseline", str),
    ("--balance", "balance", float),
    ("--bandwidth", "bandwidth", float),
    ("--mode", "mode", str),
    ("--pin-model", "pin_model", Path),
    ("--window", "window", int),
    ("--niblack-k", "niblack_k", float),
    ("--sauvola-k", "sauvola_k", float),
    ("--sauvola-r", "sauvola_r", float),
]


def _add_config_flags(parser: argparse.ArgumentParser, *, with_input: bool = True) -> None:
    parser.add_argument("--config", help="JSON config file with flat RunConfig keys")
    if with_input:
        parser.add_argument("input", nargs="?", help="Input PNG or PGM image")
    for flag, dest, kind in _CONFIG_FLAGS:
        parser.add_argument(flag, dest=dest, type=kind, default=None)
    parser.add_argument(
        "--overlay",
        dest="overlay",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="Write the superpixel overlay and id map (default: on)",
    )


def flag_overrides(args: argparse.Namespace) -> dict[str, Any]:
    """RunConfig values given on the command line; unset flags are ``None``."""
    overrides = {dest: getattr(args, dest, None) for _, dest, _ in _CONFIG_FLAGS}
    overrides["overlay"] = getattr(args, "overlay", None)
    if getattr(args, "input", None) is not None:
        overrides["input"] = Path(args.input)
    return overrides


def config_from_args(args: argparse.Namespace) -> RunConfig:
    file_values = load_config_file(args.config) if args.config else None
    return merge_config(file_values, flag_overrides(args))


def _emit(document: Any, path: str | None) -> None:
    text = json.dumps(document, indent=2) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _cmd_run(args: argparse.Namespace) -> None:
    report, run_dir = run(config_from_args(args))
    print(run_dir)
    if report.evaluation is not None:
        logger.info("accuracy %.4f", report.evaluation.accuracy)


def _cmd_suite(args: argparse.Namespace) -> None:
    overrides = flag_overrides(args)
    configs = collect_suite_configs(args.inputs, overrides)
    algorithms = args.algorithms.split(",") if args.algorithms else None
    stats = run_suite(
        configs, args.csv, algorithms=algorithms, workers=args.workers, progress=args.progress
    )
    print(stats["path"])


def _cmd_bench(args: argparse.Namespace) -> None:
    config = config_from_args(args)
    if config.input is None:
        raise ConfigurationError("no input image given")
    truth = load_labels(config.ground_truth) if config.ground_truth is not None else None
    table = scaling_benchmark(
        load_gray(config.input), _parse_ints(args.counts), config, truth=truth, repeats=args.repeats
    )
    _emit(table.model_dump(mode="json"), args.report)


def _cmd_sweep_sigma(args: argparse.Namespace) -> None:
    config = config_from_args(args)
    if config.input is None or config.ground_truth is None:
        raise ConfigurationError("sigma sweep needs an input image and --ground-truth")
    points = sigma_sweep(
        load_gray(config.input), load_labels(config.ground_truth), _parse_floats(args.sigmas), config
    )
    _emit([p.model_dump(mode="json") for p in points], args.report)


def _cmd_synth(args: argparse.Namespace) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    intensities = _parse_ints(args.intensities)
    regions = band_regions(args.size, args.size, intensities)
    for index in range(args.count):
        img, truth = synth_image(regions, args.size, args.size, args.noise, args.seed + index)
        image_path = save_gray(img, out / f"image_{index:03d}.png")
        truth_path = out / f"truth_{index:03d}.png"
        truth_path.write_bytes(encode_png(truth.labels.astype("uint8")))
        config = {
            "input": str(image_path),
            "ground_truth": str(truth_path),
            "classes": len(set(intensities)),
            "seed": args.seed,
        }
        (out / f"config_{index:03d}.json").write_text(json.dumps(config, indent=2) + "\n")
    print(out)


def _cmd_schema(args: argparse.Namespace) -> None:
    _emit(RunReport.model_json_schema(), args.report)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bayes-seg",
        description="Segment grayscale images with a superpixel Bayesian network",
    )
    parser.add_argument("--verbose", action="store_true", help="Log debug output to stderr")
    commands = parser.add_subparsers(dest="command", required=True)

    run_parser = commands.add_parser("run", help="Segment one image")
    _add_config_flags(run_parser)
    run_parser.set_defaults(func=_cmd_run)

    suite_parser = commands.add_parser("suite", help="Run many configs into one CSV")
    suite_parser.add_argument("inputs", nargs="+", help="Config files, directories or .jsonl")
    suite_parser.add_argument("--csv", required=True, help="Aggregated CSV output path")
    suite_parser.add_argument("--algorithms", help="Comma list of icm,decomp,combined")
    suite_parser.add_argument("--workers", type=int, default=1, help="Parallel runs (default: 1)")
    suite_parser.add_argument("--progress", action="store_true", help="Show a progress bar")
    _add_config_flags(suite_parser, with_input=False)
    suite_parser.set_defaults(func=_cmd_suite)

    bench_parser = commands.add_parser("bench", help="Inference time versus superpixel count")
    bench_parser.add_argument("--counts", default="100,200,400,800")
    bench_parser.add_argument("--repeats", type=int, default=3)
    bench_parser.add_argument("--report", help="Write JSON here instead of stdout")
    _add_config_flags(bench_parser)
    bench_parser.set_defaults(func=_cmd_bench)

    sweep_parser = commands.add_parser("sweep-sigma", help="Accuracy versus class deviation")
    sweep_parser.add_argument("--sigmas", default="10,30,50,80,120")
    sweep_parser.add_argument("--report", help="Write JSON here instead of stdout")
    _add_config_flags(sweep_parser)
    sweep_parser.set_defaults(func=_cmd_sweep_sigma)

    synth_parser = commands.add_parser("synth", help="Write seeded synthetic images with truth")
    synth_parser.add_argument("--out", required=True)
    synth_parser.add_argument("--count", type=int, default=10)
    synth_parser.add_argument("--size", type=int, default=256)
    synth_parser.add_argument("--intensities", default="40,120,200")
    synth_parser.add_argument("--noise", type=float, default=10.0)
    synth_parser.add_argument("--seed", type=int, default=0)
    synth_parser.set_defaults(func=_cmd_synth)

    schema_parser = commands.add_parser("schema", help="Print the run report JSON schema")
    schema_parser.add_argument("--report", help="Write JSON here instead of stdout")
    schema_parser.set_defaults(func=_cmd_schema)
    return parser


def main(argv: Sequence[str] | None = None) -> None:
    """Main entry point for bayes-seg."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except KeyboardInterrupt:
        sys.exit(130)
    except Exception as e:
        error = {"error": type(e).__name__, "message": str(e)}
        print(json.dumps(error), file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":  # pragma: no cover
    main()
