"""Ground-truth scoring, classical binarization baselines and desk-scale experiments."""

import logging
import time
from collections.abc import Sequence

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, Field
from scipy import ndimage, stats
from scipy.optimize import linear_sum_assignment

from .config import BaselineName, RunConfig
from .pipeline import build_model, label_image, label_superpixels, segment, superpixels_for
from .raster_io import GrayImage, LabelImage
from .utils import DegenerateInputError, ParameterError, RegionSpecError

logger = logging.getLogger(__name__)

NIBLACK_K = -0.2
SAUVOLA_K = 0.5
SAUVOLA_R = 128.0
WINDOW = 15


class EvalReport(BaseModel):
    """Agreement of a label map with ground truth under the best label matching.

    ``confusion[t][p]`` counts pixels of truth class ``t+1`` predicted ``p+1``;
    ``mapping`` lists the matched ``[pred, truth]`` pairs.
    """

    accuracy: float = Field(ge=0, le=1)
    per_class_accuracy: list[float]
    confusion: list[list[int]]
    mapping: list[tuple[int, int]]
    runtime: float = 0.0


def consistency(pred: LabelImage, truth: LabelImage, runtime: float = 0.0) -> EvalReport:
    """Pixel accuracy maximized over one-to-one matchings of predicted to true labels."""
    if pred.labels.shape != truth.labels.shape:
        raise ParameterError(
            f"prediction {pred.labels.shape} and truth {truth.labels.shape} differ in size"
        )
    size = max(pred.k, truth.k)
    t = truth.labels.ravel().astype(np.int64) - 1
    p = pred.labels.ravel().astype(np.int64) - 1
    confusion = np.bincount(t * size + p, minlength=size * size).reshape(size, size)

    rows, cols = linear_sum_assignment(confusion, maximize=True)
    matched = confusion[rows, cols]
    total = int(confusion.sum())
    per_truth = confusion.sum(axis=1)
    per_class = [
        float(m / n) if n else 0.0 for m, n in zip(matched.tolist(), per_truth[rows].tolist(), strict=True)
    ]
    return EvalReport(
        accuracy=float(matched.sum() / total),
        per_class_accuracy=per_class[: truth.k],
        confusion=confusion.tolist(),
        mapping=[
            (int(c) + 1, int(r) + 1)
            for r, c in zip(rows, cols, strict=True)
            if r < truth.k and c < pred.k
        ],
        runtime=runtime,
    )


def _two_class(img: GrayImage, threshold: NDArray[np.float64] | float) -> LabelImage:
    return LabelImage(np.where(img.data <= threshold, 1, 2).astype(np.int32), 2)


def otsu_threshold(img: GrayImage) -> int:
    """Threshold maximizing between-class variance; exact integer comparison, ties low."""
    hist = np.bincount(img.data.ravel(), minlength=256).tolist()
    if sum(1 for h in hist if h) < 2:
        raise DegenerateInputError("Otsu needs at least two distinct intensities")
    n_total = sum(hist)
    s_total = sum(v * h for v, h in enumerate(hist))

    # between-class variance at t is (N*s0 - S*w0)^2 / (N^2 * w0 * w1)
    best_t, best_num, best_den = 0, -1, 1
    w0 = s0 = 0
    for t, h in enumerate(hist):
        w0 += h
        s0 += t * h
        w1 = n_total - w0
        if w0 == 0 or w1 == 0:
            num, den = 0, 1
        else:
            num, den = (n_total * s0 - s_total * w0) ** 2, w0 * w1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def otsu(img: GrayImage) -> tuple[int, LabelImage]:
    """Global Otsu binarization; pixels at or below the threshold are class 1."""
    threshold = otsu_threshold(img)
    return threshold, _two_class(img, threshold)


def _window_stats(
    img: GrayImage, window: int
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    if window < 3 or window % 2 == 0:
        raise ParameterError(f"window must be odd and at least 3, got {window}")
    x = img.data.astype(np.float64)
    mean = ndimage.uniform_filter(x, size=window, mode="nearest")
    mean_sq = ndimage.uniform_filter(x * x, size=window, mode="nearest")
    std = np.sqrt(np.maximum(mean_sq - mean * mean, 0.0))
    return mean, std


def niblack_threshold(
    img: GrayImage, window: int = WINDOW, k_param: float = NIBLACK_K
) -> NDArray[np.float64]:
    """Local threshold ``m + k*s`` over edge-replicated square windows."""
    mean, std = _window_stats(img, window)
    return mean + k_param * std


def niblack(img: GrayImage, window: int = WINDOW, k_param: float = NIBLACK_K) -> LabelImage:
    return _two_class(img, niblack_threshold(img, window, k_param))


def sauvola_threshold(
    img: GrayImage,
    window: int = WINDOW,
    k_param: float = SAUVOLA_K,
    r_param: float = SAUVOLA_R,
) -> NDArray[np.float64]:
    """Local threshold ``m * (1 + k*(s/R - 1))`` over edge-replicated square windows."""
    if not r_param > 0:
        raise ParameterError(f"dynamic range R must be positive, got {r_param}")
    mean, std = _window_stats(img, window)
    return mean * (1.0 + k_param * (std / r_param - 1.0))


def sauvola(
    img: GrayImage,
    window: int = WINDOW,
    k_param: float = SAUVOLA_K,
    r_param: float = SAUVOLA_R,
) -> LabelImage:
    return _two_class(img, sauvola_threshold(img, window, k_param, r_param))


def run_baseline(name: BaselineName, img: GrayImage, config: RunConfig) -> LabelImage:
    if name == "otsu":
        return otsu(img)[1]
    if name == "niblack":
        return niblack(img, config.window, config.niblack_k)
    return sauvola(img, config.window, config.sauvola_k, config.sauvola_r)


class Region(BaseModel):
    """Axis-aligned rectangle ``[x0, x1) x [y0, y1)`` of constant intensity."""

    x0: int = Field(ge=0)
    y0: int = Field(ge=0)
    x1: int
    y1: int
    intensity: int = Field(ge=0, le=255)
    label: int | None = Field(default=None, ge=1)


def band_regions(width: int, height: int, intensities: Sequence[int]) -> list[Region]:
    """Equal-width vertical bands, left to right."""
    m = len(intensities)
    edges = [(i * width) // m for i in range(m + 1)]
    return [
        Region(x0=edges[i], y0=0, x1=edges[i + 1], y1=height, intensity=int(v))
        for i, v in enumerate(intensities)
    ]


def synth_image(
    regions: Sequence[Region],
    width: int,
    height: int,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> tuple[GrayImage, LabelImage]:
    """Piecewise-constant image plus clamped i.i.d. Gaussian noise, and its truth map.

    Regions must tile the canvas exactly. Unlabelled regions are classed by the
    rank of their intensity among all region intensities.
    """
    if width < 1 or height < 1:
        raise RegionSpecError(f"canvas must be non-empty, got {width}x{height}")
    if noise_sigma < 0:
        raise ParameterError(f"noise sigma must be non-negative, got {noise_sigma}")
    ranks = {v: r for r, v in enumerate(sorted({reg.intensity for reg in regions}), start=1)}

    cover = np.zeros((height, width), dtype=np.int64)
    base = np.zeros((height, width), dtype=np.float64)
    truth = np.zeros((height, width), dtype=np.int32)
    for reg in regions:
        if not (reg.x0 < reg.x1 <= width and reg.y0 < reg.y1 <= height):
            raise RegionSpecError(f"region {reg} is empty or leaves the {width}x{height} canvas")
        window = (slice(reg.y0, reg.y1), slice(reg.x0, reg.x1))
        cover[window] += 1
        base[window] = reg.intensity
        truth[window] = reg.label if reg.label is not None else ranks[reg.intensity]
    if np.any(cover != 1):
        raise RegionSpecError(
            f"regions must tile the canvas: {int(np.sum(cover == 0))} uncovered, "
            f"{int(np.sum(cover > 1))} overlapping pixels"
        )

    rng = np.random.default_rng(seed)
    noisy = base + rng.normal(0.0, noise_sigma, base.shape) if noise_sigma > 0 else base
    img = GrayImage(np.clip(np.rint(noisy), 0, 255).astype(np.uint8))
    return img, LabelImage(truth, int(truth.max()))


class BenchmarkRow(BaseModel):
    n: int
    seconds: float
    accuracy: float | None = None


class BenchmarkTable(BaseModel):
    rows: list[BenchmarkRow]
    slope: float | None = None
    intercept: float | None = None
    r_squared: float | None = None


def scaling_benchmark(
    img: GrayImage,
    superpixel_counts: Sequence[int],
    config: RunConfig,
    *,
    truth: LabelImage | None = None,
    repeats: int = 3,
) -> BenchmarkTable:
    """Inference time per superpixel count, with a least-squares line through the points.

    Over-segmentation is prepared outside the timed section; each count keeps
    the fastest of ``repeats`` timings of clustering plus inference.
    """
    counts = list(superpixel_counts)
    if not counts or any(b <= a for a, b in zip(counts, counts[1:], strict=False)):
        raise ParameterError(f"superpixel counts must be non-empty and ascending, got {counts}")

    rows: list[BenchmarkRow] = []
    for n in counts:
        run_config = config.model_copy(update={"superpixels": n})
        sp = superpixels_for(img, run_config)
        best = float("inf")
        for _ in range(max(repeats, 1)):
            start = time.perf_counter()
            model = build_model(sp, run_config)
            labeling, _ = label_superpixels(sp, model, run_config)
            best = min(best, time.perf_counter() - start)
        accuracy = None
        if truth is not None:
            accuracy = consistency(label_image(sp, labeling, model.k), truth).accuracy
        logger.info("benchmark n=%d: %.4fs", n, best)
        rows.append(BenchmarkRow(n=n, seconds=best, accuracy=accuracy))

    table = BenchmarkTable(rows=rows)
    if len(rows) >= 2:
        fit = stats.linregress([r.n for r in rows], [r.seconds for r in rows])
        table.slope = float(fit.slope)
        table.intercept = float(fit.intercept)
        table.r_squared = float(fit.rvalue**2)
    return table


class SigmaPoint(BaseModel):
    sigma: float
    accuracy: float


def sigma_sweep(
    img: GrayImage,
    truth: LabelImage,
    sigmas: Sequence[float],
    config: RunConfig,
) -> list[SigmaPoint]:
    """Accuracy of the configured pipeline as the class deviation varies.

    The superpixel map and class centers are computed once and shared.
    """
    sp = superpixels_for(img, config)
    centers = build_model(sp, config)
    points: list[SigmaPoint] = []
    for sigma in sigmas:
        result = segment(img, config, sp=sp, model=centers.with_sigma(sigma))
        points.append(SigmaPoint(sigma=sigma, accuracy=consistency(result.label_image, truth).accuracy))
        logger.info("sigma %.3g: accuracy %.4f", sigma, points[-1].accuracy)
    return points
