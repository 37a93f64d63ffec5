"""Builders and brute-force oracles shared by the test modules."""
import itertools
from fractions import Fraction
from pathlib import Path

import numpy as np
import yaml

from bayes_seg.bn_model import LayeredNetwork, NetworkPart, PredicateConfig
from bayes_seg.class_model import ClassModel
from bayes_seg.evaluation import band_regions, synth_image
from bayes_seg.raster_io import GrayImage, LabelImage, encode_png
from bayes_seg.superpixel import SuperpixelMap

FIXTURES_DIR = Path(__file__).parent / "fixtures"


def load_fixture(name: str):
    with open(FIXTURES_DIR / name) as f:
        return yaml.safe_load(f)


def chain_map(means: list[int], cell: int = 2) -> SuperpixelMap:
    """One-row image of ``len(means)`` constant blocks; block ``i`` borders ``i-1`` and ``i+1``."""
    row = np.repeat(np.asarray(means, dtype=np.uint8), cell)
    img = GrayImage(row.reshape(1, -1))
    assignment = np.repeat(np.arange(len(means)), cell).reshape(1, -1)
    return SuperpixelMap.from_assignment(img, assignment)


def block_map(layout: list[list[int]], cell: int = 2) -> SuperpixelMap:
    """Grid of constant ``cell`` x ``cell`` blocks, one superpixel per block."""
    values = np.kron(np.asarray(layout, dtype=np.uint8), np.ones((cell, cell), dtype=np.uint8))
    rows, cols = len(layout), len(layout[0])
    ids = np.kron(np.arange(rows * cols).reshape(rows, cols), np.ones((cell, cell), dtype=np.int64))
    return SuperpixelMap.from_assignment(GrayImage(values), ids)


def exhaustive_best(
    sp: SuperpixelMap,
    model: ClassModel,
    cfg: PredicateConfig,
    part: NetworkPart = "full",
) -> float:
    """Largest global log score over every labelling."""
    network = LayeredNetwork(sp, model, cfg, part)
    return max(
        network.global_log_score(list(labels))
        for labels in itertools.product(range(1, model.k + 1), repeat=sp.n)
    )


def otsu_oracle(data: np.ndarray) -> int:
    """Exhaustive between-class variance argmax with exact rationals; ties low."""
    hist = np.bincount(data.ravel(), minlength=256).tolist()
    n = sum(hist)
    best_t, best = 0, Fraction(-1)
    for t in range(256):
        w0 = sum(hist[: t + 1])
        w1 = n - w0
        if w0 == 0 or w1 == 0:
            var = Fraction(0)
        else:
            mu0 = Fraction(sum(v * hist[v] for v in range(t + 1)), w0)
            mu1 = Fraction(sum(v * hist[v] for v in range(t + 1, 256)), w1)
            var = Fraction(w0, n) * Fraction(w1, n) * (mu0 - mu1) ** 2
        if var > best:
            best_t, best = t, var
    return best_t


def naive_window_stats(data: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean and population deviation of edge-replicated square windows, pixel by pixel."""
    half = window // 2
    padded = np.pad(data.astype(np.float64), half, mode="edge")
    h, w = data.shape
    mean = np.empty((h, w))
    std = np.empty((h, w))
    for y in range(h):
        for x in range(w):
            patch = padded[y : y + window, x : x + window]
            mean[y, x] = patch.mean()
            std[y, x] = patch.std()
    return mean, std


def bands(
    size: int,
    intensities: list[int],
    noise: float = 10.0,
    seed: int = 0,
) -> tuple[GrayImage, LabelImage]:
    """Square image of vertical bands with clamped Gaussian noise, and its truth."""
    return synth_image(band_regions(size, size, intensities), size, size, noise, seed)


def write_truth_png(path: Path, truth: LabelImage) -> Path:
    path.write_bytes(encode_png(truth.labels.astype(np.uint8)))
    return path
