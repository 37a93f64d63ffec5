"""bayes_seg - Grayscale segmentation with a superpixel Bayesian network.

This package over-segments a grayscale image into superpixels, clusters their
mean intensities into classes and labels them by inference over a layered
network of region predicates.

Architecture:
    raster_io reads and writes rasters; superpixel builds the over-segmentation;
    class_model and bn_model score labellings; inference searches for a good one.
    pipeline ties the stages together for the CLI, suites and benchmarks.
"""

from .bn_model import Labeling, LayeredNetwork, PredicateConfig, global_score, local_score
from .class_model import ClassModel, kmeans_centers
from .config import RunConfig
from .evaluation import EvalReport, consistency, otsu, synth_image
from .inference import combined, decompose, icm
from .pipeline import segment
from .raster_io import GrayImage, LabelImage, load_gray, render_labels
from .report_writer import MetricsWriter
from .superpixel import SuperpixelMap, oversegment
from .utils import stream_json_lines

__all__ = [
    "ClassModel",
    "EvalReport",
    "GrayImage",
    "LabelImage",
    "Labeling",
    "LayeredNetwork",
    "MetricsWriter",
    "PredicateConfig",
    "RunConfig",
    "SuperpixelMap",
    "combined",
    "consistency",
    "decompose",
    "global_score",
    "icm",
    "kmeans_centers",
    "load_gray",
    "local_score",
    "otsu",
    "oversegment",
    "render_labels",
    "segment",
    "stream_json_lines",
    "synth_image",
]
