"""Over-segment, cluster, infer: the image-to-labels path used by every entry point."""

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from .bn_model import Labeling
from .class_model import ClassModel, kmeans_centers
from .config import RunConfig
from .inference import InferenceTrace, infer
from .raster_io import GrayImage, LabelImage
from .superpixel import SuperpixelMap, oversegment
from .utils import ConfigurationError

logger = logging.getLogger(__name__)


@dataclass
class SegmentationResult:
    sp: SuperpixelMap
    model: ClassModel
    labeling: Labeling
    trace: InferenceTrace
    label_image: LabelImage
    timings: dict[str, float] = field(default_factory=dict)


def load_pinned_model(path: str | Path) -> ClassModel:
    """Read a class model from its own JSON document or from a run report's ``model``."""
    path = Path(path)
    try:
        document = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"cannot read pinned model {path}: {e}") from e
    if isinstance(document, dict) and "model" in document:
        document = document["model"]
    return ClassModel.model_validate(document)


def build_model(sp: SuperpixelMap, config: RunConfig) -> ClassModel:
    """Cluster superpixel means, or use the pinned model unchanged."""
    if config.pin_model is not None:
        return load_pinned_model(config.pin_model)
    model = kmeans_centers(sp.means, config.classes, config.seed)
    return model.with_sigma(config.sigma)


def superpixels_for(img: GrayImage, config: RunConfig) -> SuperpixelMap:
    return oversegment(
        img,
        config.superpixels,
        balance=config.balance,
        bandwidth=config.bandwidth,
        mode=config.mode,
    )


def label_image(sp: SuperpixelMap, labeling: Labeling, k: int) -> LabelImage:
    """Paint each pixel with the label of its superpixel."""
    return LabelImage(labeling.labels[sp.assignment].astype("int32"), k)


def label_superpixels(
    sp: SuperpixelMap, model: ClassModel, config: RunConfig
) -> tuple[Labeling, InferenceTrace]:
    return infer(
        config.inference,
        sp,
        model,
        config.predicate_config(),
        config.icm_config(),
        part=config.network,
    )


def segment(
    img: GrayImage,
    config: RunConfig,
    *,
    sp: SuperpixelMap | None = None,
    model: ClassModel | None = None,
) -> SegmentationResult:
    """Run the pipeline; a precomputed superpixel map or model skips its stage."""
    timings: dict[str, float] = {}

    start = time.perf_counter()
    sp = sp if sp is not None else superpixels_for(img, config)
    timings["oversegment"] = time.perf_counter() - start

    start = time.perf_counter()
    model = model if model is not None else build_model(sp, config)
    timings["model"] = time.perf_counter() - start

    labeling, trace = label_superpixels(sp, model, config)
    timings["inference"] = trace.seconds

    logger.info(
        "%s inference over %d superpixels, k=%d: %d icm sweeps, log score %.4f",
        config.inference,
        sp.n,
        model.k,
        trace.icm_sweeps,
        trace.final_log_score,
    )
    return SegmentationResult(sp, model, labeling, trace, label_image(sp, labeling, model.k), timings)
